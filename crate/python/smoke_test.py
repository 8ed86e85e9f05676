"""Smoke test for the stcnn_py bindings.

Build first:  pip install --no-build-isolation ./crates/python
Then run:     python3 python/smoke_test.py
"""

import math
import os
import tempfile

import stcnn_py as st


def tiny_config():
    return st.ModelConfig(
        frame_h=8, frame_w=8, anchors=8, cliques=2, max_frames=3, min_frames=2,
        c1=2, c2=2, c3=1, classes=2,
        k1_m=2, k1_h=3, k1_w=3, k2_m=1, k2_h=2, k2_w=2, k3_h=1, k3_w=1,
        pool1_h=2, pool1_w=2, pool2_h=2, pool2_w=2, fc_hidden=6,
    )


def main():
    assert st.enumeration_count(30, 4, 5, 9) == 38616

    default = st.ModelConfig()
    assert default.clique_features() == 700
    assert default.concat_len() == 2800

    cfg = tiny_config()
    cfg.validate()
    params = st.Parameters.init(cfg, 0)
    assert len(params) == cfg.parameter_count()

    samples, truth = st.synth(cfg, 3, seed=1)
    assert len(samples) == 6 and len(truth) == 6
    starts, lengths = truth[0]
    probs = st.forward(samples[0], params, starts, lengths, cfg)
    assert len(probs) == 2 and math.isclose(sum(probs), 1.0, rel_tol=1e-5)

    label, prob, s, t = st.infer(samples[0], params, cfg)
    assert 0 <= label < 2 and 0.0 < prob <= 1.0 and len(s) == len(t) == 2

    trained, history = st.train(samples, params, cfg, max_iterations=2, learning_rate=0.01)
    assert history and all(math.isfinite(h[2]) for h in history)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.ckpt")
        trained.save(path, cfg)
        loaded, loaded_cfg = st.Parameters.load(path)
        assert loaded.to_list() == trained.to_list()
        assert repr(loaded_cfg) == repr(cfg)

    err = st.gradcheck(7)
    assert err <= 1e-4, err
    print(f"smoke test ok (gradcheck max rel error {err:.2e}, {len(history)} cost records)")


if __name__ == "__main__":
    main()
