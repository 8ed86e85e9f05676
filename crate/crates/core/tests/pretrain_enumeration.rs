// Own test binary: the enumeration counter is process-wide.
use stcnn::data::{synth_generate, SynthConfig};
use stcnn::train::{pretrain, TrainConfig, TrainMode};
use stcnn::{enumeration_calls, ModelConfig};

#[test]
fn pretraining_never_enumerates() {
    let c = ModelConfig {
        cliques: 2,
        max_frames: 5,
        min_frames: 3,
        classes: 2,
        frame_h: 12,
        frame_w: 12,
        channels: 1,
        c1: 2,
        c2: 2,
        c3: 1,
        k1: [3, 3, 2],
        k2: [2, 2, 2],
        k3: [2, 2],
        pool1: [2, 2],
        pool2: [2, 2],
        fc_hidden: 4,
        anchors: 12,
    };
    let data = synth_generate(&SynthConfig::for_model(&c, 2, 1)).unwrap().samples;
    let tc = TrainConfig {
        max_iterations: 2,
        mode: TrainMode::Pretrain2d,
        ..TrainConfig::default()
    };
    let before = enumeration_calls();
    pretrain(&data, &c, &tc).unwrap();
    assert_eq!(enumeration_calls(), before);
}
