use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stcnn::latent::{enumerate, estep_assign, even_split, infer, LatentVars};
use stcnn::{network_forward, ModelConfig, Parameters, Tensor, VideoSample};

/// Counts segmentations by choosing each window in turn.
fn count(first_free: usize, left: usize, a: usize, tau: usize, m: usize) -> usize {
    if left == 0 {
        return 1;
    }
    let mut n = 0;
    for s in first_free..=a {
        for t in tau..=m {
            if s + t - 1 <= a {
                n += count(s + t, left - 1, a, tau, m);
            }
        }
    }
    n
}

fn config(classes: usize) -> ModelConfig {
    ModelConfig {
        cliques: 2,
        max_frames: 4,
        min_frames: 3,
        classes,
        frame_h: 10,
        frame_w: 10,
        channels: 2,
        c1: 2,
        c2: 1,
        c3: 2,
        k1: [3, 3, 2],
        k2: [2, 2, 1],
        k3: [1, 2],
        pool1: [2, 2],
        pool2: [2, 2],
        fc_hidden: 4,
        anchors: 10,
    }
}

fn sample(config: &ModelConfig, label: usize, seed: u64) -> VideoSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, config.anchors, config.frame_h, config.frame_w];
    VideoSample::new(Tensor::from_fn(&shape, |_| rng.gen::<f32>()).unwrap(), label, 1).unwrap()
}

#[test]
fn counts_match_recursive_counter() {
    for a in 1..=12 {
        for cliques in 1..=3 {
            for tau in 1..=3 {
                for m in tau..=4 {
                    let got = enumerate(a, cliques, tau, m).count();
                    assert_eq!(got, count(1, cliques, a, tau, m), "A={a} M={cliques} tau={tau} m={m}");
                }
            }
        }
    }
    assert_eq!(enumerate(30, 1, 5, 9).count(), 120);
    assert_eq!(enumerate(30, 4, 5, 9).count(), 38616);
}

#[test]
fn enumeration_is_sorted_and_valid() {
    let all: Vec<LatentVars> = enumerate(11, 3, 2, 4).collect();
    assert!(all.windows(2).all(|w| w[0] < w[1]));
    assert!(all.iter().all(|h| h.is_valid(11, 3, 2, 4)));
    assert_eq!(all[0], LatentVars::from_parts(&[1, 3, 5], &[2, 2, 2]));
}

#[test]
fn zero_weights_pick_first_label_and_segmentation() {
    let c = config(4);
    let params = Parameters::<f32>::zeros(&c).unwrap();
    let got = infer(&sample(&c, 3, 1), &params, &c).unwrap();
    assert_eq!(got.label, 1);
    assert_eq!(got.probability, 0.25);
    assert_eq!(Some(got.latent), enumerate(c.anchors, c.cliques, c.min_frames, c.max_frames).next());
}

#[test]
fn search_dominates_every_candidate() {
    let c = config(3);
    for seed in 0..3 {
        let params = Parameters::<f32>::init(&c, seed).unwrap();
        let x = sample(&c, 2, 10 + seed);
        let best = infer(&x, &params, &c).unwrap();
        let assigned = estep_assign(&x, 2, &params, &c).unwrap();
        let f_assigned = network_forward(&x, &params, &assigned, &c).unwrap().data()[1];
        let mut top = (f32::NEG_INFINITY, 0, None);
        for h in enumerate(c.anchors, c.cliques, c.min_frames, c.max_frames) {
            let f = network_forward(&x, &params, &h, &c).unwrap();
            assert!(f.data()[1] <= f_assigned);
            for (k, &p) in f.data().iter().enumerate() {
                assert!(p <= best.probability);
                if p > top.0 {
                    top = (p, k + 1, Some(h.clone()));
                }
            }
        }
        assert_eq!((best.probability, best.label, Some(best.latent)), top);
    }
}

#[test]
fn even_split_defaults() {
    let h = even_split(30, 4, 9).unwrap();
    assert_eq!(h.starts(), vec![1, 9, 17, 25]);
    assert_eq!(h.lengths(), vec![8, 8, 8, 6]);
    assert!(h.is_valid(30, 4, 5, 9));
    assert_eq!(even_split(20, 4, 5).unwrap().lengths(), vec![5; 4]);
}
