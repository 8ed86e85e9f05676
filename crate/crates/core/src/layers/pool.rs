//! Spatial max-pooling over non-overlapping windows.
//!
//! Trailing rows/columns that do not fill a whole window form a truncated
//! window. Ties go to the first cell in row-major window order.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct PoolRecord<T = f32> {
    pub pooled: Tensor<T>,
    /// Flat input index of the winning cell, one per pooled cell.
    pub argmax: Vec<usize>,
}

pub fn pooled_extent(input: usize, window: usize) -> usize {
    input.div_ceil(window)
}

fn dims3<T: Real>(t: &Tensor<T>) -> Result<[usize; 3]> {
    match *t.shape() {
        [m, h, w] => Ok([m, h, w]),
        [h, w] => Ok([1, h, w]),
        ref s => Err(Error::dim(format!("max-pool input needs (maps, H, W), got {s:?}"))),
    }
}

pub fn maxpool_forward<T: Real>(input: &Tensor<T>, window: [usize; 2]) -> Result<PoolRecord<T>> {
    let [maps, h, w] = dims3(input)?;
    let [ph, pw] = window;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::dim(format!(
            "pooling window {ph}x{pw} does not fit input {h}x{w}"
        )));
    }
    let (oh, ow) = (pooled_extent(h, ph), pooled_extent(w, pw));
    let mut pooled = vec![T::zero(); maps * oh * ow];
    let mut argmax = vec![0usize; maps * oh * ow];
    pool_into(input.data(), [maps, h, w], window, &mut pooled, &mut argmax);
    let shape = if input.ndim() == 2 { vec![oh, ow] } else { vec![maps, oh, ow] };
    Ok(PoolRecord {
        pooled: Tensor::new(shape, pooled)?,
        argmax,
    })
}

pub(crate) fn pool_into<T: Real>(
    input: &[T],
    dims: [usize; 3],
    window: [usize; 2],
    pooled: &mut [T],
    argmax: &mut [usize],
) {
    let [maps, h, w] = dims;
    let [ph, pw] = window;
    let (oh, ow) = (pooled_extent(h, ph), pooled_extent(w, pw));
    for m in 0..maps {
        let base = m * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * ph * w + ox * pw;
                let mut best_v = input[best];
                for y in oy * ph..((oy + 1) * ph).min(h) {
                    for x in ox * pw..((ox + 1) * pw).min(w) {
                        let idx = base + y * w + x;
                        if input[idx] > best_v {
                            best_v = input[idx];
                            best = idx;
                        }
                    }
                }
                let o = (m * oh + oy) * ow + ox;
                pooled[o] = best_v;
                argmax[o] = best;
            }
        }
    }
}

pub fn maxpool_backward<T: Real>(
    grad_out: &Tensor<T>,
    record: &PoolRecord<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != record.argmax.len() {
        return Err(Error::state(format!(
            "gradient has {} cells but pool record has {}",
            grad_out.len(),
            record.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let n = grad.len();
    let g = grad.data_mut();
    for (&idx, &d) in record.argmax.iter().zip(grad_out.data()) {
        if idx >= n {
            return Err(Error::state(format!(
                "argmax index {idx} outside input of {n} cells"
            )));
        }
        g[idx] += d;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_example() {
        let x = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let rec = maxpool_forward(&x, [2, 2]).unwrap();
        assert_eq!(rec.pooled.data(), &[4.0]);
        assert_eq!(rec.argmax, vec![3]);
        let g = maxpool_backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &rec, &[2, 2]).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
        let z = maxpool_backward(&Tensor::zeros(&[1, 1]).unwrap(), &rec, &[2, 2]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_shape() {
        let x = Tensor::<f32>::zeros(&[7, 54, 72]).unwrap();
        let rec = maxpool_forward(&x, [3, 3]).unwrap();
        assert_eq!(rec.pooled.shape(), &[7, 18, 24]);
    }

    #[test]
    fn ties_pick_first_cell() {
        let x = Tensor::filled(&[1, 4, 4], 0.5f32).unwrap();
        let rec = maxpool_forward(&x, [2, 2]).unwrap();
        assert!(rec.pooled.data().iter().all(|&v| v == 0.5));
        assert_eq!(rec.argmax, vec![0, 2, 8, 10]);
    }

    #[test]
    fn truncated_windows() {
        let x = Tensor::from_fn(&[1, 5, 5], |i| i as f32).unwrap();
        let rec = maxpool_forward(&x, [2, 2]).unwrap();
        assert_eq!(rec.pooled.shape(), &[1, 3, 3]);
        assert_eq!(rec.pooled.data()[8], 24.0);
        assert_eq!(rec.pooled.data()[2], 9.0);
    }

    #[test]
    fn oversized_window_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2]).unwrap();
        assert!(matches!(maxpool_forward(&x, [3, 1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn bad_argmax_is_state_error() {
        let x = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut rec = maxpool_forward(&x, [2, 2]).unwrap();
        rec.argmax[0] = 99;
        let g = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!(matches!(maxpool_backward(&g, &rec, &[2, 2]), Err(Error::State(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // distinct values keep every perturbation away from ties
        let x = Tensor::from_fn(&[2, 6, 6], |i| i as f64 * 0.01 + rng.gen_range(0.0..0.001)).unwrap();
        let x = {
            let mut d = x.into_data();
            for i in (1..d.len()).rev() {
                let j = rng.gen_range(0..=i);
                d.swap(i, j);
            }
            Tensor::new(vec![2, 6, 6], d).unwrap()
        };
        let up = Tensor::from_fn(&[2, 3, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let rec = maxpool_forward(&x, [2, 2]).unwrap();
        let g = maxpool_backward(&up, &rec, x.shape()).unwrap();
        let loss = |x: &Tensor<f64>| -> f64 {
            let p = maxpool_forward(x, [2, 2]).unwrap().pooled;
            p.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let n = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let a = g.data()[i];
            assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-4);
        }
    }
}
