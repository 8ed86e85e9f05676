//! Fully connected layers. Weights are stored `(fan_in, fan_out)` row-major.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => {
                let v = z.tanh();
                T::one() - v * v
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseOutput<T = f32> {
    pub output: Tensor<T>,
    pub preactivation: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T = f32> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_biases: Tensor<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        let (fan_in, fan_out) = match *weights.shape() {
            [i, o] => (i, o),
            ref s => return Err(Error::dim(format!("dense weights need 2 axes, got {s:?}"))),
        };
        if biases.shape() != [fan_out] {
            return Err(Error::dim(format!(
                "dense biases must have shape [{fan_out}] for {fan_in}x{fan_out} weights, got {:?}",
                biases.shape()
            )));
        }
        Ok(DenseLayer { weights, biases })
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[fan_in, fan_out])?, Tensor::zeros(&[fan_out])?)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = super::xavier_uniform(rng, fan_in * fan_out, fan_in, fan_out);
        Self::new(Tensor::new(vec![fan_in, fan_out], w)?, Tensor::zeros(&[fan_out])?)
    }

    pub fn fan_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `sum_i x[i] * W[row_offset + i, :]`, accumulated in row order from zero.
    pub(crate) fn partial(&self, x: &[T], row_offset: usize) -> Vec<T> {
        let fo = self.fan_out();
        let w = self.weights.data();
        let mut acc = vec![T::zero(); fo];
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &w[(row_offset + i) * fo..(row_offset + i + 1) * fo];
            for (a, &wij) in acc.iter_mut().zip(row) {
                *a += xi * wij;
            }
        }
        acc
    }

    /// Preactivation from per-block partial sums: `((b + p0) + p1) + ...`.
    pub(crate) fn combine_partials<'a>(&self, partials: impl IntoIterator<Item = &'a [T]>) -> Vec<T> {
        let mut z = self.biases.data().to_vec();
        for p in partials {
            for (a, &v) in z.iter_mut().zip(p) {
                *a += v;
            }
        }
        z
    }
}

pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    layer: &DenseLayer<T>,
    activation: Activation,
) -> Result<DenseOutput<T>> {
    if input.ndim() != 1 || input.len() != layer.fan_in() {
        return Err(Error::dim(format!(
            "dense layer expects a vector of length {}, got shape {:?}",
            layer.fan_in(),
            input.shape()
        )));
    }
    let p = layer.partial(input.data(), 0);
    let z = layer.combine_partials([p.as_slice()]);
    let out: Vec<T> = z.iter().map(|&v| activation.apply(v)).collect();
    Ok(DenseOutput {
        output: Tensor::new(vec![out.len()], out)?,
        preactivation: Tensor::new(vec![z.len()], z)?,
    })
}

pub fn dense_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    cached_preactivation: &Tensor<T>,
    layer: &DenseLayer<T>,
    activation: Activation,
) -> Result<DenseGrads<T>> {
    let (fi, fo) = (layer.fan_in(), layer.fan_out());
    if cached_input.len() != fi || cached_preactivation.len() != fo || grad_out.len() != fo {
        return Err(Error::state(format!(
            "dense cache mismatch for {fi}x{fo} layer: input {}, preactivation {}, gradient {}",
            cached_input.len(),
            cached_preactivation.len(),
            grad_out.len()
        )));
    }
    let delta: Vec<T> = grad_out
        .data()
        .iter()
        .zip(cached_preactivation.data())
        .map(|(&g, &z)| g * activation.derivative(z))
        .collect();
    let (gw, gi) = dense_backward_raw(&delta, cached_input.data(), layer.weights.data(), fo);
    Ok(DenseGrads {
        grad_input: Tensor::new(vec![fi], gi)?,
        grad_weights: Tensor::new(vec![fi, fo], gw)?,
        grad_biases: Tensor::new(vec![fo], delta)?,
    })
}

/// Weight and input gradients from `delta = dL/dz`.
pub(crate) fn dense_backward_raw<T: Real>(
    delta: &[T],
    input: &[T],
    weights: &[T],
    fan_out: usize,
) -> (Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); weights.len()];
    let mut gi = vec![T::zero(); input.len()];
    for (i, &xi) in input.iter().enumerate() {
        let row = &weights[i * fan_out..(i + 1) * fan_out];
        let grow = &mut gw[i * fan_out..(i + 1) * fan_out];
        let mut acc = T::zero();
        for ((g, &d), &w) in grow.iter_mut().zip(delta).zip(row) {
            *g = xi * d;
            acc += w * d;
        }
        gi[i] = acc;
    }
    (gw, gi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_through() {
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0f64 } else { 0.0 }).unwrap();
        let layer = DenseLayer::new(w, Tensor::zeros(&[3]).unwrap()).unwrap();
        let x = Tensor::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let out = dense_forward(&x, &layer, Activation::Identity).unwrap();
        assert_eq!(out.output, x);
    }

    #[test]
    fn default_hidden_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::<f32>::random(&mut rng, 2800, 64).unwrap();
        let x = Tensor::filled(&[2800], 0.01).unwrap();
        assert_eq!(dense_forward(&x, &layer, Activation::Tanh).unwrap().output.len(), 64);
        let bad = Tensor::filled(&[2799], 0.01).unwrap();
        assert!(matches!(dense_forward(&bad, &layer, Activation::Tanh), Err(Error::Dimension(_))));
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = DenseLayer::<f64>::random(&mut rng, 5, 3).unwrap();
        layer.biases = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = Tensor::new(vec![5], vec![0.3, -0.7, 1.1, 0.0, 0.25]).unwrap();
        let out = dense_forward(&x, &layer, Activation::Tanh).unwrap();
        for j in 0..3 {
            let mut z = layer.biases.data()[j];
            for i in 0..5 {
                z += x.data()[i] * layer.weights.get(&[i, j]).unwrap();
            }
            assert!((out.output.data()[j] - z.tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DenseLayer::<f64>::random(&mut rng, 4, 2).unwrap();
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let fwd = dense_forward(&x, &layer, Activation::Tanh).unwrap();
        let g = dense_backward(&Tensor::zeros(&[2]).unwrap(), &x, &fwd.preactivation, &layer, Activation::Tanh).unwrap();
        assert!(g.grad_weights.data().iter().chain(g.grad_biases.data()).chain(g.grad_input.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_neuron_weight_gradient() {
        let layer = DenseLayer::new(Tensor::new(vec![1, 1], vec![0.4f64]).unwrap(), Tensor::zeros(&[1]).unwrap()).unwrap();
        let x = Tensor::new(vec![1], vec![1.5]).unwrap();
        let fwd = dense_forward(&x, &layer, Activation::Identity).unwrap();
        let g = dense_backward(&Tensor::new(vec![1], vec![2.0]).unwrap(), &x, &fwd.preactivation, &layer, Activation::Identity).unwrap();
        assert_eq!(g.grad_weights.data(), &[3.0]);
    }

    #[test]
    fn missing_cache_is_state_error() {
        let layer = DenseLayer::<f64>::zeros(3, 2).unwrap();
        let x = Tensor::zeros(&[3]).unwrap();
        let err = dense_backward(&Tensor::zeros(&[2]).unwrap(), &x, &Tensor::zeros(&[1]).unwrap(), &layer, Activation::Tanh);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = DenseLayer::<f64>::random(&mut rng, 6, 4).unwrap();
        layer.biases = Tensor::new(vec![4], vec![0.1, 0.2, -0.3, 0.05]).unwrap();
        let x = Tensor::new(vec![6], vec![0.3, -0.2, 0.9, -1.1, 0.4, 0.7]).unwrap();
        let up = Tensor::new(vec![4], vec![0.5, -1.0, 0.25, 2.0]).unwrap();
        let loss = |x: &Tensor<f64>, l: &DenseLayer<f64>| -> f64 {
            let o = dense_forward(x, l, Activation::Tanh).unwrap().output;
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let fwd = dense_forward(&x, &layer, Activation::Tanh).unwrap();
        let g = dense_backward(&up, &x, &fwd.preactivation, &layer, Activation::Tanh).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 0..layer.weights.len() {
            let mut lp = layer.clone();
            lp.weights.data_mut()[i] += h;
            let mut lm = layer.clone();
            lm.weights.data_mut()[i] -= h;
            let n = (loss(&x, &lp) - loss(&x, &lm)) / (2.0 * h);
            assert!(rel(g.grad_weights.data()[i], n) < 1e-4);
        }
        for i in 0..4 {
            let mut lp = layer.clone();
            lp.biases.data_mut()[i] += h;
            let mut lm = layer.clone();
            lm.biases.data_mut()[i] -= h;
            let n = (loss(&x, &lp) - loss(&x, &lm)) / (2.0 * h);
            assert!(rel(g.grad_biases.data()[i], n) < 1e-4);
        }
        for i in 0..6 {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let n = (loss(&xp, &layer) - loss(&xm, &layer)) / (2.0 * h);
            assert!(rel(g.grad_input.data()[i], n) < 1e-4);
        }
    }
}
