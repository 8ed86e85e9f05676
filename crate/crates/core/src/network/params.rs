//! Learnable weights and the canonical parameter order.
//!
//! Canonical order: for each clique, the first-layer kernels, then the
//! second-layer kernels (set-major), then the 2D kernels (set-major), each
//! kernel as weights followed by its bias; then hidden weights, hidden
//! biases, output weights, output biases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{xavier_uniform, Conv3DKernel, DenseLayer};
use crate::network::ModelConfig;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CliqueParams<T = f32> {
    /// `c1` kernels of shape `(channels, m1, h1, w1)`.
    pub conv1: Vec<Conv3DKernel<T>>,
    /// `c1 * c2` kernels of shape `(1, m2, h2, w2)`; index `a * c2 + b`
    /// applies kernel `b` to first-layer set `a`.
    pub conv2: Vec<Conv3DKernel<T>>,
    /// `c1 * c2 * c3` kernels of shape `(1, 1, h3, w3)`.
    pub conv3: Vec<Conv3DKernel<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T = f32> {
    pub cliques: Vec<CliqueParams<T>>,
    pub hidden: DenseLayer<T>,
    pub output: DenseLayer<T>,
}

fn random_kernels<T: Real>(
    rng: &mut ChaCha8Rng,
    count: usize,
    shape: [usize; 4],
    fan_out_kernels: usize,
) -> Result<Vec<Conv3DKernel<T>>> {
    let receptive = shape[1] * shape[2] * shape[3];
    let fan_in = shape[0] * receptive;
    let fan_out = fan_out_kernels * receptive;
    (0..count)
        .map(|_| {
            let w = xavier_uniform(rng, fan_in, fan_in, fan_out);
            Conv3DKernel::new(Tensor::new(shape.to_vec(), w)?, T::zero())
        })
        .collect()
}

impl<T: Real> Parameters<T> {
    /// Seeded random initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h1, w1, m1] = config.k1;
        let [h2, w2, m2] = config.k2;
        let [h3, w3] = config.k3;
        let mut cliques = Vec::with_capacity(config.cliques);
        for _ in 0..config.cliques {
            cliques.push(CliqueParams {
                conv1: random_kernels(&mut rng, config.c1, [config.channels, m1, h1, w1], config.c1)?,
                conv2: random_kernels(&mut rng, config.c1 * config.c2, [1, m2, h2, w2], config.c2)?,
                conv3: random_kernels(&mut rng, config.feature_sets(), [1, 1, h3, w3], config.c3)?,
            });
        }
        let hidden = DenseLayer::random(&mut rng, config.concat_len()?, config.fc_hidden)?;
        let output = DenseLayer::random(&mut rng, config.fc_hidden, config.classes)?;
        Ok(Parameters {
            cliques,
            hidden,
            output,
        })
    }

    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [h1, w1, m1] = config.k1;
        let [h2, w2, m2] = config.k2;
        let [h3, w3] = config.k3;
        let kernels = |n: usize, c, m, h, w| -> Result<Vec<Conv3DKernel<T>>> {
            (0..n).map(|_| Conv3DKernel::zeros(c, m, h, w)).collect()
        };
        let mut cliques = Vec::with_capacity(config.cliques);
        for _ in 0..config.cliques {
            cliques.push(CliqueParams {
                conv1: kernels(config.c1, config.channels, m1, h1, w1)?,
                conv2: kernels(config.c1 * config.c2, 1, m2, h2, w2)?,
                conv3: kernels(config.feature_sets(), 1, 1, h3, w3)?,
            });
        }
        Ok(Parameters {
            cliques,
            hidden: DenseLayer::zeros(config.concat_len()?, config.fc_hidden)?,
            output: DenseLayer::zeros(config.fc_hidden, config.classes)?,
        })
    }

    /// Visits every parameter slice in canonical order.
    pub fn for_each_slice(&self, mut f: impl FnMut(&[T])) {
        for c in &self.cliques {
            for k in c.conv1.iter().chain(&c.conv2).chain(&c.conv3) {
                f(k.weights.data());
                f(std::slice::from_ref(&k.bias));
            }
        }
        f(self.hidden.weights.data());
        f(self.hidden.biases.data());
        f(self.output.weights.data());
        f(self.output.biases.data());
    }

    pub fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        for c in &mut self.cliques {
            for k in c.conv1.iter_mut().chain(&mut c.conv2).chain(&mut c.conv3) {
                f(k.weights.data_mut());
                f(std::slice::from_mut(&mut k.bias));
            }
        }
        f(self.hidden.weights.data_mut());
        f(self.hidden.biases.data_mut());
        f(self.output.weights.data_mut());
        f(self.output.biases.data_mut());
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each_slice(|s| n += s.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.len());
        self.for_each_slice(|s| v.extend_from_slice(s));
        v
    }

    /// Overwrites every parameter from a flat canonical-order vector.
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::dim(format!(
                "flat parameter vector has {} entries, model needs {}",
                flat.len(),
                self.len()
            )));
        }
        let mut pos = 0;
        self.for_each_slice_mut(|s| {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        });
        Ok(())
    }

    /// Squared Euclidean norm over all weights and biases.
    pub fn norm_squared(&self) -> T {
        let mut acc = T::zero();
        self.for_each_slice(|s| {
            for &v in s {
                acc += v * v;
            }
        });
        acc
    }

    /// `self += scale * other`, slice by slice.
    pub fn add_scaled(&mut self, other: &Parameters<T>, scale: T) -> Result<()> {
        let flat = other.to_flat();
        if flat.len() != self.len() {
            return Err(Error::dim("parameter sets have different sizes"));
        }
        let mut pos = 0;
        self.for_each_slice_mut(|s| {
            for (v, &o) in s.iter_mut().zip(&flat[pos..]) {
                *v += scale * o;
            }
            pos += s.len();
        });
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_slice(|s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        let kernel = |k: &Conv3DKernel<T>| Conv3DKernel {
            weights: k.weights.cast(),
            bias: U::from_f64_lossy(k.bias.to_f64().unwrap_or(f64::NAN)),
        };
        let dense = |d: &DenseLayer<T>| DenseLayer {
            weights: d.weights.cast(),
            biases: d.biases.cast(),
        };
        Parameters {
            cliques: self
                .cliques
                .iter()
                .map(|c| CliqueParams {
                    conv1: c.conv1.iter().map(kernel).collect(),
                    conv2: c.conv2.iter().map(kernel).collect(),
                    conv3: c.conv3.iter().map(kernel).collect(),
                })
                .collect(),
            hidden: dense(&self.hidden),
            output: dense(&self.output),
        }
    }

    /// Checks every tensor against the shapes `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Parameters::<T>::zeros(config)?;
        let mut shapes = vec![];
        let mut collect = |p: &Parameters<T>| {
            let mut v = vec![];
            for c in &p.cliques {
                for k in c.conv1.iter().chain(&c.conv2).chain(&c.conv3) {
                    v.push(k.weights.shape().to_vec());
                }
            }
            v.push(p.hidden.weights.shape().to_vec());
            v.push(p.output.weights.shape().to_vec());
            shapes.push(v);
        };
        collect(&expected);
        collect(self);
        if shapes[0] != shapes[1] {
            return Err(Error::arg("parameter shapes do not match the model configuration"));
        }
        Ok(())
    }
}

/// Builds channel-2 parameters from channel-1 (grayscale) pretrained ones:
/// first-layer kernels gain a depth channel copied from the gray channel,
/// deeper convolution parameters are copied, and both dense layers are
/// re-initialized from `seed`.
pub fn transfer_pretrained<T: Real>(
    pretrained: &Parameters<T>,
    pretrain_config: &ModelConfig,
    target_config: &ModelConfig,
    seed: u64,
) -> Result<Parameters<T>> {
    if pretrain_config.channels != 1 {
        return Err(Error::arg(format!(
            "pretrained model must be single-channel, got {} channels",
            pretrain_config.channels
        )));
    }
    if target_config.channels != 2 {
        return Err(Error::arg(format!(
            "transfer target must have 2 channels, got {}",
            target_config.channels
        )));
    }
    if !pretrain_config.same_conv_architecture(target_config) {
        return Err(Error::arg(
            "pretrained and target configurations differ beyond the channel count",
        ));
    }
    pretrained.check_shapes(pretrain_config)?;
    let fresh = Parameters::<T>::init(target_config, seed)?;
    let cliques = pretrained
        .cliques
        .iter()
        .map(|c| -> Result<CliqueParams<T>> {
            let conv1 = c
                .conv1
                .iter()
                .map(|k| {
                    let gray = k.weights.data();
                    let mut w = Vec::with_capacity(gray.len() * 2);
                    w.extend_from_slice(gray);
                    w.extend_from_slice(gray);
                    let mut shape = k.weights.shape().to_vec();
                    shape[0] = 2;
                    Conv3DKernel::new(Tensor::new(shape, w)?, k.bias)
                })
                .collect::<Result<_>>()?;
            Ok(CliqueParams {
                conv1,
                conv2: c.conv2.clone(),
                conv3: c.conv3.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Parameters {
        cliques,
        hidden: fresh.hidden,
        output: fresh.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        // independently tallied: 4 * (7*379 + 35*148 + 140*25) + 2800*64 + 64 + 64*10 + 10
        let c = ModelConfig::default();
        assert_eq!(c.parameter_count().unwrap(), 225_246);
        let p = Parameters::<f32>::init(&c, 0).unwrap();
        assert_eq!(p.len(), 225_246);
    }

    #[test]
    fn flat_round_trip() {
        let c = ModelConfig {
            frame_h: 12,
            frame_w: 12,
            k1: [3, 3, 2],
            k2: [2, 2, 2],
            k3: [1, 1],
            pool1: [2, 2],
            pool2: [2, 2],
            max_frames: 4,
            min_frames: 3,
            c1: 2,
            c2: 2,
            c3: 1,
            cliques: 2,
            fc_hidden: 4,
            classes: 3,
            ..ModelConfig::default()
        };
        let p = Parameters::<f64>::init(&c, 3).unwrap();
        let mut q = Parameters::zeros(&c).unwrap();
        q.assign_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.len(), c.parameter_count().unwrap());
        q.check_shapes(&c).unwrap();
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let c = ModelConfig::default();
        let a = Parameters::<f32>::init(&c, 11).unwrap();
        let b = Parameters::<f32>::init(&c, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Parameters::init(&c, 12).unwrap());
    }
}
