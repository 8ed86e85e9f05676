//! Spatio-temporal convolutional network for activity recognition with a
//! latent temporal segmentation of each video into cliques.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod latent;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use data::VideoSample;
pub use error::{Error, Result};
pub use latent::{enumerate, enumeration_calls, estep_assign, even_split, infer, Inference, LatentVars, Window};
pub use network::{network_backward, network_forward, ModelConfig, Parameters};
pub use tensor::{Real, Tensor};
pub use train::{cost, lsbp_train, pretrain, sgd_epoch, TrainConfig, TrainMode, TrainState};
