//! The M-clique network: configuration, parameters, forward/backward passes,
//! pretrained-weight transfer and checkpoints.

mod checkpoint;
mod clique;
mod config;
mod model;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use clique::{clique_forward, CliqueActivation};
pub use config::{ModelConfig, StageDims};
pub use model::{
    backward_from_trace, forward_trace, network_backward, network_forward, sample_loss,
    NetworkTrace, SegmentCache, PROB_EPSILON,
};
pub use params::{transfer_pretrained, CliqueParams, Parameters};

