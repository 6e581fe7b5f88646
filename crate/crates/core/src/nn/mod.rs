//! Layers and the two-encoder network.

pub mod checkpoint;
mod config;
mod network;
mod norm;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{EncoderConfig, NormKind, StageConfig};
pub use network::{Branch, ConvStage, Dense, Encoder, GroupView, Groups, Norm, YNetwork};
pub use norm::{
    batch_norm_forward, instance_norm_forward, BatchNormState, InstanceNormParams, Mode, DEFAULT_EPS,
    DEFAULT_MOMENTUM,
};
