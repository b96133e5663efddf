//! Transcript encoder: stacked sparse-attention layers over sentence embeddings.

pub mod attention;
mod config;
mod model;
mod params;

pub use config::{EncoderConfig, LayerDims};
pub use model::{argmax, forward, forward_with, param_leaves, predict, sp_layer, EncodedTranscript, Encoder, Forward, Mode, CONV_WIDTH};
pub use params::{
    canonical_layout, config_from_checkpoint, init_params, read_checkpoint, write_checkpoint, CheckpointHeader,
    ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
