//! Character-level encoder-decoder with source attention, an attended
//! morphology table and an auxiliary label channel.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, sha256_hex, vocab_hash, CheckpointHeader, ManifestEntry};
pub use config::{ModelConfig, ModelDims, Variant};
pub use network::{
    gru_step, parameter_shapes, AnnotatedExample, DecoderState, EncodedSource, Model, Network, SequenceVars,
    StepDecoder, StepOutput, StepVars,
};

#[cfg(test)]
pub(crate) use network::tests;
