pub mod autodiff;
pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod morphology;
pub mod pipeline;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
