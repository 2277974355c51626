//! Optimisation: Adam, the training loop and the joint-loss weight search.

mod adam;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use trainer::{
    accumulate_batch, char_nll, decode_bleu, train, train_step, tune_lambda, EpochStats, DEFAULT_LAMBDA_GRID, LambdaSearch, TrainConfig,
    TrainReport,
};
