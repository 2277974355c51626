//! Decoding, scoring and attention export.

mod attention;
mod beam;
mod bleu;
mod bootstrap;

pub use attention::{export_attention, AttentionMap};
pub(crate) use attention::csv_error;
pub use beam::{beam_search, default_max_len, greedy_decode, translate_ids, BeamConfig, Hypothesis, StepModel};
pub use bleu::{bleu, corpus_stats, BleuScore, BleuStats, MAX_ORDER};
pub use bootstrap::{paired_bootstrap, BootstrapReport};
