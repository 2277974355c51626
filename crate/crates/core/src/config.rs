//! Flat `key = value` run configuration. Later sources override earlier ones:
//! defaults, then a config file, then command-line settings.

use std::fs;
use std::path::Path;

use crate::embeddings::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::model::{ModelDims, Variant};
use crate::pipeline::PrepareConfig;
use crate::synth::SyntheticLangSpec;
use crate::train::{TrainConfig, DEFAULT_LAMBDA_GRID};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub variant: Variant,
    pub seed: u64,
    pub dims: ModelDims,
    pub train: TrainConfig,
    /// Width used by `translate` and when scoring experiments.
    pub beam: usize,
    pub length_normalize: bool,
    pub prepare: PrepareConfig,
    pub embeddings: EmbeddingConfig,
    pub synth: SyntheticLangSpec,
    pub bootstrap_samples: usize,
    pub p: f64,
    /// Candidate λ values; one value means no search.
    pub lambda_grid: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let train = TrainConfig::default();
        Config {
            variant: Variant::Mo,
            seed: 1,
            dims: ModelDims::default(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            train,
            beam: 5,
            length_normalize: false,
            prepare: PrepareConfig::default(),
            embeddings: EmbeddingConfig::default(),
            synth: SyntheticLangSpec::default(),
            bootstrap_samples: 1000,
            p: 0.05,
        }
    }
}

/// Every accepted key, in the order `describe` lists them.
pub const KEYS: &[&str] = &[
    "variant",
    "seed",
    "source_embed",
    "char_embed",
    "hidden",
    "attention",
    "readout",
    "table_dim",
    "decoder_layers",
    "init_scale",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "lambda",
    "lambda_grid",
    "clip",
    "patience",
    "dev_beam",
    "beam",
    "length_normalize",
    "bpe_merges",
    "char_cap",
    "affix_min_count",
    "mdl_seed",
    "embed_dim",
    "embed_hidden",
    "embed_epochs",
    "embed_batch_size",
    "embed_lr",
    "synth_stems",
    "synth_stem_min",
    "synth_stem_max",
    "synth_max_suffixes",
    "synth_sentence_min",
    "synth_sentence_max",
    "synth_seed",
    "bootstrap_samples",
    "p",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::invalid(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl Config {
    /// Applies one setting given as text.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "variant" => self.variant = v.trim().parse()?,
            "seed" => self.seed = parse(key, v)?,
            "source_embed" => self.dims.source_embed = parse(key, v)?,
            "char_embed" => self.dims.char_embed = parse(key, v)?,
            "hidden" => self.dims.hidden = parse(key, v)?,
            "attention" => self.dims.attention = parse(key, v)?,
            "readout" => self.dims.readout = parse(key, v)?,
            "table_dim" => self.dims.table_dim = parse(key, v)?,
            "decoder_layers" => self.dims.decoder_layers = parse(key, v)?,
            "init_scale" => self.dims.init_scale = parse(key, v)?,
            "lr" => self.train.adam.lr = parse(key, v)?,
            "beta1" => self.train.adam.beta1 = parse(key, v)?,
            "beta2" => self.train.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam.eps = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "lambda" => {
                self.train.lambda = parse(key, v)?;
                self.lambda_grid = vec![self.train.lambda];
            }
            "lambda_grid" => self.lambda_grid = parse_list(key, v)?,
            "clip" => self.train.clip = parse(key, v)?,
            "patience" => {
                let p: usize = parse(key, v)?;
                self.train.patience = (p > 0).then_some(p);
            }
            "dev_beam" => self.train.dev_beam = parse(key, v)?,
            "beam" => self.beam = parse(key, v)?,
            "length_normalize" => self.length_normalize = parse(key, v)?,
            "bpe_merges" => self.prepare.bpe_merges = parse(key, v)?,
            "char_cap" => self.prepare.char_cap = parse(key, v)?,
            "affix_min_count" => self.prepare.affix_min_count = parse(key, v)?,
            "mdl_seed" => self.prepare.mdl_seed = parse(key, v)?,
            "embed_dim" => self.embeddings.dim = parse(key, v)?,
            "embed_hidden" => self.embeddings.hidden = parse(key, v)?,
            "embed_epochs" => self.embeddings.epochs = parse(key, v)?,
            "embed_batch_size" => self.embeddings.batch_size = parse(key, v)?,
            "embed_lr" => self.embeddings.lr = parse(key, v)?,
            "synth_stems" => self.synth.stems = parse(key, v)?,
            "synth_stem_min" => self.synth.stem_len.0 = parse(key, v)?,
            "synth_stem_max" => self.synth.stem_len.1 = parse(key, v)?,
            "synth_max_suffixes" => self.synth.max_suffixes = parse(key, v)?,
            "synth_sentence_min" => self.synth.sentence_len.0 = parse(key, v)?,
            "synth_sentence_max" => self.synth.sentence_len.1 = parse(key, v)?,
            "synth_seed" => self.synth.seed = parse(key, v)?,
            "bootstrap_samples" => self.bootstrap_samples = parse(key, v)?,
            "p" => self.p = parse(key, v)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` pair.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    /// Applies every key of a flat TOML table.
    pub fn apply_toml(&mut self, text: &str, path: &Path) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        for (k, v) in &table {
            let text = match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => v.to_string(),
                toml::Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                _ => return Err(Error::invalid(format!("`{k}` in {} must be a plain value", path.display()))),
            };
            self.set(k, &text)?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides` (each `key=value`), then validation.
    pub fn resolve<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            cfg.apply_toml(&text, path)?;
        }
        for o in overrides {
            cfg.set_pair(o.as_ref())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.beam == 0 {
            return Err(Error::invalid("beam must be at least 1"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid(format!("lambda grid {:?} must be non-empty within [0, 1]", self.lambda_grid)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1), got {}", self.p)));
        }
        Ok(())
    }

    /// The training configuration with the run seed applied.
    /// A one-value grid fixes λ to that value.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            lambda: match self.lambda_grid[..] {
                [l] => l,
                _ => self.train.lambda,
            },
            ..self.train.clone()
        }
    }

    /// Embedding pretraining sized to the model's table.
    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            dim: self.dims.table_dim,
            seed: self.seed,
            ..self.embeddings.clone()
        }
    }

    pub fn experiment(&self, train_size: usize, dev_size: usize, test_size: usize) -> ExperimentConfig {
        ExperimentConfig {
            spec: self.synth.clone(),
            train_size,
            dev_size,
            test_size,
            prepare: self.prepare.clone(),
            gold_segmentation: false,
            dims: self.dims.clone(),
            train: self.train.clone(),
            lambda_grid: self.lambda_grid.clone(),
            pretrain: (self.embeddings.epochs > 0).then(|| self.embeddings.clone()),
            variants: Variant::ALL.to_vec(),
            beam: self.beam,
            bootstrap_samples: self.bootstrap_samples,
            p: self.p,
        }
    }

    /// Every key with its current value, in file syntax.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "variant" => format!("\"{}\"", self.variant),
                "seed" => self.seed.to_string(),
                "source_embed" => self.dims.source_embed.to_string(),
                "char_embed" => self.dims.char_embed.to_string(),
                "hidden" => self.dims.hidden.to_string(),
                "attention" => self.dims.attention.to_string(),
                "readout" => self.dims.readout.to_string(),
                "table_dim" => self.dims.table_dim.to_string(),
                "decoder_layers" => self.dims.decoder_layers.to_string(),
                "init_scale" => self.dims.init_scale.to_string(),
                "lr" => self.train.adam.lr.to_string(),
                "beta1" => self.train.adam.beta1.to_string(),
                "beta2" => self.train.adam.beta2.to_string(),
                "adam_eps" => self.train.adam.eps.to_string(),
                "batch_size" => self.train.batch_size.to_string(),
                "epochs" => self.train.epochs.to_string(),
                "lambda" => self.train.lambda.to_string(),
                "lambda_grid" => format!(
                    "[{}]",
                    self.lambda_grid.iter().map(|l| format!("{l:?}")).collect::<Vec<_>>().join(", ")
                ),
                "clip" => self.train.clip.to_string(),
                "patience" => self.train.patience.unwrap_or(0).to_string(),
                "dev_beam" => self.train.dev_beam.to_string(),
                "beam" => self.beam.to_string(),
                "length_normalize" => self.length_normalize.to_string(),
                "bpe_merges" => self.prepare.bpe_merges.to_string(),
                "char_cap" => self.prepare.char_cap.to_string(),
                "affix_min_count" => self.prepare.affix_min_count.to_string(),
                "mdl_seed" => self.prepare.mdl_seed.to_string(),
                "embed_dim" => self.embeddings.dim.to_string(),
                "embed_hidden" => self.embeddings.hidden.to_string(),
                "embed_epochs" => self.embeddings.epochs.to_string(),
                "embed_batch_size" => self.embeddings.batch_size.to_string(),
                "embed_lr" => self.embeddings.lr.to_string(),
                "synth_stems" => self.synth.stems.to_string(),
                "synth_stem_min" => self.synth.stem_len.0.to_string(),
                "synth_stem_max" => self.synth.stem_len.1.to_string(),
                "synth_max_suffixes" => self.synth.max_suffixes.to_string(),
                "synth_sentence_min" => self.synth.sentence_len.0.to_string(),
                "synth_sentence_max" => self.synth.sentence_len.1.to_string(),
                "synth_seed" => self.synth.seed.to_string(),
                "bootstrap_samples" => self.bootstrap_samples.to_string(),
                "p" => self.p.to_string(),
                _ => unreachable!("every key is listed"),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}
