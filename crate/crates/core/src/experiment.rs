//! Trains every variant on one synthetic task for several seeds and compares them with baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embeddings::{init_morph_table, pretrain, set_morph_table, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::eval::{bleu, csv_error, paired_bootstrap};
use crate::model::{save_checkpoint, Model, ModelDims, Variant};
use crate::pipeline::{PrepareConfig, Prepared};
use crate::synth::{SyntheticCorpus, SyntheticLangSpec};
use crate::text::{write_lines, Split};
use crate::train::{train, tune_lambda, TrainConfig, TrainReport, DEFAULT_LAMBDA_GRID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: SyntheticLangSpec,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub prepare: PrepareConfig,
    /// Label with the generator's segmentations instead of the unsupervised segmenter.
    pub gold_segmentation: bool,
    pub dims: ModelDims,
    pub train: TrainConfig,
    /// Label-channel weights tried on dev for `o` and `mo`; one value fixes it.
    pub lambda_grid: Vec<f64>,
    /// Pretrain the table of `m`/`mo` with the compositional language model.
    pub pretrain: Option<EmbeddingConfig>,
    pub variants: Vec<Variant>,
    pub beam: usize,
    pub bootstrap_samples: usize,
    pub p: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            spec: SyntheticLangSpec::default(),
            train_size: 2000,
            dev_size: 200,
            test_size: 200,
            prepare: PrepareConfig::default(),
            gold_segmentation: false,
            dims: ModelDims::default(),
            train: TrainConfig::default(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            pretrain: Some(EmbeddingConfig::default()),
            variants: Variant::ALL.to_vec(),
            beam: 5,
            bootstrap_samples: 1000,
            p: 0.05,
        }
    }
}

impl ExperimentConfig {
    /// The reference synthetic task: 2000/200/200 sentences of the default language,
    /// 14 epochs at learning rate 2e-3 with λ searched on dev.
    pub fn flagship() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.train.epochs = 14;
        cfg.train.patience = None;
        cfg.train.adam.lr = 2e-3;
        cfg.variants = vec![Variant::Baseline, Variant::Mo];
        cfg
    }
}

/// The three splits of the task, generated from `spec.seed`.
pub fn generate_task(config: &ExperimentConfig) -> Result<(SyntheticCorpus, SyntheticCorpus, SyntheticCorpus)> {
    let mut parts = config.spec.generate(&[
        (Split::Train, config.train_size),
        (Split::Dev, config.dev_size),
        (Split::Test, config.test_size),
    ])?;
    let test = parts.pop().expect("three splits");
    let dev = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    Ok((train, dev, test))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub seed: u64,
    pub variant: Variant,
    pub dev_bleu: f64,
    pub test_bleu: f64,
    /// Label-channel weight the kept model was trained with.
    pub lambda: Option<f64>,
    /// `test_bleu - baseline test_bleu` for the same seed.
    pub delta_vs_baseline: Option<f64>,
    /// Paired bootstrap verdict of this variant against baseline on the test set.
    pub significant: Option<bool>,
    pub win_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub median_dev_bleu: f64,
    pub median_test_bleu: f64,
    pub median_delta: Option<f64>,
    pub significant_seeds: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<VariantSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ExperimentReport {
    /// `seed,variant,dev_bleu,test_bleu,delta_vs_baseline,significant,lambda`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["seed", "variant", "dev_bleu", "test_bleu", "delta_vs_baseline", "significant", "lambda"])
            .map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                r.variant.to_string(),
                r.dev_bleu.to_string(),
                r.test_bleu.to_string(),
                r.delta_vs_baseline.map(|d| d.to_string()).unwrap_or_default(),
                r.significant.map(|s| s.to_string()).unwrap_or_default(),
                r.lambda.map(|l| l.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::file(path, e))
    }

    pub fn summary_for(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    fn summarise(&mut self, variants: &[Variant]) {
        self.summary = variants
            .iter()
            .map(|&v| {
                let rows: Vec<&ExperimentRow> = self.rows.iter().filter(|r| r.variant == v).collect();
                let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta_vs_baseline).collect();
                VariantSummary {
                    variant: v,
                    median_dev_bleu: median(&rows.iter().map(|r| r.dev_bleu).collect::<Vec<_>>()),
                    median_test_bleu: median(&rows.iter().map(|r| r.test_bleu).collect::<Vec<_>>()),
                    median_delta: (!deltas.is_empty()).then(|| median(&deltas)),
                    significant_seeds: rows.iter().filter(|r| r.significant == Some(true)).count(),
                    seeds: rows.len(),
                }
            })
            .collect();
    }
}

/// One trained variant: the model, its training report and its test translations.
pub struct TrainedVariant {
    pub model: Model,
    pub report: TrainReport,
    /// Selected label-channel weight; `None` without a label channel.
    pub lambda: Option<f64>,
    pub dev_output: Vec<String>,
    pub test_output: Vec<String>,
}

/// Initialises (and, for table variants, pretrains the table of) one model, trains it and translates dev and test.
/// Label-channel variants are trained once per `lambda_grid` value and the best on dev BLEU is kept.
pub fn run_variant(
    config: &ExperimentConfig,
    prepared: &Prepared,
    task: &(SyntheticCorpus, SyntheticCorpus, SyntheticCorpus),
    variant: Variant,
    seed: u64,
) -> Result<TrainedVariant> {
    let (train_c, dev_c, test_c) = task;
    let mut model = Model::init(prepared.model_config(variant, config.dims.clone()), seed)?;
    if let (true, Some(ecfg)) = (variant.uses_table(), &config.pretrain) {
        let ecfg = EmbeddingConfig {
            dim: config.dims.table_dim,
            seed,
            ..ecfg.clone()
        };
        let (lm, _) = pretrain(&train_c.corpus.targets(), &prepared.segmentations, &prepared.inventory, &ecfg)?;
        let table = init_morph_table(&lm, &prepared.labels, config.dims.init_scale, seed)?;
        set_morph_table(&mut model, table)?;
    }
    let tcfg = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let train_set = prepared.annotate(&train_c.corpus);
    let dev_set = prepared.annotate(&dev_c.corpus);
    let (model, report, lambda) = if variant.uses_labels() && config.lambda_grid.len() > 1 {
        let search = tune_lambda(&model, &train_set, &dev_set, &prepared.chars, &config.lambda_grid, &tcfg)?;
        (search.model, search.report, Some(search.best))
    } else {
        let tcfg = TrainConfig {
            lambda: config.lambda_grid.first().copied().unwrap_or(tcfg.lambda),
            ..tcfg
        };
        let lambda = variant.uses_labels().then_some(tcfg.lambda);
        let (model, report) = train(model, &train_set, &dev_set, &prepared.chars, &tcfg)?;
        (model, report, lambda)
    };
    let decode = |c: &SyntheticCorpus| -> Result<Vec<String>> {
        prepared.translate_all(&model, &c.corpus.sources(), config.beam, false)
    };
    let dev_output = decode(dev_c)?;
    let test_output = decode(test_c)?;
    Ok(TrainedVariant {
        model,
        report,
        lambda,
        dev_output,
        test_output,
    })
}

/// Trains every configured variant for every seed on the same data and compares each with baseline.
/// With `out_dir`, checkpoints, test translations, training reports and `report.csv` are written there.
pub fn compare_variants(
    config: &ExperimentConfig,
    seeds: &[u64],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentReport> {
    if seeds.is_empty() || config.variants.is_empty() {
        return Err(Error::invalid("need at least one seed and one variant"));
    }
    let task = generate_task(config)?;
    let gold = config.gold_segmentation.then_some(&task.0.gold);
    let prepared = Prepared::build(&task.0.corpus, &config.prepare, gold)?;
    let vocab_hash = prepared.vocab_hash();
    let dev_refs = task.1.corpus.targets();
    let test_refs = task.2.corpus.targets();
    let mut report = ExperimentReport::default();
    // baseline first, so every other variant can be compared as soon as it finishes
    let mut order = config.variants.clone();
    order.sort_by_key(|v| *v != Variant::Baseline);
    order.dedup();
    for &seed in seeds {
        let mut baseline: Option<(f64, Vec<String>)> = None;
        for &variant in &order {
            let run = run_variant(config, &prepared, &task, variant, seed)?;
            let dev_bleu = bleu(&run.dev_output, &dev_refs)?.value;
            let test_bleu = bleu(&run.test_output, &test_refs)?.value;
            let (delta, significant, win) = match (&baseline, variant) {
                (Some((b, b_out)), v) if v != Variant::Baseline => {
                    let boot = paired_bootstrap(&run.test_output, b_out, &test_refs, config.bootstrap_samples, config.p, seed)?;
                    (Some(test_bleu - b), Some(boot.significant), Some(boot.win_fraction_a))
                }
                (_, Variant::Baseline) => (Some(0.0), None, None),
                _ => (None, None, None),
            };
            progress(&format!(
                "seed {seed} {variant}: dev {dev_bleu:.4} test {test_bleu:.4}{}{}",
                run.lambda.map(|l| format!(" lambda {l}")).unwrap_or_default(),
                match (delta, significant) {
                    (Some(d), Some(s)) => format!(" delta {d:+.4} significant {s}"),
                    _ => String::new(),
                }
            ));
            if let Some(dir) = out_dir {
                let stem = format!("{variant}-seed{seed}");
                save_checkpoint(&dir.join(format!("{stem}.ckpt")), &run.model, seed, &vocab_hash)?;
                write_lines(&dir.join(format!("{stem}.test.txt")), &run.test_output)?;
                run.report.write_csv(&dir.join(format!("{stem}.train.csv")))?;
            }
            if variant == Variant::Baseline {
                baseline = Some((test_bleu, run.test_output.clone()));
            }
            report.rows.push(ExperimentRow {
                seed,
                variant,
                dev_bleu,
                test_bleu,
                lambda: run.lambda,
                delta_vs_baseline: delta,
                significant,
                win_fraction: win,
            });
        }
    }
    report.summarise(&order);
    if let Some(dir) = out_dir {
        report.write_csv(&dir.join("report.csv"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            spec: SyntheticLangSpec {
                stems: 6,
                sentence_len: (1, 2),
                ..Default::default()
            },
            train_size: 30,
            dev_size: 5,
            test_size: 5,
            gold_segmentation: true,
            dims: ModelDims {
                source_embed: 8,
                char_embed: 8,
                hidden: 8,
                attention: 8,
                readout: 8,
                table_dim: 8,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 1,
                ..Default::default()
            },
            pretrain: Some(EmbeddingConfig {
                hidden: 8,
                epochs: 1,
                ..Default::default()
            }),
            beam: 2,
            bootstrap_samples: 100,
            ..Default::default()
        }
    }

    #[test]
    fn one_seed_all_variants_gives_four_rows_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let report = compare_variants(&tiny(), &[5], Some(dir.path()), &mut |_| {}).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.rows[0].variant, Variant::Baseline);
        assert_eq!(report.rows[0].delta_vs_baseline, Some(0.0));
        for r in &report.rows[1..] {
            let d = r.delta_vs_baseline.unwrap();
            assert!((d - (r.test_bleu - report.rows[0].test_bleu)).abs() < 1e-15);
            assert!(r.significant.is_some());
            assert!(dir.path().join(format!("{}-seed5.ckpt", r.variant)).exists());
        }
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "seed,variant,dev_bleu,test_bleu,delta_vs_baseline,significant,lambda");
        for r in &report.rows {
            assert_eq!(r.lambda.is_some(), r.variant.uses_labels());
            assert!(r.lambda.is_none_or(|l| DEFAULT_LAMBDA_GRID.contains(&l)));
        }
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(report.summary.len(), 4);
    }

    #[test]
    fn repeated_runs_write_identical_reports() {
        let cfg = ExperimentConfig {
            variants: vec![Variant::Baseline, Variant::Mo],
            ..tiny()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        compare_variants(&cfg, &[2], Some(a.path()), &mut |_| {}).unwrap();
        compare_variants(&cfg, &[2], Some(b.path()), &mut |_| {}).unwrap();
        for name in ["report.csv", "mo-seed2.ckpt", "baseline-seed2.test.txt", "mo-seed2.train.csv"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }
}
