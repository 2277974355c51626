use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::autodiff::{ParameterSet, Tape};
use crate::error::{Error, Result};
use crate::eval::{bleu, csv_error, default_max_len, translate_ids, BeamConfig};
use crate::model::{AnnotatedExample, Model};
use crate::text::CharVocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Global gradient-norm bound.
    pub clip: f64,
    /// Epochs without dev-loss improvement before stopping; `None` trains all epochs.
    pub patience: Option<usize>,
    /// Beam width used for the per-epoch dev BLEU.
    pub dev_beam: usize,
    /// Store wall-clock seconds in the report; off keeps report files reproducible.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig {
                lr: 3e-3,
                ..Default::default()
            },
            batch_size: 16,
            epochs: 20,
            lambda: 0.7,
            seed: 1,
            clip: 5.0,
            patience: Some(3),
            dev_beam: 1,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("gradient clip must be positive"));
        }
        if self.batch_size == 0 || self.dev_beam == 0 {
            return Err(Error::invalid("batch size and dev beam must be at least 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Character NLL per predicted character, averaged over the epoch's updates.
    pub train_nll: f64,
    pub dev_nll: Option<f64>,
    pub dev_bleu: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub rows: Vec<EpochStats>,
    pub lambda: f64,
    /// Epoch whose parameters were kept; `None` when the initial parameters were.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// `epoch,train_nll,dev_nll,dev_bleu,seconds`; missing dev values are empty fields.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["epoch", "train_nll", "dev_nll", "dev_bleu", "seconds"])
            .map_err(|e| csv_error(path, e))?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.train_nll.to_string(),
                opt(r.dev_nll),
                opt(r.dev_bleu),
                r.seconds.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::file(path, e))
    }

    pub fn best_dev_bleu(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.rows.iter().find(|r| r.epoch == best)?.dev_bleu
    }
}

/// Accumulates the gradient of `sum(loss) / sum(predicted chars)` over `batch`.
/// Returns the summed character NLL and the character count.
pub fn accumulate_batch(model: &mut Model, batch: &[&AnnotatedExample], lambda: f64) -> Result<(f64, usize)> {
    let chars: usize = batch.iter().map(|e| e.predicted_len()).sum();
    if chars == 0 {
        return Err(Error::Empty("training batch"));
    }
    let mut nll = 0.0;
    for ex in batch {
        let mut tape = Tape::new();
        let out = model.net.forward_sequence(&model.params, &mut tape, ex, lambda)?;
        let loss = tape.value(out.loss).item();
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss {loss} on a training example")));
        }
        nll += tape.value(out.char_nll).item();
        let grads = tape.gradients(out.loss)?;
        model.params.accumulate_scaled(&grads, 1.0 / chars as f64);
    }
    Ok((nll, chars))
}

/// One optimizer update on `batch`; returns the batch's character NLL per character before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &[&AnnotatedExample], lambda: f64, clip: f64) -> Result<f64> {
    model.params.zero_grads();
    let (nll, chars) = accumulate_batch(model, batch, lambda)?;
    adam.step(&mut model.params, Some(clip))?;
    Ok(nll / chars as f64)
}

/// Character NLL per predicted character.
pub fn char_nll(model: &Model, examples: &[AnnotatedExample]) -> Result<f64> {
    let (mut nll, mut chars) = (0.0, 0usize);
    for ex in examples {
        nll += model.evaluate(ex, 1.0)?.1;
        chars += ex.predicted_len();
    }
    if chars == 0 {
        return Err(Error::Empty("char_nll"));
    }
    Ok(nll / chars as f64)
}

/// Decodes every example's source and scores it against the example's target text.
/// Output length is capped at `3 * reference chars + 10`.
pub fn decode_bleu(model: &Model, examples: &[AnnotatedExample], chars: &CharVocab, width: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    for ex in examples {
        let cfg = BeamConfig {
            width,
            max_len: default_max_len(ex.predicted_len()),
            bos: CharVocab::BOS_ID,
            eos: CharVocab::EOS_ID,
            length_normalize: false,
        };
        let hyp = translate_ids(model, &ex.source, &cfg)?;
        hyps.push(chars.decode(hyp.output()));
        refs.push(chars.decode(&ex.target));
    }
    Ok(bleu(&hyps, &refs)?.value)
}

/// Teacher-forced training with Adam. Batches are reshuffled every epoch from `config.seed`.
/// With a dev set, the parameters with the lowest dev character NLL are returned
/// and training stops after `patience` epochs without improvement.
pub fn train(
    mut model: Model,
    train_set: &[AnnotatedExample],
    dev_set: &[AnnotatedExample],
    chars: &CharVocab,
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut report = TrainReport {
        lambda: config.lambda,
        ..Default::default()
    };
    let mut adam = Adam::new(&model.params, config.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, ParameterSet)> = None;
    let mut since_best = 0usize;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut nll, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&AnnotatedExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            model.params.zero_grads();
            let (n, c) = accumulate_batch(&mut model, &batch, config.lambda)?;
            adam.step(&mut model.params, Some(config.clip))?;
            nll += n;
            count += c;
        }
        let (dev_nll, dev_bleu) = if dev_set.is_empty() {
            (None, None)
        } else {
            (
                Some(char_nll(&model, dev_set)?),
                Some(decode_bleu(&model, dev_set, chars, config.dev_beam)?),
            )
        };
        report.rows.push(EpochStats {
            epoch,
            train_nll: nll / count as f64,
            dev_nll,
            dev_bleu,
            seconds: if config.record_time { start.elapsed().as_secs_f64() } else { 0.0 },
        });
        match dev_nll {
            Some(d) => {
                if best.as_ref().is_none_or(|(b, _)| d < *b) {
                    best = Some((d, model.params.clone()));
                    report.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if config.patience.is_some_and(|p| since_best >= p) {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
            None => report.best_epoch = Some(epoch),
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.params.zero_grads();
    Ok((model, report))
}

/// Candidate label-channel weights searched on dev when none is fixed.
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.3, 0.5, 0.7, 1.0];

/// Outcome of a grid search over the joint-loss weight.
#[derive(Clone, Debug)]
pub struct LambdaSearch {
    pub best: f64,
    /// `(lambda, dev BLEU of the kept checkpoint)` in grid order.
    pub scores: Vec<(f64, f64)>,
    pub model: Model,
    pub report: TrainReport,
}

/// Trains one model per distinct grid value, each from `init` and with the same seed,
/// and keeps the one with the highest dev BLEU; ties go to the larger weight.
pub fn tune_lambda(
    init: &Model,
    train_set: &[AnnotatedExample],
    dev_set: &[AnnotatedExample],
    chars: &CharVocab,
    grid: &[f64],
    config: &TrainConfig,
) -> Result<LambdaSearch> {
    if dev_set.is_empty() {
        return Err(Error::Empty("development set for lambda tuning"));
    }
    let mut values: Vec<f64> = grid.to_vec();
    if values.is_empty() || values.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::invalid(format!("lambda grid {grid:?} must be a nonempty subset of [0, 1]")));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut result: Option<(f64, LambdaSearch)> = None;
    let mut scores = Vec::with_capacity(values.len());
    for &lambda in &values {
        let cfg = TrainConfig { lambda, ..config.clone() };
        let (model, report) = train(init.clone(), train_set, dev_set, chars, &cfg)?;
        let score = match report.best_dev_bleu() {
            Some(s) => s,
            None => decode_bleu(&model, dev_set, chars, config.dev_beam)?,
        };
        scores.push((lambda, score));
        // ascending grid, so `>=` hands ties to the larger lambda
        if result.as_ref().is_none_or(|(best, _)| score >= *best) {
            let search = LambdaSearch {
                best: lambda,
                scores: Vec::new(),
                model,
                report,
            };
            result = Some((score, search));
        }
    }
    let (_, mut out) = result.expect("grid is nonempty");
    out.scores = scores;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_config;
    use crate::model::Variant;

    fn data() -> (Vec<AnnotatedExample>, CharVocab) {
        let chars = CharVocab::build(&["abcde"], 400).unwrap();
        assert_eq!(chars.len(), 9);
        let ex = |source: Vec<usize>, text: &str, labels: Vec<usize>| {
            let target = chars.encode(text);
            assert_eq!(target.len(), labels.len());
            AnnotatedExample { source, target, labels }
        };
        let set = vec![
            ex(vec![1, 2], "ab", vec![0, 2, 5, 4]),
            ex(vec![3], "cd a", vec![0, 2, 5, 1, 2, 4]),
            ex(vec![4, 5, 6], "e", vec![0, 2, 4]),
        ];
        (set, chars)
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            patience: None,
            adam: AdamConfig { lr: 0.05, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let (set, chars) = data();
        let model = Model::init(tiny_config(Variant::Mo), 1).unwrap();
        let (out, report) = train(model.clone(), &set, &set, &chars, &quick(0)).unwrap();
        assert!(report.rows.is_empty());
        for ((_, a), (_, b)) in model.params.iter().zip(out.params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn same_seed_same_report() {
        let (set, chars) = data();
        let model = Model::init(tiny_config(Variant::Mo), 2).unwrap();
        let (a, ra) = train(model.clone(), &set, &set[..1], &chars, &quick(3)).unwrap();
        let (b, rb) = train(model, &set, &set[..1], &chars, &quick(3)).unwrap();
        assert_eq!(ra, rb);
        for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn overfits_single_example() {
        let (set, chars) = data();
        let one = &set[1..2];
        let model = Model::init(tiny_config(Variant::Mo), 3).unwrap();
        let cfg = TrainConfig { epochs: 300, ..quick(0) };
        let (model, report) = train(model, one, &[], &chars, &cfg).unwrap();
        assert_eq!(report.rows.len(), 300);
        assert!(char_nll(&model, one).unwrap() < 0.05);
    }

    #[test]
    fn single_batch_loss_non_increasing_at_small_lr() {
        let (set, _) = data();
        let batch: Vec<&AnnotatedExample> = set.iter().collect();
        let mut model = Model::init(tiny_config(Variant::Mo), 4).unwrap();
        let mut adam = Adam::new(&model.params, AdamConfig::default()).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..25 {
            model.params.zero_grads();
            let loss: f64 = set.iter().map(|e| model.evaluate(e, 0.7).unwrap().0).sum();
            assert!(loss <= prev, "{loss} > {prev}");
            prev = loss;
            accumulate_batch(&mut model, &batch, 0.7).unwrap();
            adam.step(&mut model.params, Some(5.0)).unwrap();
        }
    }

    #[test]
    fn label_head_gets_no_gradient_at_lambda_one() {
        let (set, _) = data();
        let batch: Vec<&AnnotatedExample> = set.iter().collect();
        for variant in [Variant::O, Variant::Mo] {
            let mut model = Model::init(tiny_config(variant), 5).unwrap();
            model.params.zero_grads();
            accumulate_batch(&mut model, &batch, 1.0).unwrap();
            let (w, b) = model.net.label_ids().unwrap();
            assert!(model.params.get(w).grad.data().iter().all(|&g| g == 0.0));
            assert!(model.params.get(b).grad.data().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn report_csv_layout() {
        let (set, chars) = data();
        let model = Model::init(tiny_config(Variant::O), 6).unwrap();
        let (_, report) = train(model, &set, &set[..2], &chars, &quick(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        report.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_nll,dev_nll,dev_bleu,seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
        assert!(lines[1].ends_with(",0"));
    }

    #[test]
    fn early_stopping_keeps_best_dev_checkpoint() {
        let (set, chars) = data();
        let model = Model::init(tiny_config(Variant::Baseline), 7).unwrap();
        // dev disjoint from train, large lr: dev loss soon stops improving
        let cfg = TrainConfig {
            epochs: 60,
            patience: Some(2),
            adam: AdamConfig { lr: 0.2, ..Default::default() },
            ..quick(0)
        };
        let (model, report) = train(model, &set[..2], &set[2..], &chars, &cfg).unwrap();
        let best = report.best_epoch.unwrap();
        let best_dev = report.rows[best - 1].dev_nll.unwrap();
        assert!(report.rows.iter().all(|r| r.dev_nll.unwrap() >= best_dev));
        assert!((char_nll(&model, &set[2..]).unwrap() - best_dev).abs() < 1e-12);
        if report.stopped_early {
            assert_eq!(report.rows.len(), best + 2);
        }
    }

    #[test]
    fn lambda_grid_dedup_and_singleton() {
        let (set, chars) = data();
        let model = Model::init(tiny_config(Variant::Mo), 8).unwrap();
        let r = tune_lambda(&model, &set, &set, &chars, &[1.0], &quick(1)).unwrap();
        assert_eq!(r.best, 1.0);
        let r = tune_lambda(&model, &set, &set, &chars, &[0.5, 1.0, 0.5], &quick(1)).unwrap();
        assert_eq!(r.scores.len(), 2);
        let top = r.scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let expected = r.scores.iter().rev().find(|s| s.1 == top).unwrap().0;
        assert_eq!(r.best, expected);
        assert!(tune_lambda(&model, &set, &[], &chars, &[1.0], &quick(1)).is_err());
        assert!(tune_lambda(&model, &set, &set, &chars, &[1.5], &quick(1)).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let (set, chars) = data();
        let model = Model::init(tiny_config(Variant::Mo), 9).unwrap();
        for cfg in [
            TrainConfig { lambda: 1.2, ..quick(1) },
            TrainConfig { clip: 0.0, ..quick(1) },
            TrainConfig { batch_size: 0, ..quick(1) },
        ] {
            assert!(train(model.clone(), &set, &[], &chars, &cfg).is_err());
        }
        assert!(train(model, &[], &[], &chars, &quick(1)).is_err());
    }
}
