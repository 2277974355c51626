use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bleu::{corpus_stats, BleuStats};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BootstrapReport {
    /// Fraction of resamples in which system A scores strictly higher than B.
    pub win_fraction_a: f64,
    pub significant: bool,
    pub samples: usize,
    pub seed: u64,
    pub p: f64,
}

impl BootstrapReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// Paired bootstrap resampling over sentences. A is significantly better
/// than B iff it wins in at least `1 - p` of the resamples.
pub fn paired_bootstrap<S: AsRef<str>, T: AsRef<str>>(
    system_a: &[S],
    system_b: &[S],
    references: &[T],
    samples: usize,
    p: f64,
    seed: u64,
) -> Result<BootstrapReport> {
    if samples < 100 {
        return Err(Error::invalid("bootstrap needs at least 100 samples"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must lie in (0, 1), got {p}")));
    }
    if system_a.len() != system_b.len() {
        return Err(Error::invalid("systems have different numbers of sentences"));
    }
    // canonical order, so the verdict does not depend on how the corpus was listed
    let mut rows: Vec<(&str, &str, &str)> = references
        .iter()
        .zip(system_a)
        .zip(system_b)
        .map(|((r, a), b)| (r.as_ref(), a.as_ref(), b.as_ref()))
        .collect();
    if rows.len() != references.len() || rows.len() != system_a.len() {
        return Err(Error::invalid("systems and references have different numbers of sentences"));
    }
    rows.sort_unstable();
    let refs: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let a = corpus_stats(&rows.iter().map(|r| r.1).collect::<Vec<_>>(), &refs)?;
    let b = corpus_stats(&rows.iter().map(|r| r.2).collect::<Vec<_>>(), &refs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows.len();
    let mut wins = 0usize;
    for _ in 0..samples {
        let (mut sa, mut sb) = (BleuStats::default(), BleuStats::default());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sa.add(&a[i]);
            sb.add(&b[i]);
        }
        if sa.score().value > sb.score().value {
            wins += 1;
        }
    }
    let win_fraction_a = wins as f64 / samples as f64;
    Ok(BootstrapReport {
        win_fraction_a,
        significant: win_fraction_a >= 1.0 - p,
        samples,
        seed,
        p,
    })
}
