use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and totals of one sentence pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn sentence(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let mut s = BleuStats {
            hyp_len: h.len() as u64,
            ref_len: r.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            if h.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[&str], u64> = HashMap::new();
            for g in r.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[&str], u64> = HashMap::new();
            for g in h.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            s.totals[n - 1] = (h.len() + 1 - n) as u64;
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Corpus score of the accumulated statistics.
    pub fn score(&self) -> BleuScore {
        let mut precisions = [0.0; MAX_ORDER];
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            precisions[n] = if n == 0 {
                if t > 0.0 {
                    m / t
                } else {
                    0.0
                }
            } else if m == 0.0 {
                1.0 / (t + 1.0)
            } else {
                m / t
            };
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity_penalty = if c > r {
            1.0
        } else if c == 0.0 {
            0.0
        } else {
            (1.0 - r / c).exp()
        };
        let value = if precisions[0] == 0.0 {
            0.0
        } else {
            brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64).exp()
        };
        BleuScore {
            value,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

/// Corpus BLEU-4 over whitespace tokens. Zero higher-order match counts are
/// smoothed to `1 / (total + 1)`; a zero unigram precision gives 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BleuScore {
    pub value: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

pub fn corpus_stats<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[S], references: &[T]) -> Result<Vec<BleuStats>> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Empty("bleu"));
    }
    Ok(hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::sentence(h.as_ref(), r.as_ref()))
        .collect())
}

pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[S], references: &[T]) -> Result<BleuScore> {
    let mut total = BleuStats::default();
    for s in corpus_stats(hypotheses, references)? {
        total.add(&s);
    }
    Ok(total.score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_corpus_scores_one() {
        let c = ["a b c d e", "x", "kitap lar dan"];
        assert_eq!(bleu(&c, &c).unwrap().value, 1.0);
    }

    #[test]
    fn no_overlap_scores_zero() {
        assert_eq!(bleu(&["a b"], &["c d"]).unwrap().value, 0.0);
        assert_eq!(bleu(&[""], &["c d"]).unwrap().value, 0.0);
    }

    #[test]
    fn clipped_precision_fixture() {
        // p1 = 1/3 (one clipped "the"), p2 = 1/3 and p3 = 1/2 (no matches, smoothed), p4 = 1 (no 4-grams), BP = 1
        let s = bleu(&["the the the"], &["the cat"]).unwrap();
        assert_eq!(s.precisions, [1.0 / 3.0, 1.0 / 3.0, 0.5, 1.0]);
        assert_eq!(s.brevity_penalty, 1.0);
        assert!((s.value - (1.0f64 / 18.0).powf(0.25)).abs() < 1e-12);
        assert!((s.value - 0.485_491_771_707_323_4).abs() < 1e-9);
    }

    #[test]
    fn brevity_penalty_for_short_output() {
        let s = bleu(&["a b"], &["a b c d"]).unwrap();
        assert!((s.brevity_penalty - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bleu::<&str, &str>(&[], &[]).is_err());
        assert!(bleu(&["a"], &["a", "b"]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec(("[ab ]{0,12}", "[ab ]{1,12}"), 1..8), rot in 0usize..8) {
            let (h, r): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
            let k = rot % h.len();
            let (mut h2, mut r2) = (h.clone(), r.clone());
            h2.rotate_left(k);
            r2.rotate_left(k);
            let a = bleu(&h, &r).unwrap().value;
            let b = bleu(&h2, &r2).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
