use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A word split into morphs, with the stem marked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub word: String,
    pub morphs: Vec<String>,
    pub stem_index: usize,
}

/// Index of the longest morph; the leftmost one wins ties.
pub fn longest_morph_index<S: AsRef<str>>(morphs: &[S]) -> usize {
    let mut best = 0;
    for (i, m) in morphs.iter().enumerate() {
        if m.as_ref().chars().count() > morphs[best].as_ref().chars().count() {
            best = i;
        }
    }
    best
}

impl Segmentation {
    pub fn new(word: impl Into<String>, morphs: Vec<String>) -> Result<Self> {
        let word = word.into();
        if morphs.is_empty() || morphs.iter().any(String::is_empty) {
            return Err(Error::invalid(format!("segmentation of `{word}` has an empty morph")));
        }
        if morphs.concat() != word {
            return Err(Error::invalid(format!(
                "morphs {morphs:?} do not concatenate to `{word}`"
            )));
        }
        let stem_index = longest_morph_index(&morphs);
        Ok(Segmentation {
            word,
            morphs,
            stem_index,
        })
    }

    /// The unsplit word, which is its own stem.
    pub fn whole(word: &str) -> Self {
        Segmentation {
            word: word.to_string(),
            morphs: vec![word.to_string()],
            stem_index: 0,
        }
    }

    pub fn stem(&self) -> &str {
        &self.morphs[self.stem_index]
    }

    pub fn prefixes(&self) -> &[String] {
        &self.morphs[..self.stem_index]
    }

    pub fn suffixes(&self) -> &[String] {
        &self.morphs[self.stem_index + 1..]
    }

    /// Character offsets of internal morph boundaries.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.morphs.len().saturating_sub(1));
        let mut pos = 0;
        for m in &self.morphs[..self.morphs.len() - 1] {
            pos += m.chars().count();
            out.push(pos);
        }
        out
    }
}

/// How word-type frequencies enter the corpus cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dampening {
    /// Raw token frequencies.
    None,
    /// Every word type counts once.
    Types,
    /// `1 + ln(freq)` rounded to the nearest integer.
    Log,
}

#[derive(Clone, Debug)]
pub struct MdlConfig {
    /// Cost of one lexicon entry. `None` uses `ln(alphabet + 1)`.
    pub per_morph_cost: Option<f64>,
    /// Cost of one character of a lexicon entry. `None` uses `ln(alphabet + 1)`.
    pub char_cost: Option<f64>,
    /// Multiplier on the corpus (likelihood) term.
    pub corpus_weight: f64,
    pub dampening: Dampening,
    pub max_epochs: usize,
    /// Stop once an epoch lowers the total cost by less than this fraction.
    pub min_relative_improvement: f64,
    pub seed: u64,
}

impl Default for MdlConfig {
    fn default() -> Self {
        MdlConfig {
            per_morph_cost: None,
            char_cost: None,
            corpus_weight: 1.0,
            dampening: Dampening::Types,
            max_epochs: 10,
            min_relative_improvement: 1e-4,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentationOutcome {
    pub segmentations: BTreeMap<String, Segmentation>,
    /// `(cost before, cost after)` for every accepted change of analysis, in order.
    pub accepted_splits: Vec<(f64, f64)>,
    /// Total cost after initialisation and after each epoch.
    pub epoch_costs: Vec<f64>,
}

/// Two-part description length of a morph lexicon and the corpus coded with it:
/// `w * (N ln N - sum f ln f) + per_morph * |lexicon| + char_cost * chars(lexicon)`.
///
/// Analyses form a split tree over substrings. A node either is a leaf morph
/// or points at its split offset; counts flow down to the leaves, so a
/// substring shared by several words is analysed once.
struct MdlModel {
    nodes: HashMap<String, Node>,
    tokens: u64,
    sum_f_ln_f: f64,
    lexicon_size: usize,
    lexicon_chars: usize,
    per_morph_cost: f64,
    char_cost: f64,
    corpus_weight: f64,
}

#[derive(Clone, Copy, Default)]
struct Node {
    count: u64,
    split: Option<usize>,
}

fn f_ln_f(f: u64) -> f64 {
    if f == 0 {
        0.0
    } else {
        let f = f as f64;
        f * f.ln()
    }
}

impl MdlModel {
    fn cost(&self) -> f64 {
        let n = self.tokens as f64;
        let corpus = if self.tokens == 0 { 0.0 } else { n * n.ln() - self.sum_f_ln_f };
        self.corpus_weight * corpus
            + self.per_morph_cost * self.lexicon_size as f64
            + self.char_cost * self.lexicon_chars as f64
    }

    /// Adds `delta` occurrences of `s`, following its current analysis down to the leaves.
    fn modify(&mut self, s: &str, delta: i64) {
        let node = self.nodes.get(s).copied().unwrap_or_default();
        let new = (node.count as i64 + delta) as u64;
        // an analysed substring keeps its split while unused, so an earlier analysis can be restored exactly
        if new == 0 && node.split.is_none() {
            self.nodes.remove(s);
        } else {
            self.nodes.insert(s.to_string(), Node { count: new, ..node });
        }
        if let Some(at) = node.split {
            let (l, r) = s.split_at(at);
            self.modify(l, delta);
            self.modify(r, delta);
            return;
        }
        self.sum_f_ln_f += f_ln_f(new) - f_ln_f(node.count);
        self.tokens = (self.tokens as i64 + delta) as u64;
        let len = s.chars().count();
        if node.count == 0 && new > 0 {
            self.lexicon_size += 1;
            self.lexicon_chars += len;
        } else if node.count > 0 && new == 0 {
            self.lexicon_size -= 1;
            self.lexicon_chars -= len;
        }
    }

    /// Recomputes the running totals from the leaf counts in a fixed order, removing drift.
    fn resync(&mut self) {
        let mut leaves: Vec<(u64, usize)> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.split.is_none() && n.count > 0)
            .map(|(s, n)| (n.count, s.chars().count()))
            .collect();
        leaves.sort_unstable();
        self.tokens = leaves.iter().map(|l| l.0).sum();
        self.sum_f_ln_f = leaves.iter().map(|l| f_ln_f(l.0)).sum();
        self.lexicon_size = leaves.len();
        self.lexicon_chars = leaves.iter().map(|l| l.1).sum();
    }

    fn cost_with(&mut self, parts: &[&str], f: u64) -> f64 {
        for p in parts {
            self.modify(p, f as i64);
        }
        let c = self.cost();
        for p in parts {
            self.modify(p, -(f as i64));
        }
        c
    }

    /// Withdraws every occurrence of `s`, picks the cheapest of leaving it whole or one
    /// binary split, and recurses into the parts. The current analysis is among the
    /// candidates and is only replaced by a strictly cheaper one, so the total cost never rises.
    fn resplit(&mut self, s: &str, accepted: &mut Vec<(f64, f64)>) {
        let Some(node) = self.nodes.get(s).copied() else {
            return;
        };
        let f = node.count;
        if f == 0 {
            return;
        }
        let before = self.cost();
        self.modify(s, -(f as i64));
        self.nodes.insert(s.to_string(), Node { count: 0, split: None });
        let mut best = (node.split, before);
        let mut consider = |model: &mut Self, split: Option<usize>| {
            let c = match split {
                None => model.cost_with(&[s], f),
                Some(at) => {
                    let (l, r) = s.split_at(at);
                    model.cost_with(&[l, r], f)
                }
            };
            if split != node.split && c < best.1 - 1e-9 {
                best = (split, c);
            }
        };
        consider(self, None);
        for (at, _) in s.char_indices().skip(1) {
            consider(self, Some(at));
        }
        let (split, _) = best;
        self.nodes.insert(s.to_string(), Node { count: 0, split });
        self.modify(s, f as i64);
        if split != node.split {
            accepted.push((before, self.cost()));
        }
        if let Some(at) = split {
            let (l, r) = s.split_at(at);
            self.resplit(l, accepted);
            if r != l {
                self.resplit(r, accepted);
            }
        }
    }

    fn leaves(&self, s: &str, out: &mut Vec<String>) {
        match self.nodes.get(s).and_then(|n| n.split) {
            Some(at) => {
                let (l, r) = s.split_at(at);
                self.leaves(l, out);
                self.leaves(r, out);
            }
            None => out.push(s.to_string()),
        }
    }
}

/// Unsupervised morph segmentation by greedy recursive minimisation of
/// description length. Each epoch visits every word type in a seeded order
/// and re-splits it.
pub fn segment_corpus(words: &BTreeMap<String, u64>, config: &MdlConfig) -> Result<SegmentationOutcome> {
    if words.is_empty() {
        return Err(Error::Empty("segment_corpus"));
    }
    let mut alphabet: Vec<char> = words.keys().flat_map(|w| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let default_cost = ((alphabet.len() + 1) as f64).ln();

    let weight = |f: u64| -> u64 {
        match config.dampening {
            Dampening::None => f,
            Dampening::Types => 1,
            Dampening::Log => (1.0 + (f.max(1) as f64).ln()).round() as u64,
        }
    };

    let mut model = MdlModel {
        nodes: HashMap::new(),
        tokens: 0,
        sum_f_ln_f: 0.0,
        lexicon_size: 0,
        lexicon_chars: 0,
        per_morph_cost: config.per_morph_cost.unwrap_or(default_cost),
        char_cost: config.char_cost.unwrap_or(default_cost),
        corpus_weight: config.corpus_weight,
    };

    let entries: Vec<&str> = words
        .iter()
        .filter(|(w, &f)| !w.is_empty() && f > 0)
        .map(|(w, &f)| {
            model.modify(w, weight(f) as i64);
            w.as_str()
        })
        .collect();

    let mut accepted = Vec::new();
    model.resync();
    let mut epoch_costs = vec![model.cost()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            model.resplit(entries[i], &mut accepted);
        }
        model.resync();
        let cost = model.cost();
        let prev = *epoch_costs.last().unwrap();
        epoch_costs.push(cost);
        if prev - cost < config.min_relative_improvement * prev.abs() {
            break;
        }
    }

    let mut segmentations = BTreeMap::new();
    for w in entries {
        let mut morphs = Vec::new();
        model.leaves(w, &mut morphs);
        segmentations.insert(w.to_string(), Segmentation::new(w, morphs)?);
    }
    Ok(SegmentationOutcome {
        segmentations,
        accepted_splits: accepted,
        epoch_costs,
    })
}

/// Fraction of gold internal boundaries that the predicted segmentations also place.
pub fn boundary_recall(
    predicted: &BTreeMap<String, Segmentation>,
    gold: &BTreeMap<String, Segmentation>,
) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (word, g) in gold {
        let gb = g.boundaries();
        total += gb.len();
        if let Some(p) = predicted.get(word) {
            let pb = p.boundaries();
            hit += gb.iter().filter(|b| pb.contains(b)).count();
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// `word TAB morph1 SPACE morph2 ...`, one word per line.
pub fn save_segmentations(path: &Path, segs: &BTreeMap<String, Segmentation>) -> Result<()> {
    let mut text = String::new();
    for (w, s) in segs {
        text.push_str(w);
        text.push('\t');
        text.push_str(&s.morphs.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn load_segmentations(path: &Path) -> Result<BTreeMap<String, Segmentation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (word, morphs) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `word<TAB>morphs`".into()))?;
        let morphs = morphs.split(' ').map(str::to_string).collect();
        let seg = Segmentation::new(word, morphs).map_err(|e| parse_err(e.to_string()))?;
        out.insert(word.to_string(), seg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(items: &[(&str, u64)]) -> BTreeMap<String, u64> {
        items.iter().map(|(w, f)| (w.to_string(), *f)).collect()
    }

    /// Direct evaluation of the description length of a full analysis.
    fn oracle_cost(analysis: &[(Vec<&str>, u64)], alphabet: usize) -> f64 {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for (morphs, f) in analysis {
            for m in morphs {
                *counts.entry(m).or_default() += f;
            }
        }
        let n: u64 = counts.values().sum();
        let corpus: f64 = counts.values().map(|&f| -(f as f64) * (f as f64 / n as f64).ln()).sum();
        let c = ((alphabet + 1) as f64).ln();
        let lex: f64 = counts.keys().map(|m| c + c * m.chars().count() as f64).sum();
        corpus + lex
    }

    #[test]
    fn single_word_not_split() {
        let out = segment_corpus(&words(&[("abc", 1)]), &MdlConfig::default()).unwrap();
        assert_eq!(out.segmentations["abc"].morphs, vec!["abc"]);
    }

    #[test]
    fn terbiyesiz_splits_at_minimum_description_length() {
        let corpus = [("terbiye", 50), ("terbiyesiz", 50), ("siz", 50)];
        let config = MdlConfig {
            dampening: Dampening::None,
            ..MdlConfig::default()
        };
        let out = segment_corpus(&words(&corpus), &config).unwrap();
        assert_eq!(out.segmentations["terbiyesiz"].morphs, vec!["terbiye", "siz"]);

        // brute force over every single split point of `terbiyesiz`
        let alphabet = "terbiyesz".chars().collect::<std::collections::BTreeSet<_>>().len();
        let word = "terbiyesiz";
        let mut best = (0, oracle_cost(&[(vec!["terbiye"], 50), (vec![word], 50), (vec!["siz"], 50)], alphabet));
        for at in 1..word.len() {
            let (l, r) = word.split_at(at);
            let c = oracle_cost(&[(vec!["terbiye"], 50), (vec![l, r], 50), (vec!["siz"], 50)], alphabet);
            if c < best.1 {
                best = (at, c);
            }
        }
        assert_eq!(best.0, "terbiye".len());
    }

    #[test]
    fn gold_chain_recovered_on_frequent_morphs() {
        // every prefix of the chain is a frequent word, as in an agglutinative paradigm
        let morphs = ["terbiye", "siz", "lik", "leri", "nden"];
        let others = ["kitap", "defter", "kalem", "masa", "ev"];
        let mut corpus = BTreeMap::new();
        for stem in std::iter::once(&"terbiye").chain(others.iter()) {
            let mut w = stem.to_string();
            corpus.insert(w.clone(), 20);
            for m in &morphs[1..] {
                w.push_str(m);
                corpus.insert(w.clone(), 20);
            }
            for m in &morphs[1..] {
                corpus.insert(format!("{stem}{m}"), 20);
            }
        }
        let out = segment_corpus(&corpus, &MdlConfig::default()).unwrap();
        assert_eq!(out.segmentations["terbiyesizliklerinden"].morphs, morphs);
    }

    #[test]
    fn morphs_concatenate_and_costs_never_rise_on_split() {
        let corpus = words(&[
            ("evler", 5),
            ("evlerden", 3),
            ("ev", 9),
            ("kitaplar", 4),
            ("kitap", 7),
            ("kitaplardan", 2),
            ("masa", 1),
        ]);
        let out = segment_corpus(&corpus, &MdlConfig::default()).unwrap();
        for (w, s) in &out.segmentations {
            assert_eq!(&s.morphs.concat(), w);
        }
        for (before, after) in &out.accepted_splits {
            assert!(after <= before);
        }
        assert!(out.epoch_costs.windows(2).all(|w| w[1] <= w[0]), "{:?}", out.epoch_costs);

        // the incrementally tracked cost matches a from-scratch evaluation (types dampening: f = 1)
        let alphabet = corpus.keys().flat_map(|w| w.chars()).collect::<std::collections::BTreeSet<_>>().len();
        let analysis: Vec<(Vec<&str>, u64)> = out
            .segmentations
            .values()
            .map(|s| (s.morphs.iter().map(String::as_str).collect(), 1))
            .collect();
        let direct = oracle_cost(&analysis, alphabet);
        assert!((direct - out.epoch_costs.last().unwrap()).abs() < 1e-9, "{direct} vs {:?}", out.epoch_costs);
    }

    #[test]
    fn stem_is_leftmost_longest() {
        let s = Segmentation::new("undo", vec!["un".into(), "do".into()]).unwrap();
        assert_eq!(s.stem(), "un");
        assert_eq!(s.suffixes(), &["do".to_string()]);
        let s = Segmentation::new("terbiyesizlik", vec!["terbiye".into(), "siz".into(), "lik".into()]).unwrap();
        assert_eq!(s.stem(), "terbiye");
        assert!(s.prefixes().is_empty());
        assert_eq!(s.boundaries(), vec![7, 10]);
        assert!(Segmentation::new("abc", vec!["ab".into(), "d".into()]).is_err());
    }

    #[test]
    fn segmentation_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.tsv");
        let mut segs = BTreeMap::new();
        segs.insert("evler".to_string(), Segmentation::new("evler", vec!["ev".into(), "ler".into()]).unwrap());
        segs.insert("ev".to_string(), Segmentation::whole("ev"));
        save_segmentations(&path, &segs).unwrap();
        assert_eq!(load_segmentations(&path).unwrap(), segs);
    }
}
