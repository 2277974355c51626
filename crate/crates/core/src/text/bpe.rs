use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Appended to every word before merging.
pub const END_OF_WORD: &str = "</w>";

/// Ordered list of learned merge rules.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
}

fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .map(|c| c.to_string())
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) -> bool {
    let mut changed = false;
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let merged = format!("{left}{right}");
            symbols[i] = merged;
            symbols.remove(i + 1);
            changed = true;
        }
        i += 1;
    }
    changed
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        BpeModel { merges }
    }

    /// Learns up to `num_merges` merges from whitespace-split sentences.
    /// The most frequent adjacent pair is merged first; ties go to the
    /// lexicographically smallest `(left, right)`.
    pub fn learn<S: AsRef<str>>(sentences: &[S], num_merges: usize) -> Result<Self> {
        let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sentences {
            for w in s.as_ref().split_whitespace() {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::Empty("learn_bpe"));
        }
        let mut words: Vec<(Vec<String>, u64)> =
            word_counts.into_iter().map(|(w, c)| (word_symbols(w), c)).collect();

        let mut merges = Vec::with_capacity(num_merges);
        for _ in 0..num_merges {
            let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
            for (symbols, count) in &words {
                for pair in symbols.windows(2) {
                    *pair_counts.entry((&pair[0], &pair[1])).or_default() += count;
                }
            }
            let best = pair_counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
                .map(|((l, r), _)| (l.to_string(), r.to_string()));
            let Some((left, right)) = best else { break };
            for (symbols, _) in &mut words {
                merge_pair(symbols, &left, &right);
            }
            merges.push((left, right));
        }
        Ok(BpeModel { merges })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Replays the merges in learned order over one word.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        for (left, right) in &self.merges {
            if symbols.len() < 2 {
                break;
            }
            merge_pair(&mut symbols, left, right);
        }
        symbols
    }

    pub fn apply(&self, sentence: &str) -> Vec<String> {
        sentence
            .split_whitespace()
            .flat_map(|w| self.segment_word(w))
            .collect()
    }

    /// Segments many sentences, memoising repeated words.
    pub fn apply_all<S: AsRef<str>>(&self, sentences: &[S]) -> Vec<Vec<String>> {
        let mut memo: HashMap<String, Vec<String>> = HashMap::new();
        sentences
            .iter()
            .map(|s| {
                let mut units = Vec::new();
                for w in s.as_ref().split_whitespace() {
                    let seg = memo.entry(w.to_string()).or_insert_with(|| self.segment_word(w));
                    units.extend(seg.iter().cloned());
                }
                units
            })
            .collect()
    }

    /// Every symbol that can appear in a segmentation of the training words:
    /// the merged symbols plus the characters they were built from.
    pub fn learned_vocabulary(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (l, r) in &self.merges {
            out.push(l.clone());
            out.push(r.clone());
            out.push(format!("{l}{r}"));
        }
        out.sort();
        out.dedup();
        out
    }

    /// One merge per line: `left right`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (l, r) in &self.merges {
            text.push_str(l);
            text.push(' ');
            text.push_str(r);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("expected `left right`, got `{line}`"),
                    })
                }
            }
        }
        Ok(BpeModel { merges })
    }
}
