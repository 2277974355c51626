//! Seeded generator for a small suffixing language and its English-like gloss.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{save_segmentations, Segmentation};
use crate::text::{ParallelCorpus, Split};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suffix {
    pub form: String,
    /// Source token that expresses the suffix.
    pub gloss: String,
}

/// One position of the suffix chain; at most one of its suffixes is used per word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuffixSlot {
    pub name: String,
    pub suffixes: Vec<Suffix>,
    /// Probability that the slot is filled.
    pub fill: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLangSpec {
    pub stems: usize,
    pub stem_len: (usize, usize),
    pub slots: Vec<SuffixSlot>,
    pub max_suffixes: usize,
    /// Inclusive range of words per sentence.
    pub sentence_len: (usize, usize),
    pub seed: u64,
}

fn slot(name: &str, fill: f64, pairs: &[(&str, &str)]) -> SuffixSlot {
    SuffixSlot {
        name: name.to_string(),
        suffixes: pairs
            .iter()
            .map(|(f, g)| Suffix {
                form: f.to_string(),
                gloss: g.to_string(),
            })
            .collect(),
        fill,
    }
}

impl Default for SyntheticLangSpec {
    /// Plural, possessive and case slots in that order.
    fn default() -> Self {
        SyntheticLangSpec {
            stems: 120,
            stem_len: (4, 7),
            slots: vec![
                slot("number", 0.5, &[("ler", "many")]),
                slot("possessive", 0.4, &[("im", "my"), ("in", "your"), ("si", "their")]),
                slot("case", 0.5, &[("den", "from"), ("de", "at"), ("ye", "to"), ("le", "with")]),
            ],
            max_suffixes: 3,
            sentence_len: (1, 4),
            seed: 1,
        }
    }
}

/// A target word and everything needed to gloss it.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Lexeme {
    stem: String,
    gloss: String,
}

/// Generated sentence pairs with the gold segmentation of every target word.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: ParallelCorpus,
    pub gold: BTreeMap<String, Segmentation>,
}

impl SyntheticCorpus {
    pub fn save(&self, source: &Path, target: &Path, gold: &Path) -> Result<()> {
        self.corpus.save(source, target)?;
        save_segmentations(gold, &self.gold)
    }
}

const STEM_CONSONANTS: &[u8] = b"bcdfgkmnprstvz";
const STEM_VOWELS: &[u8] = b"aeiou";
const GLOSS_LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_stem(rng: &mut ChaCha8Rng, len: usize) -> String {
    let start_vowel = rng.gen_bool(0.3);
    (0..len)
        .map(|i| {
            let set = if (i % 2 == 0) != start_vowel { STEM_CONSONANTS } else { STEM_VOWELS };
            set[rng.gen_range(0..set.len())] as char
        })
        .collect()
}

impl SyntheticLangSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stems == 0 {
            return Err(Error::invalid("synthetic language needs at least one stem"));
        }
        if self.stem_len.0 == 0 || self.stem_len.0 > self.stem_len.1 {
            return Err(Error::invalid(format!("bad stem length range {:?}", self.stem_len)));
        }
        if self.sentence_len.0 == 0 || self.sentence_len.0 > self.sentence_len.1 {
            return Err(Error::invalid(format!("bad sentence length range {:?}", self.sentence_len)));
        }
        for s in &self.slots {
            if s.suffixes.is_empty() || !(0.0..=1.0).contains(&s.fill) {
                return Err(Error::invalid(format!("slot `{}` needs suffixes and a fill probability in [0, 1]", s.name)));
            }
            if s.suffixes.iter().any(|x| x.form.is_empty() || x.form.contains(' ') || x.gloss.is_empty() || x.gloss.contains(' ')) {
                return Err(Error::invalid(format!("slot `{}` has an empty or spaced suffix", s.name)));
            }
        }
        Ok(())
    }

    fn suffix_forms(&self) -> BTreeSet<&str> {
        self.slots.iter().flat_map(|s| s.suffixes.iter().map(|x| x.form.as_str())).collect()
    }

    fn lexicon(&self, rng: &mut ChaCha8Rng) -> Vec<Lexeme> {
        let forms = self.suffix_forms();
        let glosses: BTreeSet<&str> = self.slots.iter().flat_map(|s| s.suffixes.iter().map(|x| x.gloss.as_str())).collect();
        let mut stems = BTreeSet::new();
        let mut used_glosses = BTreeSet::new();
        let mut lexicon = Vec::with_capacity(self.stems);
        let mut attempts = 0usize;
        while lexicon.len() < self.stems {
            attempts += 1;
            if attempts > 1000 * self.stems {
                // only reachable with tiny length ranges
                break;
            }
            let len = rng.gen_range(self.stem_len.0..=self.stem_len.1);
            let stem = random_stem(rng, len);
            let glen = rng.gen_range(3..=6);
            let gloss: String = (0..glen).map(|_| GLOSS_LETTERS[rng.gen_range(0..GLOSS_LETTERS.len())] as char).collect();
            if forms.contains(stem.as_str()) || glosses.contains(gloss.as_str()) || stems.contains(&stem) || used_glosses.contains(&gloss) {
                continue;
            }
            stems.insert(stem.clone());
            used_glosses.insert(gloss.clone());
            lexicon.push(Lexeme { stem, gloss });
        }
        lexicon
    }

    /// Draws one word: its morphs and its gloss tokens (suffix glosses outermost first, then the lemma).
    fn word(&self, lexicon: &[Lexeme], rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
        let lex = lexicon.choose(rng).expect("nonempty lexicon");
        let mut morphs = vec![lex.stem.clone()];
        let mut glosses = Vec::new();
        for s in &self.slots {
            if morphs.len() > self.max_suffixes {
                break;
            }
            if rng.gen_bool(s.fill) {
                let x = s.suffixes.choose(rng).expect("validated slot");
                morphs.push(x.form.clone());
                glosses.push(x.gloss.clone());
            }
        }
        glosses.reverse();
        glosses.push(lex.gloss.clone());
        (morphs, glosses)
    }

    /// `sizes` sentences per split, all drawn from one seeded stream over one lexicon.
    pub fn generate(&self, sizes: &[(Split, usize)]) -> Result<Vec<SyntheticCorpus>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lexicon = self.lexicon(&mut rng);
        if lexicon.len() < self.stems {
            return Err(Error::invalid(format!(
                "could only draw {} distinct stems of length {:?}",
                lexicon.len(),
                self.stem_len
            )));
        }
        let mut out = Vec::with_capacity(sizes.len());
        for &(split, n) in sizes {
            if n == 0 {
                return Err(Error::invalid(format!("{split} split needs at least one sentence")));
            }
            let mut pairs = Vec::with_capacity(n);
            let mut gold = BTreeMap::new();
            for _ in 0..n {
                let words = rng.gen_range(self.sentence_len.0..=self.sentence_len.1);
                let (mut src, mut tgt) = (Vec::new(), Vec::new());
                for _ in 0..words {
                    let (morphs, glosses) = self.word(&lexicon, &mut rng);
                    let word = morphs.concat();
                    gold.entry(word.clone()).or_insert(Segmentation::new(word.clone(), morphs)?);
                    src.extend(glosses);
                    tgt.push(word);
                }
                pairs.push((src.join(" "), tgt.join(" ")));
            }
            out.push(SyntheticCorpus {
                corpus: ParallelCorpus::from_pairs(split, pairs),
                gold,
            });
        }
        Ok(out)
    }

    /// Every stem of the seeded lexicon, in draw order.
    pub fn stem_inventory(&self) -> Result<Vec<String>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(self.lexicon(&mut rng).into_iter().map(|l| l.stem).collect())
    }
}
