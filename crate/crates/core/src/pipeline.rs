//! Everything a model needs from a training corpus: vocabularies, segmentations and labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{default_max_len, translate_ids, BeamConfig};
use crate::model::{vocab_hash, AnnotatedExample, Model, ModelConfig, ModelDims, Variant};
use crate::morphology::{
    extract_affixes, label_characters, load_segmentations, save_segmentations, segment_corpus, AffixInventory,
    LabelSet, MdlConfig, Segmentation,
};
use crate::text::{encode_example, BpeModel, CharVocab, ParallelCorpus, SourceVocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub bpe_merges: usize,
    pub char_cap: usize,
    pub affix_min_count: u64,
    pub mdl_seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            bpe_merges: 200,
            char_cap: 400,
            affix_min_count: 5,
            mdl_seed: 1,
        }
    }
}

/// Word-type frequencies of the target side.
pub fn target_word_counts<S: AsRef<str>>(sentences: &[S]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for w in s.as_ref().split(' ').filter(|w| !w.is_empty()) {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    counts
}

/// File names of the prepared artifacts inside an artifact directory.
pub const BPE_FILE: &str = "bpe.merges";
pub const SOURCE_VOCAB_FILE: &str = "source.vocab";
pub const CHAR_VOCAB_FILE: &str = "char.vocab";
pub const SEGMENTATIONS_FILE: &str = "segmentations.txt";
pub const AFFIXES_FILE: &str = "affixes.txt";
pub const LABELS_FILE: &str = "labels.txt";

/// Vocabularies, segmentations and label classes learned from one training corpus.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub bpe: BpeModel,
    pub source_vocab: SourceVocab,
    pub chars: CharVocab,
    pub segmentations: BTreeMap<String, Segmentation>,
    pub inventory: AffixInventory,
    pub labels: LabelSet,
}

impl Prepared {
    /// Learns every artifact from `train`; `gold` replaces the unsupervised segmenter when given.
    pub fn build(train: &ParallelCorpus, config: &PrepareConfig, gold: Option<&BTreeMap<String, Segmentation>>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        let sources = train.sources();
        let targets = train.targets();
        let bpe = BpeModel::learn(&sources, config.bpe_merges)?;
        let source_vocab = SourceVocab::build(bpe.apply_all(&sources).concat())?;
        let chars = CharVocab::build(&targets, config.char_cap)?;
        let counts = target_word_counts(&targets);
        let segmentations = match gold {
            Some(g) => g.clone(),
            None => {
                let mdl = MdlConfig {
                    seed: config.mdl_seed,
                    ..Default::default()
                };
                segment_corpus(&counts, &mdl)?.segmentations
            }
        };
        let inventory = extract_affixes(
            counts.iter().filter_map(|(w, &c)| segmentations.get(w).map(|s| (s, c))),
            config.affix_min_count,
        )?;
        let labels = LabelSet::build(&inventory);
        Ok(Prepared {
            bpe,
            source_vocab,
            chars,
            segmentations,
            inventory,
            labels,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        self.bpe.save(&dir.join(BPE_FILE))?;
        self.source_vocab.save(&dir.join(SOURCE_VOCAB_FILE))?;
        self.chars.save(&dir.join(CHAR_VOCAB_FILE))?;
        save_segmentations(&dir.join(SEGMENTATIONS_FILE), &self.segmentations)?;
        self.inventory.save(&dir.join(AFFIXES_FILE))?;
        self.labels.save(&dir.join(LABELS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Prepared {
            bpe: BpeModel::load(&dir.join(BPE_FILE))?,
            source_vocab: SourceVocab::load(&dir.join(SOURCE_VOCAB_FILE))?,
            chars: CharVocab::load(&dir.join(CHAR_VOCAB_FILE))?,
            segmentations: load_segmentations(&dir.join(SEGMENTATIONS_FILE))?,
            inventory: AffixInventory::load(&dir.join(AFFIXES_FILE))?,
            labels: LabelSet::load(&dir.join(LABELS_FILE))?,
        })
    }

    pub fn annotate_pair(&self, source: &str, target: &str) -> AnnotatedExample {
        let enc = encode_example((source, target), &self.bpe, &self.source_vocab, &self.chars);
        let labelled = label_characters(target, &self.segmentations, &self.labels, &self.chars);
        AnnotatedExample {
            source: enc.source,
            target: enc.target,
            labels: labelled.label_ids,
        }
    }

    pub fn annotate(&self, corpus: &ParallelCorpus) -> Vec<AnnotatedExample> {
        corpus.pairs.iter().map(|(s, t)| self.annotate_pair(s, t)).collect()
    }

    /// Hash over the source, character and label vocabularies, in that order.
    pub fn vocab_hash(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        for table in [self.source_vocab.table(), self.chars.table(), self.labels.table()] {
            parts.push("\u{1}");
            parts.extend(table.symbols().iter().map(String::as_str));
        }
        vocab_hash(&parts)
    }

    /// Beam-decodes one source sentence; output length is capped at `3 * source chars + 10`.
    pub fn translate(&self, model: &Model, source: &str, width: usize, length_normalize: bool) -> Result<String> {
        let units = self.bpe.apply(source);
        let ids = self.source_vocab.encode(&units);
        if ids.is_empty() {
            return Err(Error::invalid("cannot translate an empty source sentence"));
        }
        let cfg = BeamConfig {
            width,
            max_len: default_max_len(source.chars().count()),
            bos: CharVocab::BOS_ID,
            eos: CharVocab::EOS_ID,
            length_normalize,
        };
        let hyp = translate_ids(model, &ids, &cfg)?;
        Ok(self.chars.decode(hyp.output()))
    }

    /// Translates every sentence, spreading the corpus over the available cores.
    pub fn translate_all<S: AsRef<str> + Sync>(
        &self,
        model: &Model,
        sources: &[S],
        width: usize,
        length_normalize: bool,
    ) -> Result<Vec<String>> {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(sources.len().max(1));
        let chunk = sources.len().div_ceil(threads).max(1);
        std::thread::scope(|scope| {
            let handles: Vec<_> = sources
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| self.translate(model, s.as_ref(), width, length_normalize))
                            .collect::<Result<Vec<String>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(sources.len());
            for h in handles {
                out.extend(h.join().expect("decoder thread panicked")?);
            }
            Ok(out)
        })
    }

    pub fn model_config(&self, variant: Variant, dims: ModelDims) -> ModelConfig {
        ModelConfig {
            variant,
            source_vocab: self.source_vocab.len(),
            char_vocab: self.chars.len(),
            labels: self.labels.len(),
            dims,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SyntheticLangSpec;
    use crate::text::Split;

    #[test]
    fn annotations_align_and_cover_suffixes() {
        let spec = SyntheticLangSpec::default();
        let c = spec.generate(&[(Split::Train, 300)]).unwrap().remove(0);
        let p = Prepared::build(&c.corpus, &PrepareConfig::default(), Some(&c.gold)).unwrap();
        assert_eq!(p.inventory.suffixes.len(), 8);
        for ex in p.annotate(&c.corpus) {
            assert_eq!(ex.target.len(), ex.labels.len());
            assert!(ex.source.iter().all(|&s| s < p.source_vocab.len() && s != SourceVocab::UNK_ID));
            assert!(ex.labels.iter().all(|&l| l < p.labels.len() && l != LabelSet::UNK));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let c = SyntheticLangSpec::default().generate(&[(Split::Train, 100)]).unwrap().remove(0);
        let p = Prepared::build(&c.corpus, &PrepareConfig::default(), Some(&c.gold)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let q = Prepared::load(dir.path()).unwrap();
        assert_eq!(q.vocab_hash(), p.vocab_hash());
        assert_eq!(q.segmentations, p.segmentations);
        assert_eq!(q.inventory, p.inventory);
        assert_eq!(q.bpe.merges(), p.bpe.merges());
        let (s, t) = &c.corpus.pairs[3];
        assert_eq!(q.annotate_pair(s, t), p.annotate_pair(s, t));
    }

    #[test]
    fn unsupervised_segmentation_path() {
        let spec = SyntheticLangSpec::default();
        let c = spec.generate(&[(Split::Train, 300)]).unwrap().remove(0);
        let p = Prepared::build(&c.corpus, &PrepareConfig::default(), None).unwrap();
        assert!(p.labels.len() > LabelSet::SPECIALS);
        let words = target_word_counts(&c.corpus.targets());
        assert!(words.keys().all(|w| p.segmentations.contains_key(w)));
    }
}
