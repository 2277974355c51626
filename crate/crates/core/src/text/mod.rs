//! Corpus ingestion, source-side BPE and target-side character vocabularies.

mod bpe;
mod corpus;
mod vocab;

pub use bpe::{BpeModel, END_OF_WORD};
pub use corpus::{normalize_whitespace, read_lines, write_lines, ParallelCorpus, Split};
pub use vocab::{CharVocab, SourceVocab, SymbolTable, BOS, EOS, UNK, WSPACE};

/// Source BPE-unit ids and target character ids for one sentence pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub source: Vec<usize>,
    /// `<s> ... </s>`, spaces as `<w>`.
    pub target: Vec<usize>,
}

pub fn encode_example(
    pair: (&str, &str),
    bpe: &BpeModel,
    source_vocab: &SourceVocab,
    char_vocab: &CharVocab,
) -> EncodedExample {
    let units = bpe.apply(pair.0);
    EncodedExample {
        source: source_vocab.encode(&units),
        target: char_vocab.encode(pair.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_maps_unknown_units_to_unk() {
        let bpe = BpeModel::learn(&["the cat"], 10).unwrap();
        let sv = SourceVocab::build(bpe.apply_all(&["the cat"]).concat()).unwrap();
        let cv = CharVocab::build(&["kedi"], 400).unwrap();
        let ex = encode_example(("the dog", "kedi"), &bpe, &sv, &cv);
        assert!(ex.source.contains(&SourceVocab::UNK_ID));
        assert_eq!(ex.target.first(), Some(&CharVocab::BOS_ID));
        assert_eq!(ex.target.last(), Some(&CharVocab::EOS_ID));
        assert_eq!(cv.decode(&ex.target), "kedi");
    }
}
