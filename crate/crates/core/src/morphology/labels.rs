use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::affixes::{AffixInventory, AffixKind};
use super::segment::Segmentation;
use crate::error::{Error, Result};
use crate::text::{CharVocab, SymbolTable};

pub const BOS_LABEL: &str = "BOS";
pub const WSPACE_LABEL: &str = "w-space";
pub const STEM_LABEL: &str = "stem-C";
pub const UNK_LABEL: &str = "UNK-C";
pub const EOS_LABEL: &str = "EOS-C";

/// Class name of an affix: `siz-C` for a suffix, `siz+-C` for a prefix.
pub fn affix_label(kind: AffixKind, affix: &str) -> String {
    match kind {
        AffixKind::Suffix => format!("{affix}-C"),
        AffixKind::Prefix => format!("{affix}+-C"),
    }
}

fn parse_affix_label(name: &str) -> Option<(AffixKind, &str)> {
    if let Some(a) = name.strip_suffix("+-C") {
        Some((AffixKind::Prefix, a))
    } else {
        name.strip_suffix("-C").map(|a| (AffixKind::Suffix, a))
    }
}

/// Per-character morphological classes. Also the column order of the morphology table.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSet {
    table: SymbolTable,
    affixes: HashMap<(AffixKind, String), usize>,
}

impl LabelSet {
    pub const BOS: usize = 0;
    pub const WSPACE: usize = 1;
    pub const STEM: usize = 2;
    pub const UNK: usize = 3;
    pub const EOS: usize = 4;
    pub const SPECIALS: usize = 5;

    /// Specials first, then affix classes by descending count, ties by name.
    pub fn build(inventory: &AffixInventory) -> Self {
        let mut affixes: Vec<(String, AffixKind, &str, u64)> = inventory
            .iter()
            .map(|(k, a, c)| (affix_label(k, a), k, a, c))
            .collect();
        affixes.sort_by(|x, y| y.3.cmp(&x.3).then_with(|| x.0.cmp(&y.0)));
        let names = [BOS_LABEL, WSPACE_LABEL, STEM_LABEL, UNK_LABEL, EOS_LABEL]
            .into_iter()
            .map(String::from)
            .chain(affixes.iter().map(|a| a.0.clone()));
        // names are unique: affix labels always end in -C and specials never collide
        let table = SymbolTable::from_symbols(names).expect("label names are unique");
        let affixes = affixes
            .into_iter()
            .enumerate()
            .map(|(i, (_, k, a, _))| ((k, a.to_string()), Self::SPECIALS + i))
            .collect();
        LabelSet { table, affixes }
    }

    pub fn from_table(table: SymbolTable) -> Result<Self> {
        for (id, s) in [BOS_LABEL, WSPACE_LABEL, STEM_LABEL, UNK_LABEL, EOS_LABEL]
            .into_iter()
            .enumerate()
        {
            if table.id(s) != Some(id) {
                return Err(Error::invalid(format!("label set must start with the five special classes, missing {s}")));
            }
        }
        let mut affixes = HashMap::new();
        for id in Self::SPECIALS..table.len() {
            let (kind, affix) = parse_affix_label(table.symbol(id))
                .ok_or_else(|| Error::invalid(format!("`{}` is not an affix class", table.symbol(id))))?;
            affixes.insert((kind, affix.to_string()), id);
        }
        Ok(LabelSet { table, affixes })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        self.table.symbol(id)
    }

    pub fn names(&self) -> &[String] {
        self.table.symbols()
    }

    pub fn table(&self) -> &SymbolTable {
        &self.table
    }

    pub fn affix_id(&self, kind: AffixKind, affix: &str) -> Option<usize> {
        self.affixes.get(&(kind, affix.to_string())).copied()
    }

    /// `(kind, affix)` of an affix column, `None` for the specials.
    pub fn affix_of(&self, id: usize) -> Option<(AffixKind, &str)> {
        if id < Self::SPECIALS {
            None
        } else {
            parse_affix_label(self.name(id))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.table.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        LabelSet::from_table(SymbolTable::load(path)?)
    }
}

/// Character ids with one morphological class per character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedTarget {
    pub char_ids: Vec<usize>,
    pub label_ids: Vec<usize>,
}

/// Class of each character of `word`: stem characters get `stem-C`, kept
/// affixes their own class, filtered affixes `UNK-C`.
pub fn label_word(word: &str, segmentation: Option<&Segmentation>, labels: &LabelSet) -> Vec<usize> {
    let whole;
    let seg = match segmentation {
        Some(s) if s.word == word => s,
        _ => {
            whole = Segmentation::whole(word);
            &whole
        }
    };
    let mut out = Vec::with_capacity(word.len());
    for (i, morph) in seg.morphs.iter().enumerate() {
        let class = match i.cmp(&seg.stem_index) {
            std::cmp::Ordering::Equal => LabelSet::STEM,
            std::cmp::Ordering::Less => labels.affix_id(AffixKind::Prefix, morph).unwrap_or(LabelSet::UNK),
            std::cmp::Ordering::Greater => labels.affix_id(AffixKind::Suffix, morph).unwrap_or(LabelSet::UNK),
        };
        out.extend(std::iter::repeat_n(class, morph.chars().count()));
    }
    out
}

/// Labels a whole target sentence, aligned with `CharVocab::encode`:
/// `BOS` at `<s>`, `w-space` at spaces, `EOS-C` at `</s>`.
pub fn label_characters(
    sentence: &str,
    segmentations: &BTreeMap<String, Segmentation>,
    labels: &LabelSet,
    chars: &CharVocab,
) -> AnnotatedTarget {
    let char_ids = chars.encode(sentence);
    let mut label_ids = Vec::with_capacity(char_ids.len());
    label_ids.push(LabelSet::BOS);
    for (i, word) in sentence.split(' ').enumerate() {
        if i > 0 {
            label_ids.push(LabelSet::WSPACE);
        }
        label_ids.extend(label_word(word, segmentations.get(word), labels));
    }
    label_ids.push(LabelSet::EOS);
    debug_assert_eq!(char_ids.len(), label_ids.len());
    AnnotatedTarget { char_ids, label_ids }
}
