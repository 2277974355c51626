use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const WSPACE: &str = "<w>";

/// Ordered symbol list with a reverse index; id = position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl SymbolTable {
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = SymbolTable::default();
        for s in symbols {
            let s = s.into();
            if table.index.contains_key(&s) {
                return Err(Error::invalid(format!("duplicate symbol `{s}`")));
            }
            table.index.insert(s.clone(), table.symbols.len());
            table.symbols.push(s);
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// One symbol per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for s in &self.symbols {
            text.push_str(s);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let symbols: Vec<&str> = text.split('\n').collect();
        // trailing newline leaves one empty element
        let symbols = match symbols.split_last() {
            Some((last, rest)) if last.is_empty() => rest,
            _ => &symbols[..],
        };
        SymbolTable::from_symbols(symbols.iter().copied()).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// Target-side character inventory with reserved `<unk>`, `<s>`, `</s>` and `<w>`.
#[derive(Clone, Debug, PartialEq)]
pub struct CharVocab {
    table: SymbolTable,
}

impl CharVocab {
    pub const UNK_ID: usize = 0;
    pub const BOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;
    pub const WSPACE_ID: usize = 3;
    pub const RESERVED: usize = 4;

    /// Keeps the `cap` most frequent characters (ties by ascending code point).
    /// Spaces are carried by `<w>` and never counted.
    pub fn build<S: AsRef<str>>(sentences: &[S], cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("character vocabulary cap must be at least 1"));
        }
        let mut counts: BTreeMap<char, u64> = BTreeMap::new();
        for s in sentences {
            for c in s.as_ref().chars().filter(|c| !c.is_whitespace()) {
                *counts.entry(c).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("build_char_vocab"));
        }
        let mut ranked: Vec<(char, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(cap);
        let symbols = [UNK, BOS, EOS, WSPACE]
            .into_iter()
            .map(String::from)
            .chain(ranked.into_iter().map(|(c, _)| c.to_string()));
        Ok(CharVocab {
            table: SymbolTable::from_symbols(symbols)?,
        })
    }

    pub fn from_table(table: SymbolTable) -> Result<Self> {
        for (id, s) in [UNK, BOS, EOS, WSPACE].into_iter().enumerate() {
            if table.id(s) != Some(id) {
                return Err(Error::invalid(format!("char vocabulary must start with {UNK} {BOS} {EOS} {WSPACE}")));
            }
        }
        Ok(CharVocab { table })
    }

    pub fn table(&self) -> &SymbolTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn char_id(&self, c: char) -> usize {
        if c == ' ' {
            return Self::WSPACE_ID;
        }
        let mut buf = [0u8; 4];
        self.table.id(c.encode_utf8(&mut buf)).unwrap_or(Self::UNK_ID)
    }

    /// `<s> c1 .. cn </s>` with spaces mapped to `<w>`.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(sentence.len() + 2);
        ids.push(Self::BOS_ID);
        ids.extend(sentence.chars().map(|c| self.char_id(c)));
        ids.push(Self::EOS_ID);
        ids
    }

    /// Inverse of [`encode`](Self::encode); `<unk>` decodes to U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            match id {
                Self::BOS_ID | Self::EOS_ID => {}
                Self::WSPACE_ID => out.push(' '),
                Self::UNK_ID => out.push('\u{FFFD}'),
                _ => out.push_str(self.table.symbol(id)),
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.table.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        CharVocab::from_table(SymbolTable::load(path)?)
    }
}

/// Source-side BPE unit inventory; id 0 is the source `<unk>`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceVocab {
    table: SymbolTable,
}

impl SourceVocab {
    pub const UNK_ID: usize = 0;

    /// Units ordered by descending frequency, then lexicographically.
    pub fn build<I, S>(units: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for u in units {
            *counts.entry(u.as_ref().to_string()).or_default() += 1;
        }
        counts.remove(UNK);
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let symbols = std::iter::once(UNK.to_string()).chain(ranked.into_iter().map(|(s, _)| s));
        Ok(SourceVocab {
            table: SymbolTable::from_symbols(symbols)?,
        })
    }

    pub fn from_table(table: SymbolTable) -> Result<Self> {
        if table.id(UNK) != Some(Self::UNK_ID) {
            return Err(Error::invalid(format!("source vocabulary must start with {UNK}")));
        }
        Ok(SourceVocab { table })
    }

    pub fn table(&self) -> &SymbolTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn encode<S: AsRef<str>>(&self, units: &[S]) -> Vec<usize> {
        units
            .iter()
            .map(|u| self.table.id(u.as_ref()).unwrap_or(Self::UNK_ID))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.table.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SourceVocab::from_table(SymbolTable::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order_and_unk() {
        let cv = CharVocab::build(&["aaaaabbbc"], 2).unwrap();
        assert_eq!(cv.len(), 2 + CharVocab::RESERVED);
        assert_ne!(cv.char_id('a'), CharVocab::UNK_ID);
        assert_ne!(cv.char_id('b'), CharVocab::UNK_ID);
        assert_eq!(cv.char_id('c'), CharVocab::UNK_ID);
    }

    #[test]
    fn large_cap_keeps_everything() {
        let cv = CharVocab::build(&["hello world", "xyz"], 400).unwrap();
        for c in "helowrdxyz".chars() {
            assert_ne!(cv.char_id(c), CharVocab::UNK_ID);
        }
    }

    #[test]
    fn ties_prefer_smaller_code_point() {
        // brute force: sort all (count, char) and take the best
        let text = "babab a";
        let cv = CharVocab::build(&[text], 1).unwrap();
        let mut counts: Vec<(char, usize)> = ['a', 'b']
            .iter()
            .map(|&c| (c, text.chars().filter(|&x| x == c).count()))
            .collect();
        counts.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        assert_eq!(counts[0].1, 3);
        assert_eq!(cv.table().symbol(CharVocab::RESERVED), counts[0].0.to_string());
        assert_eq!(cv.char_id('b'), CharVocab::UNK_ID);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(CharVocab::build::<&str>(&[], 10).is_err());
        assert!(CharVocab::build(&["   "], 10).is_err());
        assert!(CharVocab::build(&["a"], 0).is_err());
    }

    #[test]
    fn encoding_wraps_and_maps_spaces() {
        let cv = CharVocab::build(&["ab"], 10).unwrap();
        let (a, b) = (cv.char_id('a'), cv.char_id('b'));
        assert_eq!(cv.encode("ab"), vec![CharVocab::BOS_ID, a, b, CharVocab::EOS_ID]);
        assert_eq!(
            cv.encode("a b"),
            vec![CharVocab::BOS_ID, a, CharVocab::WSPACE_ID, b, CharVocab::EOS_ID]
        );
        assert_eq!(cv.decode(&cv.encode("a b")), "a b");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chars.vocab");
        let cv = CharVocab::build(&["tere sizlik"], 400).unwrap();
        cv.save(&path).unwrap();
        assert_eq!(CharVocab::load(&path).unwrap(), cv);
    }
}
