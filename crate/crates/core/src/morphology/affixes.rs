use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use super::segment::Segmentation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AffixKind {
    Prefix,
    Suffix,
}

impl fmt::Display for AffixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AffixKind::Prefix => "prefix",
            AffixKind::Suffix => "suffix",
        })
    }
}

/// Affixes that survived frequency filtering, with their corpus counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AffixInventory {
    pub prefixes: BTreeMap<String, u64>,
    pub suffixes: BTreeMap<String, u64>,
}

impl AffixInventory {
    pub fn len(&self) -> usize {
        self.prefixes.len() + self.suffixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty() && self.suffixes.is_empty()
    }

    pub fn count(&self, kind: AffixKind, affix: &str) -> Option<u64> {
        match kind {
            AffixKind::Prefix => self.prefixes.get(affix).copied(),
            AffixKind::Suffix => self.suffixes.get(affix).copied(),
        }
    }

    pub fn contains(&self, kind: AffixKind, affix: &str) -> bool {
        self.count(kind, affix).is_some()
    }

    /// `(kind, affix, count)` for every kept affix, prefixes first.
    pub fn iter(&self) -> impl Iterator<Item = (AffixKind, &str, u64)> {
        self.prefixes
            .iter()
            .map(|(a, &c)| (AffixKind::Prefix, a.as_str(), c))
            .chain(self.suffixes.iter().map(|(a, &c)| (AffixKind::Suffix, a.as_str(), c)))
    }

    /// `affix TAB prefix|suffix TAB count` per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (kind, affix, count) in self.iter() {
            text.push_str(&format!("{affix}\t{kind}\t{count}\n"));
        }
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut inv = AffixInventory::default();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split('\t');
            let (Some(affix), Some(kind), Some(count), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected `affix<TAB>type<TAB>count`"));
            };
            let count: u64 = count.parse().map_err(|_| err("count is not an integer"))?;
            match kind {
                "prefix" => inv.prefixes.insert(affix.to_string(), count),
                "suffix" => inv.suffixes.insert(affix.to_string(), count),
                _ => return Err(err("type must be prefix or suffix")),
            };
        }
        Ok(inv)
    }
}

/// Splits each segmentation around its stem (leftmost longest morph) and
/// keeps affixes whose summed frequency reaches `min_count`.
pub fn extract_affixes<'a, I>(segmentations: I, min_count: u64) -> Result<AffixInventory>
where
    I: IntoIterator<Item = (&'a Segmentation, u64)>,
{
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut prefixes: BTreeMap<String, u64> = BTreeMap::new();
    let mut suffixes: BTreeMap<String, u64> = BTreeMap::new();
    let mut seen = false;
    for (seg, freq) in segmentations {
        seen = true;
        for p in seg.prefixes() {
            *prefixes.entry(p.clone()).or_default() += freq;
        }
        for s in seg.suffixes() {
            *suffixes.entry(s.clone()).or_default() += freq;
        }
    }
    if !seen {
        return Err(Error::Empty("extract_affixes"));
    }
    prefixes.retain(|_, c| *c >= min_count);
    suffixes.retain(|_, c| *c >= min_count);
    Ok(AffixInventory { prefixes, suffixes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(morphs: &[&str]) -> Segmentation {
        Segmentation::new(morphs.concat(), morphs.iter().map(|m| m.to_string()).collect()).unwrap()
    }

    #[test]
    fn longest_part_is_stem() {
        let s = seg(&["terbiye", "siz", "lik"]);
        let inv = extract_affixes([(&s, 1)], 1).unwrap();
        assert!(inv.prefixes.is_empty());
        assert_eq!(inv.suffixes.keys().collect::<Vec<_>>(), vec!["lik", "siz"]);
    }

    #[test]
    fn tie_makes_leftmost_the_stem() {
        let s = seg(&["un", "do"]);
        let inv = extract_affixes([(&s, 3)], 1).unwrap();
        assert!(inv.prefixes.is_empty());
        assert_eq!(inv.suffixes.get("do"), Some(&3));
    }

    #[test]
    fn rare_affixes_dropped() {
        let a = seg(&["re", "writing", "s"]);
        let b = seg(&["reading", "s"]);
        let inv = extract_affixes([(&a, 1), (&b, 1)], 2).unwrap();
        assert!(!inv.contains(AffixKind::Prefix, "re"));
        assert_eq!(inv.count(AffixKind::Suffix, "s"), Some(2));
        assert!(extract_affixes([(&a, 1)], 0).is_err());
        assert!(extract_affixes(std::iter::empty(), 1).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("affixes.tsv");
        let s = seg(&["un", "believ", "able"]);
        let inv = extract_affixes([(&s, 7)], 1).unwrap();
        inv.save(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "un\tprefix\t7\nable\tsuffix\t7\n");
        assert_eq!(AffixInventory::load(&path).unwrap(), inv);
    }
}
