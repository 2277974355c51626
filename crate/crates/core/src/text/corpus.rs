use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Line-aligned source/target sentences of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub split: Split,
    pub pairs: Vec<(String, String)>,
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_whitespace(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

impl ParallelCorpus {
    /// Builds a corpus, dropping pairs where either side is empty after normalisation.
    pub fn from_pairs<I>(split: Split, pairs: I) -> Self
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let pairs = pairs
            .into_iter()
            .map(|(s, t)| (normalize_whitespace(&s), normalize_whitespace(&t)))
            .filter(|(s, t)| !s.is_empty() && !t.is_empty())
            .collect();
        ParallelCorpus { split, pairs }
    }

    pub fn load(source: &Path, target: &Path, split: Split) -> Result<Self> {
        let src = read_lines(source)?;
        let tgt = read_lines(target)?;
        if src.len() != tgt.len() {
            return Err(Error::invalid(format!(
                "{} has {} lines but {} has {}",
                source.display(),
                src.len(),
                target.display(),
                tgt.len()
            )));
        }
        Ok(ParallelCorpus::from_pairs(split, src.into_iter().zip(tgt)))
    }

    pub fn save(&self, source: &Path, target: &Path) -> Result<()> {
        let (src, tgt): (Vec<&str>, Vec<&str>) =
            self.pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).unzip();
        write_lines(source, &src)?;
        write_lines(target, &tgt)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<&str> {
        self.pairs.iter().map(|(s, _)| s.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.pairs.iter().map(|(_, t)| t.as_str()).collect()
    }
}
