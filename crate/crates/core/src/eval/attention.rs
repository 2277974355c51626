use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AnnotatedExample, Model};
use crate::morphology::LabelSet;
use crate::text::{CharVocab, EOS, WSPACE};

/// Table attention of one teacher-forced pass: one row per emitted character.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// Character emitted at each step, as shown in the row header.
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl AttentionMap {
    pub fn compute(model: &Model, example: &AnnotatedExample, chars: &CharVocab, labels: &LabelSet) -> Result<Self> {
        if labels.len() != model.config().labels {
            return Err(Error::invalid(format!(
                "label set has {} classes, model table has {} rows",
                labels.len(),
                model.config().labels
            )));
        }
        let weights = model.table_attention(example)?;
        let rows = example.target[1..]
            .iter()
            .map(|&id| match id {
                CharVocab::EOS_ID => EOS.to_string(),
                CharVocab::WSPACE_ID => WSPACE.to_string(),
                _ => chars.table().symbol(id).to_string(),
            })
            .collect();
        Ok(AttentionMap {
            rows,
            columns: labels.names().to_vec(),
            weights,
        })
    }

    /// `(column index, weight)` of the `k` largest weights of a row, ties by column.
    pub fn top_k(&self, row: usize, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self.weights[row].iter().copied().enumerate().collect();
        idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        idx.truncate(k);
        idx
    }

    /// Heatmap CSV: `step,char,<column names...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["step".to_string(), "char".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (i, (ch, row)) in self.rows.iter().zip(&self.weights).enumerate() {
            let mut rec = vec![i.to_string(), ch.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::file(path, e))
    }

    /// Companion CSV with the `k` most attended columns per step: `step,char,rank,column,weight`.
    pub fn write_top_k(&self, path: &Path, k: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["step", "char", "rank", "column", "weight"]).map_err(|e| csv_error(path, e))?;
        for (i, ch) in self.rows.iter().enumerate() {
            for (rank, (col, weight)) in self.top_k(i, k).into_iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    ch.clone(),
                    (rank + 1).to_string(),
                    self.columns[col].clone(),
                    weight.to_string(),
                ])
                .map_err(|e| csv_error(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::file(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::file(path, std::io::Error::other(e))
}

/// Writes the heatmap and its top-`k` companion for one example.
pub fn export_attention(
    model: &Model,
    example: &AnnotatedExample,
    chars: &CharVocab,
    labels: &LabelSet,
    heatmap: &Path,
    top: &Path,
    k: usize,
) -> Result<AttentionMap> {
    let map = AttentionMap::compute(model, example, chars, labels)?;
    map.write_csv(heatmap)?;
    map.write_top_k(top, k)?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelDims, Variant};
    use crate::morphology::AffixInventory;

    fn setup(variant: Variant) -> (Model, CharVocab, LabelSet, AnnotatedExample) {
        let chars = CharVocab::build(&["ab cd"], 400).unwrap();
        let mut inv = AffixInventory::default();
        inv.suffixes.insert("cd".into(), 9);
        let labels = LabelSet::build(&inv);
        let config = ModelConfig {
            variant,
            source_vocab: 5,
            char_vocab: chars.len(),
            labels: labels.len(),
            dims: ModelDims { hidden: 6, attention: 5, readout: 5, table_dim: 4, char_embed: 4, source_embed: 4, ..Default::default() },
        };
        let model = Model::init(config, 3).unwrap();
        let target = chars.encode("ab cd");
        let ex = AnnotatedExample { source: vec![1, 2], labels: vec![0; target.len()], target };
        (model, chars, labels, ex)
    }

    #[test]
    fn rows_are_distributions_over_all_columns() {
        let (model, chars, labels, ex) = setup(Variant::Mo);
        let dir = tempfile::tempdir().unwrap();
        let (h, t) = (dir.path().join("att.csv"), dir.path().join("top.csv"));
        let map = export_attention(&model, &ex, &chars, &labels, &h, &t, 3).unwrap();
        assert_eq!(map.rows, ["a", "b", WSPACE, "c", "d", EOS]);
        assert_eq!(map.weights.len(), map.rows.len());
        let mut rdr = csv::Reader::from_path(&h).unwrap();
        assert_eq!(rdr.headers().unwrap().len(), 2 + labels.len());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let sum: f64 = rec.iter().skip(2).map(|x| x.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        let top = std::fs::read_to_string(&t).unwrap();
        assert_eq!(top.lines().count(), 1 + 3 * map.rows.len());
    }

    #[test]
    fn variants_without_table_rejected() {
        let (model, chars, labels, ex) = setup(Variant::O);
        assert!(AttentionMap::compute(&model, &ex, &chars, &labels).is_err());
    }
}
