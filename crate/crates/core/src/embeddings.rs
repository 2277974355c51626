//! Word-level GRU language model over additive word representations, used to
//! pretrain affix embeddings for the morphology table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax, matmul, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{gru_step, Model};
use crate::morphology::{affix_label, AffixInventory, AffixKind, LabelSet, Segmentation};
use crate::text::{SymbolTable, BOS, EOS, UNK};
use crate::train::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 32,
            hidden: 64,
            epochs: 5,
            batch_size: 20,
            lr: 5e-3,
            init_scale: 0.08,
            seed: 1,
        }
    }
}

/// Morph-vocabulary key of the `i`-th morph of a segmentation: affixes use their class name, stems themselves.
fn morph_key(seg: &Segmentation, i: usize) -> String {
    use std::cmp::Ordering::*;
    match i.cmp(&seg.stem_index) {
        Less => affix_label(AffixKind::Prefix, &seg.morphs[i]),
        Equal => seg.morphs[i].clone(),
        Greater => affix_label(AffixKind::Suffix, &seg.morphs[i]),
    }
}

/// Next-word GRU language model whose input for a word is its surface
/// embedding plus the embeddings of its morphs.
#[derive(Clone, Debug)]
pub struct CompositionalLM {
    pub words: SymbolTable,
    pub morphs: SymbolTable,
    pub params: ParameterSet,
    segmentations: BTreeMap<String, Vec<usize>>,
}

impl CompositionalLM {
    pub const UNK_ID: usize = 0;
    pub const BOS_ID: usize = 1;
    pub const EOS_ID: usize = 2;

    /// Vocabularies from `sentences`; the morph vocabulary holds every stem and every inventory affix.
    pub fn new<S: AsRef<str>>(
        sentences: &[S],
        segmentations: &BTreeMap<String, Segmentation>,
        inventory: &AffixInventory,
        config: &EmbeddingConfig,
    ) -> Result<Self> {
        if config.dim == 0 || config.hidden == 0 {
            return Err(Error::invalid("embedding and hidden sizes must be positive"));
        }
        let mut words = BTreeSet::new();
        for s in sentences {
            words.extend(s.as_ref().split(' ').filter(|w| !w.is_empty()).map(str::to_string));
        }
        if words.is_empty() {
            return Err(Error::Empty("language model corpus"));
        }
        words.retain(|w| w != UNK && w != BOS && w != EOS);
        let words = SymbolTable::from_symbols([UNK, BOS, EOS].into_iter().map(String::from).chain(words))?;

        let mut keys: BTreeSet<String> = inventory.iter().map(|(k, a, _)| affix_label(k, a)).collect();
        for w in words.symbols() {
            if let Some(seg) = segmentations.get(w) {
                keys.insert(seg.stem().to_string());
            }
        }
        let morphs = SymbolTable::from_symbols(keys)?;
        let mut segs = BTreeMap::new();
        for w in words.symbols() {
            if let Some(seg) = segmentations.get(w) {
                let ids: Vec<usize> = (0..seg.morphs.len()).filter_map(|i| morphs.id(&morph_key(seg, i))).collect();
                segs.insert(w.clone(), ids);
            }
        }

        let (v, m, d, h) = (words.len(), morphs.len().max(1), config.dim, config.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterSet::new();
        let s = config.init_scale;
        params.add("lm.surface", Tensor::uniform(&[v, d], s, &mut rng))?;
        params.add("lm.morph", Tensor::uniform(&[m, d], s, &mut rng))?;
        params.add("lm.gru.w", Tensor::uniform(&[d, 3 * h], s, &mut rng))?;
        params.add("lm.gru.u", Tensor::uniform(&[h, 3 * h], s, &mut rng))?;
        params.add("lm.gru.b", Tensor::zeros(&[1, 3 * h]))?;
        params.add("lm.out.w", Tensor::uniform(&[h, v], s, &mut rng))?;
        params.add("lm.out.b", Tensor::zeros(&[1, v]))?;
        Ok(CompositionalLM {
            words,
            morphs,
            params,
            segmentations: segs,
        })
    }

    pub fn dim(&self) -> usize {
        self.value("lm.surface").cols()
    }

    pub fn hidden(&self) -> usize {
        self.value("lm.gru.u").rows()
    }

    fn value(&self, name: &str) -> &Tensor {
        &self.params.by_name(name).expect("lm parameter").value
    }

    /// Embedding row of a morph key (a stem, or an affix class name such as `ler-C`).
    pub fn morph_embedding(&self, key: &str) -> Option<&[f64]> {
        self.morphs.id(key).map(|i| self.value("lm.morph").row_slice(i))
    }

    /// Surface vector (zero if unknown) plus each known morph vector.
    pub fn compose_word_embedding(&self, word: &str, segmentation: Option<&Segmentation>) -> Vec<f64> {
        let mut out = match self.words.id(word) {
            Some(i) if i > Self::EOS_ID => self.value("lm.surface").row_slice(i).to_vec(),
            _ => vec![0.0; self.dim()],
        };
        if let Some(seg) = segmentation {
            for i in 0..seg.morphs.len() {
                if let Some(row) = self.morph_embedding(&morph_key(seg, i)) {
                    out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
            }
        }
        out
    }

    /// One GRU update from a composed word vector, then the next-word distribution.
    pub fn lm_step(&self, input: &[f64], hidden: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.len() != self.dim() || hidden.len() != self.hidden() {
            return Err(Error::shape("lm_step", &[input.len(), hidden.len()], &[self.dim(), self.hidden()]));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(input.to_vec()));
        let h = tape.constant(Tensor::row(hidden.to_vec()));
        let [w, u, b] = ["lm.gru.w", "lm.gru.u", "lm.gru.b"].map(|n| tape.constant(self.value(n).clone()));
        let h2 = gru_step(&mut tape, x, h, w, u, b)?;
        let h2 = tape.value(h2).clone();
        let mut logits = matmul(&h2, self.value("lm.out.w"))?;
        logits.data_mut().iter_mut().zip(self.value("lm.out.b").data()).for_each(|(l, b)| *l += b);
        let probs = log_softmax(&logits)?.into_data().into_iter().map(f64::exp).collect();
        Ok((h2.into_data(), probs))
    }

    fn word_id(&self, w: &str) -> usize {
        self.words.id(w).unwrap_or(Self::UNK_ID)
    }

    /// Summed next-word NLL of one sentence (including `</s>`) and its token count.
    pub fn sentence_nll(&self, tape: &mut Tape, sentence: &str) -> Result<(Var, usize)> {
        let words: Vec<&str> = sentence.split(' ').filter(|w| !w.is_empty()).collect();
        let t = words.len() + 1;
        let (v, m) = (self.words.len(), self.morphs.len().max(1));
        // selection matrices: row i picks the surface and morph rows of input i
        let mut surface = vec![0.0; t * v];
        let mut morph = vec![0.0; t * m];
        surface[Self::BOS_ID] = 1.0;
        let mut targets = Vec::with_capacity(t);
        for (i, w) in words.iter().enumerate() {
            let id = self.word_id(w);
            targets.push(id);
            if id != Self::UNK_ID {
                surface[(i + 1) * v + id] = 1.0;
            }
            if let Some(ms) = self.segmentations.get(*w) {
                for &k in ms {
                    morph[(i + 1) * m + k] += 1.0;
                }
            }
        }
        targets.push(Self::EOS_ID);
        let id = |n: &str| self.params.id(n).expect("lm parameter");
        let es = tape.param(&self.params, id("lm.surface"));
        let em = tape.param(&self.params, id("lm.morph"));
        let sel_s = tape.constant(Tensor::matrix(t, v, surface)?);
        let sel_m = tape.constant(Tensor::matrix(t, m, morph)?);
        let xs = tape.matmul(sel_s, es)?;
        let xm = tape.matmul(sel_m, em)?;
        let x = tape.add(xs, xm)?;
        let [w, u, b, ow, ob] = ["lm.gru.w", "lm.gru.u", "lm.gru.b", "lm.out.w", "lm.out.b"].map(|n| tape.param(&self.params, id(n)));
        let mut h = tape.constant(Tensor::zeros(&[1, self.hidden()]));
        let mut states = Vec::with_capacity(t);
        for i in 0..t {
            let xi = tape.gather(x, &[i])?;
            h = gru_step(tape, xi, h, w, u, b)?;
            states.push(h);
        }
        let hs = tape.concat_rows(&states)?;
        let proj = tape.matmul(hs, ow)?;
        let logits = tape.add(proj, ob)?;
        Ok((tape.cross_entropy(logits, &targets)?, t))
    }

    /// Mean next-word NLL per token over `sentences`.
    pub fn corpus_nll<S: AsRef<str>>(&self, sentences: &[S]) -> Result<f64> {
        let (mut nll, mut n) = (0.0, 0usize);
        for s in sentences {
            let mut tape = Tape::new();
            let (loss, t) = self.sentence_nll(&mut tape, s.as_ref())?;
            nll += tape.value(loss).item();
            n += t;
        }
        if n == 0 {
            return Err(Error::Empty("corpus_nll"));
        }
        Ok(nll / n as f64)
    }

    /// `symbol TAB v1 v2 ... vd`, one morph per line.
    pub fn export_tsv(&self, path: &Path) -> Result<()> {
        let table = self.value("lm.morph");
        let mut text = String::new();
        for (i, sym) in self.morphs.symbols().iter().enumerate() {
            let row: Vec<String> = table.row_slice(i).iter().map(|x| x.to_string()).collect();
            text.push_str(sym);
            text.push('\t');
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// Loads a `symbol TAB v1 ... vd` file.
pub fn load_embeddings_tsv(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (sym, rest) = line.split_once('\t').ok_or_else(|| parse_err("missing tab".into()))?;
        let v: Vec<f64> = rest
            .split(' ')
            .map(|x| x.parse::<f64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<_>>()?;
        if *dim.get_or_insert(v.len()) != v.len() {
            return Err(parse_err(format!("expected {} values, got {}", dim.unwrap_or(0), v.len())));
        }
        out.insert(sym.to_string(), v);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PretrainReport {
    /// Mean training NLL per token before training, then after each epoch.
    pub epoch_nll: Vec<f64>,
}

/// Trains the language model on target-side sentences.
/// Fails if the NLL becomes non-finite or does not end below its starting value.
pub fn pretrain<S: AsRef<str>>(
    sentences: &[S],
    segmentations: &BTreeMap<String, Segmentation>,
    inventory: &AffixInventory,
    config: &EmbeddingConfig,
) -> Result<(CompositionalLM, PretrainReport)> {
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut lm = CompositionalLM::new(sentences, segmentations, inventory, config)?;
    let mut report = PretrainReport {
        epoch_nll: vec![lm.corpus_nll(sentences)?],
    };
    if config.epochs == 0 {
        return Ok((lm, report));
    }
    let mut adam = Adam::new(
        &lm.params,
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            lm.params.zero_grads();
            let mut grads = Vec::with_capacity(chunk.len());
            let mut tokens = 0usize;
            for &i in chunk {
                let mut tape = Tape::new();
                let (loss, t) = lm.sentence_nll(&mut tape, sentences[i].as_ref())?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("language model NLL {value} in epoch {epoch}")));
                }
                grads.push(tape.gradients(loss)?);
                tokens += t;
            }
            for g in &grads {
                lm.params.accumulate_scaled(g, 1.0 / tokens as f64);
            }
            adam.step(&mut lm.params, Some(5.0))?;
        }
        let nll = lm.corpus_nll(sentences)?;
        if !nll.is_finite() {
            return Err(Error::Diverged(format!("language model NLL {nll} after epoch {epoch}")));
        }
        report.epoch_nll.push(nll);
    }
    let (first, last) = (report.epoch_nll[0], *report.epoch_nll.last().expect("nonempty"));
    if last >= first {
        return Err(Error::Diverged(format!("language model NLL went from {first} to {last}")));
    }
    Ok((lm, report))
}

/// Table rows for `labels`: affix rows copy their pretrained embedding, special rows are
/// drawn uniformly from `+-scale`.
pub fn init_morph_table(lm: &CompositionalLM, labels: &LabelSet, scale: f64, seed: u64) -> Result<Tensor> {
    table_from_lookup(|key| lm.morph_embedding(key), lm.dim(), labels, scale, seed)
}

/// As [`init_morph_table`], from embeddings read with [`load_embeddings_tsv`].
pub fn init_morph_table_from_map(
    embeddings: &BTreeMap<String, Vec<f64>>,
    labels: &LabelSet,
    scale: f64,
    seed: u64,
) -> Result<Tensor> {
    let dim = embeddings.values().next().map(Vec::len).ok_or(Error::Empty("embedding file"))?;
    table_from_lookup(|key| embeddings.get(key).map(Vec::as_slice), dim, labels, scale, seed)
}

fn table_from_lookup<'a>(
    lookup: impl Fn(&str) -> Option<&'a [f64]>,
    d: usize,
    labels: &LabelSet,
    scale: f64,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(labels.len());
    for id in 0..labels.len() {
        match labels.affix_of(id) {
            Some((kind, affix)) => {
                let key = affix_label(kind, affix);
                let row = lookup(&key).ok_or_else(|| Error::invalid(format!("affix class `{key}` has no pretrained embedding")))?;
                rows.push(row.to_vec());
            }
            None => rows.push(Tensor::uniform(&[d], scale, &mut rng).into_data()),
        }
    }
    Tensor::from_rows(&rows)
}

/// Replaces a model's morphology table; the table stays trainable.
pub fn set_morph_table(model: &mut Model, table: Tensor) -> Result<()> {
    let id = model
        .net
        .table_id()
        .ok_or_else(|| Error::invalid(format!("variant {} has no morphology table", model.variant())))?;
    let p = model.params.get_mut(id);
    if p.value.shape() != table.shape() {
        return Err(Error::shape("set_morph_table", p.value.shape(), table.shape()));
    }
    p.value = table;
    p.trainable = true;
    Ok(())
}
