use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::autodiff::{log_softmax, ParamId, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Source unit ids, target character ids (`<s> ... </s>`) and one label per target character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub labels: Vec<usize>,
}

impl AnnotatedExample {
    /// Number of predicted positions (everything after `<s>`).
    pub fn predicted_len(&self) -> usize {
        self.target.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
struct GruIds {
    /// Input projections; their products are summed.
    w: Vec<ParamId>,
    u: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct AttentionIds {
    key: ParamId,
    query: ParamId,
    v: ParamId,
}

#[derive(Clone, Debug)]
struct TableIds {
    table: ParamId,
    attention: AttentionIds,
    readout: ParamId,
}

#[derive(Clone, Debug)]
struct LabelIds {
    w: ParamId,
    b: ParamId,
}

/// Graph definition of one variant: parameter handles and sizes, no values.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    src_embed: ParamId,
    enc_fwd: GruIds,
    enc_bwd: GruIds,
    attention: AttentionIds,
    table: Option<TableIds>,
    char_embed: ParamId,
    decoder: Vec<GruIds>,
    readout_h: ParamId,
    readout_emb: ParamId,
    readout_ctx: ParamId,
    readout_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    label: Option<LabelIds>,
}

/// Encoder output and the precomputed attention keys for one source sentence.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    /// `[n x 2h]`, row `j` is `concat(forward_j, backward_j)`.
    pub states: Var,
    keys: Var,
    table: Option<(Var, Var)>,
}

/// Recorded vars of one decoder step.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub hidden: Vec<Var>,
    pub context: Var,
    pub alpha: Var,
    pub morph_context: Option<Var>,
    pub beta: Option<Var>,
    pub char_logits: Var,
    pub label_logits: Option<Var>,
}

/// Values of one decoder step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub hidden: Vec<Tensor>,
    pub context: Vec<f64>,
    pub alpha: Vec<f64>,
    pub morph_context: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub char_logits: Vec<f64>,
    pub label_logits: Option<Vec<f64>>,
}

impl StepOutput {
    pub fn from_vars(tape: &Tape, v: &StepVars) -> Self {
        let data = |x: Var| tape.value(x).data().to_vec();
        StepOutput {
            hidden: v.hidden.iter().map(|&h| tape.value(h).clone()).collect(),
            context: data(v.context),
            alpha: data(v.alpha),
            morph_context: v.morph_context.map(data),
            beta: v.beta.map(data),
            char_logits: data(v.char_logits),
            label_logits: v.label_logits.map(data),
        }
    }
}

/// Result of a teacher-forced pass over one example.
#[derive(Clone, Debug)]
pub struct SequenceVars {
    /// `lambda * char_nll + (1 - lambda) * label_nll`, or `char_nll` without a label channel.
    pub loss: Var,
    pub char_nll: Var,
    pub label_nll: Option<Var>,
    /// One `[1 x n]` row per predicted position.
    pub alphas: Vec<Var>,
    /// One `[1 x |labels|]` row per predicted position.
    pub betas: Vec<Var>,
    pub char_logits: Var,
    pub label_logits: Option<Var>,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a, so each parameter draws from its own stream regardless of creation order
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Parameter names and shapes of a variant, in manifest order.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = &config.dims;
    let (h, a, g) = (d.hidden, d.attention, 3 * d.hidden);
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("enc.src_embed".into(), vec![config.source_vocab, d.source_embed]),
        ("enc.fwd.w".into(), vec![d.source_embed, g]),
        ("enc.fwd.u".into(), vec![h, g]),
        ("enc.fwd.b".into(), vec![1, g]),
        ("enc.bwd.w".into(), vec![d.source_embed, g]),
        ("enc.bwd.u".into(), vec![h, g]),
        ("enc.bwd.b".into(), vec![1, g]),
        ("att.key".into(), vec![2 * h, a]),
        ("att.query".into(), vec![h, a]),
        ("att.v".into(), vec![a, 1]),
    ];
    if config.variant.uses_table() {
        out.extend([
            ("morph.table".into(), vec![config.labels, d.table_dim]),
            ("morph.key".into(), vec![d.table_dim, a]),
            ("morph.query".into(), vec![h, a]),
            ("morph.v".into(), vec![a, 1]),
        ]);
    }
    out.extend([
        ("dec.char_embed".into(), vec![config.char_vocab, d.char_embed]),
        ("dec.l0.w_emb".into(), vec![d.char_embed, g]),
        ("dec.l0.w_ctx".into(), vec![2 * h, g]),
        ("dec.l0.u".into(), vec![h, g]),
        ("dec.l0.b".into(), vec![1, g]),
    ]);
    for l in 1..d.decoder_layers {
        out.extend([
            (format!("dec.l{l}.w"), vec![h, g]),
            (format!("dec.l{l}.u"), vec![h, g]),
            (format!("dec.l{l}.b"), vec![1, g]),
        ]);
    }
    out.extend([
        ("readout.w_h".into(), vec![h, d.readout]),
        ("readout.w_emb".into(), vec![d.char_embed, d.readout]),
        ("readout.w_ctx".into(), vec![2 * h, d.readout]),
        ("readout.b".into(), vec![1, d.readout]),
    ]);
    if config.variant.uses_table() {
        out.push(("readout.w_morph".into(), vec![d.table_dim, d.readout]));
    }
    out.extend([
        ("out.char.w".into(), vec![d.readout, config.char_vocab]),
        ("out.char.b".into(), vec![1, config.char_vocab]),
    ]);
    if config.variant.uses_labels() {
        out.extend([
            ("out.label.w".into(), vec![d.readout, config.labels]),
            ("out.label.b".into(), vec![1, config.labels]),
        ]);
    }
    out
}

fn gru_cell(tape: &mut Tape, gx: Var, h: Var, u: Var, hd: usize) -> Result<Var> {
    let gh = tape.matmul(h, u)?;
    let gx_zr = tape.slice(gx, 0, 2 * hd)?;
    let gh_zr = tape.slice(gh, 0, 2 * hd)?;
    let zr_in = tape.add(gx_zr, gh_zr)?;
    let zr = tape.sigmoid(zr_in);
    let z = tape.slice(zr, 0, hd)?;
    let r = tape.slice(zr, hd, hd)?;
    let gx_n = tape.slice(gx, 2 * hd, hd)?;
    let gh_n = tape.slice(gh, 2 * hd, hd)?;
    let rg = tape.mul(r, gh_n)?;
    let n_in = tape.add(gx_n, rg)?;
    let n = tape.tanh(n_in);
    let diff = tape.sub(h, n)?;
    let keep = tape.mul(z, diff)?;
    tape.add(n, keep)
}

/// One GRU update with the usual gating: `h' = (1 - z) * n + z * h`.
/// `w`, `u`, `b` are `[in x 3h]`, `[h x 3h]`, `[1 x 3h]` with gate blocks ordered z, r, n.
pub fn gru_step(tape: &mut Tape, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let hd = tape.shape(h)[1];
    let xw = tape.matmul(x, w)?;
    let gx = tape.add(xw, b)?;
    gru_cell(tape, gx, h, u, hd)
}

/// Additive attention: `softmax(v . tanh(keys + query . W_q))` over the rows of `values`.
fn attend(tape: &mut Tape, keys: Var, values: Var, q_proj: Var, v: Var, h_prev: Var) -> Result<(Var, Var)> {
    let q = tape.matmul(h_prev, q_proj)?;
    let pre = tape.add(keys, q)?;
    let act = tape.tanh(pre);
    let scores = tape.matmul(act, v)?;
    let n = tape.shape(scores)[0];
    let row = tape.reshape(scores, &[1, n])?;
    let weights = tape.softmax(row)?;
    let context = tape.matmul(weights, values)?;
    Ok((context, weights))
}

impl Network {
    /// Fresh parameters drawn uniformly from `+-init_scale`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Network, ParameterSet)> {
        config.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape) in parameter_shapes(&config) {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &name));
            params.add(name, Tensor::uniform(&shape, config.dims.init_scale, &mut rng))?;
        }
        let net = Network::bind(config, &params)?;
        Ok((net, params))
    }

    /// Resolves every parameter of `config` in `params`, checking names and shapes.
    pub fn bind(config: ModelConfig, params: &ParameterSet) -> Result<Network> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "variant {} has {} parameters, found {}",
                config.variant,
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}` for variant {}", config.variant)))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let gru = |prefix: &str, inputs: &[&str]| GruIds {
            w: inputs.iter().map(|i| id(&format!("{prefix}.{i}"))).collect(),
            u: id(&format!("{prefix}.u")),
            b: id(&format!("{prefix}.b")),
        };
        let mut decoder = vec![gru("dec.l0", &["w_emb", "w_ctx"])];
        for l in 1..config.dims.decoder_layers {
            decoder.push(gru(&format!("dec.l{l}"), &["w"]));
        }
        let table = config.variant.uses_table().then(|| TableIds {
            table: id("morph.table"),
            attention: AttentionIds {
                key: id("morph.key"),
                query: id("morph.query"),
                v: id("morph.v"),
            },
            readout: id("readout.w_morph"),
        });
        let label = config.variant.uses_labels().then(|| LabelIds {
            w: id("out.label.w"),
            b: id("out.label.b"),
        });
        Ok(Network {
            src_embed: id("enc.src_embed"),
            enc_fwd: gru("enc.fwd", &["w"]),
            enc_bwd: gru("enc.bwd", &["w"]),
            attention: AttentionIds {
                key: id("att.key"),
                query: id("att.query"),
                v: id("att.v"),
            },
            table,
            char_embed: id("dec.char_embed"),
            decoder,
            readout_h: id("readout.w_h"),
            readout_emb: id("readout.w_emb"),
            readout_ctx: id("readout.w_ctx"),
            readout_b: id("readout.b"),
            out_w: id("out.char.w"),
            out_b: id("out.char.b"),
            label,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn table_id(&self) -> Option<ParamId> {
        self.table.as_ref().map(|t| t.table)
    }

    /// Ids of the label-channel output layer.
    pub fn label_ids(&self) -> Option<(ParamId, ParamId)> {
        self.label.as_ref().map(|l| (l.w, l.b))
    }

    fn hidden(&self) -> usize {
        self.config.dims.hidden
    }

    /// Bidirectional GRU encoder plus the attention keys that do not depend on the decoder.
    pub fn encode(&self, params: &ParameterSet, tape: &mut Tape, source: &[usize]) -> Result<EncodedSource> {
        if source.is_empty() {
            return Err(Error::Empty("encode"));
        }
        let hd = self.hidden();
        let emb = tape.param(params, self.src_embed);
        let x = tape.gather(emb, source)?;
        let run = |tape: &mut Tape, ids: &GruIds, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Var)>> {
            let w = tape.param(params, ids.w[0]);
            let u = tape.param(params, ids.u);
            let b = tape.param(params, ids.b);
            let xw = tape.matmul(x, w)?;
            let gx_all = tape.add(xw, b)?;
            let mut h = tape.constant(Tensor::zeros(&[1, hd]));
            let mut out = Vec::new();
            for j in order {
                let gx = tape.gather(gx_all, &[j])?;
                h = gru_cell(tape, gx, h, u, hd)?;
                out.push((j, h));
            }
            Ok(out)
        };
        let n = source.len();
        let fwd = run(tape, &self.enc_fwd, &mut (0..n))?;
        let mut bwd = run(tape, &self.enc_bwd, &mut (0..n).rev())?;
        bwd.reverse();
        let f = tape.concat_rows(&fwd.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let b = tape.concat_rows(&bwd.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let states = tape.concat(&[f, b])?;
        let key_w = tape.param(params, self.attention.key);
        let keys = tape.matmul(states, key_w)?;
        let table = match &self.table {
            Some(t) => {
                let tv = tape.param(params, t.table);
                let kw = tape.param(params, t.attention.key);
                let tk = tape.matmul(tv, kw)?;
                Some((tv, tk))
            }
            None => None,
        };
        Ok(EncodedSource { states, keys, table })
    }

    /// Zero decoder state, one `[1 x h]` row per layer.
    pub fn initial_state(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.config.dims.decoder_layers)
            .map(|_| tape.constant(Tensor::zeros(&[1, self.hidden()])))
            .collect()
    }

    /// Attention and recurrence of one step. `gx0` is the embedding part of
    /// the first layer's input projection, bias included.
    #[allow(clippy::type_complexity)]
    fn recur(
        &self,
        params: &ParameterSet,
        tape: &mut Tape,
        enc: &EncodedSource,
        state: &[Var],
        gx0: Var,
        inject_morph: Option<Var>,
    ) -> Result<(Vec<Var>, Var, Var, Option<Var>, Option<Var>)> {
        if state.len() != self.decoder.len() {
            return Err(Error::invalid(format!(
                "decoder state has {} layers, expected {}",
                state.len(),
                self.decoder.len()
            )));
        }
        let hd = self.hidden();
        let query = *state.last().expect("at least one layer");
        let qa = tape.param(params, self.attention.query);
        let va = tape.param(params, self.attention.v);
        let (context, alpha) = attend(tape, enc.keys, enc.states, qa, va, query)?;
        let (morph_context, beta) = match (&self.table, enc.table) {
            (Some(t), Some((tv, tk))) => {
                let qm = tape.param(params, t.attention.query);
                let vm = tape.param(params, t.attention.v);
                let (cm, beta) = attend(tape, tk, tv, qm, vm, query)?;
                (Some(inject_morph.unwrap_or(cm)), Some(beta))
            }
            _ => (None, None),
        };

        let mut hidden = Vec::with_capacity(state.len());
        let l0 = &self.decoder[0];
        let wc = tape.param(params, l0.w[1]);
        let cw = tape.matmul(context, wc)?;
        let gx = tape.add(gx0, cw)?;
        let u = tape.param(params, l0.u);
        let mut below = gru_cell(tape, gx, state[0], u, hd)?;
        hidden.push(below);
        for (l, ids) in self.decoder.iter().enumerate().skip(1) {
            let w = tape.param(params, ids.w[0]);
            let u = tape.param(params, ids.u);
            let b = tape.param(params, ids.b);
            below = gru_step(tape, below, state[l], w, u, b)?;
            hidden.push(below);
        }
        Ok((hidden, context, alpha, morph_context, beta))
    }

    /// `emb . W_emb + b` for the first decoder layer and for the readout, row per input character.
    fn embed_inputs(&self, params: &ParameterSet, tape: &mut Tape, prev: &[usize]) -> Result<(Var, Var, Var)> {
        let table = tape.param(params, self.char_embed);
        let e = tape.gather(table, prev)?;
        let w0 = tape.param(params, self.decoder[0].w[0]);
        let b0 = tape.param(params, self.decoder[0].b);
        let ew0 = tape.matmul(e, w0)?;
        let gx0 = tape.add(ew0, b0)?;
        let wr = tape.param(params, self.readout_emb);
        let br = tape.param(params, self.readout_b);
        let ewr = tape.matmul(e, wr)?;
        let re = tape.add(ewr, br)?;
        Ok((e, gx0, re))
    }

    /// Readout `[h; emb; c; c_m] . W + b` (row-wise) followed by both output heads.
    fn heads(
        &self,
        params: &ParameterSet,
        tape: &mut Tape,
        re: Var,
        h: Var,
        c: Var,
        cm: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let wh = tape.param(params, self.readout_h);
        let wc = tape.param(params, self.readout_ctx);
        let hw = tape.matmul(h, wh)?;
        let mut r = tape.add(re, hw)?;
        let cw = tape.matmul(c, wc)?;
        r = tape.add(r, cw)?;
        if let (Some(t), Some(cm)) = (&self.table, cm) {
            let wm = tape.param(params, t.readout);
            let mw = tape.matmul(cm, wm)?;
            r = tape.add(r, mw)?;
        }
        let ow = tape.param(params, self.out_w);
        let ob = tape.param(params, self.out_b);
        let rw = tape.matmul(r, ow)?;
        let char_logits = tape.add(rw, ob)?;
        let label_logits = match &self.label {
            Some(l) => {
                let lw = tape.param(params, l.w);
                let lb = tape.param(params, l.b);
                let rl = tape.matmul(r, lw)?;
                Some(tape.add(rl, lb)?)
            }
            None => None,
        };
        Ok((char_logits, label_logits))
    }

    /// One decoder step from `prev_char` and the previous state.
    /// `inject_morph` replaces the attended morphology context with a given `[1 x table_dim]` vector.
    pub fn decode_step(
        &self,
        params: &ParameterSet,
        tape: &mut Tape,
        enc: &EncodedSource,
        state: &[Var],
        prev_char: usize,
        inject_morph: Option<Var>,
    ) -> Result<StepVars> {
        if prev_char >= self.config.char_vocab {
            return Err(Error::invalid(format!("character id {prev_char} out of range")));
        }
        let (_, gx0, re) = self.embed_inputs(params, tape, &[prev_char])?;
        let (hidden, context, alpha, morph_context, beta) = self.recur(params, tape, enc, state, gx0, inject_morph)?;
        let top = *hidden.last().expect("at least one layer");
        let (char_logits, label_logits) = self.heads(params, tape, re, top, context, morph_context)?;
        Ok(StepVars {
            hidden,
            context,
            alpha,
            morph_context,
            beta,
            char_logits,
            label_logits,
        })
    }

    /// Teacher-forced pass over `example` with the joint loss.
    pub fn forward_sequence(
        &self,
        params: &ParameterSet,
        tape: &mut Tape,
        example: &AnnotatedExample,
        lambda: f64,
    ) -> Result<SequenceVars> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        if example.target.len() < 2 {
            return Err(Error::invalid("target needs at least <s> and one predicted symbol"));
        }
        if self.label.is_some() && example.labels.len() != example.target.len() {
            return Err(Error::shape("forward_sequence", &[example.target.len()], &[example.labels.len()]));
        }
        let m = example.target.len() - 1;
        let enc = self.encode(params, tape, &example.source)?;
        let (_, gx0_all, re) = self.embed_inputs(params, tape, &example.target[..m])?;
        let mut state = self.initial_state(tape);
        let (mut tops, mut contexts, mut morphs, mut alphas, mut betas) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..m {
            let gx0 = tape.gather(gx0_all, &[i])?;
            let (hidden, c, alpha, cm, beta) = self.recur(params, tape, &enc, &state, gx0, None)?;
            tops.push(*hidden.last().expect("at least one layer"));
            contexts.push(c);
            alphas.push(alpha);
            morphs.extend(cm);
            betas.extend(beta);
            state = hidden;
        }
        let h = tape.concat_rows(&tops)?;
        let c = tape.concat_rows(&contexts)?;
        let cm = if morphs.is_empty() { None } else { Some(tape.concat_rows(&morphs)?) };
        let (char_logits, label_logits) = self.heads(params, tape, re, h, c, cm)?;
        let char_nll = tape.cross_entropy(char_logits, &example.target[1..])?;
        let (loss, label_nll) = match label_logits {
            Some(ll) => {
                let label_nll = tape.cross_entropy(ll, &example.labels[1..])?;
                let a = tape.scale(char_nll, lambda);
                let b = tape.scale(label_nll, 1.0 - lambda);
                (tape.add(a, b)?, Some(label_nll))
            }
            None => (char_nll, None),
        };
        Ok(SequenceVars {
            loss,
            char_nll,
            label_nll,
            alphas,
            betas,
            char_logits,
            label_logits,
        })
    }

    /// Registers every parameter on `tape` so later rewinds keep them.
    pub fn register_params(&self, params: &ParameterSet, tape: &mut Tape) {
        for (id, _) in params.iter() {
            tape.param(params, id);
        }
    }
}

/// Network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Network,
    pub params: ParameterSet,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        let (net, params) = Network::init(config, seed)?;
        Ok(Model { net, params })
    }

    pub fn from_params(config: ModelConfig, params: ParameterSet) -> Result<Model> {
        let net = Network::bind(config, &params)?;
        Ok(Model { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn variant(&self) -> Variant {
        self.net.variant()
    }

    /// Loss value and per-channel NLLs of one example, without gradients.
    pub fn evaluate(&self, example: &AnnotatedExample, lambda: f64) -> Result<(f64, f64, Option<f64>)> {
        let mut tape = Tape::new();
        let out = self.net.forward_sequence(&self.params, &mut tape, example, lambda)?;
        Ok((
            tape.value(out.loss).item(),
            tape.value(out.char_nll).item(),
            out.label_nll.map(|v| tape.value(v).item()),
        ))
    }

    /// Table attention weights of a teacher-forced pass, one row per predicted position.
    pub fn table_attention(&self, example: &AnnotatedExample) -> Result<Vec<Vec<f64>>> {
        if !self.variant().uses_table() {
            return Err(Error::invalid(format!("variant {} has no morphology table", self.variant())));
        }
        let mut tape = Tape::new();
        let out = self.net.forward_sequence(&self.params, &mut tape, example, 1.0)?;
        Ok(out.betas.iter().map(|&b| tape.value(b).data().to_vec()).collect())
    }

    /// Incremental decoder over one source sentence.
    pub fn decoder(&self, source: &[usize]) -> Result<StepDecoder<'_>> {
        StepDecoder::new(&self.net, &self.params, source)
    }
}

/// Decoder state between steps: one hidden row per layer.
pub type DecoderState = Vec<Tensor>;

/// Runs decoder steps on a tape that holds the encoded source; each step's
/// nodes are discarded once its values are read.
pub struct StepDecoder<'a> {
    net: &'a Network,
    params: &'a ParameterSet,
    tape: Tape,
    enc: EncodedSource,
}

impl<'a> StepDecoder<'a> {
    pub fn new(net: &'a Network, params: &'a ParameterSet, source: &[usize]) -> Result<Self> {
        let mut tape = Tape::new();
        net.register_params(params, &mut tape);
        let enc = net.encode(params, &mut tape, source)?;
        Ok(StepDecoder { net, params, tape, enc })
    }

    pub fn initial_state(&self) -> DecoderState {
        vec![Tensor::zeros(&[1, self.net.hidden()]); self.net.config.dims.decoder_layers]
    }

    pub fn encoder_states(&self) -> &Tensor {
        self.tape.value(self.enc.states)
    }

    /// Full step output; `inject_morph` overrides the morphology context.
    pub fn step_with(&mut self, state: &DecoderState, prev_char: usize, inject_morph: Option<&[f64]>) -> Result<StepOutput> {
        let mark = self.tape.mark();
        let result = (|| {
            let vars: Vec<Var> = state.iter().map(|h| self.tape.constant(h.clone())).collect();
            let inject = inject_morph.map(|v| self.tape.constant(Tensor::row(v.to_vec())));
            let step = self.net.decode_step(self.params, &mut self.tape, &self.enc, &vars, prev_char, inject)?;
            Ok(StepOutput::from_vars(&self.tape, &step))
        })();
        self.tape.rewind(mark);
        result
    }

    /// Log-probabilities over characters and the next state.
    pub fn step(&mut self, state: &DecoderState, prev_char: usize) -> Result<(Vec<f64>, DecoderState)> {
        let out = self.step_with(state, prev_char, None)?;
        let logp = log_softmax(&Tensor::row(out.char_logits))?.into_data();
        Ok((logp, out.hidden))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, softmax};
    use crate::model::ModelDims;
    use rand::Rng;

    pub(crate) fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            source_vocab: 7,
            char_vocab: 9,
            labels: 6,
            dims: ModelDims {
                source_embed: 3,
                char_embed: 3,
                hidden: 4,
                attention: 3,
                readout: 5,
                table_dim: 3,
                decoder_layers: 1,
                init_scale: 0.5,
            },
        }
    }

    fn example() -> AnnotatedExample {
        AnnotatedExample {
            source: vec![2, 5, 1],
            target: vec![1, 4, 6, 3, 2],
            labels: vec![0, 2, 2, 5, 4],
        }
    }

    #[test]
    fn zero_weights_give_zero_encoder_states() {
        let mut m = Model::init(tiny_config(Variant::Baseline), 1).unwrap();
        for p in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        let mut tape = Tape::new();
        let enc = m.net.encode(&m.params, &mut tape, &[1, 2, 3]).unwrap();
        assert!(tape.value(enc.states).data().iter().all(|&x| x == 0.0));
        assert_eq!(tape.shape(enc.states), &[3, 8]);
        assert!(m.net.encode(&m.params, &mut tape, &[]).is_err());
    }

    #[test]
    fn zero_weight_gru_halves_state() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.3, -1.0]));
        let h = tape.constant(Tensor::row(vec![0.8, -0.4, 2.0]));
        let w = tape.constant(Tensor::zeros(&[2, 9]));
        let u = tape.constant(Tensor::zeros(&[3, 9]));
        let b = tape.constant(Tensor::zeros(&[1, 9]));
        let out = gru_step(&mut tape, x, h, w, u, b).unwrap();
        assert_eq!(tape.value(out).data(), &[0.4, -0.2, 1.0]);
    }

    /// Straight-line reimplementation of the GRU and additive attention on plain vectors.
    mod oracle {
        use crate::autodiff::Tensor;

        pub fn vecmat(x: &[f64], m: &Tensor) -> Vec<f64> {
            let (rows, cols) = (m.rows(), m.cols());
            assert_eq!(rows, x.len());
            (0..cols).map(|c| (0..rows).map(|r| x[r] * m.get(r, c)).sum()).collect()
        }

        fn sig(x: f64) -> f64 {
            1.0 / (1.0 + (-x).exp())
        }

        pub fn gru(x: &[f64], h: &[f64], w: &Tensor, u: &Tensor, b: &Tensor) -> Vec<f64> {
            let hd = h.len();
            let gx: Vec<f64> = vecmat(x, w).iter().zip(b.data()).map(|(a, b)| a + b).collect();
            let gh = vecmat(h, u);
            (0..hd)
                .map(|k| {
                    let z = sig(gx[k] + gh[k]);
                    let r = sig(gx[hd + k] + gh[hd + k]);
                    let n = (gx[2 * hd + k] + r * gh[2 * hd + k]).tanh();
                    (1.0 - z) * n + z * h[k]
                })
                .collect()
        }

        pub fn attention(keys: &[Vec<f64>], wk: &Tensor, wq: &Tensor, v: &Tensor, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
            let qp = vecmat(q, wq);
            let scores: Vec<f64> = keys
                .iter()
                .map(|k| {
                    let kp = vecmat(k, wk);
                    kp.iter().zip(&qp).enumerate().map(|(i, (a, b))| v.data()[i] * (a + b).tanh()).sum()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let alpha: Vec<f64> = scores.iter().map(|s| (s - max).exp() / z).collect();
            let mut ctx = vec![0.0; keys[0].len()];
            for (a, k) in alpha.iter().zip(keys) {
                for (c, x) in ctx.iter_mut().zip(k) {
                    *c += a * x;
                }
            }
            (ctx, alpha)
        }
    }

    fn value(m: &Model, name: &str) -> Tensor {
        m.params.by_name(name).unwrap().value.clone()
    }

    fn oracle_encode(m: &Model, source: &[usize]) -> Vec<Vec<f64>> {
        let emb = value(m, "enc.src_embed");
        let hd = m.config().dims.hidden;
        let run = |dir: &str, order: Vec<usize>| {
            let (w, u, b) = (value(m, &format!("enc.{dir}.w")), value(m, &format!("enc.{dir}.u")), value(m, &format!("enc.{dir}.b")));
            let mut h = vec![0.0; hd];
            let mut out = vec![Vec::new(); source.len()];
            for j in order {
                h = oracle::gru(emb.row_slice(source[j]), &h, &w, &u, &b);
                out[j] = h.clone();
            }
            out
        };
        let n = source.len();
        let f = run("fwd", (0..n).collect());
        let b = run("bwd", (0..n).rev().collect());
        f.into_iter().zip(b).map(|(mut f, b)| {
            f.extend(b);
            f
        }).collect()
    }

    #[test]
    fn encoder_matches_direct_recomputation() {
        let m = Model::init(tiny_config(Variant::Baseline), 3).unwrap();
        let src = [2, 5, 1, 6];
        let mut tape = Tape::new();
        let enc = m.net.encode(&m.params, &mut tape, &src).unwrap();
        let got = tape.value(enc.states);
        let want = oracle_encode(&m, &src);
        for (j, row) in want.iter().enumerate() {
            for (a, b) in got.row_slice(j).iter().zip(row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // reversed input: the forward half of the reversed run equals the backward half read backwards
        let rev: Vec<usize> = src.iter().rev().copied().collect();
        let mut swapped = m.clone();
        for n in ["w", "u", "b"] {
            let f = value(&m, &format!("enc.fwd.{n}"));
            let b = value(&m, &format!("enc.bwd.{n}"));
            swapped.params.get_mut(swapped.params.id(&format!("enc.fwd.{n}")).unwrap()).value = b;
            swapped.params.get_mut(swapped.params.id(&format!("enc.bwd.{n}")).unwrap()).value = f;
        }
        let mut tape2 = Tape::new();
        let enc2 = swapped.net.encode(&swapped.params, &mut tape2, &rev).unwrap();
        let r = tape2.value(enc2.states);
        let hd = 4;
        for j in 0..src.len() {
            let k = src.len() - 1 - j;
            for c in 0..hd {
                assert!((r.get(k, c) - got.get(j, hd + c)).abs() < 1e-12);
                assert!((r.get(k, hd + c) - got.get(j, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_naive_reimplementation() {
        let m = Model::init(tiny_config(Variant::Mo), 4).unwrap();
        let src = [3, 1, 4];
        let mut dec = m.decoder(&src).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = vec![Tensor::row((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())];
        let out = dec.step_with(&state, 5, None).unwrap();

        let states = oracle_encode(&m, &src);
        let q = state[0].data();
        let (ctx, alpha) = oracle::attention(&states, &value(&m, "att.key"), &value(&m, "att.query"), &value(&m, "att.v"), q);
        let table = value(&m, "morph.table");
        let rows: Vec<Vec<f64>> = (0..table.rows()).map(|r| table.row_slice(r).to_vec()).collect();
        let (cm, beta) = oracle::attention(&rows, &value(&m, "morph.key"), &value(&m, "morph.query"), &value(&m, "morph.v"), q);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&out.alpha, &alpha));
        assert!(close(&out.context, &ctx));
        assert!(close(out.beta.as_ref().unwrap(), &beta));
        assert!(close(out.morph_context.as_ref().unwrap(), &cm));

        // decoder recurrence and readout
        let emb = value(&m, "dec.char_embed");
        let e = emb.row_slice(5);
        let mut x = e.to_vec();
        x.extend(&ctx);
        let mut w = value(&m, "dec.l0.w_emb").into_data();
        w.extend(value(&m, "dec.l0.w_ctx").into_data());
        let w = Tensor::matrix(3 + 8, 12, w).unwrap();
        let h = oracle::gru(&x, q, &w, &value(&m, "dec.l0.u"), &value(&m, "dec.l0.b"));
        assert!(close(out.hidden[0].data(), &h));
        let mut r: Vec<f64> = value(&m, "readout.b").into_data();
        for (part, name) in [(&h[..], "readout.w_h"), (e, "readout.w_emb"), (&ctx[..], "readout.w_ctx"), (&cm[..], "readout.w_morph")] {
            for (acc, v) in r.iter_mut().zip(oracle::vecmat(part, &value(&m, name))) {
                *acc += v;
            }
        }
        let logits: Vec<f64> = oracle::vecmat(&r, &value(&m, "out.char.w"))
            .iter()
            .zip(value(&m, "out.char.b").data())
            .map(|(a, b)| a + b)
            .collect();
        assert!(close(&out.char_logits, &logits));
    }

    #[test]
    fn single_source_position_gets_all_attention() {
        let m = Model::init(tiny_config(Variant::M), 5).unwrap();
        let mut dec = m.decoder(&[4]).unwrap();
        let out = dec.step_with(&dec.initial_state(), 1, None).unwrap();
        assert_eq!(out.alpha, vec![1.0]);
        let s = dec.encoder_states().data().to_vec();
        assert_eq!(out.context, s);
    }

    #[test]
    fn equal_table_rows_get_uniform_weights() {
        let mut m = Model::init(tiny_config(Variant::M), 6).unwrap();
        let id = m.net.table_id().unwrap();
        let t = &mut m.params.get_mut(id).value;
        for r in 0..t.rows() {
            t.row_slice_mut(r).copy_from_slice(&[0.1, -0.2, 0.3]);
        }
        let mut dec = m.decoder(&[1, 2]).unwrap();
        let out = dec.step_with(&dec.initial_state(), 1, None).unwrap();
        for b in out.beta.unwrap() {
            assert!((b - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn variant_outputs_follow_flags() {
        for v in Variant::ALL {
            let m = Model::init(tiny_config(v), 1).unwrap();
            let mut dec = m.decoder(&[1, 2]).unwrap();
            let out = dec.step_with(&dec.initial_state(), 1, None).unwrap();
            assert_eq!(out.beta.is_some(), v.uses_table());
            assert_eq!(out.morph_context.is_some(), v.uses_table());
            assert_eq!(out.label_logits.is_some(), v.uses_labels());
            let p = softmax(&Tensor::row(out.char_logits)).unwrap();
            assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn injected_context_reproduces_attended_context() {
        let m = Model::init(tiny_config(Variant::Mo), 8).unwrap();
        let mut dec = m.decoder(&[3, 3, 1]).unwrap();
        let s0 = dec.initial_state();
        let a = dec.step_with(&s0, 1, None).unwrap();
        let b = dec.step_with(&a.hidden, 4, None).unwrap();
        let c = dec.step_with(&a.hidden, 4, b.morph_context.as_deref()).unwrap();
        for (x, y) in b.char_logits.iter().zip(&c.char_logits) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in b.label_logits.unwrap().iter().zip(c.label_logits.as_ref().unwrap()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn teacher_forcing_matches_stepwise_decoding() {
        let ex = example();
        for v in Variant::ALL {
            let m = Model::init(tiny_config(v), 2).unwrap();
            let mut tape = Tape::new();
            let seq = m.net.forward_sequence(&m.params, &mut tape, &ex, 1.0).unwrap();
            let logits = tape.value(seq.char_logits).clone();
            let mut dec = m.decoder(&ex.source).unwrap();
            let mut state = dec.initial_state();
            let mut nll = 0.0;
            for i in 0..ex.predicted_len() {
                let out = dec.step_with(&state, ex.target[i], None).unwrap();
                assert!(out.char_logits.iter().zip(logits.row_slice(i)).all(|(a, b)| (a - b).abs() < 1e-12));
                let lp = log_softmax(&Tensor::row(out.char_logits)).unwrap();
                nll -= lp.data()[ex.target[i + 1]];
                state = out.hidden;
            }
            assert!((nll - tape.value(seq.char_nll).item()).abs() < 1e-10);
        }
    }

    #[test]
    fn one_char_target_is_single_cross_entropy() {
        let m = Model::init(tiny_config(Variant::Baseline), 2).unwrap();
        let ex = AnnotatedExample { source: vec![1], target: vec![1, 2], labels: vec![0, 4] };
        let (loss, _, _) = m.evaluate(&ex, 1.0).unwrap();
        let mut dec = m.decoder(&ex.source).unwrap();
        let (lp, _) = dec.step(&dec.initial_state(), 1).unwrap();
        assert!((loss + lp[2]).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_mixes_channels() {
        let m = Model::init(tiny_config(Variant::Mo), 3).unwrap();
        let ex = example();
        let (l1, c, l) = m.evaluate(&ex, 1.0).unwrap();
        let l = l.unwrap();
        assert_eq!(l1, c);
        let (l0, _, _) = m.evaluate(&ex, 0.0).unwrap();
        assert_eq!(l0, l);
        let (lh, _, _) = m.evaluate(&ex, 0.5).unwrap();
        assert!((lh - 0.5 * (c + l)).abs() < 1e-12);
        assert!(m.evaluate(&ex, 1.5).is_err());
        assert!(m.evaluate(&ex, -0.1).is_err());
        let short = AnnotatedExample { labels: vec![0, 1], ..ex };
        assert!(m.evaluate(&short, 0.5).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_for_all_variants() {
        // unit-scale weights keep every gradient entry well above the central-difference noise floor
        let ex = AnnotatedExample { source: vec![2, 5, 3], target: vec![1, 4, 6, 3, 2], labels: vec![0, 2, 5, 5, 4] };
        for v in Variant::ALL {
            let mut config = tiny_config(v);
            config.dims.init_scale = 1.0;
            let Model { net, mut params } = Model::init(config, 1).unwrap();
            let report = finite_diff_check(
                &mut params,
                |p, tape| Ok(net.forward_sequence(p, tape, &ex, 0.7)?.loss),
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{v}: {:?}", report.worst());
        }
    }

    #[test]
    fn loss_is_finite_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..50 {
            let v = Variant::ALL[seed % 4];
            let m = Model::init(tiny_config(v), seed as u64).unwrap();
            let n = rng.gen_range(1..6);
            let t = rng.gen_range(2..8);
            let ex = AnnotatedExample {
                source: (0..n).map(|_| rng.gen_range(0..7)).collect(),
                target: (0..t).map(|_| rng.gen_range(0..9)).collect(),
                labels: (0..t).map(|_| rng.gen_range(0..6)).collect(),
            };
            let (loss, _, _) = m.evaluate(&ex, rng.gen_range(0.0..=1.0)).unwrap();
            assert!(loss.is_finite());
        }
    }

    #[test]
    fn bind_rejects_other_variants() {
        let m = Model::init(tiny_config(Variant::M), 1).unwrap();
        assert!(Network::bind(tiny_config(Variant::Mo), &m.params).is_err());
        assert!(Network::bind(tiny_config(Variant::Baseline), &m.params).is_err());
        assert!(Network::bind(tiny_config(Variant::M), &m.params).is_ok());
    }

    #[test]
    fn shared_parameters_are_identical_across_variants() {
        let a = Model::init(tiny_config(Variant::Baseline), 42).unwrap();
        let b = Model::init(tiny_config(Variant::Mo), 42).unwrap();
        for (_, p) in a.params.iter() {
            assert_eq!(p.value, b.params.by_name(&p.name).unwrap().value, "{}", p.name);
        }
    }

    #[test]
    fn table_row_permutation_permutes_attention() {
        let mut m = Model::init(tiny_config(Variant::M), 5).unwrap();
        let ex = example();
        let (loss, _, _) = m.evaluate(&ex, 1.0).unwrap();
        let beta = m.table_attention(&ex).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let id = m.net.table_id().unwrap();
        let old = m.params.value(id).clone();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&r| old.row_slice(r).to_vec()).collect();
        m.params.get_mut(id).value = Tensor::from_rows(&rows).unwrap();
        let (permuted_loss, _, _) = m.evaluate(&ex, 1.0).unwrap();
        assert!((loss - permuted_loss).abs() < 1e-12);
        for (b, pb) in beta.iter().zip(m.table_attention(&ex).unwrap()) {
            for (i, &r) in perm.iter().enumerate() {
                assert!((pb[i] - b[r]).abs() < 1e-12);
            }
        }
    }
}
