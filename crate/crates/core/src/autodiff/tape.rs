use std::collections::HashMap;

use super::tensor;
use super::params::{Gradients, ParamId, ParameterSet};
use super::tensor::{
    dot, log_sum_exp, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, softmax_in_place, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `b` is either the same shape as `a` or a single row broadcast over `a`.
    Add(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Position on a tape that can later be rewound to.
#[derive(Clone, Copy, Debug)]
pub struct TapeMark(usize);

/// Wengert list: every op is evaluated eagerly and recorded in execution order,
/// so operands always precede their consumers.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    #[cfg(test)]
    pub(crate) corrupt_sigmoid_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn mark(&self) -> TapeMark {
        TapeMark(self.nodes.len())
    }

    /// Drops every node recorded after `mark`.
    pub fn rewind(&mut self, mark: TapeMark) {
        self.nodes.truncate(mark.0);
        self.param_vars.retain(|_, v| v.0 < mark.0);
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter leaf. Repeated calls for the same id return the same
    /// var, so gradients from every use accumulate on one node.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = params.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.check_matrix("matmul")?;
        let (k2, n) = bv.check_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(av.data(), bv.data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = av.clone();
        if av.shape() == bv.shape() {
            for (o, x) in out.data_mut().iter_mut().zip(bv.data()) {
                *o += x;
            }
        } else if bv.rows() == 1 && bv.cols() == av.cols() {
            let cols = av.cols();
            for row in out.data_mut().chunks_mut(cols) {
                for (o, x) in row.iter_mut().zip(bv.data()) {
                    *o += x;
                }
            }
        } else {
            return Err(Error::shape("add", av.shape(), bv.shape()));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// `a - b`, recorded as `a + (-1) * b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, s), needs)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mul", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for (o, x) in out.data_mut().iter_mut().zip(bv.data()) {
            *o *= x;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Concatenation along the last axis of 2-D operands with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape("concat", self.value(*first).shape(), t.shape()));
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::Concat(parts.to_vec()), needs))
    }

    /// Stacks 2-D operands with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Columns `start..start + len` of every row.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > cols {
            return Err(Error::shape("slice", av.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::matrix(rows, len, out)?, Op::Slice(a, start), needs))
    }

    /// Row gather (embedding lookup) from a 2-D operand.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = tv.check_matrix("gather")?;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(Error::invalid(format!("gather index {i} out of range for {rows} rows")));
            }
            out.extend_from_slice(tv.row_slice(i));
        }
        let needs = self.needs(table);
        Ok(self.push(Tensor::matrix(ids.len(), cols, out)?, Op::Gather(table, ids.to_vec()), needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = sigmoid(*x));
        let needs = self.needs(a);
        self.push(out, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = tensor::tanh(*x));
        let needs = self.needs(a);
        self.push(out, Op::Tanh(a), needs)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        if out.numel() == 0 {
            return Err(Error::Empty("softmax"));
        }
        let cols = out.cols();
        out.data_mut().chunks_mut(cols).for_each(softmax_in_place);
        let needs = self.needs(a);
        Ok(self.push(out, Op::Softmax(a), needs))
    }

    /// Summed negative log-likelihood of `targets[r]` under `softmax(logits[r])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if rows != targets.len() {
            return Err(Error::shape("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut nll = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::invalid(format!("target {t} out of range for {cols} classes")));
            }
            let row = lv.row_slice(r);
            nll += log_sum_exp(row) - row[t];
        }
        let needs = self.needs(logits);
        Ok(self.push(Tensor::scalar(nll), Op::CrossEntropy(logits, targets.to_vec()), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), needs))
    }

    /// Reverse pass from a scalar `loss`, returning per-parameter gradients.
    /// The tape itself is not modified, so calling this twice yields the same result.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.push((*id, Tensor::new(node.value.shape().to_vec(), g)?)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    if self.needs(*a) {
                        matmul_bt_acc(&g, bv.data(), m, k, n, self.acc(&mut grads, *a));
                    }
                    if self.needs(*b) {
                        matmul_at_acc(av.data(), &g, m, k, n, self.acc(&mut grads, *b));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        add_into(self.acc(&mut grads, *a), &g);
                    }
                    if self.needs(*b) {
                        let cols = self.value(*b).numel();
                        let gb = self.acc(&mut grads, *b);
                        if cols == g.len() {
                            add_into(gb, &g);
                        } else {
                            for row in g.chunks(cols) {
                                add_into(gb, row);
                            }
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.needs(*a) {
                        let ga = self.acc(&mut grads, *a);
                        for (x, gv) in ga.iter_mut().zip(&g) {
                            *x += s * gv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.value(*b).data();
                        let ga = self.acc(&mut grads, *a);
                        for ((x, gv), bv) in ga.iter_mut().zip(&g).zip(bv) {
                            *x += gv * bv;
                        }
                    }
                    if self.needs(*b) {
                        let av = self.value(*a).data();
                        let gb = self.acc(&mut grads, *b);
                        for ((x, gv), av) in gb.iter_mut().zip(&g).zip(av) {
                            *x += gv * av;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.needs(p) {
                            let gp = self.acc(&mut grads, p);
                            for r in 0..rows {
                                add_into(
                                    &mut gp[r * c..(r + 1) * c],
                                    &g[r * total + offset..r * total + offset + c],
                                );
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        if self.needs(p) {
                            add_into(self.acc(&mut grads, p), &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    if self.needs(*a) {
                        let cols = self.value(*a).cols();
                        let len = node.value.cols();
                        let ga = self.acc(&mut grads, *a);
                        for (r, grow) in g.chunks(len).enumerate() {
                            add_into(&mut ga[r * cols + start..r * cols + start + len], grow);
                        }
                    }
                }
                Op::Gather(a, ids) => {
                    if self.needs(*a) {
                        let cols = self.value(*a).cols();
                        let ga = self.acc(&mut grads, *a);
                        for (grow, &id) in g.chunks(cols).zip(ids) {
                            add_into(&mut ga[id * cols..(id + 1) * cols], grow);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let y = node.value.data();
                        #[cfg(test)]
                        let fault = if self.corrupt_sigmoid_grad { 1.5 } else { 1.0 };
                        #[cfg(not(test))]
                        let fault = 1.0;
                        let ga = self.acc(&mut grads, *a);
                        for ((x, gv), y) in ga.iter_mut().zip(&g).zip(y) {
                            *x += fault * gv * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let y = node.value.data();
                        let ga = self.acc(&mut grads, *a);
                        for ((x, gv), y) in ga.iter_mut().zip(&g).zip(y) {
                            *x += gv * (1.0 - y * y);
                        }
                    }
                }
                Op::Softmax(a) => {
                    if self.needs(*a) {
                        let cols = node.value.cols();
                        let y = node.value.data();
                        let ga = self.acc(&mut grads, *a);
                        for ((grow, yrow), garow) in
                            g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols))
                        {
                            let inner = dot(grow, yrow);
                            for ((x, gv), yv) in garow.iter_mut().zip(grow).zip(yrow) {
                                *x += yv * (gv - inner);
                            }
                        }
                    }
                }
                Op::CrossEntropy(a, targets) => {
                    if self.needs(*a) {
                        let lv = self.value(*a);
                        let cols = lv.cols();
                        let scale = g[0];
                        let mut probs = lv.data().to_vec();
                        let ga = self.acc(&mut grads, *a);
                        for ((prow, garow), &t) in
                            probs.chunks_mut(cols).zip(ga.chunks_mut(cols)).zip(targets)
                        {
                            softmax_in_place(prow);
                            prow[t] -= 1.0;
                            for (x, p) in garow.iter_mut().zip(prow.iter()) {
                                *x += scale * p;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.needs(*a) {
                        let ga = self.acc(&mut grads, *a);
                        ga.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::Reshape(a) => {
                    if self.needs(*a) {
                        add_into(self.acc(&mut grads, *a), &g);
                    }
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(Gradients { entries: out })
    }

    /// Runs the reverse pass and accumulates into the parameters' gradients.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        params.accumulate(&grads);
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::finite_diff_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_derivative() {
        let mut ps = ParameterSet::new();
        let x = ps.add("x", Tensor::scalar(3.0)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let sq = tape.mul(xv, xv).unwrap();
        tape.backward(sq, &mut ps).unwrap();
        assert_eq!(ps.get(x).grad.data(), &[6.0]);
    }

    #[test]
    fn sigmoid_sum_derivative_at_zero() {
        let mut ps = ParameterSet::new();
        let x = ps.add("x", Tensor::zeros(&[1, 4])).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let s = tape.sigmoid(xv);
        let loss = tape.sum(s);
        tape.backward(loss, &mut ps).unwrap();
        assert!(ps.get(x).grad.data().iter().all(|&g| g == 0.25));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut ps = ParameterSet::new();
        let x = ps.add("x", Tensor::zeros(&[1, 2])).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        assert!(matches!(tape.gradients(xv), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_parameter_keeps_zero_gradient() {
        let mut ps = ParameterSet::new();
        let x = ps.add("x", Tensor::row(vec![1.0, 2.0])).unwrap();
        let y = ps.add("y", Tensor::row(vec![5.0])).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let _yv = tape.param(&ps, y);
        let loss = tape.sum(xv);
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(y).grad.data(), &[0.0]);
        assert_eq!(ps.get(x).grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn replay_without_zeroing_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::uniform(&[3, 2], 1.0, &mut rng)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[1, 3], 1.0, &mut rng));
        let wv = tape.param(&ps, w);
        let h = tape.matmul(x, wv).unwrap();
        let h = tape.tanh(h);
        let loss = tape.cross_entropy(h, &[1]).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        let once = ps.get(w).grad.clone();
        tape.backward(loss, &mut ps).unwrap();
        for (a, b) in ps.get(w).grad.data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::uniform(&[4, 3], 1.0, &mut rng)).unwrap();
        let x = Tensor::uniform(&[2, 4], 1.0, &mut rng);

        let build = |tape: &mut Tape, ps: &ParameterSet| -> (Var, Var) {
            let xv = tape.constant(x.clone());
            let wv = tape.param(ps, w);
            let h = tape.matmul(xv, wv).unwrap();
            let a = tape.cross_entropy(h, &[0, 2]).unwrap();
            let s = tape.sigmoid(h);
            let b = tape.sum(s);
            (a, b)
        };

        let mut tape = Tape::new();
        let (a, b) = build(&mut tape, &ps);
        let total = tape.add(a, b).unwrap();
        let joint = tape.gradients(total).unwrap();

        let mut t1 = Tape::new();
        let (a1, _) = build(&mut t1, &ps);
        let ga = t1.gradients(a1).unwrap();
        let mut t2 = Tape::new();
        let (_, b2) = build(&mut t2, &ps);
        let gb = t2.gradients(b2).unwrap();

        let j = joint.get(w).unwrap();
        for ((x, y), z) in j.data().iter().zip(ga.get(w).unwrap().data()).zip(gb.get(w).unwrap().data()) {
            assert!((x - (y + z)).abs() <= 1e-12);
        }
    }

    #[test]
    fn rewind_drops_later_nodes() {
        let mut ps = ParameterSet::new();
        let w = ps.add("w", Tensor::row(vec![1.0])).unwrap();
        let mut tape = Tape::new();
        let mark = tape.mark();
        let _ = tape.param(&ps, w);
        tape.rewind(mark);
        assert!(tape.is_empty());
        let v = tape.param(&ps, w);
        assert_eq!(tape.value(v).data(), &[1.0]);
    }

    /// Builds a loss touching every op on the tape from a seeded draw.
    fn every_op_loss(ps: &ParameterSet, tape: &mut Tape) -> Result<Var> {
        let a = tape.param(ps, ps.id("a").unwrap());
        let b = tape.param(ps, ps.id("b").unwrap());
        let emb = tape.param(ps, ps.id("emb").unwrap());
        let bias = tape.param(ps, ps.id("bias").unwrap());
        let rows = tape.gather(emb, &[2, 0, 2])?;
        let h = tape.matmul(rows, a)?;
        let h = tape.add(h, bias)?;
        let s = tape.sigmoid(h);
        let t = tape.tanh(h);
        let prod = tape.mul(s, t)?;
        let cat = tape.concat(&[prod, rows])?;
        let left = tape.slice(cat, 1, 3)?;
        let stacked = tape.concat_rows(&[left, rows])?;
        let logits = tape.matmul(stacked, b)?;
        let scaled = tape.scale(logits, 0.7);
        let sm = tape.softmax(scaled)?;
        let flat = tape.reshape(sm, &[1, 18])?;
        let flat_sq = tape.mul(flat, flat)?;
        let sq = tape.sum(flat_sq);
        let ce = tape.cross_entropy(logits, &[0, 1, 1, 2, 0, 1])?;
        let diff = tape.sub(ce, sq)?;
        Ok(diff)
    }

    fn every_op_params(seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        ps.add("a", Tensor::uniform(&[3, 4], 1.0, &mut rng)).unwrap();
        ps.add("b", Tensor::uniform(&[3, 3], 1.0, &mut rng)).unwrap();
        ps.add("emb", Tensor::uniform(&[4, 3], 1.0, &mut rng)).unwrap();
        ps.add("bias", Tensor::uniform(&[1, 4], 1.0, &mut rng)).unwrap();
        ps
    }

    #[test]
    fn corrupted_rule_is_detected() {
        let mut ps = every_op_params(5);
        let report = finite_diff_check(
            &mut ps,
            |p, t| {
                t.corrupt_sigmoid_grad = true;
                every_op_loss(p, t)
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn every_op_matches_finite_differences(seed in any::<u64>()) {
            let mut ps = every_op_params(seed);
            let report = finite_diff_check(&mut ps, every_op_loss, 1e-5).unwrap();
            prop_assert!(report.max_rel_error <= 1e-4, "{:?}", report);
        }

        #[test]
        fn softmax_rows_normalised(xs in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::row(xs));
            let y = tape.softmax(x).unwrap();
            let vals = tape.value(y).data();
            let s: f64 = vals.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(vals.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}
