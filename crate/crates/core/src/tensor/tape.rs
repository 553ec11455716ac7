//! Reverse-mode tape over dense tensors.
//!
//! Operations are recorded in execution order; [`Tape::backward`] walks them
//! in reverse and accumulates gradients for every tracked node. Constants are
//! recorded too but never receive gradients, and any node whose inputs are
//! all constants is itself a constant.

use std::rc::Rc;

use rand::Rng;

use super::dense::Tensor;
use super::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variable-length groups of consecutive rows, e.g. the neighbors of each
/// query node. Group `s` owns rows `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        let mut acc = 0;
        for l in lengths {
            acc += l;
            offsets.push(acc);
        }
        Segments { offsets }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn len_of(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    /// Segment index that owns each row.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for s in 0..self.count() {
            out.extend(std::iter::repeat_n(s, self.len_of(s)));
        }
        out
    }
}

/// How [`Tape::bce`] interprets its scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreKind {
    Logits,
    Probabilities,
}

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the log.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulRows(Var, Rc<[f64]>),
    Concat(Rc<[Var]>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterRows(Var, Var, Rc<[usize]>),
    SegmentDot { q: Var, k: Var, seg: Rc<Segments>, heads: usize, scale: f64 },
    SegmentSoftmax(Var, Rc<Segments>),
    SegmentWeightedSum { w: Var, v: Var, seg: Rc<Segments>, heads: usize },
    Dropout(Var, Rc<[f64]>),
    Bce { scores: Var, labels: Rc<[f64]>, kind: ScoreKind },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape is single-use per training step: build it, call
/// [`backward`](Tape::backward) once, then drop or [`clear`](Tape::clear) it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| like.zeros_like())
    }
}

fn head_width(cols: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !cols.is_multiple_of(heads) {
        return Err(Error::dim(format!("{cols} columns cannot be split into {heads} heads")));
    }
    Ok(cols / heads)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// A value that receives a gradient (parameter or differentiated input).
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = &self.nodes[a.0].value;
        let out = x.with_data(x.data().iter().map(|&v| f(v)).collect());
        let t = self.tracked(&[a]);
        self.push(out, op, t)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape() != y.shape() {
            return Err(Error::dim(format!("{what}: shapes {:?} and {:?} differ", x.shape(), y.shape())));
        }
        Ok(())
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = x.with_data(x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect());
        let t = self.tracked(&[a, b]);
        Ok(self.push(out, op, t))
    }

    /// Matrix product. A rank-1 left operand is a single row and yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, w) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if w.rank() != 2 {
            return Err(Error::dim(format!("matmul right operand must be a matrix, got {:?}", w.shape())));
        }
        let (m, k, n) = (x.rows(), x.cols(), w.cols());
        if x.rank() == 0 || k != w.rows() {
            return Err(Error::dim(format!("matmul {:?} x {:?}", x.shape(), w.shape())));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(x.data(), w.data(), &mut out, m, k, n);
        let shape = if x.rank() == 1 { vec![n] } else { vec![m, n] };
        let t = self.tracked(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Matmul(a, b), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let n = x.cols();
        if b.len() != n || b.rows() != 1 {
            return Err(Error::dim(format!("bias {:?} for rows of width {n}", b.shape())));
        }
        let mut out = x.data().to_vec();
        if n > 0 {
            for row in out.chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let out = x.with_data(out);
        let t = self.tracked(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), t))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |v| v * c, Op::Scale(a, c))
    }

    /// Multiplies row `i` of `a` by the constant `factors[i]`.
    pub fn mul_rows(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if factors.len() != x.rows() {
            return Err(Error::dim(format!("{} row factors for {} rows", factors.len(), x.rows())));
        }
        let n = x.cols();
        let mut out = x.data().to_vec();
        if n > 0 {
            for (row, f) in out.chunks_mut(n).zip(&factors) {
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        let out = x.with_data(out);
        let t = self.tracked(&[a]);
        Ok(self.push(out, Op::MulRows(a, factors.into()), t))
    }

    /// Concatenates along the feature (last) axis. Vectors join into a vector;
    /// matrices must agree on their row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of nothing"));
        }
        let all_vectors = parts.iter().all(|p| self.nodes[p.0].value.rank() == 1);
        let rows = self.nodes[parts[0].0].value.rows();
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() == 0 || (!all_vectors && v.rows() != rows) {
                return Err(Error::dim(format!("concat part {:?} does not match {rows} rows", v.shape())));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        let t = self.tracked(parts);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.into()), t))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let rank = x.rank().max(1);
        if axis >= rank {
            return Err(Error::dim(format!("softmax axis {axis} on shape {:?}", x.shape())));
        }
        let (rows, cols) = (x.rows(), x.cols());
        let (outer, len, stride, step) = if x.rank() == 2 && axis == 0 {
            (cols, rows, 1, cols)
        } else {
            (rows, cols, cols, 1)
        };
        if len == 0 {
            return Err(Error::dim("softmax over an empty axis"));
        }
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            let idx = |i: usize| o * stride + i * step;
            let max = (0..len).map(|i| x.data()[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..len {
                let e = (x.data()[idx(i)] - max).exp();
                out[idx(i)] = e;
                sum += e;
            }
            for i in 0..len {
                out[idx(i)] /= sum;
            }
        }
        let out = x.with_data(out);
        let t = self.tracked(&[a]);
        Ok(self.push(out, Op::Softmax(a, axis), t))
    }

    /// Selects rows `idx` of `a` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let (rows, n) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in &idx {
            if i >= rows {
                return Err(Error::dim(format!("row {i} out of {rows}")));
            }
            out.extend_from_slice(x.row(i));
        }
        let t = self.tracked(&[a]);
        Ok(self.push(Tensor::matrix(idx.len(), n, out)?, Op::GatherRows(a, idx.into()), t))
    }

    /// Copy of `base` with row `idx[r]` replaced by row `r` of `updates`.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, base: Var, updates: Var, idx: Vec<usize>) -> Result<Var> {
        let (b, u) = (&self.nodes[base.0].value, &self.nodes[updates.0].value);
        let n = b.cols();
        if u.cols() != n || u.rows() != idx.len() {
            return Err(Error::dim(format!(
                "scatter of {:?} into {:?} at {} rows",
                u.shape(),
                b.shape(),
                idx.len()
            )));
        }
        let mut seen = vec![false; b.rows()];
        let mut out = b.data().to_vec();
        for (r, &i) in idx.iter().enumerate() {
            if i >= b.rows() || seen[i] {
                return Err(Error::dim(format!("scatter row {i} invalid or repeated")));
            }
            seen[i] = true;
            out[i * n..(i + 1) * n].copy_from_slice(u.row(r));
        }
        let out = Tensor::matrix(b.rows(), n, out)?;
        let t = self.tracked(&[base, updates]);
        Ok(self.push(out, Op::ScatterRows(base, updates, idx.into()), t))
    }

    /// Per-head scaled dot products between each query row and the key rows
    /// of its segment: `out[n, h] = <q[s, head h], k[n, head h]> * scale`
    /// for row `n` in segment `s`.
    pub fn segment_dot(&mut self, q: Var, k: Var, seg: Rc<Segments>, heads: usize, scale: f64) -> Result<Var> {
        let (qv, kv) = (&self.nodes[q.0].value, &self.nodes[k.0].value);
        let d = qv.cols();
        let w = head_width(d, heads)?;
        if kv.cols() != d || qv.rows() != seg.count() || kv.rows() != seg.total() {
            return Err(Error::dim(format!(
                "segment_dot q {:?} k {:?} over {} segments / {} rows",
                qv.shape(),
                kv.shape(),
                seg.count(),
                seg.total()
            )));
        }
        let mut out = vec![0.0; seg.total() * heads];
        for s in 0..seg.count() {
            let qr = qv.row(s);
            for n in seg.range(s) {
                let kr = kv.row(n);
                for h in 0..heads {
                    let mut acc = 0.0;
                    for c in h * w..(h + 1) * w {
                        acc += qr[c] * kr[c];
                    }
                    out[n * heads + h] = acc * scale;
                }
            }
        }
        let t = self.tracked(&[q, k]);
        let out = Tensor::matrix(seg.total(), heads, out)?;
        Ok(self.push(out, Op::SegmentDot { q, k, seg, heads, scale }, t))
    }

    /// Softmax over the rows of each segment, independently per column.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<Segments>) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if x.rank() != 2 || x.rows() != seg.total() {
            return Err(Error::dim(format!("segment_softmax {:?} over {} rows", x.shape(), seg.total())));
        }
        let c = x.cols();
        let mut out = vec![0.0; x.len()];
        for s in 0..seg.count() {
            let r = seg.range(s);
            for col in 0..c {
                let max = r.clone().map(|n| x.data()[n * c + col]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for n in r.clone() {
                    let e = (x.data()[n * c + col] - max).exp();
                    out[n * c + col] = e;
                    sum += e;
                }
                for n in r.clone() {
                    out[n * c + col] /= sum;
                }
            }
        }
        let out = x.with_data(out);
        let t = self.tracked(&[a]);
        Ok(self.push(out, Op::SegmentSoftmax(a, seg), t))
    }

    /// `out[s, head h] = sum_{n in s} w[n, h] * v[n, head h]`. Empty segments give zero rows.
    pub fn segment_weighted_sum(&mut self, w: Var, v: Var, seg: Rc<Segments>, heads: usize) -> Result<Var> {
        let (wv, vv) = (&self.nodes[w.0].value, &self.nodes[v.0].value);
        let d = vv.cols();
        let hw = head_width(d, heads)?;
        if wv.rows() != seg.total() || wv.cols() != heads || vv.rows() != seg.total() {
            return Err(Error::dim(format!(
                "segment_weighted_sum w {:?} v {:?} over {} rows",
                wv.shape(),
                vv.shape(),
                seg.total()
            )));
        }
        let mut out = vec![0.0; seg.count() * d];
        for s in 0..seg.count() {
            let orow = &mut out[s * d..(s + 1) * d];
            for n in seg.range(s) {
                let vr = vv.row(n);
                for h in 0..heads {
                    let wt = wv.data()[n * heads + h];
                    for c in h * hw..(h + 1) * hw {
                        orow[c] += wt * vr[c];
                    }
                }
            }
        }
        let t = self.tracked(&[w, v]);
        let out = Tensor::matrix(seg.count(), d, out)?;
        Ok(self.push(out, Op::SegmentWeightedSum { w, v, seg, heads }, t))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let x = &self.nodes[a.0].value;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = x.with_data(x.data().iter().zip(&mask).map(|(v, m)| v * m).collect());
        let t = self.tracked(&[a]);
        Ok(self.push(out, Op::Dropout(a, mask.into()), t))
    }

    /// Mean binary cross-entropy of `scores` against 0/1 `labels`.
    pub fn bce(&mut self, scores: Var, labels: &[f64], kind: ScoreKind) -> Result<Var> {
        let s = &self.nodes[scores.0].value;
        if s.len() != labels.len() {
            return Err(Error::dim(format!("{} scores for {} labels", s.len(), labels.len())));
        }
        if labels.is_empty() {
            return Err(Error::dim("bce over zero samples"));
        }
        let mut total = 0.0;
        for (&v, &y) in s.data().iter().zip(labels) {
            let p = match kind {
                ScoreKind::Logits => sigmoid(v),
                ScoreKind::Probabilities => v,
            };
            let p1 = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= y * p1.ln() + (1.0 - y) * (1.0 - p1).ln();
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        let t = self.tracked(&[scores]);
        Ok(self.push(out, Op::Bce { scores, labels: labels.into(), kind }, t))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let t = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), t)
    }

    /// Gradients of the scalar `loss` with respect to all tracked nodes.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::dim(format!("backward needs a scalar, got {:?}", lv.shape())));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(lv.with_data(vec![1.0]));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Accumulates into the gradient slot of `v` in place via `f`.
    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| self.nodes[v.0].value.zeros_like());
        f(slot.data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (x, w) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (x.rows(), x.cols(), w.cols());
                self.accumulate_with(grads, *a, |ga| gemm_nt_acc(g.data(), w.data(), ga, m, k, n));
                self.accumulate_with(grads, *b, |gb| gemm_tn_acc(x.data(), g.data(), gb, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.with_data(g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                self.accumulate_with(grads, *a, |ga| {
                    for ((o, gv), yv) in ga.iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv;
                    }
                });
                self.accumulate_with(grads, *b, |gb| {
                    for ((o, gv), xv) in gb.iter_mut().zip(g.data()).zip(x.data()) {
                        *o += gv * xv;
                    }
                });
            }
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let n = g.cols();
                self.accumulate_with(grads, *b, |gb| {
                    if n > 0 {
                        for row in g.data().chunks(n) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.with_data(g.data().iter().map(|v| v * c).collect()));
            }
            Op::MulRows(a, factors) => {
                let n = g.cols();
                self.accumulate_with(grads, *a, |ga| {
                    if n > 0 {
                        for ((orow, grow), f) in ga.chunks_mut(n).zip(g.data().chunks(n)).zip(factors.iter()) {
                            for (o, v) in orow.iter_mut().zip(grow) {
                                *o += v * f;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts.iter() {
                    let w = self.nodes[p.0].value.cols();
                    self.accumulate_with(grads, *p, |gp| {
                        for r in 0..rows {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            for (o, v) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Sigmoid(a) => {
                self.accumulate_with(grads, *a, |ga| {
                    for ((o, gv), y) in ga.iter_mut().zip(g.data()).zip(out.data()) {
                        *o += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate_with(grads, *a, |ga| {
                    for ((o, gv), y) in ga.iter_mut().zip(g.data()).zip(out.data()) {
                        *o += gv * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_with(grads, *a, |ga| {
                    for ((o, gv), xv) in ga.iter_mut().zip(g.data()).zip(x.data()) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (rows, cols) = (out.rows(), out.cols());
                let (outer, len, stride, step) = if out.rank() == 2 && *axis == 0 {
                    (cols, rows, 1, cols)
                } else {
                    (rows, cols, cols, 1)
                };
                self.accumulate_with(grads, *a, |ga| {
                    for o in 0..outer {
                        let idx = |i: usize| o * stride + i * step;
                        let dot: f64 = (0..len).map(|i| g.data()[idx(i)] * out.data()[idx(i)]).sum();
                        for i in 0..len {
                            ga[idx(i)] += out.data()[idx(i)] * (g.data()[idx(i)] - dot);
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = g.cols();
                self.accumulate_with(grads, *a, |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, v) in ga[src * n..(src + 1) * n].iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ScatterRows(base, upd, idx) => {
                let n = g.cols();
                self.accumulate_with(grads, *base, |gb| {
                    let mut replaced = vec![false; g.rows()];
                    for &i in idx.iter() {
                        replaced[i] = true;
                    }
                    for (r, rep) in replaced.iter().enumerate() {
                        if !rep {
                            for (o, v) in gb[r * n..(r + 1) * n].iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                });
                self.accumulate_with(grads, *upd, |gu| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in gu[r * n..(r + 1) * n].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SegmentDot { q, k, seg, heads, scale } => {
                let (qv, kv) = (&self.nodes[q.0].value, &self.nodes[k.0].value);
                let d = qv.cols();
                let w = d / heads;
                self.accumulate_with(grads, *q, |gq| {
                    for s in 0..seg.count() {
                        for n in seg.range(s) {
                            let kr = kv.row(n);
                            for h in 0..*heads {
                                let gs = g.data()[n * heads + h] * scale;
                                for c in h * w..(h + 1) * w {
                                    gq[s * d + c] += gs * kr[c];
                                }
                            }
                        }
                    }
                });
                self.accumulate_with(grads, *k, |gk| {
                    for s in 0..seg.count() {
                        let qr = qv.row(s);
                        for n in seg.range(s) {
                            for h in 0..*heads {
                                let gs = g.data()[n * heads + h] * scale;
                                for c in h * w..(h + 1) * w {
                                    gk[n * d + c] += gs * qr[c];
                                }
                            }
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, seg) => {
                let c = out.cols();
                self.accumulate_with(grads, *a, |ga| {
                    for s in 0..seg.count() {
                        for col in 0..c {
                            let dot: f64 = seg.range(s).map(|n| g.data()[n * c + col] * out.data()[n * c + col]).sum();
                            for n in seg.range(s) {
                                let y = out.data()[n * c + col];
                                ga[n * c + col] += y * (g.data()[n * c + col] - dot);
                            }
                        }
                    }
                });
            }
            Op::SegmentWeightedSum { w, v, seg, heads } => {
                let (wv, vv) = (&self.nodes[w.0].value, &self.nodes[v.0].value);
                let d = vv.cols();
                let hw = d / heads;
                self.accumulate_with(grads, *w, |gw| {
                    for s in 0..seg.count() {
                        let grow = g.row(s);
                        for n in seg.range(s) {
                            let vr = vv.row(n);
                            for h in 0..*heads {
                                let mut acc = 0.0;
                                for c in h * hw..(h + 1) * hw {
                                    acc += grow[c] * vr[c];
                                }
                                gw[n * heads + h] += acc;
                            }
                        }
                    }
                });
                self.accumulate_with(grads, *v, |gv| {
                    for s in 0..seg.count() {
                        let grow = g.row(s);
                        for n in seg.range(s) {
                            for h in 0..*heads {
                                let wt = wv.data()[n * heads + h];
                                for c in h * hw..(h + 1) * hw {
                                    gv[n * d + c] += wt * grow[c];
                                }
                            }
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => {
                self.accumulate(grads, *a, g.with_data(g.data().iter().zip(mask.iter()).map(|(v, m)| v * m).collect()));
            }
            Op::Bce { scores, labels, kind } => {
                let s = &self.nodes[scores.0].value;
                let scale = g.item() / labels.len() as f64;
                self.accumulate_with(grads, *scores, |gs| {
                    for ((o, &v), &y) in gs.iter_mut().zip(s.data()).zip(labels.iter()) {
                        let d = match kind {
                            ScoreKind::Logits => {
                                let p = sigmoid(v);
                                // The clamp is flat outside [EPS, 1 - EPS].
                                if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                                    0.0
                                } else {
                                    p - y
                                }
                            }
                            ScoreKind::Probabilities => {
                                if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&v) {
                                    0.0
                                } else {
                                    -y / v + (1.0 - y) / (1.0 - v)
                                }
                            }
                        };
                        *o += scale * d;
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate_with(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += gv));
            }
        }
        Ok(())
    }
}
