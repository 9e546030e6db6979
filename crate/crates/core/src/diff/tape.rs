//! Reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! reverse topological order and each node is visited once.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols { input: Var, start: usize },
    GatherRows { input: Var, index: Arc<[usize]> },
    MaxAggregate { input: Var, argmax: Vec<usize> },
    Scatter { input: Var, positions: Arc<[usize]> },
    Reshape(Var),
    Sum(Var),
    /// Elementwise loss with saved per-element derivative (already divided by the normaliser).
    Reduce { input: Var, dloss: Vec<S> },
    MaskedSoftmax(Var),
    StraightThrough(Var),
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
}

/// Records a computation for one backward pass.
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when no path reaches it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<S>) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> S {
        self.value(v).item()
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::arg(format!("{what}: shape mismatch {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a bias row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        let b = self.value(bias);
        if b.len() != m {
            return Err(Error::arg(format!("bias of length {} for {m} columns", b.len())));
        }
        let mut out = self.value(x).clone();
        for i in 0..n {
            for (o, &bv) in out.data_mut()[i * m..(i + 1) * m].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = out.reshaped(vec![n, m])?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    /// `x * w + b` with `w` shaped `in x out` and `b` of length `out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (n, m) = self.same_shape(a, b, what)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(n, m, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.dims(p).0).ok_or_else(|| Error::arg("concat of nothing"))?;
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::arg("concat_cols: row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let v = Tensor::matrix(rows, total, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.dims(a);
        if start >= end || end > m {
            return Err(Error::arg(format!("slice {start}..{end} of {m} columns")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&src[r * m + start..r * m + end]);
        }
        let v = Tensor::matrix(n, end - start, data)?;
        Ok(self.push(v, Op::SliceCols { input: a, start }))
    }

    /// Row `index[i]` of `a` becomes row `i` of the output.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let (n, m) = self.dims(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::arg(format!("gather index {bad} out of {n} rows")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            data.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        let v = Tensor::matrix(index.len(), m, data)?;
        Ok(self.push(v, Op::GatherRows { input: a, index }))
    }

    /// Elementwise maximum of message rows grouped by receiver.
    ///
    /// Every receiver in `0..n_out` needs at least one message. Gradient flows
    /// only to the arg-max message, the lowest message index on ties.
    pub fn max_aggregate(&mut self, messages: Var, receivers: &[usize], n_out: usize) -> Result<Var> {
        let (m, d) = self.dims(messages);
        if receivers.len() != m {
            return Err(Error::arg(format!("{} receivers for {m} messages", receivers.len())));
        }
        let src = self.value(messages).data();
        let mut out = vec![S::neg_infinity(); n_out * d];
        let mut argmax = vec![usize::MAX; n_out * d];
        for (i, &r) in receivers.iter().enumerate() {
            if r >= n_out {
                return Err(Error::arg(format!("receiver {r} out of {n_out}")));
            }
            for j in 0..d {
                let x = src[i * d + j];
                let slot = r * d + j;
                if argmax[slot] == usize::MAX || x > out[slot] {
                    out[slot] = x;
                    argmax[slot] = i;
                }
            }
        }
        if argmax.iter().any(|&a| a == usize::MAX) && d > 0 {
            return Err(Error::state("max_aggregate: a receiver has no incoming message"));
        }
        let v = Tensor::matrix(n_out, d, out)?;
        Ok(self.push(v, Op::MaxAggregate { input: messages, argmax }))
    }

    /// Places the entries of a single-column `values` at flat `positions` of a
    /// zero `rows x cols` matrix. Positions must be distinct.
    pub fn scatter(&mut self, values: Var, positions: Arc<[usize]>, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(values);
        if src.len() != positions.len() {
            return Err(Error::arg("scatter: one position per value"));
        }
        let mut out = vec![S::zero(); rows * cols];
        for (&p, &x) in positions.iter().zip(src.data()) {
            if p >= out.len() {
                return Err(Error::arg(format!("scatter position {p} out of range")));
            }
            out[p] = x;
        }
        let v = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(v, Op::Scatter { input: values, positions }))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).clone().reshaped(vec![rows, cols])?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: S = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Sum of scalar vars; a zero constant when `terms` is empty.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        match terms {
            [] => Ok(self.constant(Tensor::scalar(S::zero()))),
            [first, rest @ ..] => {
                let mut acc = *first;
                for &t in rest {
                    acc = self.add(acc, t)?;
                }
                Ok(acc)
            }
        }
    }

    /// Row-wise softmax restricted to `mask`; masked entries are exactly 0.
    pub fn masked_softmax(&mut self, logits: Var, mask: Arc<[bool]>) -> Result<Var> {
        let (r, k) = self.dims(logits);
        if mask.len() != r * k {
            return Err(Error::arg("masked_softmax: mask shape"));
        }
        let probs = softmax_rows(self.value(logits), &mask, r, k)?;
        Ok(self.push(probs, Op::MaskedSoftmax(logits)))
    }

    /// Value is the one-hot of `hard` per row; gradient passes straight to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: &[usize]) -> Result<Var> {
        let (r, k) = self.dims(soft);
        if hard.len() != r || hard.iter().any(|&h| h >= k) {
            return Err(Error::arg("straight_through: one in-range index per row"));
        }
        let mut data = vec![S::zero(); r * k];
        for (row, &h) in hard.iter().enumerate() {
            data[row * k + h] = S::one();
        }
        let v = Tensor::matrix(r, k, data)?;
        Ok(self.push(v, Op::StraightThrough(soft)))
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<S>> {
        if self.value(output).len() != 1 {
            return Err(Error::arg("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(S::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor<S>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(t.reshaped(shape).expect("gradient matches value size"));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                acc(*a, g.matmul_t(bv));
                acc(*b, av.t_matmul(g));
            }
            Op::AddRow(x, b) => {
                let (n, m) = g.dims();
                let mut gb = vec![S::zero(); m];
                for i in 0..n {
                    for (s, &v) in gb.iter_mut().zip(&g.data()[i * m..(i + 1) * m]) {
                        *s += v;
                    }
                }
                acc(*x, g.clone());
                acc(*b, Tensor::row(gb));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let ga = zip(g, bv, |x, y| x * y);
                let gb = zip(g, av, |x, y| x * y);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, g.map(|x| x * c));
            }
            Op::Relu(a) => {
                let out = &node.value;
                acc(*a, zip(g, out, |x, y| if y > S::zero() { x } else { S::zero() }));
            }
            Op::ConcatCols(parts) => {
                let (n, total) = g.dims();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    let mut data = Vec::with_capacity(n * w);
                    for r in 0..n {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    acc(*p, Tensor::matrix(n, w, data).unwrap());
                }
            }
            Op::SliceCols { input, start } => {
                let (n, m) = self.nodes[input.0].value.dims();
                let w = g.cols();
                let mut data = vec![S::zero(); n * m];
                for r in 0..n {
                    data[r * m + start..r * m + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(*input, Tensor::matrix(n, m, data).unwrap());
            }
            Op::GatherRows { input, index } => {
                let (n, m) = self.nodes[input.0].value.dims();
                let mut data = vec![S::zero(); n * m];
                for (i, &src) in index.iter().enumerate() {
                    for j in 0..m {
                        data[src * m + j] += g.data()[i * m + j];
                    }
                }
                acc(*input, Tensor::matrix(n, m, data).unwrap());
            }
            Op::MaxAggregate { input, argmax } => {
                let (m, d) = self.nodes[input.0].value.dims();
                let mut data = vec![S::zero(); m * d];
                for (slot, &src) in argmax.iter().enumerate() {
                    let j = slot % d;
                    data[src * d + j] += g.data()[slot];
                }
                acc(*input, Tensor::matrix(m, d, data).unwrap());
            }
            Op::Scatter { input, positions } => {
                let data = positions.iter().map(|&p| g.data()[p]).collect();
                acc(*input, Tensor::column(data));
            }
            Op::Reshape(a) => acc(*a, g.clone()),
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                acc(*a, Tensor::filled(shape, g.item()));
            }
            Op::Reduce { input, dloss } => {
                let scale = g.item();
                let shape = self.nodes[input.0].value.shape().to_vec();
                let data = dloss.iter().map(|&d| d * scale).collect();
                acc(*input, Tensor::new(shape, data).unwrap());
            }
            Op::MaskedSoftmax(input) => {
                let p = &node.value;
                let (r, k) = p.dims();
                let mut data = vec![S::zero(); r * k];
                for row in 0..r {
                    let pr = &p.data()[row * k..(row + 1) * k];
                    let gr = &g.data()[row * k..(row + 1) * k];
                    let dot: S = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..k {
                        data[row * k + j] = pr[j] * (gr[j] - dot);
                    }
                }
                acc(*input, Tensor::matrix(r, k, data).unwrap());
            }
            Op::StraightThrough(soft) => acc(*soft, g.clone()),
        }
    }
}

fn zip<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).unwrap()
}

/// Numerically stable masked softmax per row.
pub(crate) fn softmax_rows<S: Scalar>(logits: &Tensor<S>, mask: &[bool], r: usize, k: usize) -> Result<Tensor<S>> {
    let mut out = vec![S::zero(); r * k];
    for row in 0..r {
        let lr = &logits.data()[row * k..(row + 1) * k];
        let mr = &mask[row * k..(row + 1) * k];
        let max = lr
            .iter()
            .zip(mr)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(S::neg_infinity(), S::max);
        if max == S::neg_infinity() {
            return Err(Error::arg(format!("masked softmax row {row} has no admissible entry")));
        }
        let mut total = S::zero();
        for j in 0..k {
            if mr[j] {
                let e = (lr[j] - max).exp();
                out[row * k + j] = e;
                total += e;
            }
        }
        for x in &mut out[row * k..(row + 1) * k] {
            *x /= total;
        }
    }
    Tensor::matrix(r, k, out)
}
