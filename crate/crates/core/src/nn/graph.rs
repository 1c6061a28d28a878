//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns a [`Gradients`]
//! table. Nodes that cannot reach a trainable leaf are never differentiated,
//! so constants and everything downstream of [`Graph::stop_gradient`] cost
//! nothing in the reverse pass and receive exactly zero gradient.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Variable,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulAdd(Var, Var, Var),
    Lstm {
        pre: Var,
        c_prev: Var,
        /// Gate activations `[i, f, g, o]` followed by `tanh(c)`.
        acts: Tensor<T>,
    },
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SoftmaxGroups(Var, usize),
    MulColumn(Var, Var),
    CumsumRows(Var, usize),
    StopGradient(#[allow(dead_code)] Var),
    Bce {
        logits: Var,
        targets: Tensor<T>,
        mask: Tensor<T>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient flowing into `v`; `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of every parameter leaf into the store's grad buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(-|z|)) + max(z, 0) - z * t`, the stable logistic loss.
pub(crate) fn bce_term<T: Scalar>(z: T, t: T) -> T {
    z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        value.dims2();
        self.push(value, Op::Input, false)
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        value.dims2();
        self.push(value, Op::Variable, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != br {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[ar, bc]);
        matmul_into(self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `base + a · b` in one pass.
    pub fn matmul_add(&mut self, a: Var, b: Var, base: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != br {
            return Err(Error::shape("matmul_add", self.shape(a), self.shape(b)));
        }
        if self.dims(base) != (ar, bc) {
            return Err(Error::shape("matmul_add", &[ar, bc], self.shape(base)));
        }
        let mut out = self.value(base).clone();
        matmul_into(self.value(a), false, self.value(b), false, &mut out, true);
        let ng = self.ng(a) || self.ng(b) || self.ng(base);
        Ok(self.push(out, Op::MatMulAdd(a, b, base), ng))
    }

    /// Fused LSTM pointwise update. `pre` holds the gate pre-activations in
    /// `[input, forget, candidate, output]` blocks of width `H`; the result
    /// is `[h | c]`, of width `2H`.
    pub fn lstm_pointwise(&mut self, pre: Var, c_prev: Var) -> Result<Var> {
        let (rows, four_h) = self.dims(pre);
        let hd = four_h / 4;
        if four_h % 4 != 0 || self.dims(c_prev) != (rows, hd) {
            return Err(Error::shape("lstm_pointwise", self.shape(pre), self.shape(c_prev)));
        }
        let mut acts = Tensor::zeros(&[rows, 5 * hd]);
        let mut out = Tensor::zeros(&[rows, 2 * hd]);
        {
            let p = self.value(pre).data();
            let cp = self.value(c_prev).data();
            let a = acts.data_mut();
            for r in 0..rows {
                a[r * 5 * hd..r * 5 * hd + 4 * hd].copy_from_slice(&p[r * 4 * hd..(r + 1) * 4 * hd]);
            }
            for r in 0..rows {
                let row = &mut a[r * 5 * hd..(r + 1) * 5 * hd];
                T::sigmoid_in_place(&mut row[..2 * hd]);
                T::tanh_in_place(&mut row[2 * hd..3 * hd]);
                T::sigmoid_in_place(&mut row[3 * hd..4 * hd]);
                let o = out.data_mut();
                for j in 0..hd {
                    let c = row[hd + j] * cp[r * hd + j] + row[j] * row[2 * hd + j];
                    o[r * 2 * hd + hd + j] = c;
                    row[4 * hd + j] = c;
                }
                T::tanh_in_place(&mut row[4 * hd..]);
                for j in 0..hd {
                    o[r * 2 * hd + j] = row[3 * hd + j] * row[4 * hd + j];
                }
            }
        }
        let ng = self.ng(pre) || self.ng(c_prev);
        Ok(self.push(out, Op::Lstm { pre, c_prev, acts }, ng))
    }

    /// `x + bias`, where `bias` is a single row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(bias) != (1, c) {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        debug_assert_eq!(out.rows(), r);
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddRow(x, bias), ng))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(va.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        T::sigmoid_in_place(out.data_mut());
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        T::tanh_in_place(out.data_mut());
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat_cols of nothing".into()));
        };
        let rows = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if start + len > cols {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(rows, len, data), Op::SliceCols(x, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat_rows of nothing".into()));
        };
        let cols = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.dims(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", self.shape(x), &[bad]));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(rows.len(), cols, data),
            Op::GatherRows(x, rows.to_vec()),
            ng,
        ))
    }

    /// Softmax over consecutive groups of `group` columns in every row.
    /// `group == cols` is the ordinary row softmax.
    pub fn softmax_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (_, cols) = self.dims(x);
        if group == 0 || cols % group != 0 {
            return Err(Error::shape("softmax_groups", self.shape(x), &[group]));
        }
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(group) {
            let max = chunk.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in chunk.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in chunk.iter_mut() {
                *v = *v / total;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::SoftmaxGroups(x, group), ng))
    }

    /// `x[r, c] * w[r]` for an `r×1` column `w`.
    pub fn mul_column(&mut self, x: Var, w: Var) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if self.dims(w) != (rows, 1) {
            return Err(Error::shape("mul_column", self.shape(x), self.shape(w)));
        }
        let wv = self.value(w).data().to_vec();
        let mut out = self.value(x).clone();
        for (row, &s) in out.data_mut().chunks_mut(cols).zip(&wv) {
            row.iter_mut().for_each(|v| *v = *v * s);
        }
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(out, Op::MulColumn(x, w), ng))
    }

    /// Running sum down the rows, restarting every `group` rows.
    pub fn cumsum_rows(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if group == 0 || rows % group != 0 {
            return Err(Error::shape("cumsum_rows", self.shape(x), &[group]));
        }
        let mut out = self.value(x).clone();
        let data = out.data_mut();
        for r in 0..rows {
            if r % group == 0 {
                continue;
            }
            for c in 0..cols {
                data[r * cols + c] = data[r * cols + c] + data[(r - 1) * cols + c];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::CumsumRows(x, group), ng))
    }

    /// Identity on values; the reverse pass sends nothing upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let out = self.value(x).clone();
        self.push(out, Op::StopGradient(x), false)
    }

    /// Mean logistic loss over the positions where `mask` is 1. With no
    /// unmasked positions the loss is 0 and no gradient flows.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>, mask: Tensor<T>) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(Error::shape("bce_with_logits", self.shape(logits), targets.shape()));
        }
        if targets.shape() != mask.shape() {
            return Err(Error::shape("bce_with_logits", targets.shape(), mask.shape()));
        }
        let z = self.value(logits);
        let mut total = T::zero();
        let mut count = 0usize;
        for ((&zv, &tv), &mv) in z.data().iter().zip(targets.data()).zip(mask.data()) {
            if mv != T::zero() {
                total = total + bce_term(zv, tv);
                count += 1;
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).expect("count")
        };
        let ng = self.ng(logits) && count > 0;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                targets,
                mask,
                count,
            },
            ng,
        ))
    }

    /// Sum of all entries, as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        let ng = self.ng(x);
        self.push(Tensor::scalar(total), Op::Sum(x), ng)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Reverse pass from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::shape("backward", self.shape(loss), &[1, 1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        if self.ng(loss) {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                params.push((id, idx));
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Input | Op::Variable | Op::Param(_) | Op::StopGradient(_) => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.ng(*a) {
                    let mut ga = Tensor::zeros(va.shape());
                    matmul_into(g, false, vb, true, &mut ga, false);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(vb.shape());
                    matmul_into(va, true, g, false, &mut gb, false);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulAdd(a, b, base) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.ng(*a) {
                    let mut ga = Tensor::zeros(va.shape());
                    matmul_into(g, false, vb, true, &mut ga, false);
                    self.accumulate(grads, *a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(vb.shape());
                    matmul_into(va, true, g, false, &mut gb, false);
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *base, g.clone());
            }
            Op::Lstm { pre, c_prev, acts } => {
                let (rows, two_h) = g.dims2();
                let hd = two_h / 2;
                let cp = self.value(*c_prev).data();
                let a = acts.data();
                let mut d_pre = Tensor::zeros(&[rows, 4 * hd]);
                let mut d_c = Tensor::zeros(&[rows, hd]);
                let one = T::one();
                for r in 0..rows {
                    let act = &a[r * 5 * hd..(r + 1) * 5 * hd];
                    let gr = &g.data()[r * 2 * hd..(r + 1) * 2 * hd];
                    let dp = &mut d_pre.data_mut()[r * 4 * hd..(r + 1) * 4 * hd];
                    for j in 0..hd {
                        let (i, f, cand, o, tc) = (act[j], act[hd + j], act[2 * hd + j], act[3 * hd + j], act[4 * hd + j]);
                        let dh = gr[j];
                        let dc = gr[hd + j] + dh * o * (one - tc * tc);
                        dp[j] = dc * cand * i * (one - i);
                        dp[hd + j] = dc * cp[r * hd + j] * f * (one - f);
                        dp[2 * hd + j] = dc * i * (one - cand * cand);
                        dp[3 * hd + j] = dh * tc * o * (one - o);
                        d_c.data_mut()[r * hd + j] = dc * f;
                    }
                }
                self.accumulate(grads, *pre, d_pre);
                self.accumulate(grads, *c_prev, d_c);
            }
            Op::AddRow(x, bias) => {
                if self.ng(*bias) {
                    let cols = g.cols();
                    let mut gb = vec![T::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::matrix(1, cols, gb));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.ng(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.shape().to_vec(), d));
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.shape().to_vec(), d));
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Relu(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), d));
            }
            Op::Sigmoid(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), d));
            }
            Op::Tanh(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), d));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(rows, c, d));
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start) => {
                let (rows, cols) = self.dims(*x);
                let len = g.cols();
                let mut d = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, d);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.dims(p).0;
                    if self.ng(p) {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(r, cols, d));
                    }
                    offset += r;
                }
            }
            Op::GatherRows(x, rows) => {
                let (n, cols) = self.dims(*x);
                let mut d = Tensor::zeros(&[n, cols]);
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                    for (a, &b) in dst.iter_mut().zip(g.row(i)) {
                        *a = *a + b;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SoftmaxGroups(x, group) => {
                let mut d = Vec::with_capacity(g.len());
                for (gc, yc) in g.data().chunks(*group).zip(out.data().chunks(*group)) {
                    let dot = gc.iter().zip(yc).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    d.extend(gc.iter().zip(yc).map(|(&gv, &y)| y * (gv - dot)));
                }
                self.accumulate(grads, *x, Tensor::from_vec(g.shape().to_vec(), d));
            }
            Op::MulColumn(x, w) => {
                let vx = self.value(*x);
                let vw = self.value(*w);
                let cols = vx.cols();
                if self.ng(*x) {
                    let mut d = g.clone();
                    for (row, &s) in d.data_mut().chunks_mut(cols).zip(vw.data()) {
                        row.iter_mut().for_each(|v| *v = *v * s);
                    }
                    self.accumulate(grads, *x, d);
                }
                if self.ng(*w) {
                    let d = g
                        .data()
                        .chunks(cols)
                        .zip(vx.data().chunks(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
                        .collect();
                    self.accumulate(grads, *w, Tensor::matrix(vx.rows(), 1, d));
                }
            }
            Op::CumsumRows(x, group) => {
                let (rows, cols) = g.dims2();
                let mut d = g.clone();
                let data = d.data_mut();
                for r in (0..rows).rev() {
                    if (r + 1) % group == 0 {
                        continue;
                    }
                    for c in 0..cols {
                        data[r * cols + c] = data[r * cols + c] + data[(r + 1) * cols + c];
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Bce {
                logits,
                targets,
                mask,
                count,
            } => {
                let scale = g.item() / T::from_usize(*count).expect("count");
                let z = self.value(*logits);
                let d = z
                    .data()
                    .iter()
                    .zip(targets.data())
                    .zip(mask.data())
                    .map(|((&zv, &tv), &mv)| {
                        if mv != T::zero() {
                            (sigmoid(zv) - tv) * scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *logits, Tensor::from_vec(z.shape().to_vec(), d));
            }
            Op::Sum(x) => {
                let s = g.item();
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v)
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(2, 6, &[3.0; 12]));
        let y = g.softmax_groups(x, 3).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn activations_at_known_points() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(1, 3, &[0.0, -2.0, 2.0]));
        let s = g.sigmoid(x);
        let r = g.relu(x);
        assert_eq!(g.value(s).at(0, 0), 0.5);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn bce_zero_logit_is_ln2_and_masked_positions_are_ignored() {
        let mut g = Graph::<f64>::new();
        let z = g.variable(t(1, 3, &[0.0, 0.0, 50.0]));
        let loss = g
            .bce_with_logits(z, t(1, 3, &[1.0, 0.0, 0.0]), t(1, 3, &[1.0, 1.0, 0.0]))
            .unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(z).unwrap().at(0, 2), 0.0);
    }

    #[test]
    fn bce_all_masked_is_zero_without_gradient() {
        let mut g = Graph::<f64>::new();
        let z = g.variable(t(1, 2, &[1.0, -1.0]));
        let loss = g.bce_with_logits(z, t(1, 2, &[1.0, 0.0]), t(1, 2, &[0.0, 0.0])).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(z).is_none());
    }

    #[test]
    fn bce_is_finite_for_huge_logits() {
        let mut g = Graph::<f32>::new();
        let z = g.variable(Tensor::from_f64(1, 4, &[1e4, -1e4, 1e4, -1e4]));
        let loss = g
            .bce_with_logits(z, Tensor::from_f64(1, 4, &[1.0, 0.0, 0.0, 1.0]), Tensor::full(&[1, 4], 1.0))
            .unwrap();
        let v = g.value(loss).item();
        assert!(v.is_finite());
        assert!((v - 5000.0).abs() < 1.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(z).unwrap().all_finite());
    }

    #[test]
    fn stop_gradient_passes_values_and_blocks_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(t(1, 2, &[1.5, -0.5]));
        let s = g.stop_gradient(x);
        assert_eq!(g.value(s), g.value(x));
        let y = g.mul(s, s).unwrap();
        let z = g.add(y, x).unwrap();
        let loss = g.sum(z);
        let grads = g.backward(loss).unwrap();
        // only the direct path through `add` contributes
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.variable(t(1, 2, &[1.5, -0.5]));
        let s = g.stop_gradient(x);
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn cumsum_restarts_per_group() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let y = g.cumsum_rows(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 3.0, 3.0, 7.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(2, 3, &[0.0; 6]));
        let b = g.input(t(2, 3, &[0.0; 6]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }
}
