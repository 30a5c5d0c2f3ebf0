//! A small reverse-mode tape over [`Tensor`]s.
//!
//! Every encoder, objective and head in this crate records its forward pass
//! on a [`Tape`]; calling [`Tape::backward`] on a `1 × 1` loss node yields
//! gradients for every node, including the parameter leaves registered via
//! [`Tape::param`]. Parameters are borrowed, not copied.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::tensor::{dot, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Leaf,
    Param,
    Gather { table: Var, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MaskedSoftmax { x: Var, visible: Vec<bool> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    ConcatRows(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64>, norm: f64 },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Records operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<usize, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node. Intermediate gradients are
    /// released during the reverse pass.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of parameter leaves, keyed by the id given to [`Tape::param`].
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    /// Moves parameter gradients out, keyed by parameter id.
    pub fn into_params(mut self) -> Vec<(usize, Tensor)> {
        let mut out = Vec::with_capacity(self.params.len());
        for &(id, v) in &self.params {
            if let Some(g) = self.grads[v.0].take() {
                out.push((id, g));
            }
        }
        out
    }
}

fn row_softmax_in_place(row: &mut [f64], visible: &[bool]) {
    let mut max = f64::NEG_INFINITY;
    for (x, &vis) in row.iter().zip(visible) {
        if vis && *x > max {
            max = *x;
        }
    }
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (x, &vis) in row.iter_mut().zip(visible) {
        if vis {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    for (x, &vis) in row.iter_mut().zip(visible) {
        if vis {
            *x /= sum;
        }
    }
}

/// Numerically stable softmax of a single row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    let visible = vec![true; out.len()];
    row_softmax_in_place(&mut out, &visible);
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; gradients are computed but not reported as parameters.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a borrowed parameter. Repeated calls with the same id return
    /// the same node.
    pub fn param(&mut self, id: usize, value: &'a Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Row lookup: `out[r] = table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::from_vec(ids.len(), cols, out);
        self.push(value, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.push(value, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "add_row expects a row vector");
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), bias.cols(), "add_row width mismatch");
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, b))
    }

    /// `x·W + bias`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xw = self.matmul(x, weight);
        self.add_row(xw, bias)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(av.rows(), av.cols(), data);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_vec(av.rows(), av.cols(), data);
        self.push(value, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant, e.g. a scaled dropout mask.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), mask.len(), "mul_const length mismatch");
        let data = av.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::from_vec(av.rows(), av.cols(), data);
        self.push(value, Op::MulConst(a, mask))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_vec(av.rows(), av.cols(), data);
        self.push(value, op)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax restricted to `visible` entries (row-major, same
    /// length as `a`). Hidden entries get probability zero; a row with no
    /// visible entry is all zeros.
    pub fn masked_softmax(&mut self, a: Var, visible: Vec<bool>) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(value.len(), visible.len(), "softmax mask length mismatch");
        let cols = value.cols();
        for r in 0..value.rows() {
            row_softmax_in_place(value.row_mut(r), &visible[r * cols..(r + 1) * cols]);
        }
        self.push(value, Op::MaskedSoftmax { x: a, visible })
    }

    /// Per-row layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let (rows, cols) = xv.shape();
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g.data()[c] + b.data()[c]);
            }
        }
        let value = Tensor::from_vec(rows, cols, out);
        self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let value = Tensor::from_vec(av.rows(), len, data);
        self.push(value, Op::SliceCols { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(pv.row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data);
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        let value = Tensor::from_vec(rows.len(), av.cols(), data);
        self.push(value, Op::SelectRows { x: a, rows: rows.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let value = Tensor::from_vec(rows, cols, data);
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Weighted mean cross-entropy of `logits` rows against `targets`.
    /// Returns a `1 × 1` node. `weights` defaults to all ones.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: Option<&[f64]>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy target count mismatch");
        let weights: Vec<f64> = match weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; targets.len()],
        };
        let cols = lv.cols();
        let mut probs = lv.data().to_vec();
        let visible = vec![true; cols];
        let mut total = 0.0;
        let norm: f64 = weights.iter().sum();
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += weights[r] * (lse - row[t]);
            row_softmax_in_place(&mut probs[r * cols..(r + 1) * cols], &visible);
        }
        let loss = if norm > 0.0 { total / norm } else { 0.0 };
        let value = Tensor::from_vec(1, 1, vec![loss]);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
                norm,
            },
        )
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => grads[idx] = Some(g),
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b));
                    let db = self.value(*a).matmul_at(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_at(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.data().iter().zip(bv.data()).map(|(d, y)| d * y).collect();
                    let db: Vec<f64> = g.data().iter().zip(av.data()).map(|(d, x)| d * x).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), da));
                    acc(&mut grads, *b, Tensor::from_vec(g.rows(), g.cols(), db));
                }
                Op::Scale(a, f) => {
                    let mut da = g;
                    da.data_mut().iter_mut().for_each(|x| *x *= f);
                    acc(&mut grads, *a, da);
                }
                Op::MulConst(a, mask) => {
                    let mut da = g;
                    da.data_mut().iter_mut().zip(mask).for_each(|(x, m)| *x *= m);
                    acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let mut da = g;
                    let xv = self.value(*a);
                    da.data_mut()
                        .iter_mut()
                        .zip(xv.data())
                        .for_each(|(d, &x)| *d *= gelu_grad(x));
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let mut da = g;
                    da.data_mut()
                        .iter_mut()
                        .zip(node.value.data())
                        .for_each(|(d, y)| *d *= 1.0 - y * y);
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let mut da = g;
                    da.data_mut()
                        .iter_mut()
                        .zip(node.value.data())
                        .for_each(|(d, y)| *d *= y * (1.0 - y));
                    acc(&mut grads, *a, da);
                }
                Op::MaskedSoftmax { x, visible } => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut dx = Tensor::zeros(y.rows(), cols);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s = dot(yr, gr);
                        let vis = &visible[r * cols..(r + 1) * cols];
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            if vis[c] {
                                *d = yr[c] * (gr[c] - s);
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = g.shape();
                    let n = cols as f64;
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gv.data()[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                            dg.data_mut()[c] += gr[c] * hr[c];
                            db.data_mut()[c] += gr[c];
                        }
                        let is = inv_std[r];
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            let dh = gr[c] * gv.data()[c];
                            *d = is / n * (n * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dg);
                    acc(&mut grads, *bias, db);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let len = g.cols();
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + len].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        let dp = Tensor::from_vec(h, cols, g.data()[offset * cols..(offset + h) * cols].to_vec());
                        offset += h;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::CrossEntropy { logits, targets, weights, probs, norm } => {
                    let upstream = g.data()[0];
                    let cols = self.value(*logits).cols();
                    let mut dl = Tensor::from_vec(targets.len(), cols, probs.clone());
                    for (r, &t) in targets.iter().enumerate() {
                        let scale = if *norm > 0.0 { upstream * weights[r] / norm } else { 0.0 };
                        let row = dl.row_mut(r);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= scale);
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }

        let mut params: Vec<(usize, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_unstable_by_key(|&(id, _)| id);
        Gradients { grads, params }
    }
}
