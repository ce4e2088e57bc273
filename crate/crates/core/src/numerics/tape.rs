//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Values are produced eagerly as ops are recorded. `backward` walks the
//! record in reverse and accumulates `d root / d node` for every node that
//! depends on a leaf created with `requires_grad`.

use std::borrow::Cow;
use std::rc::Rc;

use super::array::{matmul_kernel, transpose_raw, Array};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op with a hand-written vector-Jacobian product, for fused computations
/// (dynamic programs) that would be wasteful to spell out element by element.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output. `None` means the input receives no gradient.
    fn backward(&self, inputs: &[&Array], output: &Array, grad_output: &Array) -> Vec<Option<Array>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sigmoid(Var),
    LogSigmoid(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean {
        x: Var,
        axis: usize,
    },
    MaskedSoftmax {
        x: Var,
        mask: Rc<Vec<bool>>,
    },
    LogSumExp {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        smoothing: f64,
        probs: Vec<f64>,
    },
    Dropout {
        x: Var,
        keep: Rc<Vec<f64>>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node<'a> {
    value: Cow<'a, Array>,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded computation record. Leaves may borrow their values, so a
/// parameter set can be read without copying for the lifetime of the tape.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` did not
    /// influence the root.
    pub fn wrt(&self, var: Var) -> Array {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Array::new(shape, g.clone()).expect("gradient shape"),
            None => {
                let n = shape.iter().product();
                Array::new(shape, vec![0.0; n]).expect("gradient shape")
            }
        }
    }

    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn same_shape(op: &str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without cancellation for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}

/// Max-shifted `ln(sum(exp(values)))`; `-inf` when every value is `-inf`.
pub fn logsumexp_slice(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_row_masked(row: &[f64], mask: &[bool], out: &mut [f64]) {
    let mut m = f64::NEG_INFINITY;
    for (v, &keep) in row.iter().zip(mask) {
        if keep && *v > m {
            m = *v;
        }
    }
    if m == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut s = 0.0;
    for ((o, v), &keep) in out.iter_mut().zip(row).zip(mask) {
        if keep {
            let e = (v - m).exp();
            *o = e;
            s += e;
        } else {
            *o = 0.0;
        }
    }
    for (o, &keep) in out.iter_mut().zip(mask) {
        if keep {
            *o /= s;
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Borrowed leaf, typically a model parameter.
    pub fn param(&mut self, value: &'a Array, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Array::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Array::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// `a (m x n) + row (1 x n)` broadcast over the leading extent.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.len() != x.cols() || r.rows() != 1 {
            return Err(Error::shape("add_row", x.shape(), r.shape()));
        }
        let n = x.cols();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let out = Array::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Array::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * factor).collect();
        let out = Array::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::shape("matmul", x.shape(), y.shape()));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        let out = Array::from_rows(m, n, matmul_kernel(x.data(), y.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a (m x k) * b^T` with `b` stored as `n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(Error::shape("matmul_nt", x.shape(), y.shape()));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        let bt = transpose_raw(y.data(), n, k);
        let out = Array::from_rows(m, n, matmul_kernel(x.data(), &bt, m, k, n))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::contract(format!(
                    "embedding id {id} out of range for table {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let out = Array::from_rows(ids.len(), d, data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`
    /// (both `1 x n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let n = xv.cols();
        if g.len() != n || b.len() != n {
            return Err(Error::shape("layer_norm", xv.shape(), g.shape()));
        }
        let m = xv.rows();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g.data()[c] + b.data()[c];
            }
        }
        let out = Array::from_rows(m, n, out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Array::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero arrays"))?;
        let m = self.value(*first).rows();
        for p in parts {
            let v = self.value(*p);
            if v.rows() != m {
                return Err(Error::shape("concat", self.value(*first).shape(), v.shape()));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = Array::from_rows(m, total, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if start + len > v.cols() {
            return Err(Error::contract(format!(
                "slice_cols {start}..{} out of range for {:?}",
                start + len,
                v.shape()
            )));
        }
        let m = v.rows();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&v.row_slice(r)[start..start + len]);
        }
        let out = Array::from_rows(m, len, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Array::scalar(s), Op::Sum(x), rg)
    }

    /// Mean over `axis` (0: over rows, giving `1 x n`; 1: over columns, giving `m x 1`).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        let out = match axis {
            0 => {
                let mut acc = vec![0.0; n];
                for r in 0..m {
                    for (a, b) in acc.iter_mut().zip(v.row_slice(r)) {
                        *a += b;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= m as f64);
                Array::from_rows(1, n, acc)?
            }
            1 => {
                let data = (0..m).map(|r| v.row_slice(r).iter().sum::<f64>() / n as f64).collect();
                Array::from_rows(m, 1, data)?
            }
            _ => return Err(Error::contract(format!("mean axis {axis} on a rank-2 array"))),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Mean { x, axis }, rg))
    }

    /// Row-wise softmax over entries whose mask is `true`. Masked entries are
    /// exactly zero; a row with no unmasked entry yields all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(Error::shape("masked_softmax", v.shape(), &[mask.len()]));
        }
        let (m, n) = (v.rows(), v.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_row_masked(v.row_slice(r), &mask[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
        }
        let out = Array::from_rows(m, n, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaskedSoftmax { x, mask }, rg))
    }

    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        let out = match axis {
            0 => {
                let data = (0..n)
                    .map(|c| {
                        let col: Vec<f64> = (0..m).map(|r| v.get(r, c)).collect();
                        logsumexp_slice(&col)
                    })
                    .collect();
                Array::from_rows(1, n, data)?
            }
            1 => {
                let data = (0..m).map(|r| logsumexp_slice(v.row_slice(r))).collect();
                Array::from_rows(m, 1, data)?
            }
            _ => return Err(Error::contract(format!("logsumexp axis {axis} on a rank-2 array"))),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSumExp { x, axis }, rg))
    }

    /// Per-row cross-entropy (`m x 1`) of `logits` against `targets` with
    /// label smoothing `eps`:
    /// `-(1 - eps) * log p[target] - (eps / V) * sum_v log p[v]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let v = self.value(logits);
        let (m, n) = (v.rows(), v.cols());
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", v.shape(), &[targets.len()]));
        }
        let mut probs = vec![0.0; m * n];
        let mut out = Vec::with_capacity(m);
        for r in 0..m {
            let row = v.row_slice(r);
            let t = targets[r];
            if t >= n {
                return Err(Error::contract(format!(
                    "cross_entropy target {t} out of range for {n} classes"
                )));
            }
            let lse = logsumexp_slice(row);
            let mut sum_logp = 0.0;
            for c in 0..n {
                let lp = row[c] - lse;
                sum_logp += lp;
                probs[r * n + c] = lp.exp();
            }
            let nll = -(row[t] - lse);
            out.push((1.0 - smoothing) * nll - smoothing * sum_logp / n as f64);
        }
        let out = Array::from_rows(m, 1, out)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
            },
            rg,
        ))
    }

    /// Multiplies by a fixed keep-mask already scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, keep: Rc<Vec<f64>>) -> Result<Var> {
        let v = self.value(x);
        if keep.len() != v.len() {
            return Err(Error::shape("dropout", v.shape(), &[keep.len()]));
        }
        let data = v.data().iter().zip(keep.iter()).map(|(a, k)| a * k).collect();
        let out = Array::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, keep }, rg))
    }

    /// Records an op whose forward value the caller already computed.
    pub fn custom(&mut self, inputs: &[Var], value: Array, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse pass from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar root, found shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.requires_grad(*row) {
                    let n = out.cols();
                    let mut acc = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        for (s, v) in acc.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, acc);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.iter().zip(y.data()).map(|(g, y)| g * y).collect());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.iter().zip(x.data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => {
                self.accumulate(grads, *a, g.iter().map(|v| v * f).collect());
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if self.requires_grad(*a) {
                    // dA = G B^T
                    let bt = transpose_raw(y.data(), k, n);
                    self.accumulate(grads, *a, matmul_kernel(g, &bt, m, n, k));
                }
                if self.requires_grad(*b) {
                    // dB = A^T G
                    let at = transpose_raw(x.data(), m, k);
                    self.accumulate(grads, *b, matmul_kernel(&at, g, k, m, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.rows());
                if self.requires_grad(*a) {
                    // dA = G B
                    self.accumulate(grads, *a, matmul_kernel(g, y.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    // dB = G^T A
                    let gt = transpose_raw(g, m, n);
                    self.accumulate(grads, *b, matmul_kernel(&gt, x.data(), n, m, k));
                }
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut acc = vec![0.0; t.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        acc[id * d + c] += g[r * d + c];
                    }
                }
                self.accumulate(grads, *table, acc);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let n = out.cols();
                let m = out.rows();
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            dg[c] += g[r * n + c] * xhat[r * n + c];
                            db[c] += g[r * n + c];
                        }
                    }
                    self.accumulate(grads, *gain, dg);
                    self.accumulate(grads, *bias, db);
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..n {
                            let dh = g[r * n + c] * gv.data()[c];
                            s1 += dh;
                            s2 += dh * xhat[r * n + c];
                        }
                        for c in 0..n {
                            let dh = g[r * n + c] * gv.data()[c];
                            dx[r * n + c] = inv_std[r] / n as f64 * (n as f64 * dh - s1 - xhat[r * n + c] * s2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a);
                let d = g.iter().zip(x.data()).map(|(g, &x)| g * sigmoid(-x)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let d = g.iter().zip(x.data()).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts) => {
                let m = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, *p, d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let src = self.value(*x);
                let (m, n) = (src.rows(), src.cols());
                let w = out.cols();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean { x, axis } => {
                let src = self.value(*x);
                let (m, n) = (src.rows(), src.cols());
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        d[r * n + c] = if *axis == 0 { g[c] / m as f64 } else { g[r] / n as f64 };
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::MaskedSoftmax { x, mask } => {
                let (m, n) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let span = r * n..(r + 1) * n;
                    let dot: f64 = y[span.clone()].iter().zip(&g[span.clone()]).map(|(y, g)| y * g).sum();
                    for c in span {
                        if mask[c] {
                            d[c] = y[c] * (g[c] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::LogSumExp { x, axis } => {
                let src = self.value(*x);
                let (m, n) = (src.rows(), src.cols());
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        let (lse, gi) = if *axis == 0 {
                            (out.data()[c], g[c])
                        } else {
                            (out.data()[r], g[r])
                        };
                        if lse.is_finite() {
                            d[r * n + c] = gi * (src.get(r, c) - lse).exp();
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                let n = self.value(*logits).cols();
                let mut d = vec![0.0; probs.len()];
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..n {
                        let mut v = probs[r * n + c] - smoothing / n as f64;
                        if c == t {
                            v -= 1.0 - smoothing;
                        }
                        d[r * n + c] = g[r] * v;
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Dropout { x, keep } => {
                let d = g.iter().zip(keep.iter()).map(|(g, k)| g * k).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Array> = inputs.iter().map(|v| self.value(*v)).collect();
                let g_out = Array::new(out.shape().to_vec(), g.to_vec()).expect("grad shape");
                let input_grads = op.backward(&values, out, &g_out);
                for (v, ig) in inputs.iter().zip(input_grads) {
                    if let Some(ig) = ig {
                        self.accumulate(grads, *v, ig.into_data());
                    }
                }
            }
        }
    }
}
