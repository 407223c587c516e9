//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node in an arena. Nodes are only
//! ever appended, so arena order is a topological order and the backward
//! sweep simply walks the arena from the loss down to index zero.

use crate::error::{shape_err, NumericsError, Result};
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::{softmax_row, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Feasibility mask for masked softmax: `true` marks an allowed entry.
/// Either one row shared by every input row, or one entry per element.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    allowed: Vec<bool>,
    rows: Option<usize>,
}

impl Mask {
    pub fn shared(allowed: Vec<bool>) -> Self {
        Self { allowed, rows: None }
    }

    pub fn per_row(rows: usize, allowed: Vec<bool>) -> Self {
        Self {
            allowed,
            rows: Some(rows),
        }
    }

    fn cols(&self) -> usize {
        match self.rows {
            None => self.allowed.len(),
            Some(r) => self.allowed.len() / r.max(1),
        }
    }

    pub fn row(&self, r: usize) -> &[bool] {
        match self.rows {
            None => &self.allowed,
            Some(_) => {
                let c = self.cols();
                &self.allowed[r * c..(r + 1) * c]
            }
        }
    }

    fn check(&self, op: &'static str, rows: usize, cols: usize) -> Result<()> {
        let ok = match self.rows {
            None => self.allowed.len() == cols,
            Some(r) => r == rows && self.allowed.len() == rows * cols,
        };
        if !ok {
            return shape_err(op, format!("mask does not fit a {rows}x{cols} input"));
        }
        for r in 0..rows {
            if !self.row(r).iter().any(|&a| a) {
                return Err(NumericsError::AllKeysMasked { row: r });
            }
        }
        Ok(())
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmaxPick {
        x: Var,
        picks: Vec<usize>,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Scatter {
        x: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Gradients of one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape with no parameter store attached.
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients; callers may [`Tape::truncate`]
    /// it to drop intermediate values.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after `mark`. Vars created after the mark
    /// become dangling and must not be used again.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .params
                .expect("parameter node on a tape without a store")
                .get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: if requires_grad { op } else { Op::Leaf },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).rows_cols();
        let (k2, n) = self.value(b).rows_cols();
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 || k != k2 {
            return shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            );
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).rows_cols();
        let (n, k2) = self.value(b).rows_cols();
        if k != k2 {
            return shape_err(
                "matmul_bt",
                format!("{:?} x {:?}^T", self.shape(a), self.shape(b)),
            );
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bd[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBT(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the vector `b: [n]` to every row of `a: [..×n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.value(a).rows_cols();
        if self.value(b).numel() != n {
            return shape_err(
                "add_row",
                format!("{:?} + row {:?}", self.shape(a), self.shape(b)),
            );
        }
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_mut(n) {
            for (x, bb) in row.iter_mut().zip(&bias) {
                *x += bb;
            }
        }
        Ok(self.push(v, Op::AddRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    /// Softmax along the last axis with max subtraction. Masked entries get
    /// weight exactly zero; a row with every entry masked is an error.
    pub fn softmax(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.rows_cols();
        if let Some(m) = mask {
            m.check("softmax", rows, cols)?;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(softmax_row(xv.row(r), mask.map(|m| m.row(r))));
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax(x), &[x]))
    }

    /// `ln softmax(x_r)[picks_r]` for every row `r`, as a vector of length
    /// `rows`. Picking a masked entry is a contract violation.
    pub fn log_softmax_pick(
        &mut self,
        x: Var,
        mask: Option<&Mask>,
        picks: &[usize],
    ) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.rows_cols();
        if picks.len() != rows {
            return shape_err(
                "log_softmax_pick",
                format!("{} picks for {rows} rows", picks.len()),
            );
        }
        if let Some(m) = mask {
            m.check("log_softmax_pick", rows, cols)?;
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut out = Vec::with_capacity(rows);
        for (r, &p) in picks.iter().enumerate() {
            let row = xv.row(r);
            let allowed = mask.map(|m| m.row(r));
            if p >= cols || allowed.is_some_and(|a| !a[p]) {
                return Err(NumericsError::Contract {
                    op: "log_softmax_pick",
                    detail: format!("row {r} picks masked or out-of-range entry {p}"),
                });
            }
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| allowed.is_none_or(|a| a[*j]))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + row
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| allowed.is_none_or(|a| a[*j]))
                    .map(|(_, &v)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            out.push(row[p] - lse);
            probs.extend(softmax_row(row, allowed));
        }
        let v = Tensor::vector(out);
        Ok(self.push(
            v,
            Op::LogSoftmaxPick {
                x,
                picks: picks.to_vec(),
                probs,
            },
            &[x],
        ))
    }

    /// Per-row layer normalization with affine `gain` and `bias` of length d.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.rows_cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return shape_err("layer_norm", format!("gain/bias must have length {d}"));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean over rows: `[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (m, n) = xv.rows_cols();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let v = Tensor::matrix(1, n, out).expect("nonzero");
        self.push(v, Op::MeanRows(x), &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.rows_cols();
        if len == 0 || start + len > n {
            return shape_err("slice_cols", format!("[{start}, {}) of {n} columns", start + len));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let v = Tensor::matrix(m, len, out)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows_cols().0;
        if parts.iter().any(|&p| self.value(p).rows_cols().0 != rows) {
            return shape_err("concat_cols", "row counts differ");
        }
        let total: usize = parts.iter().map(|&p| self.value(p).rows_cols().1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::matrix(rows, total, out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).rows_cols().1;
        if parts.iter().any(|&p| self.value(p).rows_cols().1 != cols) {
            return shape_err("concat_rows", "column counts differ");
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / cols;
        let v = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Selects rows by index (repeats allowed): `[m×n] -> [len(idx)×n]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.rows_cols();
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return shape_err("gather_rows", format!("indices out of range for {m} rows"));
        }
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(xv.row(i));
        }
        let v = Tensor::matrix(idx.len(), n, out)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Places the entries of vector `x` at positions `idx` of a zero vector
    /// of length `len`. Repeated indices accumulate.
    pub fn scatter(&mut self, x: Var, idx: &[usize], len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != idx.len() || idx.iter().any(|&i| i >= len) {
            return shape_err("scatter", format!("{} values into length {len}", xv.numel()));
        }
        let mut out = vec![0.0; len];
        for (&i, &v) in idx.iter().zip(xv.data()) {
            out[i] += v;
        }
        let v = Tensor::vector(out);
        Ok(self.push(
            v,
            Op::Scatter {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    /// `Σ_i w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != weights.len() {
            return shape_err(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), xv.numel()),
            );
        }
        let s = xv.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            &[x],
        ))
    }

    /// Runs the backward sweep from a scalar `loss` and returns the gradient
    /// of every node that requires one.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::Contract {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `∂loss/∂p` into `out` for every parameter on the tape.
    /// Calling it twice adds the gradient twice.
    pub fn backward(&self, loss: Var, out: &mut GradStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, g) in grads.grads.iter().enumerate() {
            if let (Some(g), Value::Param(id)) = (g, &self.nodes[i].value) {
                out.accumulate(*id, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = self.value(Var(i));
        let mut send = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        };
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).rows_cols();
                let n = self.value(*b).rows_cols().1;
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let gd = g.data();
                if self.requires_grad(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for c in 0..k {
                            let brow = &bd[c * n..(c + 1) * n];
                            let grow = &gd[r * n..(r + 1) * n];
                            da[r * k + c] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    send(*a, like(*a, da));
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for c in 0..k {
                            let av = ad[r * k + c];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in db[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    send(*b, like(*b, db));
                }
            }
            Op::MatMulBT(a, b) => {
                let (m, k) = self.value(*a).rows_cols();
                let n = self.value(*b).rows_cols().0;
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let gd = g.data();
                if self.requires_grad(*a) {
                    // dA = G · B
                    let da = matmul_raw(gd, bd, m, n, k);
                    send(*a, like(*a, da));
                }
                if self.requires_grad(*b) {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; n * k];
                    for r in 0..m {
                        let arow = &ad[r * k..(r + 1) * k];
                        for j in 0..n {
                            let gv = gd[r * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for (o, av) in db[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                *o += gv * av;
                            }
                        }
                    }
                    send(*b, like(*b, db));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let da = g.data().iter().zip(bv).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av).map(|(x, y)| x * y).collect();
                send(*a, like(*a, da));
                send(*b, like(*b, db));
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).numel();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (o, v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                send(*a, g.clone());
                send(*b, like(*b, db));
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*a, like(*a, d));
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                send(*a, like(*a, d));
            }
            Op::Softmax(x) => {
                let (rows, cols) = out.rows_cols();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[r * cols + j] = y[j] * (gr[j] - dot);
                    }
                }
                send(*x, like(*x, d));
            }
            Op::LogSoftmaxPick { x, picks, probs } => {
                let cols = self.value(*x).rows_cols().1;
                let mut d = vec![0.0; probs.len()];
                for (r, &p) in picks.iter().enumerate() {
                    let gr = g.data()[r];
                    for j in 0..cols {
                        d[r * cols + j] = -gr * probs[r * cols + j];
                    }
                    d[r * cols + p] += gr;
                }
                send(*x, like(*x, d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, dim) = out.rows_cols();
                let gamma = self.value(*gain).data();
                let gd = g.data();
                let mut dgain = vec![0.0; dim];
                let mut dbias = vec![0.0; dim];
                let mut dx = vec![0.0; rows * dim];
                for r in 0..rows {
                    let gr = &gd[r * dim..(r + 1) * dim];
                    let hr = &xhat[r * dim..(r + 1) * dim];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..dim {
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                        let dh = gr[j] * gamma[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= dim as f64;
                    mean_dh_h /= dim as f64;
                    for j in 0..dim {
                        let dh = gr[j] * gamma[j];
                        dx[r * dim + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                send(*x, like(*x, dx));
                send(*gain, like(*gain, dgain));
                send(*bias, like(*bias, dbias));
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).rows_cols();
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend(g.data().iter().map(|v| v / m as f64));
                }
                send(*x, like(*x, d));
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).rows_cols();
                let len = out.rows_cols().1;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                send(*x, like(*x, d));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).rows_cols().1;
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    send(p, like(p, d));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    send(p, like(p, g.data()[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let (m, n) = self.value(*x).rows_cols();
                let mut d = vec![0.0; m * n];
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in d[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g.data()[k * n..(k + 1) * n])
                    {
                        *o += v;
                    }
                }
                send(*x, like(*x, d));
            }
            Op::Scatter { x, idx } => {
                let d = idx.iter().map(|&i| g.data()[i]).collect();
                send(*x, like(*x, d));
            }
            Op::Reshape(x) => send(*x, like(*x, g.data().to_vec())),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                send(*x, like(*x, vec![g.data()[0]; n]));
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                send(*x, like(*x, weights.iter().map(|w| w * s).collect()));
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
