use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Pow(usize, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    L1NormalizeRows(usize),
    SqDist(usize, usize),
    StopGrad,
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    GatherRows { table: usize, ids: Vec<usize> },
    LayerNormRows { src: usize, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
    needs_grad: bool,
    /// Only meaningful for leaves: the caller asked for this gradient.
    grad_leaf: bool,
}

/// Gradients of a scalar loss with respect to every grad-enabled leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    tape: u64,
    by_leaf: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.by_leaf.get(&var.index)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Every node's parents precede it, so a single reverse sweep suffices.
/// A tape supports exactly one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::domain(op, format!("expected a 2-D tensor, got {shape:?}"))),
    }
}

fn row_len(op: &'static str, shape: &[usize]) -> Result<usize> {
    match shape {
        [n] | [1, n] => Ok(*n),
        _ => Err(Error::domain(op, format!("expected a row vector, got {shape:?}"))),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id {
            return Err(Error::Tape(format!(
                "variable from tape {} used on tape {}",
                v.tape, self.id
            )));
        }
        self.nodes
            .get(v.index)
            .ok_or_else(|| Error::Tape(format!("node {} not on tape", v.index)))
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            values,
            op,
            needs_grad,
            grad_leaf: false,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a leaf. Gradients are reported for it iff `tensor.grad_enabled()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let grad = tensor.grad_enabled();
        let shape = tensor.shape().to_vec();
        let var = self.push(shape, tensor.into_values(), Op::Leaf, grad);
        self.nodes[var.index].grad_leaf = grad;
        var
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_grad(false))
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.node(v)?.values)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.node(v)?.shape)
    }

    pub fn tensor(&self, v: Var) -> Result<Tensor> {
        let n = self.node(v)?;
        Ok(Tensor::from_parts(n.shape.clone(), n.values.clone()))
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v)?;
        if n.values.len() != 1 {
            return Err(Error::shape("scalar", &n.shape, &[]));
        }
        Ok(n.values[0])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let n = self.node(a)?;
        let values = n.values.iter().map(|&x| f(x)).collect();
        let (shape, ng) = (n.shape.clone(), n.needs_grad);
        Ok(self.push(shape, values, op, ng))
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.shape != nb.shape {
            return Err(Error::shape(name, &na.shape, &nb.shape));
        }
        let values = na.values.iter().zip(&nb.values).map(|(&x, &y)| f(x, y)).collect();
        let shape = na.shape.clone();
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(shape, values, op, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let (m, k) = dims2("matmul", &na.shape)?;
        let (k2, n) = dims2("matmul", &nb.shape)?;
        if k != k2 {
            return Err(Error::shape("matmul", &na.shape, &nb.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&na.values, &nb.values, &mut out, m, k, n);
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![m, n], out, Op::MatMul(a.index, b.index), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        let (r, c) = dims2("transpose", &na.shape)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = na.values[i * c + j];
            }
        }
        let ng = na.needs_grad;
        Ok(self.push(vec![c, r], out, Op::Transpose(a.index), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a.index, b.index), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub(a.index, b.index), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a.index, b.index), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        if !s.is_finite() {
            return Err(Error::domain("scale", format!("non-finite factor {s}")));
        }
        self.unary(a, Op::Scale(a.index, s), |x| x * s)
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (na, nr) = (self.node(a)?, self.node(row)?);
        let (_, c) = dims2(name, &na.shape)?;
        let n = row_len(name, &nr.shape)?;
        if n != c {
            return Err(Error::shape(name, &na.shape, &nr.shape));
        }
        let values = na
            .values
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, nr.values[i % c]))
            .collect();
        let shape = na.shape.clone();
        let ng = na.needs_grad || nr.needs_grad;
        Ok(self.push(shape, values, op, ng))
    }

    /// `a[i, j] + row[j]`
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, Op::AddRow(a.index, row.index), |x, y| x + y)
    }

    /// `a[i, j] * row[j]`
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, Op::MulRow(a.index, row.index), |x, y| x * y)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a.index), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a.index), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.unary(a, Op::Exp(a.index), f64::exp)?;
        if self.nodes[out.index].values.iter().any(|v| v.is_infinite()) {
            return Err(Error::domain("exp", "overflow"));
        }
        Ok(out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.node(a)?.values.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain("log", format!("input {x} is not strictly positive")));
        }
        self.unary(a, Op::Log(a.index), f64::ln)
    }

    /// Elementwise `a^p`. Inputs must be non-negative, and strictly positive
    /// when `p < 1` (the derivative is unbounded at zero).
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        if !p.is_finite() {
            return Err(Error::domain("pow", format!("non-finite exponent {p}")));
        }
        let strict = p < 1.0;
        if let Some(x) = self
            .node(a)?
            .values
            .iter()
            .find(|&&x| x < 0.0 || (strict && x == 0.0))
        {
            return Err(Error::domain("pow", format!("input {x} outside domain for exponent {p}")));
        }
        self.unary(a, Op::Pow(a.index, p), |x| x.powf(p))
    }

    /// Row-wise softmax of a 2-D tensor, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        let (r, c) = dims2("softmax_rows", &na.shape)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&na.values[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let (shape, ng) = (na.shape.clone(), na.needs_grad);
        Ok(self.push(shape, out, Op::SoftmaxRows(a.index), ng))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        let (r, c) = dims2("log_softmax_rows", &na.shape)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &na.values[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let (shape, ng) = (na.shape.clone(), na.needs_grad);
        Ok(self.push(shape, out, Op::LogSoftmaxRows(a.index), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        let s = na.values.iter().sum();
        let ng = na.needs_grad;
        Ok(self.push(vec![], vec![s], Op::Sum(a.index), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        if na.values.is_empty() {
            return Err(Error::domain("mean", "empty tensor"));
        }
        let s = na.values.iter().sum::<f64>() / na.values.len() as f64;
        let ng = na.needs_grad;
        Ok(self.push(vec![], vec![s], Op::Mean(a.index), ng))
    }

    /// Divides each row by its l1 norm.
    pub fn l1_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        let (r, c) = dims2("l1_normalize_rows", &na.shape)?;
        let mut out = na.values.clone();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let norm: f64 = row.iter().map(|x| x.abs()).sum();
            if norm == 0.0 {
                return Err(Error::domain("l1_normalize_rows", format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let (shape, ng) = (na.shape.clone(), na.needs_grad);
        Ok(self.push(shape, out, Op::L1NormalizeRows(a.index), ng))
    }

    /// `Σ (a - b)²` as a scalar.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.values.len() != nb.values.len() || row_shape(&na.shape) != row_shape(&nb.shape) {
            return Err(Error::shape("squared_distance", &na.shape, &nb.shape));
        }
        let s = na
            .values
            .iter()
            .zip(&nb.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![], vec![s], Op::SqDist(a.index, b.index), ng))
    }

    /// Forward identity; no gradient flows back through the result.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a)?;
        let (shape, values) = (na.shape.clone(), na.values.clone());
        Ok(self.push(shape, values, Op::StopGrad, false))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no inputs"))?;
        let (r0, c0) = dims2("concat", &self.node(*first)?.shape)?;
        if axis > 1 {
            return Err(Error::domain("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        let mut ng = false;
        for &p in parts {
            let np = self.node(p)?;
            let (r, c) = dims2("concat", &np.shape)?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(Error::shape("concat", &[r0, c0], &np.shape));
            }
            total += if axis == 0 { r } else { c };
            ng |= np.needs_grad;
        }
        let shape = if axis == 0 { vec![total, c0] } else { vec![r0, total] };
        let mut out = Vec::with_capacity(shape[0] * shape[1]);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(&self.nodes[p.index].values);
            }
        } else {
            for i in 0..r0 {
                for &p in parts {
                    let np = &self.nodes[p.index];
                    let c = np.shape[1];
                    out.extend_from_slice(&np.values[i * c..(i + 1) * c]);
                }
            }
        }
        let op = Op::Concat {
            parts: parts.iter().map(|p| p.index).collect(),
            axis,
        };
        Ok(self.push(shape, out, op, ng))
    }

    /// Copies `len` rows (`axis` 0) or columns (`axis` 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let na = self.node(a)?;
        let (r, c) = dims2("slice", &na.shape)?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(Error::domain("slice", format!("axis {axis} out of range"))),
        };
        if start + len > extent {
            return Err(Error::domain(
                "slice",
                format!("range {start}..{} exceeds extent {extent}", start + len),
            ));
        }
        let (shape, out) = if axis == 0 {
            (vec![len, c], na.values[start * c..(start + len) * c].to_vec())
        } else {
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&na.values[i * c + start..i * c + start + len]);
            }
            (vec![r, len], out)
        };
        let ng = na.needs_grad;
        Ok(self.push(shape, out, Op::Slice { src: a.index, axis, start }, ng))
    }

    /// Row lookup into a 2-D table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let nt = self.node(table)?;
        let (r, c) = dims2("gather_rows", &nt.shape)?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::domain("gather_rows", format!("row {id} out of {r}")));
            }
            out.extend_from_slice(&nt.values[id * c..(id + 1) * c]);
        }
        let ng = nt.needs_grad;
        let op = Op::GatherRows {
            table: table.index,
            ids: ids.to_vec(),
        };
        Ok(self.push(vec![ids.len(), c], out, op, ng))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let na = self.node(a)?;
        let (r, c) = dims2("layer_norm_rows", &na.shape)?;
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &na.values[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (shape, ng) = (na.shape.clone(), na.needs_grad);
        let op = Op::LayerNormRows { src: a.index, inv_std };
        Ok(self.push(shape, out, op, ng))
    }

    /// Reverse sweep from a scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        let nl = self.node(loss)?;
        if nl.values.len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                nl.shape
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.index + 1];
        if self.nodes[loss.index].needs_grad {
            grads[loss.index] = Some(vec![1.0]);
        }

        for idx in (0..=loss.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        let mut by_leaf = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.grad_leaf {
                let values = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.values.len()]);
                by_leaf.insert(idx, Tensor::from_parts(node.shape.clone(), values));
            }
        }
        Ok(Gradients {
            tape: self.id,
            by_leaf,
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let wants = |p: usize| nodes[p].needs_grad;
        let acc = |p: usize, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            let buf = grads[p].get_or_insert_with(|| vec![0.0; nodes[p].values.len()]);
            f(buf);
        };

        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a].shape[0], nodes[a].shape[1]);
                let n = nodes[b].shape[1];
                if wants(a) {
                    acc(a, grads, &mut |buf| gemm_nt_acc(g, &nodes[b].values, buf, m, n, k));
                }
                if wants(b) {
                    acc(b, grads, &mut |buf| gemm_tn_acc(&nodes[a].values, g, buf, m, k, n));
                }
            }
            &Op::Transpose(a) => {
                if wants(a) {
                    let (r, c) = (nodes[a].shape[0], nodes[a].shape[1]);
                    acc(a, grads, &mut |buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(a) {
                    acc(a, grads, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                }
                if wants(b) {
                    acc(b, grads, &mut |buf| {
                        buf.iter_mut().zip(g).for_each(|(d, &x)| *d += sign * x)
                    });
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let bv = &nodes[b].values;
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &y) in buf.iter_mut().zip(g).zip(bv) {
                            *d += x * y;
                        }
                    });
                }
                if wants(b) {
                    let av = &nodes[a].values;
                    acc(b, grads, &mut |buf| {
                        for ((d, &x), &y) in buf.iter_mut().zip(g).zip(av) {
                            *d += x * y;
                        }
                    });
                }
            }
            &Op::Scale(a, s) => {
                if wants(a) {
                    acc(a, grads, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, &x)| *d += s * x));
                }
            }
            &Op::AddRow(a, row) | &Op::MulRow(a, row) => {
                let is_mul = matches!(node.op, Op::MulRow(..));
                let c = nodes[a].shape[1];
                if wants(a) {
                    let rv = &nodes[row].values;
                    acc(a, grads, &mut |buf| {
                        for (i, (d, &x)) in buf.iter_mut().zip(g).enumerate() {
                            *d += if is_mul { x * rv[i % c] } else { x };
                        }
                    });
                }
                if wants(row) {
                    let av = &nodes[a].values;
                    acc(row, grads, &mut |buf| {
                        for (i, &x) in g.iter().enumerate() {
                            buf[i % c] += if is_mul { x * av[i] } else { x };
                        }
                    });
                }
            }
            &Op::Tanh(a) => {
                if wants(a) {
                    let y = &node.values;
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &t) in buf.iter_mut().zip(g).zip(y) {
                            *d += x * (1.0 - t * t);
                        }
                    });
                }
            }
            &Op::Relu(a) => {
                if wants(a) {
                    let xv = &nodes[a].values;
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &v) in buf.iter_mut().zip(g).zip(xv) {
                            if v > 0.0 {
                                *d += x;
                            }
                        }
                    });
                }
            }
            &Op::Exp(a) => {
                if wants(a) {
                    let y = &node.values;
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &e) in buf.iter_mut().zip(g).zip(y) {
                            *d += x * e;
                        }
                    });
                }
            }
            &Op::Log(a) => {
                if wants(a) {
                    let xv = &nodes[a].values;
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &v) in buf.iter_mut().zip(g).zip(xv) {
                            *d += x / v;
                        }
                    });
                }
            }
            &Op::Pow(a, p) => {
                if wants(a) {
                    let xv = &nodes[a].values;
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &v) in buf.iter_mut().zip(g).zip(xv) {
                            *d += x * p * v.powf(p - 1.0);
                        }
                    });
                }
            }
            &Op::SoftmaxRows(a) => {
                if wants(a) {
                    let c = node.shape[1];
                    let y = &node.values;
                    acc(a, grads, &mut |buf| {
                        for ((brow, grow), yrow) in
                            buf.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c))
                        {
                            let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                            for ((d, &x), &yy) in brow.iter_mut().zip(grow).zip(yrow) {
                                *d += yy * (x - dot);
                            }
                        }
                    });
                }
            }
            &Op::LogSoftmaxRows(a) => {
                if wants(a) {
                    let c = node.shape[1];
                    let y = &node.values;
                    acc(a, grads, &mut |buf| {
                        for ((brow, grow), yrow) in
                            buf.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c))
                        {
                            let total: f64 = grow.iter().sum();
                            for ((d, &x), &ly) in brow.iter_mut().zip(grow).zip(yrow) {
                                *d += x - ly.exp() * total;
                            }
                        }
                    });
                }
            }
            &Op::Sum(a) => {
                if wants(a) {
                    acc(a, grads, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0]));
                }
            }
            &Op::Mean(a) => {
                if wants(a) {
                    let n = nodes[a].values.len() as f64;
                    acc(a, grads, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0] / n));
                }
            }
            &Op::L1NormalizeRows(a) => {
                if wants(a) {
                    let c = node.shape[1];
                    let xv = &nodes[a].values;
                    let y = &node.values;
                    acc(a, grads, &mut |buf| {
                        for (((brow, grow), xrow), yrow) in buf
                            .chunks_mut(c)
                            .zip(g.chunks(c))
                            .zip(xv.chunks(c))
                            .zip(y.chunks(c))
                        {
                            let norm: f64 = xrow.iter().map(|x| x.abs()).sum();
                            let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                            for ((d, &gx), &x) in brow.iter_mut().zip(grow).zip(xrow) {
                                *d += (gx - x.signum() * dot) / norm;
                            }
                        }
                    });
                }
            }
            &Op::SqDist(a, b) => {
                let (av, bv) = (&nodes[a].values, &nodes[b].values);
                if wants(a) {
                    acc(a, grads, &mut |buf| {
                        for ((d, &x), &y) in buf.iter_mut().zip(av).zip(bv) {
                            *d += 2.0 * g[0] * (x - y);
                        }
                    });
                }
                if wants(b) {
                    acc(b, grads, &mut |buf| {
                        for ((d, &x), &y) in buf.iter_mut().zip(av).zip(bv) {
                            *d -= 2.0 * g[0] * (x - y);
                        }
                    });
                }
            }
            Op::Concat { parts, axis } => {
                let total_cols = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = (nodes[p].shape[0], nodes[p].shape[1]);
                    if wants(p) {
                        acc(p, grads, &mut |buf| {
                            if *axis == 0 {
                                let src = &g[offset * c..(offset + r) * c];
                                buf.iter_mut().zip(src).for_each(|(d, &x)| *d += x);
                            } else {
                                for i in 0..r {
                                    let src = &g[i * total_cols + offset..i * total_cols + offset + c];
                                    buf[i * c..(i + 1) * c]
                                        .iter_mut()
                                        .zip(src)
                                        .for_each(|(d, &x)| *d += x);
                                }
                            }
                        });
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            &Op::Slice { src, axis, start } => {
                if wants(src) {
                    let c = nodes[src].shape[1];
                    let (r_out, c_out) = (node.shape[0], node.shape[1]);
                    acc(src, grads, &mut |buf| {
                        if axis == 0 {
                            buf[start * c..(start + r_out) * c]
                                .iter_mut()
                                .zip(g)
                                .for_each(|(d, &x)| *d += x);
                        } else {
                            for i in 0..r_out {
                                buf[i * c + start..i * c + start + c_out]
                                    .iter_mut()
                                    .zip(&g[i * c_out..(i + 1) * c_out])
                                    .for_each(|(d, &x)| *d += x);
                            }
                        }
                    });
                }
            }
            Op::GatherRows { table, ids } => {
                let table = *table;
                if wants(table) {
                    let c = nodes[table].shape[1];
                    acc(table, grads, &mut |buf| {
                        for (row, &id) in ids.iter().enumerate() {
                            buf[id * c..(id + 1) * c]
                                .iter_mut()
                                .zip(&g[row * c..(row + 1) * c])
                                .for_each(|(d, &x)| *d += x);
                        }
                    });
                }
            }
            Op::LayerNormRows { src, inv_std } => {
                let src = *src;
                if wants(src) {
                    let c = node.shape[1];
                    let xhat = &node.values;
                    acc(src, grads, &mut |buf| {
                        for (i, ((brow, grow), xrow)) in buf
                            .chunks_mut(c)
                            .zip(g.chunks(c))
                            .zip(xhat.chunks(c))
                            .enumerate()
                        {
                            let mean_g = grow.iter().sum::<f64>() / c as f64;
                            let mean_gx =
                                grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                            for ((d, &gx), &xh) in brow.iter_mut().zip(grow).zip(xrow) {
                                *d += inv_std[i] * (gx - mean_g - xh * mean_gx);
                            }
                        }
                    });
                }
            }
        }
    }
}

fn row_shape(shape: &[usize]) -> usize {
    shape.iter().product()
}
