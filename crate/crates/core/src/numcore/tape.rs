//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every operation appends a node holding its forward value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in reverse, so the recording order
//! is already a topological order. Consuming the tape frees the graph.

use super::params::{ParamId, ParamSet};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{GresError, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    Gelu(Var),
    Sigmoid(Var),
    Bce { pred: Var, target: Tensor, eps: f64 },
    SumAll(Var),
    MeanRows(Var),
    NormalizeSum(Var, f64),
    ClampMax(Var, f64),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds these gradients into the parameters' accumulators.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (i, g) in self.by_param.iter().enumerate() {
            if let Some(g) = g {
                let p = params.get_mut(ParamId(i));
                for (acc, v) in p.grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

fn softmax_rows_value(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a parameter leaf. Gradients reaching it are reported under `id`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).tensor.clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(GresError::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        for (o, v) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.value(x).require_matrix("add_row")?;
        if self.value(row).numel() != n {
            return Err(GresError::dim("add_row", self.shape(x), self.shape(row)));
        }
        let mut value = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (o, v) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.value(x).require_matrix("mul_row")?;
        if self.value(row).numel() != n {
            return Err(GresError::dim("mul_row", self.shape(x), self.shape(row)));
        }
        let mut value = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for chunk in value.data_mut().chunks_mut(n) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o *= b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::MulRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = map(self.value(x), |v| v * s);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.value(x).require_matrix("softmax_rows")?;
        let value = softmax_rows_value(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Exact GeLU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| v * std_normal_cdf(v));
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = map(self.value(x), sigmoid_scalar);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Mean binary cross-entropy with `eps` inside both logarithms.
    ///
    /// Arguments are divided by `1 + eps` so a perfect prediction scores exactly 0
    /// rather than `-ln(1 + eps)`; this is a constant shift and leaves gradients unchanged.
    pub fn bce(&mut self, pred: Var, target: &Tensor, eps: f64) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(GresError::dim("bce", p.shape(), target.shape()));
        }
        let n = p.numel() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let hi = 1.0 + eps;
                -(t * ((p + eps) / hi).ln() + (1.0 - t) * ((1.0 - p + eps) / hi).ln())
            })
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Bce {
                pred,
                target: target.clone(),
                eps,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::SumAll(x), rg)
    }

    /// Column means of an `m×n` matrix, as a `1×n` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).require_matrix("mean_rows")?;
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(x), rg))
    }

    /// `x / (Σx + eps)`.
    pub fn normalize_sum(&mut self, x: Var, eps: f64) -> Var {
        let denom: f64 = self.value(x).data().iter().sum::<f64>() + eps;
        let value = map(self.value(x), |v| v / denom);
        let rg = self.rg(x);
        self.push(value, Op::NormalizeSum(x, eps), rg)
    }

    /// `min(x, cap)`; the gradient is cut where the cap is active.
    pub fn clamp_max(&mut self, x: Var, cap: f64) -> Var {
        let value = map(self.value(x), |v| v.min(cap));
        let rg = self.rg(x);
        self.push(value, Op::ClampMax(x, cap), rg)
    }

    /// Selects rows of a matrix by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.value(table).require_matrix("gather_rows")?;
        if rows.is_empty() {
            return Err(GresError::Contract(
                "gather_rows needs at least one index".into(),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(GresError::Contract(format!(
                "row index {bad} out of range for table with {m} rows"
            )));
        }
        let t = self.value(table);
        let data = rows
            .iter()
            .flat_map(|&r| t.row(r).iter().copied())
            .collect();
        let value = Tensor::matrix(rows.len(), n, data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::GatherRows(table, rows.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Propagates d(loss)/d(node) back to every parameter leaf and frees the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(GresError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n_params = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(id) => Some(id.0 + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut by_param: Vec<Option<Vec<f64>>> = vec![None; n_params];

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut by_param)?;
        }
        Ok(Gradients { by_param })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        by_param: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let nodes = &self.nodes;
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contribution),
            }
        };
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let slot = &mut by_param[id.0];
                match slot {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, c)| *a += c),
                    None => *slot = Some(g.to_vec()),
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    matmul_nt(g, val(*b).data(), &mut da, m, n, k);
                    send(*a, da);
                }
                if nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    matmul_tn(val(*a).data(), g, &mut db, m, k, n);
                    send(*b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A Bᵀ with A m×k, B n×k.
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                if nodes[a.0].requires_grad {
                    // dA = G · B
                    let mut da = vec![0.0; m * k];
                    matmul_nn(g, val(*b).data(), &mut da, m, n, k);
                    send(*a, da);
                }
                if nodes[b.0].requires_grad {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; n * k];
                    matmul_tn(g, val(*a).data(), &mut db, m, n, k);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddRow(x, row) => {
                let n = val(*x).cols();
                send(*x, g.to_vec());
                let mut dr = vec![0.0; n];
                for chunk in g.chunks(n) {
                    dr.iter_mut().zip(chunk).for_each(|(d, c)| *d += c);
                }
                send(*row, dr);
            }
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b).data()).map(|(g, b)| g * b).collect();
                let db = g.iter().zip(val(*a).data()).map(|(g, a)| g * a).collect();
                send(*a, da);
                send(*b, db);
            }
            Op::MulRow(x, row) => {
                let n = val(*x).cols();
                let r = val(*row).data();
                let dx = g
                    .chunks(n)
                    .flat_map(|chunk| chunk.iter().zip(r).map(|(g, r)| g * r))
                    .collect();
                let mut dr = vec![0.0; n];
                for (gc, xc) in g.chunks(n).zip(val(*x).data().chunks(n)) {
                    for ((d, gv), xv) in dr.iter_mut().zip(gc).zip(xc) {
                        *d += gv * xv;
                    }
                }
                send(*x, dx);
                send(*row, dr);
            }
            Op::Scale(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((dxc, yc), gc) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f64 = yc.iter().zip(gc).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in dxc.iter_mut().zip(yc).zip(gc) {
                        *d = y * (g - dot);
                    }
                }
                send(*x, dx);
            }
            Op::Gelu(x) => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, g)| g * (std_normal_cdf(v) + v * std_normal_pdf(v)))
                    .collect();
                send(*x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(s, g)| g * s * (1.0 - s))
                    .collect();
                send(*x, dx);
            }
            Op::Bce { pred, target, eps } => {
                let p = val(*pred).data();
                let n = p.len() as f64;
                let dx = p
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| g[0] * -(t / (p + eps) - (1.0 - t) / (1.0 - p + eps)) / n)
                    .collect();
                send(*pred, dx);
            }
            Op::SumAll(x) => send(*x, vec![g[0]; val(*x).numel()]),
            Op::MeanRows(x) => {
                let m = val(*x).rows();
                let scaled: Vec<f64> = g.iter().map(|v| v / m as f64).collect();
                send(*x, scaled.repeat(m));
            }
            Op::NormalizeSum(x, eps) => {
                let xs = val(*x).data();
                let denom = xs.iter().sum::<f64>() + eps;
                let gx: f64 = g.iter().zip(xs).map(|(g, x)| g * x).sum::<f64>() / (denom * denom);
                send(*x, g.iter().map(|g| g / denom - gx).collect());
            }
            Op::ClampMax(x, cap) => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v < *cap { g } else { 0.0 })
                    .collect();
                send(*x, dx);
            }
            Op::GatherRows(table, rows) => {
                let t = val(*table);
                let n = t.cols();
                let mut dt = vec![0.0; t.numel()];
                for (&r, gc) in rows.iter().zip(g.chunks(n)) {
                    dt[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(gc)
                        .for_each(|(d, c)| *d += c);
                }
                send(*table, dt);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
        }
        Ok(())
    }
}
