//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation evaluates eagerly and appends a node to the tape. A
//! backward sweep in reverse insertion order then pushes adjoints to the
//! inputs of each node and finally collects them on the parameter leaves.

use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Elu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MaxPoolRows(Var, Vec<usize>),
    OuterAdd(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Tensor,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a parameter. Repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: x.shape(),
                right: r.shape(),
            });
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, "mul")?;
        let value = x.zip_with(y, |p, q| p * q);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push(value, Op::Gelu(a))
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(elu);
        self.push(value, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = tensor::leaky_relu(self.value(a), slope)?;
        Ok(self.push(value, Op::LeakyRelu(a, slope)))
    }

    /// Row-wise masked softmax. `mask` is row-major with the same shape as
    /// `a`; `true` keeps an entry. A row with no kept entry is a
    /// [`Error::DegenerateMask`] unless `allow_empty_rows`, in which case it
    /// comes out as all zeros.
    pub fn softmax_rows(
        &mut self,
        a: Var,
        mask: Option<&[bool]>,
        allow_empty_rows: bool,
    ) -> Result<Var> {
        let x = self.value(a);
        let [rows, cols] = x.shape();
        if let Some(m) = mask {
            if m.len() != rows * cols {
                return Err(Error::Shape {
                    op: "softmax_rows",
                    left: [rows, cols],
                    right: [m.len() / cols.max(1), cols],
                });
            }
        }
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row_mask = mask.map(|m| &m[r * cols..(r + 1) * cols]);
            match tensor::softmax(x.row(r), row_mask) {
                Ok(p) => value.row_mut(r).copy_from_slice(&p),
                Err(Error::DegenerateMask) if allow_empty_rows => {}
                Err(e) => return Err(e),
            }
        }
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Per-row layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let (g, b) = (self.value(gain), self.value(bias));
        let [rows, cols] = x.shape();
        for t in [g, b] {
            if t.shape() != [1, cols] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: x.shape(),
                    right: t.shape(),
                });
            }
        }
        let mut normed = Tensor::zeros(rows, cols);
        let mut value = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normed.set(r, c, n);
                value.set(r, c, n * g.data()[c] + b.data()[c]);
            }
        }
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                normed,
                inv_std,
            },
        ))
    }

    /// Selects rows of `table` by id.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut value = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::TokenId { id, size: t.rows() });
            }
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        Ok(self.push(value, Op::Gather(table, ids.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: x.shape(),
                right: [start, end],
            });
        }
        let value = Tensor::new(
            end - start,
            x.cols(),
            x.data()[start * x.cols()..end * x.cols()].to_vec(),
        )?;
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: x.shape(),
                right: [start, end],
            });
        }
        let mut value = Tensor::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            value.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or(Error::EmptySequence("concat_rows"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape(),
                    right: t.shape(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or(Error::EmptySequence("concat_cols"))?;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            for r in 0..rows {
                value.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Column-wise max over rows, `L × d → 1 × d`.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var> {
        let (value, arg) = tensor::max_pool_with_argmax(self.value(a))?;
        Ok(self.push(value, Op::MaxPoolRows(a, arg)))
    }

    /// `out[i][j] = col[i] + row[j]` for an `n × 1` column and an `m × 1` column.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Result<Var> {
        let (c, r) = (self.value(col), self.value(row));
        if c.cols() != 1 || r.cols() != 1 {
            return Err(Error::Shape {
                op: "outer_add",
                left: c.shape(),
                right: r.shape(),
            });
        }
        let mut value = Tensor::zeros(c.rows(), r.rows());
        for i in 0..c.rows() {
            for j in 0..r.rows() {
                value.set(i, j, c.data()[i] + r.data()[j]);
            }
        }
        Ok(self.push(value, Op::OuterAdd(col, row)))
    }

    /// `Σ_z weights[z] · (−log softmax(logits[z])[targets[z]])`, as a `1 × 1`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.rows() || weights.len() != x.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: x.shape(),
                right: [targets.len(), weights.len()],
            });
        }
        let mut probs = Tensor::zeros(x.rows(), x.cols());
        let mut total = 0.0;
        for (z, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if t >= x.cols() {
                return Err(Error::TokenId {
                    id: t,
                    size: x.cols(),
                });
            }
            let row = x.row(z);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (p, v) in probs.row_mut(z).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            total += w * (lse - row[t]);
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Reverse sweep from a scalar node. Returns the gradient of every
    /// parameter leaf reachable from `loss`.
    pub fn gradients(&self, loss: Var, store: &ParamStore) -> Result<ParamGrads> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                left: shape,
                right: [1, 1],
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = ParamGrads::new(store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.grads[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::AddRow(a, row) => {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *a, g)?;
                    accumulate(&mut adj, *row, dr)?;
                }
                Op::Mul(a, b) => {
                    let da = g.zip_with(self.value(*b), |p, q| p * q);
                    let db = g.zip_with(self.value(*a), |p, q| p * q);
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g.map(|v| v * f))?,
                Op::Gelu(a) => {
                    let d = g.zip_with(self.value(*a), |p, x| p * gelu_grad(x));
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Elu(a) => {
                    let d =
                        g.zip_with(self.value(*a), |p, x| if x > 0.0 { p } else { p * x.exp() });
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Relu(a) => {
                    let d = g.zip_with(self.value(*a), |p, x| if x > 0.0 { p } else { 0.0 });
                    accumulate(&mut adj, *a, d)?;
                }
                Op::LeakyRelu(a, slope) => {
                    let d = g.zip_with(self.value(*a), |p, x| if x >= 0.0 { p } else { p * slope });
                    accumulate(&mut adj, *a, d)?;
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut d = Tensor::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let inner = tensor::dot(p.row(r), g.row(r));
                        for ((o, &pi), &gi) in d.row_mut(r).iter_mut().zip(p.row(r)).zip(g.row(r)) {
                            *o = pi * (gi - inner);
                        }
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gn = self.value(*gain);
                    let [rows, cols] = normed.shape();
                    let mut dx = Tensor::zeros(rows, cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    let mut dbias = Tensor::zeros(1, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for c in 0..cols {
                            dgain.data_mut()[c] += gr[c] * nr[c];
                            dbias.data_mut()[c] += gr[c];
                            let dn = gr[c] * gn.data()[c];
                            mean_dn += dn;
                            mean_dn_n += dn * nr[c];
                        }
                        mean_dn /= n;
                        mean_dn_n /= n;
                        for c in 0..cols {
                            let dn = gr[c] * gn.data()[c];
                            dx.set(r, c, inv_std[r] * (dn - mean_dn - nr[c] * mean_dn_n));
                        }
                    }
                    accumulate(&mut adj, *x, dx)?;
                    accumulate(&mut adj, *gain, dgain)?;
                    accumulate(&mut adj, *bias, dbias)?;
                }
                Op::Gather(table, ids) => {
                    let [rows, cols] = self.shape(*table);
                    let mut d = Tensor::zeros(rows, cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *table, d)?;
                }
                Op::SliceRows(a, start) => {
                    let [rows, cols] = self.shape(*a);
                    let mut d = Tensor::zeros(rows, cols);
                    d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, d)?;
                }
                Op::SliceCols(a, start) => {
                    let [rows, cols] = self.shape(*a);
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [rows, cols] = self.shape(p);
                        let d = Tensor::new(
                            rows,
                            cols,
                            g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                        )?;
                        offset += rows;
                        accumulate(&mut adj, p, d)?;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [rows, cols] = self.shape(p);
                        let mut d = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            d.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut adj, p, d)?;
                    }
                }
                Op::MaxPoolRows(a, arg) => {
                    let [rows, cols] = self.shape(*a);
                    let mut d = Tensor::zeros(rows, cols);
                    for (c, &r) in arg.iter().enumerate() {
                        d.set(r, c, g.data()[c]);
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::OuterAdd(col, row) => {
                    let [n, m] = g.shape();
                    let mut dc = Tensor::zeros(n, 1);
                    let mut dr = Tensor::zeros(m, 1);
                    for i in 0..n {
                        for j in 0..m {
                            let v = g.get(i, j);
                            dc.data_mut()[i] += v;
                            dr.data_mut()[j] += v;
                        }
                    }
                    accumulate(&mut adj, *col, dc)?;
                    accumulate(&mut adj, *row, dr)?;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = g.data()[0];
                    let mut d = probs.clone();
                    for (z, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = d.row_mut(z);
                        row[t] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= up * w;
                        }
                    }
                    accumulate(&mut adj, *logits, d)?;
                }
                Op::Sum(a) => {
                    let [rows, cols] = self.shape(*a);
                    accumulate(&mut adj, *a, Tensor::filled(rows, cols, g.data()[0]))?;
                }
            }
        }
        Ok(out)
    }

    /// Reverse sweep that adds the resulting gradients into the store.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss, store)?;
        store.accumulate(&grads, 1.0)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, d: Tensor) -> Result<()> {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}
