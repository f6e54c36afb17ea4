//! Eager tape for reverse-mode differentiation.
//!
//! Every op evaluates immediately and appends a node to the tape, so node
//! indices are already a topological order and backward is a single reverse
//! sweep. Constants are held behind `Arc` so frozen weights are shared with
//! the tape without copying.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Pick { x: Var, idx: Vec<usize> },
    WeightedSum { x: Var, weights: Vec<f64> },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Pick { .. } => "pick",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Names of the trainable leaves, in registration order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn constant(&mut self, t: impl Into<Arc<Tensor>>) -> Var {
        self.push_raw(t.into(), Op::Leaf, false)
    }

    /// Registers a trainable leaf under a unique name.
    pub fn param(&mut self, name: impl Into<String>, t: impl Into<Arc<Tensor>>) -> Result<Var> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::DuplicateParam(name));
        }
        let v = self.push_raw(t.into(), Op::Leaf, true);
        self.params.push((name, v));
        Ok(v)
    }

    fn push_raw(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(Arc::new(value), op, requires_grad))
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a);
        let bt = self.value(b);
        if bt.shape().len() != 2 || bt.shape()[0] != k {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), bt.shape()),
            ));
        }
        let p = bt.shape()[1];
        let mut out = vec![0.0; n * p];
        matmul_acc(self.value(a).data(), bt.data(), &mut out, n, k, p);
        let shape = if self.shape(a).len() == 1 {
            vec![p]
        } else {
            vec![n, p]
        };
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for row-major `a [n×k]`, `b [m×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a);
        let (m, k2) = self.dims2(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; n * m];
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMulNt(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add(a, b), &[a, b])
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).len() != cols {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push(t, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.map(x, |v| v * c)?;
        self.push(t, Op::Scale(x, c), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let xt = self.value(x);
        Tensor::new(xt.shape().to_vec(), xt.data().iter().map(|&v| f(v)).collect())
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked out when
    /// `j > i + (cols - rows)`.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        if causal && rows > cols {
            return Err(Error::shape("softmax", "causal mask needs rows <= cols"));
        }
        let offset = cols - rows.min(cols);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let limit = if causal { i + offset + 1 } else { cols };
            let row = &xt.data()[i * cols..i * cols + limit];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[i * cols..i * cols + limit];
            let mut total = 0.0;
            for (ov, &v) in o.iter_mut().zip(row) {
                *ov = (v - max).exp();
                total += *ov;
            }
            for ov in o.iter_mut() {
                *ov /= total;
            }
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        self.push(t, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let cols = xt.cols();
        let mut out = Vec::with_capacity(xt.len());
        for row in xt.data().chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        self.push(t, Op::LogSoftmax(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, f64::ln)?;
        self.push(t, Op::Log(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, sigmoid)?;
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, gelu)?;
        self.push(t, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.map(x, |v| v.max(0.0))?;
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xt = self.value(x);
        let cols = xt.cols();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::shape("layer_norm", "gain/bias length must equal row width"));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(xt.len());
        let mut rstd = Vec::with_capacity(xt.rows());
        let mut out = Vec::with_capacity(xt.len());
        for row in xt.data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, cols) = (tt.rows(), tt.cols());
        if ids.is_empty() {
            return Err(Error::shape("gather", "empty id list"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather", format!("id {bad} out of range {rows}")));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(tt.row(i));
        }
        let t = Tensor::new(vec![ids.len(), cols], out)?;
        self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        if len == 0 || start + len > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {rows}", start + len),
            ));
        }
        let data = xt.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(vec![len, cols], data)?;
        self.push(t, Op::SliceRows { x, start }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        if len == 0 || start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {cols}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(rows * len);
        for row in xt.data().chunks(cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::new(vec![rows, len], data)?;
        self.push(t, Op::SliceCols { x, start }, &[x])
    }

    /// Single row `i` as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let r = self.slice_rows(x, i, 1)?;
        let d = self.value(r).cols();
        self.reshape(r, vec![d])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let data = self.value(x).data().to_vec();
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Reshape(x), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pt = self.value(p);
            if pt.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("width {} vs {cols}", pt.cols()),
                ));
            }
            rows += pt.rows();
            data.extend_from_slice(pt.data());
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.data().iter().sum::<f64>() / xt.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Selects `x[i, idx[i]]` for every row.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = (xt.rows(), xt.cols());
        if idx.len() != rows || idx.iter().any(|&j| j >= cols) {
            return Err(Error::shape(
                "pick",
                format!("{} indices into {rows}x{cols}", idx.len()),
            ));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| xt.data()[i * cols + j])
            .collect();
        self.push(
            Tensor::vector(data),
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    /// `Σ weights[i] · x[i]` over the flattened values.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let xt = self.value(x);
        if weights.len() != xt.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), xt.len()),
            ));
        }
        let s = dot(xt.data(), weights);
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            &[x],
        )
    }

    /// Mean over entries of `weights[j] · BCE(σ(logits[j]), targets[j])`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if targets.len() != z.len() || weights.len() != z.len() {
            return Err(Error::shape(
                "bce_with_logits",
                format!(
                    "{} logits, {} targets, {} weights",
                    z.len(),
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let n = z.len() as f64;
        let loss = z
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&zi, &t), &w)| w * (t * softplus(-zi) + (1.0 - t) * softplus(zi)))
            .sum::<f64>()
            / n;
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns one gradient per registered parameter; parameters the loss does
    /// not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let param_ids: HashSet<usize> = self.params.iter().map(|(_, v)| v.0).collect();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    op: "backward",
                });
            }
            if matches!(node.op, Op::Leaf) {
                if param_ids.contains(&i) {
                    grads[i] = Some(g);
                }
                continue;
            }
            self.backprop_node(node, &g, &mut grads)?;
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let shape = self.shape(*v).to_vec();
            let data = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
            out.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(out)
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims2(*a);
                let p = self.value(*b).shape()[1];
                if let Some(ga) = self.grad_slot(grads, *a) {
                    matmul_nt_acc(g, self.value(*b).data(), ga, n, p, k);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    matmul_tn_acc(self.value(*a).data(), g, gb, n, k, p);
                }
            }
            Op::MatMulNt(a, b) => {
                let (n, k) = self.dims2(*a);
                let m = self.value(*b).rows();
                if let Some(ga) = self.grad_slot(grads, *a) {
                    matmul_acc(g, self.value(*b).data(), ga, n, m, k);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    matmul_tn_acc(g, self.value(*a).data(), gb, n, m, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.grad_slot(grads, *v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.grad_slot(grads, *bias) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let bv = self.value(*b).data();
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    let av = self.value(*a).data();
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let cols = node.value.cols();
                    for ((grow, yrow), gxrow) in
                        g.chunks(cols).zip(out.chunks(cols)).zip(gx.chunks_mut(cols))
                    {
                        let s = dot(grow, yrow);
                        for ((gxi, gi), yi) in gxrow.iter_mut().zip(grow).zip(yrow) {
                            *gxi += yi * (gi - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let cols = node.value.cols();
                    for ((grow, yrow), gxrow) in
                        g.chunks(cols).zip(out.chunks(cols)).zip(gx.chunks_mut(cols))
                    {
                        let s: f64 = grow.iter().sum();
                        for ((gxi, gi), yi) in gxrow.iter_mut().zip(grow).zip(yrow) {
                            *gxi += gi - yi.exp() * s;
                        }
                    }
                }
            }
            Op::Log(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let xv = self.value(*x).data();
                    for ((a, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        *a += gi / xi;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((a, gi), y) in gx.iter_mut().zip(g).zip(out) {
                        *a += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let xv = self.value(*x).data();
                    for ((a, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        *a += gi * gelu_grad(*xi);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let xv = self.value(*x).data();
                    for ((a, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *a += gi;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = node.value.cols();
                if let Some(gg) = self.grad_slot(grads, *gain) {
                    for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((a, gi), hi) in gg.iter_mut().zip(grow).zip(hrow) {
                            *a += gi * hi;
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *bias) {
                    for grow in g.chunks(cols) {
                        gb.iter_mut().zip(grow).for_each(|(a, b)| *a += b);
                    }
                }
                let gain_v = self.value(*gain).data().to_vec();
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let n = cols as f64;
                    for (r, ((grow, hrow), gxrow)) in g
                        .chunks(cols)
                        .zip(xhat.chunks(cols))
                        .zip(gx.chunks_mut(cols))
                        .enumerate()
                    {
                        let dh: Vec<f64> = grow.iter().zip(&gain_v).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dot(&dh, hrow) / n;
                        for ((a, d), h) in gxrow.iter_mut().zip(&dh).zip(hrow) {
                            *a += rstd[r] * (d - mean_dh - h * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                if let Some(gt) = self.grad_slot(grads, *table) {
                    let cols = node.value.cols();
                    for (row, &id) in g.chunks(cols).zip(ids) {
                        let dst = &mut gt[id * cols..(id + 1) * cols];
                        dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let cols = node.value.cols();
                    let dst = &mut gx[start * cols..start * cols + g.len()];
                    dst.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let len = node.value.cols();
                    let cols = self.value(*x).cols();
                    for (r, row) in g.chunks(len).enumerate() {
                        let dst = &mut gx[r * cols + start..r * cols + start + len];
                        dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(a, b)| *a += b);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for (r, dst) in gp.chunks_mut(w).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let n = gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += g[0] / n);
                }
            }
            Op::Pick { x, idx } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let cols = self.value(*x).cols();
                    for (i, &j) in idx.iter().enumerate() {
                        gx[i * cols + j] += g[i];
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().zip(weights).for_each(|(a, w)| *a += g[0] * w);
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                if let Some(gz) = self.grad_slot(grads, *logits) {
                    let z = self.value(*logits).data();
                    let n = z.len() as f64;
                    for (i, a) in gz.iter_mut().enumerate() {
                        *a += g[0] * weights[i] * (sigmoid(z[i]) - targets[i]) / n;
                    }
                }
            }
        }
        Ok(())
    }
}
