//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Tape`]; node indices are the tape
//! order, so parents always precede children. Backward passes are expressed
//! with the same primitive operations, which means that a gradient computed
//! with `create_graph = true` is an ordinary node and can be differentiated
//! again. That is all the meta-gradient code needs for Hessian terms.

mod backward;

use std::sync::Arc;

pub use backward::Gradients;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    /// Position on the tape (its generation).
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Expand(Var),
    Reshape(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    IndexRows(Var, Arc<[usize]>),
    ScatterRows(Var, Arc<[usize]>),
    ConcatRows(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
}

impl Op {
    pub(crate) fn for_each_parent(&self, mut f: impl FnMut(Var)) {
        use Op::*;
        match self {
            Leaf | Constant => {}
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => {
                f(*a);
                f(*b);
            }
            Scale(a, _) | AddScalar(a) | Recip(a) | Transpose(a) | Tanh(a) | Sigmoid(a) | Relu(a)
            | Exp(a) | Log(a) | Sum(a) | SumRows(a) | SumCols(a) | Expand(a) | Reshape(a)
            | BroadcastRows(a) | BroadcastCols(a) | IndexRows(a, _) | ScatterRows(a, _)
            | Softmax(a) | LogSoftmax(a) => f(*a),
            ConcatRows(parts) => parts.iter().copied().for_each(f),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation tape.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
            check_finite: true,
        }
    }

    /// Enables or disables the NaN/Inf check applied to every produced value.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Number of nodes currently retained by the tape.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let op = if requires_grad { Op::Leaf } else { Op::Constant };
        self.push_checked("leaf", value, op, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::domain(name, "produced a non-finite value"));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        let mut requires_grad = false;
        if self.recording {
            op.for_each_parent(|p| requires_grad |= self.nodes[p.0].requires_grad);
        }
        let op = if requires_grad { op } else { Op::Constant };
        self.push_checked(name, value, op, requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().contains(&0.0) {
            return Err(Error::domain("recip", "division by zero"));
        }
        let v = self.value(a).map(|x| 1.0 / x);
        self.push("recip", v, Op::Recip(a))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let r = self.recip(b)?;
        self.mul(a, r)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push("transpose", v, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        if !v.is_finite() {
            return Err(Error::domain("exp", "overflow"));
        }
        self.push("exp", v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::domain("log", format!("argument {x} is not positive")));
        }
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `[m, n] -> [1, n]`
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_rows()?;
        self.push("sum_rows", v, Op::SumRows(a))
    }

    /// `[m, n] -> [m, 1]`
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_cols()?;
        self.push("sum_cols", v, Op::SumCols(a))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, _) = self.value(a).dims2("mean_rows")?;
        let s = self.sum_rows(a)?;
        self.scale(s, 1.0 / m as f64)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if src.numel() != 1 {
            return Err(Error::dim("expand", format!("source shape {:?} is not a scalar", src.shape())));
        }
        let v = Tensor::filled(shape, src.item());
        self.push("expand", v, Op::Expand(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let v = Tensor::new(shape.to_vec(), src.data().to_vec())?;
        self.push("reshape", v, Op::Reshape(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let v = self.value(a).broadcast_rows(rows)?;
        self.push("broadcast_rows", v, Op::BroadcastRows(a))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let v = self.value(a).broadcast_cols(cols)?;
        self.push("broadcast_cols", v, Op::BroadcastCols(a))
    }

    /// `a + r` with the row vector `r` added to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, _) = self.value(a).dims2("add_row")?;
        let b = self.broadcast_rows(r, m)?;
        self.add(a, b)
    }

    /// Row gather; doubles as embedding lookup.
    pub fn index_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let v = self.value(a).index_rows(ids)?;
        self.push("index_rows", v, Op::IndexRows(a, Arc::from(ids)))
    }

    pub fn scatter_rows(&mut self, a: Var, ids: &[usize], rows: usize) -> Result<Var> {
        let v = self.value(a).scatter_rows(ids, rows)?;
        self.push("scatter_rows", v, Op::ScatterRows(a, Arc::from(ids)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&values)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_rows()?;
        self.push("softmax", v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).log_softmax_rows()?;
        self.push("log_softmax", v, Op::LogSoftmax(a))
    }

    /// Mean cross-entropy of row-wise logits against integer targets.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != m {
            return Err(Error::dim(
                "cross_entropy",
                format!("{m} logit rows but {} targets", targets.len()),
            ));
        }
        let mut onehot = vec![0.0; m * n];
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::dim("cross_entropy", format!("target {t} out of range for {n} classes")));
            }
            onehot[i * n + t] = 1.0;
        }
        let mask = self.constant(Tensor::matrix(m, n, onehot)?)?;
        let logp = self.log_softmax(logits)?;
        let picked = self.mul(logp, mask)?;
        let total = self.sum(picked)?;
        self.scale(total, -1.0 / m as f64)
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }
}

/// Hessian-vector product of `loss_fn` at `params` by double backward.
///
/// `vector` is laid out as the concatenation of the flattened parameters.
pub fn hvp<F>(loss_fn: F, params: &[Tensor], vector: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let total: usize = params.iter().map(Tensor::numel).sum();
    if vector.len() != total {
        return Err(Error::dim(
            "hvp",
            format!("vector has {} entries, parameters have {total}", vector.len()),
        ));
    }
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.leaf(p.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.grad(loss, &vars, true)?;
    let mut offset = 0;
    let mut dot = None;
    for (g, p) in grads.iter().zip(params) {
        let chunk = Tensor::new(p.shape().to_vec(), vector[offset..offset + p.numel()].to_vec())?;
        offset += p.numel();
        let c = tape.constant(chunk)?;
        let term = tape.dot(*g, c)?;
        dot = Some(match dot {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let Some(dot) = dot else {
        return Ok(Vec::new());
    };
    let hv = tape.grad(dot, &vars, false)?;
    Ok(hv.iter().flat_map(|&h| tape.value(h).data().to_vec()).collect())
}
