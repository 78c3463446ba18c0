use std::collections::BTreeMap;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients of a scalar root with respect to every `requires_grad` leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<Var, Var>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<Var> {
        self.map.get(&leaf).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, Var)> + '_ {
        self.map.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Tape {
    /// Reverse pass from `root` to all `requires_grad` leaves.
    ///
    /// With `create_graph` the returned gradient nodes are recorded and can be
    /// differentiated again; otherwise they are constants.
    pub fn backward(&mut self, root: Var, create_graph: bool) -> Result<Gradients> {
        let leaves: Vec<Var> = (0..=root.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect();
        let grads = self.grad(root, &leaves, create_graph)?;
        Ok(Gradients {
            map: leaves.into_iter().zip(grads).collect(),
        })
    }

    /// Gradients of the scalar `root` with respect to each node in `wrt`.
    ///
    /// Nodes in `wrt` that `root` does not depend on, or that do not require
    /// grad, get a zero gradient.
    pub fn grad(&mut self, root: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let saved = self.recording;
        self.recording = create_graph;
        let out = self.grad_inner(root, wrt);
        self.recording = saved;
        out
    }

    fn grad_inner(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let n = root.0 + 1;
        // Restrict the sweep to nodes lying on a path from `wrt` to `root`.
        let mut relevant = vec![false; n];
        for w in wrt {
            if w.0 < n && self.nodes[w.0].requires_grad {
                relevant[w.0] = true;
            }
        }
        for i in 0..n {
            if relevant[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let mut hit = false;
            self.nodes[i].op.for_each_parent(|p| hit |= relevant[p.0]);
            relevant[i] = hit;
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if relevant[root.0] {
            let shape = self.value(root).shape().to_vec();
            grads[root.0] = Some(self.constant(Tensor::filled(&shape, 1.0))?);
        }
        for i in (0..n).rev() {
            if !relevant[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            self.propagate(Var(i), &op, g, &relevant, &mut grads)?;
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.value(w).shape().to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect()
    }

    fn accumulate(&mut self, grads: &mut [Option<Var>], relevant: &[bool], target: Var, contribution: Var) -> Result<()> {
        if !relevant[target.0] {
            return Ok(());
        }
        grads[target.0] = Some(match grads[target.0] {
            None => contribution,
            Some(acc) => self.add(acc, contribution)?,
        });
        Ok(())
    }

    fn propagate(&mut self, y: Var, op: &Op, g: Var, relevant: &[bool], grads: &mut [Option<Var>]) -> Result<()> {
        let wants = |v: Var| relevant[v.0];
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, relevant, *a, g)?;
                self.accumulate(grads, relevant, *b, g)?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, relevant, *a, g)?;
                if wants(*b) {
                    let nb = self.neg(g)?;
                    self.accumulate(grads, relevant, *b, nb)?;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let ga = self.mul(g, *b)?;
                    self.accumulate(grads, relevant, *a, ga)?;
                }
                if wants(*b) {
                    let gb = self.mul(g, *a)?;
                    self.accumulate(grads, relevant, *b, gb)?;
                }
            }
            Op::Scale(a, c) => {
                let ga = self.scale(g, *c)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::AddScalar(a) => self.accumulate(grads, relevant, *a, g)?,
            Op::Recip(a) => {
                // d(1/a) = -y^2
                let y2 = self.mul(y, y)?;
                let t = self.mul(g, y2)?;
                let ga = self.neg(t)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let bt = self.transpose(*b)?;
                    let ga = self.matmul(g, bt)?;
                    self.accumulate(grads, relevant, *a, ga)?;
                }
                if wants(*b) {
                    let at = self.transpose(*a)?;
                    let gb = self.matmul(at, g)?;
                    self.accumulate(grads, relevant, *b, gb)?;
                }
            }
            Op::Transpose(a) => {
                let ga = self.transpose(g)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Tanh(a) => {
                let y2 = self.mul(y, y)?;
                let d = self.scale(y2, -1.0)?;
                let d = self.add_scalar(d, 1.0)?;
                let ga = self.mul(g, d)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let one_minus = self.scale(y, -1.0)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(y, one_minus)?;
                let ga = self.mul(g, d)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask)?;
                let ga = self.mul(g, mask)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Exp(a) => {
                let ga = self.mul(g, y)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Log(a) => {
                let r = self.recip(*a)?;
                let ga = self.mul(g, r)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                let ga = self.expand(g, &shape)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Expand(a) => {
                let shape = self.value(*a).shape().to_vec();
                let s = self.sum(g)?;
                let ga = self.reshape(s, &shape)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                let ga = self.reshape(g, &shape)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::SumRows(a) => {
                let (m, _) = self.value(*a).dims2("sum_rows")?;
                let ga = self.broadcast_rows(g, m)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::SumCols(a) => {
                let (_, n) = self.value(*a).dims2("sum_cols")?;
                let ga = self.broadcast_cols(g, n)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::BroadcastRows(a) => {
                let ga = self.sum_rows(g)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::BroadcastCols(a) => {
                let ga = self.sum_cols(g)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::IndexRows(a, ids) => {
                let (m, _) = self.value(*a).dims2("index_rows")?;
                let ga = self.scatter_rows(g, ids, m)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::ScatterRows(a, ids) => {
                let ga = self.index_rows(g, ids)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (m, _) = self.value(p).dims2("concat_rows")?;
                    if wants(p) {
                        let ids: Vec<usize> = (offset..offset + m).collect();
                        let gp = self.index_rows(g, &ids)?;
                        self.accumulate(grads, relevant, p, gp)?;
                    }
                    offset += m;
                }
            }
            Op::Softmax(a) => {
                // dx = y * (g - rowsum(g * y))
                let (_, n) = self.value(y).dims2("softmax")?;
                let gy = self.mul(g, y)?;
                let s = self.sum_cols(gy)?;
                let s = self.broadcast_cols(s, n)?;
                let d = self.sub(g, s)?;
                let ga = self.mul(y, d)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax(x) * rowsum(g)
                let (_, n) = self.value(y).dims2("log_softmax")?;
                let p = self.exp(y)?;
                let s = self.sum_cols(g)?;
                let s = self.broadcast_cols(s, n)?;
                let ps = self.mul(p, s)?;
                let ga = self.sub(g, ps)?;
                self.accumulate(grads, relevant, *a, ga)?;
            }
        }
        Ok(())
    }
}
