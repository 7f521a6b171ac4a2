//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` simply walks it in reverse.

use crate::error::{Error, Result};
use crate::tensor::{as_matrix, as_nchw, channel_offset_layout, conv2d_backward, gemm, sigmoid, ConvGeom, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Relu(Var),
    AddBias(Var, Var),
    AddChannel(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    ConcatCols(Var, Var),
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// A leaf that no gradient flows into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.record(out, Op::Scale(a, c), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).silu();
        self.record(out, Op::Silu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.record(out, Op::Relu(a), &[a])
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = self.value(x).add_bias(self.value(bias))?;
        Ok(self.record(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn add_channel(&mut self, x: Var, offset: Var) -> Result<Var> {
        let out = self.value(x).add_channel(self.value(offset))?;
        Ok(self.record(out, Op::AddChannel(x, offset), &[x, offset]))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = self.value(input).conv2d(self.value(kernel), stride, pad)?;
        Ok(self.record(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
            &[input, kernel],
        ))
    }

    /// Joins `[m×p]` and `[m×q]` into `[m×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = as_matrix(self.value(a), "concat lhs")?;
        let (m2, q) = as_matrix(self.value(b), "concat rhs")?;
        if m != m2 {
            return Err(Error::Dimension(format!("concat_cols: {m} rows vs {m2} rows")));
        }
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let mut values = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            values.extend_from_slice(&av[r * p..(r + 1) * p]);
            values.extend_from_slice(&bv[r * q..(r + 1) * q]);
        }
        let out = Tensor::new(vec![m, p + q], values)?;
        Ok(self.record(out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Scalar mean squared error.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(pred).mse(self.value(target))?);
        Ok(self.record(out, Op::Mse(pred, target), &[pred, target]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, Op::Sum(a), &[a])
    }

    /// Back-propagates from the scalar `root`, storing a gradient on every
    /// node that depends on a parameter. Earlier gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.clear_grad();
            if let (true, Some(g)) = (node.requires_grad, g) {
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.values();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(&self.nodes[a.0].value, "").expect("checked in forward");
                let n = self.nodes[b.0].value.shape()[1];
                if wants(a) {
                    // dA = dC · Bᵀ
                    let da = slot(grads, a, m * k);
                    gemm(m, n, k, g, false, val(b), true, da, true);
                }
                if wants(b) {
                    // dB = Aᵀ · dC
                    let db = slot(grads, b, k * n);
                    gemm(k, m, n, val(a), true, g, false, db, true);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(a, 1.0), (b, 1.0)] {
                    if wants(v) {
                        axpy(slot(grads, v, g.len()), sign, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(a, 1.0), (b, -1.0)] {
                    if wants(v) {
                        axpy(slot(grads, v, g.len()), sign, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if wants(v) {
                        let o = val(other);
                        let d = slot(grads, v, g.len());
                        for ((d, &g), &o) in d.iter_mut().zip(g).zip(o) {
                            *d += g * o;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    axpy(slot(grads, a, g.len()), c, g);
                }
            }
            Op::Silu(a) => {
                if wants(a) {
                    let x = val(a);
                    let d = slot(grads, a, g.len());
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(x) {
                        let s = sigmoid(x);
                        *d += g * s * (1.0 + x * (1.0 - s));
                    }
                }
            }
            Op::Relu(a) => {
                if wants(a) {
                    let x = val(a);
                    let d = slot(grads, a, g.len());
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(x) {
                        if x > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if wants(x) {
                    axpy(slot(grads, x, g.len()), 1.0, g);
                }
                if wants(bias) {
                    let n = self.nodes[bias.0].value.numel();
                    let db = slot(grads, bias, n);
                    for row in g.chunks(n) {
                        axpy(db, 1.0, row);
                    }
                }
            }
            Op::AddChannel(x, offset) => {
                if wants(x) {
                    axpy(slot(grads, x, g.len()), 1.0, g);
                }
                if wants(offset) {
                    let (n, c, h, w) = as_nchw(&self.nodes[x.0].value, "").expect("checked");
                    let off = &self.nodes[offset.0].value;
                    let per_sample = channel_offset_layout(off, n, c).expect("checked");
                    let d = slot(grads, offset, off.numel());
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * h * w;
                            let total: f64 = g[base..base + h * w].iter().sum();
                            d[if per_sample { s * c + ch } else { ch }] += total;
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let geom = ConvGeom::new(&self.nodes[input.0].value, &self.nodes[kernel.0].value, stride, pad)
                    .expect("checked in forward");
                let in_len = val(input).len();
                let k_len = val(kernel).len();
                // Two disjoint slots are needed at once; take them out of the table.
                let mut di = wants(input).then(|| take_slot(grads, input, in_len));
                let mut dk = wants(kernel).then(|| take_slot(grads, kernel, k_len));
                conv2d_backward(&geom, val(input), val(kernel), g, di.as_deref_mut(), dk.as_deref_mut());
                if let Some(di) = di {
                    grads[input.0] = Some(di);
                }
                if let Some(dk) = dk {
                    grads[kernel.0] = Some(dk);
                }
            }
            Op::ConcatCols(a, b) => {
                let p = self.nodes[a.0].value.shape()[1];
                let q = self.nodes[b.0].value.shape()[1];
                for (v, offset, width) in [(a, 0, p), (b, p, q)] {
                    if wants(v) {
                        let d = slot(grads, v, val(v).len());
                        for (dst, src) in d.chunks_mut(width).zip(g.chunks(p + q)) {
                            axpy(dst, 1.0, &src[offset..offset + width]);
                        }
                    }
                }
            }
            Op::Mse(pred, target) => {
                let p = val(pred);
                let t = val(target);
                let scale = 2.0 * g[0] / p.len() as f64;
                if wants(pred) {
                    let d = slot(grads, pred, p.len());
                    for ((d, &p), &t) in d.iter_mut().zip(p).zip(t) {
                        *d += scale * (p - t);
                    }
                }
                if wants(target) {
                    let d = slot(grads, target, t.len());
                    for ((d, &p), &t) in d.iter_mut().zip(p).zip(t) {
                        *d -= scale * (p - t);
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let d = slot(grads, a, val(a).len());
                    for d in d.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn take_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> Vec<f64> {
    grads[v.0].take().unwrap_or_else(|| vec![0.0; len])
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, &x) in dst.iter_mut().zip(x) {
        *d += a * x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(&[2], 3.0));
        let b = g.param(Tensor::full(&[2], 2.0));
        let c = g.mul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b), Some(&[3.0, 3.0][..]));
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full(&[1], 3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), Some(&[7.0][..]));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn forward_leaves_inputs_untouched() {
        let a = Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 4.0]]).unwrap();
        let mut g = Graph::new();
        let va = g.param(a.clone());
        let s = g.silu(va);
        let m = g.matmul(s, va).unwrap();
        let l = g.sum(m);
        g.backward(l).unwrap();
        assert_eq!(g.value(va).values(), a.values());
    }
}
