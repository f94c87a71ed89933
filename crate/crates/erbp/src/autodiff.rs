//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Operations are recorded at tensor granularity. A forward pass pushes nodes
//! onto the [`Tape`]; [`Tape::backward`] walks the tape in reverse and
//! accumulates gradients additively into each node's grad buffer. All
//! reductions run in a fixed sequential order so results are bitwise
//! deterministic for identical inputs.

use crate::{Error, Result};
use std::sync::Arc;

/// Dense row-major tensor of f64 values.
///
/// The buffer is shared copy-on-write: `clone` is a reference-count bump and
/// `data_mut` copies only if another handle is still alive. Training binds
/// every parameter onto a fresh tape per sample, so cheap clones matter.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dims("tensor construction", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; len]),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-d tensor, or the length of a 1-d tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-d tensor, or 1 for a 1-d tensor.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Slice(NodeId, usize),
    Concat(Vec<NodeId>),
    DeviationPenalty {
        x: NodeId,
        d: Option<Tensor>,
        offset: usize,
        len: usize,
        wsq: f64,
        wabs: f64,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation for reverse-mode differentiation.
///
/// Nodes are appended in topological order by construction; backward walks
/// them once in reverse. Gradients accumulate: running backward twice on the
/// same tape doubles every gradient.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        // Grad buffers are materialised by the first backward pass.
        self.nodes.push(Node {
            value,
            grad: Vec::new(),
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; gradients are still computed through it but it is not
    /// reported as a trainable parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Moves a node's grad buffer out of the tape, leaving it empty. Useful
    /// on per-sample tapes that are dropped right after backward.
    pub fn take_grad(&mut self, id: NodeId) -> Vec<f64> {
        std::mem::take(&mut self.nodes[id.0].grad)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Matrix product. Accepts `[r,k]·[k,c] -> [r,c]` and `[r,k]·[k] -> [r]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if ash.len() != 2 || bsh.is_empty() || ash[1] != bsh[0] {
            return Err(Error::dims("matmul", ash, bsh));
        }
        let (r, k) = (ash[0], ash[1]);
        let c = if bsh.len() == 2 { bsh[1] } else { 1 };
        let out_shape = if bsh.len() == 2 { vec![r, c] } else { vec![r] };
        let mut out = vec![0.0; r * c];
        {
            let ad = self.nodes[a.0].value.data();
            let bd = self.nodes[b.0].value.data();
            if c == 1 {
                // Matrix–vector: skip zero vector entries. One-hot encoded
                // windows make the right-hand side mostly zeros, and the
                // skipped terms contribute exactly 0.0 to the fixed-order
                // accumulation, so results are bitwise identical.
                let nz: Vec<(usize, f64)> = bd
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|&(_, v)| v != 0.0)
                    .collect();
                for (i, slot) in out.iter_mut().enumerate() {
                    let row = &ad[i * k..(i + 1) * k];
                    for &(kk, bv) in &nz {
                        *slot += row[kk] * bv;
                    }
                }
            } else {
                for i in 0..r {
                    for kk in 0..k {
                        let av = ad[i * k + kk];
                        for j in 0..c {
                            out[i * c + j] += av * bd[kk * c + j];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: Arc::new(out),
            },
            false,
            Op::Matmul(a, b),
        ))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        let (ash, bsh) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if ash != bsh {
            return Err(Error::dims(name, ash, bsh));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add")?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data: Arc::new(data) }, false, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub")?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data: Arc::new(data) }, false, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul")?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data: Arc::new(data) }, false, Op::Mul(a, b)))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].value.data().iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].value.shape.clone();
        self.push(Tensor { shape, data: Arc::new(data) }, false, op)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    /// Absolute value; backward uses sign(x) with subgradient 0 at x = 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), false, Op::Sum(a))
    }

    /// Contiguous slice `[start, start+len)` of the flat data, as a 1-d node.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let total = self.nodes[a.0].value.len();
        if start + len > total {
            return Err(Error::IndexOutOfRange {
                index: start + len,
                size: total,
            });
        }
        let data = self.nodes[a.0].value.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), false, Op::Slice(a, start)))
    }

    /// Concatenation of 1-d nodes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        Ok(self.push(Tensor::vector(data), false, Op::Concat(parts.to_vec())))
    }

    /// Scalar penalty `wsq·Σeⱼ² + wabs·Σ|eⱼ|` with `eⱼ = x[offset+j] − dⱼ`
    /// over a contiguous range of `x`'s flat data; `d = None` means a zero
    /// target. Fused into a single node so the per-sample tape carries no
    /// full-size intermediates; backward adds `g·(2·wsq·eⱼ + wabs·sign(eⱼ))`
    /// with subgradient 0 at eⱼ = 0, matching the composed-op formulation.
    pub fn deviation_penalty(
        &mut self,
        x: NodeId,
        d: Option<&Tensor>,
        offset: usize,
        len: usize,
        wsq: f64,
        wabs: f64,
    ) -> Result<NodeId> {
        let total = self.nodes[x.0].value.len();
        if offset + len > total {
            return Err(Error::IndexOutOfRange {
                index: offset + len,
                size: total,
            });
        }
        if let Some(d) = d {
            if d.len() != len {
                return Err(Error::dims("deviation penalty", &[len], d.shape()));
            }
        }
        let xd = self.nodes[x.0].value.data();
        let mut acc = 0.0;
        for j in 0..len {
            let e = xd[offset + j] - d.map_or(0.0, |d| d.data()[j]);
            acc += wsq * e * e + wabs * e.abs();
        }
        Ok(self.push(
            Tensor::scalar(acc),
            false,
            Op::DeviationPenalty {
                x,
                d: d.cloned(),
                offset,
                len,
                wsq,
                wabs,
            },
        ))
    }

    /// `-log softmax(logits)[target]`, computed with max-subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let data = self.nodes[logits.0].value.data();
        let k = data.len();
        if target >= k {
            return Err(Error::IndexOutOfRange {
                index: target,
                size: k,
            });
        }
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = data.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        let loss = -(probs[target].ln());
        Ok(self.push(
            Tensor::scalar(loss),
            false,
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Stable softmax probabilities without recording a backward rule.
    pub fn softmax_values(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Reverse pass from a scalar loss. Gradients of this call are first
    /// collected in a private adjoint buffer and then added into each node's
    /// persistent grad, so repeated calls accumulate.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[loss.0][0] = 1.0;
        // Nodes never reached from the loss keep an all-zero adjoint; the
        // flag lets both loops skip them without scanning their buffers.
        let mut touched = vec![false; self.nodes.len()];
        touched[loss.0] = true;

        for i in (0..=loss.0).rev() {
            if !touched[i] {
                continue;
            }
            // Take the node's adjoint out to satisfy the borrow checker.
            let g = std::mem::take(&mut adj[i]);
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    touched[a.0] = true;
                    touched[b.0] = true;
                    let ash = self.nodes[a.0].value.shape();
                    let (r, k) = (ash[0], ash[1]);
                    let c = self.nodes[i].value.len() / r;
                    let bd = self.nodes[b.0].value.data();
                    let ad = self.nodes[a.0].value.data();
                    // a.grad += g · bᵀ
                    if c == 1 {
                        // Matrix–vector fast path mirroring the forward op:
                        // zero entries of b contribute exactly 0.0.
                        for (kk, &bv) in bd.iter().enumerate() {
                            if bv == 0.0 {
                                continue;
                            }
                            for ii in 0..r {
                                adj[a.0][ii * k + kk] += g[ii] * bv;
                            }
                        }
                    } else {
                        for ii in 0..r {
                            for kk in 0..k {
                                let mut acc = 0.0;
                                for j in 0..c {
                                    acc += g[ii * c + j] * bd[kk * c + j];
                                }
                                adj[a.0][ii * k + kk] += acc;
                            }
                        }
                    }
                    // b.grad += aᵀ · g
                    for kk in 0..k {
                        for j in 0..c {
                            let mut acc = 0.0;
                            for ii in 0..r {
                                acc += ad[ii * k + kk] * g[ii * c + j];
                            }
                            adj[b.0][kk * c + j] += acc;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    touched[a.0] = true;
                    touched[b.0] = true;
                    for (j, &gj) in g.iter().enumerate() {
                        adj[a.0][j] += gj;
                        adj[b.0][j] += gj;
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    touched[a.0] = true;
                    touched[b.0] = true;
                    for (j, &gj) in g.iter().enumerate() {
                        adj[a.0][j] += gj;
                        adj[b.0][j] -= gj;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    touched[a.0] = true;
                    touched[b.0] = true;
                    for j in 0..g.len() {
                        let av = self.nodes[a.0].value.data()[j];
                        let bv = self.nodes[b.0].value.data()[j];
                        adj[a.0][j] += g[j] * bv;
                        adj[b.0][j] += g[j] * av;
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    touched[a.0] = true;
                    for j in 0..g.len() {
                        if self.nodes[a.0].value.data()[j] > 0.0 {
                            adj[a.0][j] += g[j];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    touched[a.0] = true;
                    for j in 0..g.len() {
                        let y = self.nodes[i].value.data()[j];
                        adj[a.0][j] += g[j] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    touched[a.0] = true;
                    for j in 0..g.len() {
                        let y = self.nodes[i].value.data()[j];
                        adj[a.0][j] += g[j] * y * (1.0 - y);
                    }
                }
                Op::Abs(a) => {
                    let a = *a;
                    touched[a.0] = true;
                    for j in 0..g.len() {
                        let x = self.nodes[a.0].value.data()[j];
                        adj[a.0][j] += g[j] * x.signum() * if x == 0.0 { 0.0 } else { 1.0 };
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    touched[a.0] = true;
                    for j in 0..g.len() {
                        adj[a.0][j] += g[j] * c;
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    touched[a.0] = true;
                    for slot in adj[a.0].iter_mut() {
                        *slot += g[0];
                    }
                }
                Op::Slice(a, start) => {
                    let (a, start) = (*a, *start);
                    touched[a.0] = true;
                    for (j, &gj) in g.iter().enumerate() {
                        adj[a.0][start + j] += gj;
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        touched[p.0] = true;
                        let len = self.nodes[p.0].value.len();
                        for j in 0..len {
                            adj[p.0][j] += g[offset + j];
                        }
                        offset += len;
                    }
                }
                Op::DeviationPenalty {
                    x,
                    d,
                    offset,
                    len,
                    wsq,
                    wabs,
                } => {
                    let (x, offset, len, wsq, wabs) = (*x, *offset, *len, *wsq, *wabs);
                    let d = d.clone();
                    touched[x.0] = true;
                    let g0 = g[0];
                    for j in 0..len {
                        let e = self.nodes[x.0].value.data()[offset + j]
                            - d.as_ref().map_or(0.0, |d| d.data()[j]);
                        let sgn = if e == 0.0 { 0.0 } else { e.signum() };
                        adj[x.0][offset + j] += g0 * (2.0 * wsq * e + wabs * sgn);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let (logits, target) = (*logits, *target);
                    touched[logits.0] = true;
                    let probs = probs.clone();
                    for (j, &p) in probs.iter().enumerate() {
                        let onehot = if j == target { 1.0 } else { 0.0 };
                        adj[logits.0][j] += g[0] * (p - onehot);
                    }
                }
            }
            // Put the adjoint back so the final accumulation sees it.
            adj[i] = g;
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if node.grad.is_empty() {
                // First backward pass over this node: the adjoint buffer
                // (all zeros when the node was never reached) becomes the
                // grad buffer outright.
                node.grad = a;
            } else {
                for (slot, g) in node.grad.iter_mut().zip(a) {
                    *slot += g;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences, the independent oracle for every gradcheck.
    fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        grad
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i2 = t.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = t.matmul(i2, a).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero_vector() {
        let mut t = Tape::new();
        let i2 = t.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let z = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let out = t.matmul(i2, z).unwrap();
        assert_eq!(t.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = t.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let av: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bv: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();

        // Loss = sum(A·B) as a scalar function of A's (then B's) entries.
        let loss_of = |av: &[f64], bv: &[f64]| -> f64 {
            let mut t = Tape::new();
            let a = t.leaf(Tensor::matrix(3, 4, av.to_vec()).unwrap());
            let b = t.leaf(Tensor::matrix(4, 2, bv.to_vec()).unwrap());
            let m = t.matmul(a, b).unwrap();
            let s = t.sum(m);
            t.value(s).data()[0]
        };

        let mut t = Tape::new();
        let a = t.param(Tensor::matrix(3, 4, av.clone()).unwrap());
        let b = t.param(Tensor::matrix(4, 2, bv.clone()).unwrap());
        let m = t.matmul(a, b).unwrap();
        let s = t.sum(m);
        t.backward(s).unwrap();

        let bv2 = bv.clone();
        let na = finite_diff(&|x: &[f64]| loss_of(x, &bv2), &av, 1e-5);
        let av2 = av.clone();
        let nb = finite_diff(&|x: &[f64]| loss_of(&av2, x), &bv, 1e-5);
        assert!(max_rel_err(t.grad(a), &na) <= 1e-6);
        assert!(max_rel_err(t.grad(b), &nb) <= 1e-6);
    }

    #[test]
    fn relu_and_abs_definitions() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);

        let a = t.leaf(Tensor::vector(vec![3.0]));
        let b = t.leaf(Tensor::vector(vec![5.0]));
        let d = t.sub(a, b).unwrap();
        let ad = t.abs(d);
        assert_eq!(t.value(ad).data(), &[2.0]);
    }

    #[test]
    fn abs_subgradient_zero_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![0.0]));
        let a = t.abs(x);
        let s = t.sum(a);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[0.0]);
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xv: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let loss_of = |x: &[f64]| -> f64 {
            let mut t = Tape::new();
            let xi = t.leaf(Tensor::vector(x.to_vec()));
            let y = t.tanh(xi);
            let s = t.sum(y);
            t.value(s).data()[0]
        };
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(xv.clone()));
        let y = t.tanh(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        let numeric = finite_diff(&loss_of, &xv, 1e-5);
        assert!(max_rel_err(t.grad(x), &numeric) <= 1e-6);
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::vector(vec![0.7; 4]));
        let l = t.softmax_cross_entropy(logits, 2).unwrap();
        assert_abs_diff_eq!(t.value(l).data()[0], 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::vector(vec![1000.0, 0.0]));
        let l = t.softmax_cross_entropy(logits, 0).unwrap();
        let v = t.value(l).data()[0];
        assert!(v.is_finite() && v.abs() < 1e-10, "loss = {v}");
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        assert!(t.softmax_cross_entropy(logits, 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target = 3;
        let mut t = Tape::new();
        let logits = t.param(Tensor::vector(xv.clone()));
        let l = t.softmax_cross_entropy(logits, target).unwrap();
        t.backward(l).unwrap();

        let probs = Tape::softmax_values(&xv);
        for (j, &g) in t.grad(logits).iter().enumerate() {
            let expected = probs[j] - if j == target { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
        }

        let loss_of = |x: &[f64]| -> f64 {
            let mut t = Tape::new();
            let xi = t.leaf(Tensor::vector(x.to_vec()));
            let l = t.softmax_cross_entropy(xi, target).unwrap();
            t.value(l).data()[0]
        };
        let numeric = finite_diff(&loss_of, &xv, 1e-5);
        assert!(max_rel_err(t.grad(logits), &numeric) <= 1e-6);
    }

    #[test]
    fn softmax_sums_to_one_and_loss_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let xv: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let probs = Tape::softmax_values(&xv);
            let s: f64 = probs.iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
            let mut t = Tape::new();
            let logits = t.leaf(Tensor::vector(xv));
            let l = t.softmax_cross_entropy(logits, 0).unwrap();
            assert!(t.value(l).data()[0] >= 0.0);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut t = Tape::new();
        let w = t.param(Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unused_parameter_keeps_zero_grad() {
        let mut t = Tape::new();
        let used = t.param(Tensor::vector(vec![1.0]));
        let unused = t.param(Tensor::vector(vec![1.0]));
        let s = t.sum(used);
        t.backward(s).unwrap();
        assert_eq!(t.grad(unused), &[0.0]);
    }

    #[test]
    fn backward_twice_doubles_gradients() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![2.0, -1.0]));
        let y = t.mul(w, w).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        let first = t.grad(w).to_vec();
        t.backward(s).unwrap();
        let second = t.grad(w).to_vec();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(w).is_err());
    }

    #[test]
    fn slice_and_concat_route_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let lo = t.slice(x, 0, 2).unwrap();
        let hi = t.slice(x, 2, 2).unwrap();
        let hi3 = t.scale(hi, 3.0);
        let cat = t.concat(&[lo, hi3]).unwrap();
        let s = t.sum(cat);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn composite_mlp_gradients_match_finite_differences() {
        // Two dense layers with tanh/relu plus cross entropy; the oracle
        // rebuilds the whole forward pass from flat parameter vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w1: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xv: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let forward = |w1: &[f64], b1: &[f64], w2: &[f64]| -> f64 {
            let mut t = Tape::new();
            let w1 = t.leaf(Tensor::matrix(4, 3, w1.to_vec()).unwrap());
            let b1 = t.leaf(Tensor::vector(b1.to_vec()));
            let w2 = t.leaf(Tensor::matrix(2, 4, w2.to_vec()).unwrap());
            let x = t.leaf(Tensor::vector(xv.clone()));
            let h = t.matmul(w1, x).unwrap();
            let h = t.add(h, b1).unwrap();
            let h = t.tanh(h);
            let logits = t.matmul(w2, h).unwrap();
            let l = t.softmax_cross_entropy(logits, 1).unwrap();
            t.value(l).data()[0]
        };

        let mut t = Tape::new();
        let w1n = t.param(Tensor::matrix(4, 3, w1.clone()).unwrap());
        let b1n = t.param(Tensor::vector(b1.clone()));
        let w2n = t.param(Tensor::matrix(2, 4, w2.clone()).unwrap());
        let x = t.leaf(Tensor::vector(xv.clone()));
        let h = t.matmul(w1n, x).unwrap();
        let h = t.add(h, b1n).unwrap();
        let h = t.tanh(h);
        let logits = t.matmul(w2n, h).unwrap();
        let l = t.softmax_cross_entropy(logits, 1).unwrap();
        t.backward(l).unwrap();

        let (b1c, w2c) = (b1.clone(), w2.clone());
        let n1 = finite_diff(&|v: &[f64]| forward(v, &b1c, &w2c), &w1, 1e-5);
        let (w1c, w2c2) = (w1.clone(), w2.clone());
        let n2 = finite_diff(&|v: &[f64]| forward(&w1c, v, &w2c2), &b1, 1e-5);
        let (w1c2, b1c2) = (w1.clone(), b1.clone());
        let n3 = finite_diff(&|v: &[f64]| forward(&w1c2, &b1c2, v), &w2, 1e-5);
        assert!(max_rel_err(t.grad(w1n), &n1) <= 1e-4);
        assert!(max_rel_err(t.grad(b1n), &n2) <= 1e-4);
        assert!(max_rel_err(t.grad(w2n), &n3) <= 1e-4);
    }

    #[test]
    fn elementwise_gradcheck_on_random_inputs() {
        // 100 random points per differentiable unary op, rel err <= 1e-4.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        type UnaryBuild = fn(&mut Tape, NodeId) -> NodeId;
        let ops: Vec<(&str, UnaryBuild)> = vec![
            ("relu", |t, x| t.relu(x)),
            ("tanh", |t, x| t.tanh(x)),
            ("sigmoid", |t, x| t.sigmoid(x)),
            ("abs", |t, x| t.abs(x)),
        ];
        for (name, build) in ops {
            for _ in 0..100 {
                let mut xv: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                // Keep kink points away from the finite-difference stencil.
                for v in xv.iter_mut() {
                    if v.abs() < 1e-3 {
                        *v += 0.01;
                    }
                }
                let loss_of = |x: &[f64]| -> f64 {
                    let mut t = Tape::new();
                    let xi = t.leaf(Tensor::vector(x.to_vec()));
                    let y = build(&mut t, xi);
                    let s = t.sum(y);
                    t.value(s).data()[0]
                };
                let mut t = Tape::new();
                let x = t.param(Tensor::vector(xv.clone()));
                let y = build(&mut t, x);
                let s = t.sum(y);
                t.backward(s).unwrap();
                let numeric = finite_diff(&loss_of, &xv, 1e-5);
                assert!(
                    max_rel_err(t.grad(x), &numeric) <= 1e-4,
                    "op {name} failed gradcheck"
                );
            }
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let av: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bv: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut t = Tape::new();
            let a = t.param(Tensor::matrix(2, 10, av.clone()).unwrap());
            let b = t.leaf(Tensor::vector(bv.clone()));
            let m = t.matmul(a, b).unwrap();
            let y = t.tanh(m);
            let s = t.sum(y);
            t.backward(s).unwrap();
            (t.value(s).data().to_vec(), t.grad(a).to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }
}
