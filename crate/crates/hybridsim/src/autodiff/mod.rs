//! Reverse-mode automatic differentiation over dense real arrays.
//!
//! A [`Tape`] records every operation of a forward pass as an append-only
//! sequence of nodes, so inputs always precede their consumers and a single
//! reverse sweep propagates gradients. Each node is one (value, grad, op)
//! record; storage is structure-of-arrays so the backward sweep can borrow
//! values immutably while accumulating input gradients, and [`Tape::clear`]
//! recycles buffers for the next rollout. The primitive set is exactly what
//! the recurrent models need: elementwise arithmetic, matrix-vector and
//! bilinear products, concat/slice plumbing, the usual nonlinearities,
//! reductions, and fused diagonal-Gaussian log-density / KL ops with
//! hand-derived gradients (composing them from exp/log is unstable for
//! small sigma).
//!
//! Everything is `f64`; the networks here are tiny, so precision wins over
//! speed. Tapes are single-threaded; run one tape per batch element and
//! reduce gradients in a fixed order for reproducibility.

mod check;
mod tensor;

pub use check::{grad_check, grad_check_parallel};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("slice [{start}, {start}+{len}) out of bounds for vector of length {input}")]
    SliceOutOfBounds { start: usize, len: usize, input: usize },
    #[error("non-finite value while probing leaf {leaf} coordinate {coord}")]
    ProbeFailure { leaf: usize, coord: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Index of a node on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatVec(NodeId, NodeId),
    Bilinear(NodeId, NodeId, NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    GaussLogPdf { x: NodeId, mean: NodeId, std: NodeId },
    KlDiag { mean_q: NodeId, std_q: NodeId, mean_p: NodeId, std_p: NodeId },
}

/// Append-only differentiation graph with recycled buffers.
#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    spare: Vec<Vec<f64>>,
}

const LN_2PI: f64 = 1.8378770664093453;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Drop all nodes but keep their buffers for reuse.
    pub fn clear(&mut self) {
        self.ops.clear();
        for t in self.values.drain(..).chain(self.grads.drain(..)) {
            self.spare.push(t.into_data());
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    fn buf(&mut self, n: usize) -> Vec<f64> {
        match self.spare.pop() {
            Some(mut b) => {
                b.clear();
                b.reserve(n);
                b
            }
            None => Vec::with_capacity(n),
        }
    }

    fn buf_zeroed(&mut self, n: usize) -> Vec<f64> {
        let mut b = self.buf(n);
        b.resize(n, 0.0);
        b
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let gbuf = self.buf_zeroed(value.len());
        self.grads.push(Tensor::new(value.shape().to_vec(), gbuf));
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    /// Register an input (or constant). Leaves are where gradients land.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf from a slice, reusing recycled storage.
    pub fn leaf_slice(&mut self, data: &[f64]) -> NodeId {
        let mut b = self.buf(data.len());
        b.extend_from_slice(data);
        self.push(Tensor::vector(b), Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf_slice(&[v])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), DiffError> {
        let (l, r) = (self.value(a).shape(), self.value(b).shape());
        if l != r {
            return Err(DiffError::ShapeMismatch { op, left: l.to_vec(), right: r.to_vec() });
        }
        Ok(())
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, DiffError> {
        self.same_shape(name, a, b)?;
        let n = self.value(a).len();
        let mut buf = self.buf(n);
        {
            let (av, bv) = (self.values[a.0].data(), self.values[b.0].data());
            buf.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, buf), op))
    }

    fn map_op(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let n = self.value(a).len();
        let mut buf = self.buf(n);
        buf.extend(self.values[a.0].data().iter().map(|&x| f(x)));
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, buf), op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_op("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_op("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_op("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_op(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_op(a, Op::AddScalar(a), |x| x + c)
    }

    /// `1 - x`, elementwise. Convenience used by gate updates.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Matrix (`[m, n]`) times vector (`[n]`).
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, DiffError> {
        let (ws, xs) = (self.value(w).shape(), self.value(x).shape());
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matvec",
                left: ws.to_vec(),
                right: xs.to_vec(),
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let mut buf = self.buf(m);
        {
            let wd = self.values[w.0].data();
            let xd = self.values[x.0].data();
            for i in 0..m {
                let row = &wd[i * n..(i + 1) * n];
                buf.push(row.iter().zip(xd).map(|(a, b)| a * b).sum());
            }
        }
        Ok(self.push(Tensor::vector(buf), Op::MatVec(w, x)))
    }

    /// Bilinear form: `out_k = sum_ij W[k,i,j] a_i b_j` with weight `[k, n1, n2]`.
    pub fn bilinear(&mut self, w: NodeId, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (ws, as_, bs) = (
            self.value(w).shape(),
            self.value(a).shape(),
            self.value(b).shape(),
        );
        if ws.len() != 3 || as_.len() != 1 || bs.len() != 1 || ws[1] != as_[0] || ws[2] != bs[0] {
            return Err(DiffError::ShapeMismatch {
                op: "bilinear",
                left: ws.to_vec(),
                right: vec![as_.first().copied().unwrap_or(0), bs.first().copied().unwrap_or(0)],
            });
        }
        let (k, n1, n2) = (ws[0], ws[1], ws[2]);
        let mut buf = self.buf(k);
        {
            let wd = self.values[w.0].data();
            let ad = self.values[a.0].data();
            let bd = self.values[b.0].data();
            for kk in 0..k {
                let mut acc = 0.0;
                for i in 0..n1 {
                    let base = kk * n1 * n2 + i * n2;
                    let ai = ad[i];
                    let row = &wd[base..base + n2];
                    acc += ai * row.iter().zip(bd).map(|(w, b)| w * b).sum::<f64>();
                }
                buf.push(acc);
            }
        }
        Ok(self.push(Tensor::vector(buf), Op::Bilinear(w, a, b)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let total: usize = parts.iter().map(|&p| self.value(p).len()).sum();
        let mut buf = self.buf(total);
        for &p in parts {
            let t = &self.values[p.0];
            if !t.is_vector() {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    left: t.shape().to_vec(),
                    right: vec![t.len()],
                });
            }
            buf.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(buf), Op::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
        let t = self.value(x);
        if !t.is_vector() || start + len > t.len() {
            return Err(DiffError::SliceOutOfBounds { start, len, input: t.len() });
        }
        let mut buf = self.buf(len);
        buf.extend_from_slice(&self.values[x.0].data()[start..start + len]);
        Ok(self.push(Tensor::vector(buf), Op::Slice(x, start)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, Op::Abs(a), f64::abs)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let mut buf = self.buf(1);
        buf.push(s);
        self.push(Tensor::vector(buf), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        let mut buf = self.buf(1);
        buf.push(s / n);
        self.push(Tensor::vector(buf), Op::Mean(a))
    }

    /// `log N(x; mean, diag(std^2))`, summed over dimensions. Fused for
    /// stability; gradients flow to all three arguments.
    pub fn gauss_logpdf(
        &mut self,
        x: NodeId,
        mean: NodeId,
        std: NodeId,
    ) -> Result<NodeId, DiffError> {
        self.same_shape("gauss_logpdf", x, mean)?;
        self.same_shape("gauss_logpdf", mean, std)?;
        let (xd, md, sd) = (
            self.values[x.0].data(),
            self.values[mean.0].data(),
            self.values[std.0].data(),
        );
        let mut acc = 0.0;
        for i in 0..xd.len() {
            let z = (xd[i] - md[i]) / sd[i];
            acc += -0.5 * LN_2PI - sd[i].ln() - 0.5 * z * z;
        }
        let mut buf = self.buf(1);
        buf.push(acc);
        Ok(self.push(Tensor::vector(buf), Op::GaussLogPdf { x, mean, std }))
    }

    /// `KL(N(mean_q, std_q^2) || N(mean_p, std_p^2))` for diagonal Gaussians,
    /// summed over dimensions.
    pub fn kl_diag(
        &mut self,
        mean_q: NodeId,
        std_q: NodeId,
        mean_p: NodeId,
        std_p: NodeId,
    ) -> Result<NodeId, DiffError> {
        self.same_shape("kl_diag", mean_q, std_q)?;
        self.same_shape("kl_diag", mean_q, mean_p)?;
        self.same_shape("kl_diag", mean_p, std_p)?;
        let mq = self.values[mean_q.0].data();
        let sq = self.values[std_q.0].data();
        let mp = self.values[mean_p.0].data();
        let sp = self.values[std_p.0].data();
        let mut acc = 0.0;
        for i in 0..mq.len() {
            let dm = mq[i] - mp[i];
            acc += (sp[i] / sq[i]).ln() + (sq[i] * sq[i] + dm * dm) / (2.0 * sp[i] * sp[i]) - 0.5;
        }
        let mut buf = self.buf(1);
        buf.push(acc);
        Ok(self.push(Tensor::vector(buf), Op::KlDiag { mean_q, std_q, mean_p, std_p }))
    }

    /// Propagate gradients from a scalar `root` back to every leaf.
    /// Gradients accumulate additively over fan-out; previous gradients on
    /// the tape are reset first.
    pub fn backward(&mut self, root: NodeId) -> Result<(), DiffError> {
        if self.value(root).len() != 1 {
            return Err(DiffError::NonScalarRoot(self.value(root).shape().to_vec()));
        }
        for g in &mut self.grads {
            g.fill(0.0);
        }
        self.grads[root.0].data_mut()[0] = 1.0;

        for idx in (0..=root.0).rev() {
            // inputs always precede the node, so split the gradient array at
            // idx: the node's own gradient sits in `tail`, all input
            // gradients in `head`
            let (head, tail) = self.grads.split_at_mut(idx);
            let go = tail[0].data();
            let values = &self.values;
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(head[a.0].data_mut(), go, 1.0);
                    axpy(head[b.0].data_mut(), go, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(head[a.0].data_mut(), go, 1.0);
                    axpy(head[b.0].data_mut(), go, -1.0);
                }
                Op::Mul(a, b) => {
                    mul_acc(head[a.0].data_mut(), go, values[b.0].data());
                    mul_acc(head[b.0].data_mut(), go, values[a.0].data());
                }
                Op::Scale(a, c) => axpy(head[a.0].data_mut(), go, *c),
                Op::AddScalar(a) => axpy(head[a.0].data_mut(), go, 1.0),
                Op::MatVec(w, x) => {
                    let s = values[w.0].shape();
                    let (m, n) = (s[0], s[1]);
                    let xv = values[x.0].data();
                    let wv = values[w.0].data();
                    {
                        let gw = head[w.0].data_mut();
                        for i in 0..m {
                            let gi = go[i];
                            let row = &mut gw[i * n..(i + 1) * n];
                            for (r, xj) in row.iter_mut().zip(xv) {
                                *r += gi * xj;
                            }
                        }
                    }
                    {
                        let gx = head[x.0].data_mut();
                        for i in 0..m {
                            let gi = go[i];
                            let row = &wv[i * n..(i + 1) * n];
                            for (g, wij) in gx.iter_mut().zip(row) {
                                *g += gi * wij;
                            }
                        }
                    }
                }
                Op::Bilinear(w, a, b) => {
                    let s = values[w.0].shape();
                    let (k, n1, n2) = (s[0], s[1], s[2]);
                    let av = values[a.0].data();
                    let bv = values[b.0].data();
                    let wv = values[w.0].data();
                    {
                        let gw = head[w.0].data_mut();
                        for kk in 0..k {
                            let gk = go[kk];
                            for i in 0..n1 {
                                let base = kk * n1 * n2 + i * n2;
                                let gai = gk * av[i];
                                let row = &mut gw[base..base + n2];
                                for (r, bj) in row.iter_mut().zip(bv) {
                                    *r += gai * bj;
                                }
                            }
                        }
                    }
                    {
                        let ga = head[a.0].data_mut();
                        for kk in 0..k {
                            let gk = go[kk];
                            for i in 0..n1 {
                                let base = kk * n1 * n2 + i * n2;
                                let row = &wv[base..base + n2];
                                ga[i] += gk * row.iter().zip(bv).map(|(w, b)| w * b).sum::<f64>();
                            }
                        }
                    }
                    {
                        let gb = head[b.0].data_mut();
                        for kk in 0..k {
                            let gk = go[kk];
                            for i in 0..n1 {
                                let base = kk * n1 * n2 + i * n2;
                                let gai = gk * av[i];
                                let row = &wv[base..base + n2];
                                for (g, wij) in gb.iter_mut().zip(row) {
                                    *g += gai * wij;
                                }
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let gp = head[p.0].data_mut();
                        let len = gp.len();
                        axpy(gp, &go[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::Slice(x, start) => {
                    let gx = head[x.0].data_mut();
                    axpy(&mut gx[*start..*start + go.len()], go, 1.0);
                }
                Op::Tanh(a) => {
                    let out = values[idx].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..out.len() {
                        ga[i] += go[i] * (1.0 - out[i] * out[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let out = values[idx].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..out.len() {
                        ga[i] += go[i] * out[i] * (1.0 - out[i]);
                    }
                }
                Op::Softplus(a) => {
                    let inp = values[a.0].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..inp.len() {
                        ga[i] += go[i] * sigmoid(inp[i]);
                    }
                }
                Op::Exp(a) => {
                    let out = values[idx].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..out.len() {
                        ga[i] += go[i] * out[i];
                    }
                }
                Op::Log(a) => {
                    let inp = values[a.0].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..inp.len() {
                        ga[i] += go[i] / inp[i];
                    }
                }
                Op::Square(a) => {
                    let inp = values[a.0].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..inp.len() {
                        ga[i] += go[i] * 2.0 * inp[i];
                    }
                }
                Op::Abs(a) => {
                    let inp = values[a.0].data();
                    let ga = head[a.0].data_mut();
                    for i in 0..inp.len() {
                        ga[i] += go[i] * sign(inp[i]);
                    }
                }
                Op::Sum(a) => {
                    let g = go[0];
                    for v in head[a.0].data_mut() {
                        *v += g;
                    }
                }
                Op::Mean(a) => {
                    let ga = head[a.0].data_mut();
                    let g = go[0] / ga.len() as f64;
                    for v in ga {
                        *v += g;
                    }
                }
                Op::GaussLogPdf { x, mean, std } => {
                    let g = go[0];
                    let xv = values[x.0].data();
                    let mv = values[mean.0].data();
                    let sv = values[std.0].data();
                    // x, mean, std may alias; accumulate one at a time
                    for i in 0..xv.len() {
                        let d = xv[i] - mv[i];
                        let s2 = sv[i] * sv[i];
                        head[x.0].data_mut()[i] += g * (-d / s2);
                    }
                    for i in 0..xv.len() {
                        let d = xv[i] - mv[i];
                        let s2 = sv[i] * sv[i];
                        head[mean.0].data_mut()[i] += g * (d / s2);
                    }
                    for i in 0..xv.len() {
                        let d = xv[i] - mv[i];
                        let s2 = sv[i] * sv[i];
                        head[std.0].data_mut()[i] += g * (-1.0 / sv[i] + d * d / (s2 * sv[i]));
                    }
                }
                Op::KlDiag { mean_q, std_q, mean_p, std_p } => {
                    let g = go[0];
                    let mq = values[mean_q.0].data();
                    let sq = values[std_q.0].data();
                    let mp = values[mean_p.0].data();
                    let sp = values[std_p.0].data();
                    for i in 0..mq.len() {
                        let dm = mq[i] - mp[i];
                        let sp2 = sp[i] * sp[i];
                        head[mean_q.0].data_mut()[i] += g * (dm / sp2);
                    }
                    for i in 0..mq.len() {
                        let dm = mq[i] - mp[i];
                        let sp2 = sp[i] * sp[i];
                        head[mean_p.0].data_mut()[i] += g * (-dm / sp2);
                    }
                    for i in 0..mq.len() {
                        let sp2 = sp[i] * sp[i];
                        head[std_q.0].data_mut()[i] += g * (-1.0 / sq[i] + sq[i] / sp2);
                    }
                    for i in 0..mq.len() {
                        let dm = mq[i] - mp[i];
                        let sp2 = sp[i] * sp[i];
                        head[std_p.0].data_mut()[i] +=
                            g * (1.0 / sp[i] - (sq[i] * sq[i] + dm * dm) / (sp2 * sp[i]));
                    }
                }
            }
        }
        Ok(())
    }
}

fn axpy(acc: &mut [f64], src: &[f64], scale: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += scale * s;
    }
}

fn mul_acc(acc: &mut [f64], go: &[f64], other: &[f64]) {
    for i in 0..acc.len() {
        acc[i] += go[i] * other[i];
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.softplus(x);
        assert!((t.value(y).item() - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_symmetry_point() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).item(), 0.5);
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let mut t = Tape::new();
        let m = t.leaf(Tensor::vector(vec![0.0, 0.0]));
        let s = t.leaf(Tensor::vector(vec![1.0, 1.0]));
        let kl = t.kl_diag(m, s, m, s).unwrap();
        assert_eq!(t.value(kl).item(), 0.0);
    }

    #[test]
    fn kl_unit_mean_shift_is_half_per_dim() {
        let mut t = Tape::new();
        let mq = t.leaf(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let s = t.leaf(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let mp = t.leaf(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let kl = t.kl_diag(mq, s, mp, s).unwrap();
        assert!((t.value(kl).item() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn backward_square() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.square(x);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).item(), 6.0);
    }

    #[test]
    fn backward_kl_mean_shift() {
        // d/d mu of KL(N(mu,1) || N(0,1)) = mu
        let mut t = Tape::new();
        let mq = t.leaf(Tensor::vector(vec![1.0]));
        let s = t.leaf(Tensor::vector(vec![1.0]));
        let mp = t.leaf(Tensor::vector(vec![0.0]));
        let kl = t.kl_diag(mq, s, mp, s).unwrap();
        t.backward(kl).unwrap();
        assert!((t.grad(mq).data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_aliased_kl_inputs_cancel() {
        // KL(N(m,s) || N(m,s)) == 0 with gradients canceling exactly
        let mut t = Tape::new();
        let m = t.leaf(Tensor::vector(vec![0.7]));
        let s = t.leaf(Tensor::vector(vec![1.3]));
        let kl = t.kl_diag(m, s, m, s).unwrap();
        t.backward(kl).unwrap();
        assert_eq!(t.grad(m).data()[0], 0.0);
        assert!(t.grad(s).data()[0].abs() < 1e-15);
    }

    #[test]
    fn backward_sum_tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0; 5]));
        let y = t.tanh(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).data(), &[1.0; 5]);
    }

    #[test]
    fn backward_fanout_accumulates() {
        // y = x*x + x -> dy/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        let y = t.add(sq, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).item(), 7.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(DiffError::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::vector(vec![1.0]));
        let err = t.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[1]"), "{msg}");
    }

    #[test]
    fn matvec_matches_manual() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let x = t.leaf(Tensor::vector(vec![1.0, 0.5, -1.0]));
        let y = t.matvec(w, x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0 + 1.0 - 3.0, 4.0 + 2.5 - 6.0]);
    }

    #[test]
    fn concat_slice_round_trip_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::vector(vec![3.0]));
        let c = t.concat(&[a, b]).unwrap();
        let s = t.slice(c, 1, 2).unwrap();
        let total = t.sum(s);
        t.backward(total).unwrap();
        assert_eq!(t.grad(a).data(), &[0.0, 1.0]);
        assert_eq!(t.grad(b).data(), &[1.0]);
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.3, -0.7, 1.1]));
        let y = t.tanh(x);
        let z = t.square(y);
        let s = t.sum(z);
        t.backward(s).unwrap();
        let g1 = t.grad(x).data().to_vec();
        t.backward(s).unwrap();
        assert_eq!(g1, t.grad(x).data());
    }

    #[test]
    fn cleared_tape_reuses_buffers_and_computes_identically() {
        let mut t = Tape::new();
        let run = |t: &mut Tape| {
            let x = t.leaf(Tensor::vector(vec![0.5, -1.5]));
            let y = t.tanh(x);
            let s = t.sum(y);
            t.backward(s).unwrap();
            (t.value(s).item(), t.grad(x).data().to_vec())
        };
        let first = run(&mut t);
        t.clear();
        assert!(t.is_empty());
        let second = run(&mut t);
        assert_eq!(first, second);
    }
}
