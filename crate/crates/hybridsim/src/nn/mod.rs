//! Network building blocks on top of the tape: a named parameter store,
//! linear/bilinear/GRU layers, Gaussian output heads, and the optimizer.
//!
//! Parameters live in a [`ParamSet`] owned by the model. Each loss
//! evaluation binds them onto a fresh [`Tape`] as leaves ([`ParamSet::bind`]),
//! builds the graph, and reads gradients back through the [`Binding`] in
//! parameter order, so batch reduction order is fixed and reproducible.

mod checkpoint;
mod optim;

pub use checkpoint::{load_params, save_params, Checkpoint};
pub use optim::{adam_step, lr_schedule, AdamState};

use crate::autodiff::{DiffError, NodeId, Tape, Tensor};
use rand::Rng;
use std::collections::HashMap;
use thiserror::Error;

/// Gaussian heads never emit a std below this; keeps log-densities bounded.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite gradient for parameter `{0}`; aborting step")]
    NonFiniteGrad(String),
    #[error("gradient count {got} does not match parameter count {want}")]
    GradCount { got: usize, want: usize },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Index of a tensor in its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named collection of parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Register every parameter as a leaf on `tape`, in parameter order.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let nodes = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        Binding { nodes }
    }
}

/// Tape leaves for one [`ParamSet::bind`] call.
#[derive(Debug, Clone)]
pub struct Binding {
    nodes: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Gradients for all parameters, in parameter order. Call after
    /// `tape.backward`.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.nodes.iter().map(|&n| tape.grad(n).clone()).collect()
    }

    /// `sum_i theta_i^2` over every bound parameter.
    pub fn l2(&self, tape: &mut Tape) -> Result<NodeId, DiffError> {
        let mut acc = tape.scalar(0.0);
        for &n in &self.nodes {
            let sq = tape.square(n);
            let s = tape.sum(sq);
            acc = tape.add(acc, s)?;
        }
        Ok(acc)
    }
}

/// Draw a tensor with entries uniform in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
pub fn init_uniform<R: Rng>(rng: &mut R, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// `y = W x + b`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let weight = ps.add(&format!("{name}.weight"), init_uniform(rng, in_dim, &[out_dim, in_dim]))?;
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(LinearLayer { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, t: &mut Tape, b: &Binding, x: NodeId) -> Result<NodeId, DiffError> {
        let wx = t.matvec(b.node(self.weight), x)?;
        t.add(wx, b.node(self.bias))
    }
}

/// `y_k = sum_ij W[k,i,j] a_i b_j + bias_k`.
///
/// When an extractor has a single input the second argument is the input
/// itself (a quadratic form); see [`BilinearLayer::forward_quadratic`].
#[derive(Debug, Clone)]
pub struct BilinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in1: usize,
    pub in2: usize,
    pub out_dim: usize,
}

impl BilinearLayer {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        in1: usize,
        in2: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let weight = ps.add(
            &format!("{name}.weight"),
            init_uniform(rng, in1 * in2, &[out_dim, in1, in2]),
        )?;
        let bias = ps.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(BilinearLayer { weight, bias, in1, in2, out_dim })
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        b: &Binding,
        a: NodeId,
        x: NodeId,
    ) -> Result<NodeId, DiffError> {
        let w = t.bilinear(b.node(self.weight), a, x)?;
        t.add(w, b.node(self.bias))
    }

    pub fn forward_quadratic(
        &self,
        t: &mut Tape,
        b: &Binding,
        x: NodeId,
    ) -> Result<NodeId, DiffError> {
        self.forward(t, b, x, x)
    }
}

/// One GRU cell. Gate convention:
/// `z = sigmoid(Wz [x,h] + bz)`, `r = sigmoid(Wr [x,h] + br)`,
/// `n = tanh(Wn [x, r*h] + bn)`, `h' = (1-z)*n + z*h`
/// (reset applied to the hidden state before the candidate matmul).
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wz: ParamId,
    pub wr: ParamId,
    pub wn: ParamId,
    pub bz: ParamId,
    pub br: ParamId,
    pub bn: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let fan = in_dim + hidden;
        let shape = [hidden, fan];
        Ok(GruCell {
            wz: ps.add(&format!("{name}.wz"), init_uniform(rng, fan, &shape))?,
            wr: ps.add(&format!("{name}.wr"), init_uniform(rng, fan, &shape))?,
            wn: ps.add(&format!("{name}.wn"), init_uniform(rng, fan, &shape))?,
            bz: ps.add(&format!("{name}.bz"), Tensor::zeros(&[hidden]))?,
            br: ps.add(&format!("{name}.br"), Tensor::zeros(&[hidden]))?,
            bn: ps.add(&format!("{name}.bn"), Tensor::zeros(&[hidden]))?,
            in_dim,
            hidden,
        })
    }

    pub fn step(
        &self,
        t: &mut Tape,
        b: &Binding,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId, DiffError> {
        let xh = t.concat(&[x, h])?;
        let za = t.matvec(b.node(self.wz), xh)?;
        let za = t.add(za, b.node(self.bz))?;
        let z = t.sigmoid(za);
        let ra = t.matvec(b.node(self.wr), xh)?;
        let ra = t.add(ra, b.node(self.br))?;
        let r = t.sigmoid(ra);
        let rh = t.mul(r, h)?;
        let xrh = t.concat(&[x, rh])?;
        let na = t.matvec(b.node(self.wn), xrh)?;
        let na = t.add(na, b.node(self.bn))?;
        let n = t.tanh(na);
        let omz = t.one_minus(z);
        let a = t.mul(omz, n)?;
        let c = t.mul(z, h)?;
        t.add(a, c)
    }
}

/// Stacked GRU cells; layer `l` consumes layer `l-1`'s new hidden state.
#[derive(Debug, Clone)]
pub struct GruStack {
    pub cells: Vec<GruCell>,
    pub hidden: usize,
}

impl GruStack {
    pub fn new<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let d = if l == 0 { in_dim } else { hidden };
            cells.push(GruCell::new(ps, &format!("{name}.l{l}"), d, hidden, rng)?);
        }
        Ok(GruStack { cells, hidden })
    }

    pub fn num_layers(&self) -> usize {
        self.cells.len()
    }

    /// Fresh all-zero hidden state (one leaf per layer).
    pub fn zero_hidden(&self, t: &mut Tape) -> Vec<NodeId> {
        self.cells.iter().map(|_| t.leaf(Tensor::zeros(&[self.hidden]))).collect()
    }

    /// Advance all layers one step; returns (top-layer output, new hidden).
    pub fn step(
        &self,
        t: &mut Tape,
        b: &Binding,
        input: NodeId,
        hidden: &[NodeId],
    ) -> Result<(NodeId, Vec<NodeId>), DiffError> {
        let mut x = input;
        let mut next = Vec::with_capacity(self.cells.len());
        for (cell, &h) in self.cells.iter().zip(hidden) {
            x = cell.step(t, b, x, h)?;
            next.push(x);
        }
        Ok((x, next))
    }
}

/// How a [`GaussianHead`] produces its standard deviation.
#[derive(Debug, Clone)]
pub enum StdHead {
    /// Parallel linear layer with softplus activation (plus [`STD_FLOOR`]).
    Learned(LinearLayer),
    /// Constant std, e.g. the decoder's identity std.
    Fixed(f64),
}

/// Mean layer plus std head mapping features to a diagonal Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianHead {
    pub mean: LinearLayer,
    pub std: StdHead,
    pub out_dim: usize,
}

impl GaussianHead {
    pub fn learned<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(GaussianHead {
            mean: LinearLayer::new(ps, &format!("{name}.mean"), in_dim, out_dim, rng)?,
            std: StdHead::Learned(LinearLayer::new(ps, &format!("{name}.std"), in_dim, out_dim, rng)?),
            out_dim,
        })
    }

    pub fn fixed_std<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        Ok(GaussianHead {
            mean: LinearLayer::new(ps, &format!("{name}.mean"), in_dim, out_dim, rng)?,
            std: StdHead::Fixed(std),
            out_dim,
        })
    }

    /// Returns `(mean, std)` nodes; std is strictly positive by construction.
    pub fn forward(
        &self,
        t: &mut Tape,
        b: &Binding,
        x: NodeId,
    ) -> Result<(NodeId, NodeId), DiffError> {
        let mean = self.mean.forward(t, b, x)?;
        let std = match &self.std {
            StdHead::Learned(layer) => {
                let raw = layer.forward(t, b, x)?;
                let sp = t.softplus(raw);
                t.add_scalar(sp, STD_FLOOR)
            }
            StdHead::Fixed(s) => t.leaf(Tensor::filled(&[self.out_dim], *s)),
        };
        Ok((mean, std))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_same_seed_identical_and_bounded() {
        let a = init_uniform(&mut rng(7), 16, &[8, 16]);
        let b = init_uniform(&mut rng(7), 16, &[8, 16]);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn bias_starts_at_zero() {
        let mut ps = ParamSet::new();
        let layer = LinearLayer::new(&mut ps, "lin", 3, 2, &mut rng(0)).unwrap();
        assert_eq!(ps.get(layer.bias).data(), &[0.0, 0.0]);
    }

    #[test]
    fn duplicate_param_name_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(ps.add("w", Tensor::scalar(1.0)), Err(NnError::DuplicateName(_))));
    }

    #[test]
    fn gru_zero_weights_halve_hidden() {
        // z = sigmoid(0) = 0.5, n = tanh(0) = 0 -> h' = 0.5 h
        let mut ps = ParamSet::new();
        let mut cell = GruCell::new(&mut ps, "g", 2, 3, &mut rng(1)).unwrap();
        for t in ps.tensors_mut() {
            t.fill(0.0);
        }
        let _ = &mut cell;
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(vec![0.4, -0.2]));
        let h = tape.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let h2 = cell.step(&mut tape, &b, x, h).unwrap();
        assert_eq!(tape.value(h2).data(), &[0.5, -1.0, 0.25]);
    }

    #[test]
    fn gru_zero_everything_is_fixed_point() {
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "g", 2, 3, &mut rng(1)).unwrap();
        for t in ps.tensors_mut() {
            t.fill(0.0);
        }
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[2]));
        let h = tape.leaf(Tensor::zeros(&[3]));
        let h2 = cell.step(&mut tape, &b, x, h).unwrap();
        assert_eq!(tape.value(h2).data(), &[0.0, 0.0, 0.0]);
    }

    /// Scalar re-implementation of the documented gate equations, kept
    /// independent of the tape so it can serve as an oracle.
    fn gru_scalar_oracle(
        ps: &ParamSet,
        cell: &GruCell,
        x: &[f64],
        h: &[f64],
    ) -> Vec<f64> {
        let hid = cell.hidden;
        let idim = cell.in_dim;
        let xh: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
        let gate = |w: &Tensor, bias: &Tensor, input: &[f64]| -> Vec<f64> {
            (0..hid)
                .map(|i| {
                    let row = &w.data()[i * (idim + hid)..(i + 1) * (idim + hid)];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias.data()[i]
                })
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z: Vec<f64> = gate(ps.get(cell.wz), ps.get(cell.bz), &xh).iter().map(|&v| sig(v)).collect();
        let r: Vec<f64> = gate(ps.get(cell.wr), ps.get(cell.br), &xh).iter().map(|&v| sig(v)).collect();
        let xrh: Vec<f64> = x
            .iter()
            .copied()
            .chain(r.iter().zip(h).map(|(ri, hi)| ri * hi))
            .collect();
        let n: Vec<f64> = gate(ps.get(cell.wn), ps.get(cell.bn), &xrh).iter().map(|&v| v.tanh()).collect();
        (0..hid).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect()
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        let mut r = rng(42);
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "g", 4, 5, &mut r).unwrap();
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let xn = tape.leaf(Tensor::vector(x.clone()));
        let hn = tape.leaf(Tensor::vector(h.clone()));
        let out = cell.step(&mut tape, &b, xn, hn).unwrap();

        let expect = gru_scalar_oracle(&ps, &cell, &x, &h);
        for (a, e) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn gaussian_head_std_is_positive() {
        let mut r = rng(3);
        let mut ps = ParamSet::new();
        let head = GaussianHead::learned(&mut ps, "h", 4, 2, &mut r).unwrap();
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let x = tape.leaf(Tensor::vector(vec![100.0, -100.0, 3.0, 0.0]));
        let (_, std) = head.forward(&mut tape, &b, x).unwrap();
        assert!(tape.value(std).data().iter().all(|&s| s >= STD_FLOOR));
    }

    #[test]
    fn binding_l2_sums_squares() {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        ps.add("b", Tensor::scalar(-3.0)).unwrap();
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape);
        let l2 = b.l2(&mut tape).unwrap();
        assert_eq!(tape.value(l2).item(), 14.0);
    }
}
