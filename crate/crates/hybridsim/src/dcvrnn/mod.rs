//! The decoupled conditional variational RNN: three independent recurrent
//! nets (prior, encoder, decoder) with separate hidden states, trained on a
//! per-step ELBO and sampled open loop through the prior.
//!
//! Per transition `t` the condition vector is
//! `u_t = [enc(s_0), enc(a_t), enc(s_hat_{t+1})]` where `s_hat` is the
//! analytical engine's open-loop rollout; the reconstruction target is the
//! state the transition produces, `x_t = enc(s_{t+1})`. Both are
//! standardized with the training-split statistics. The Neural ablation
//! zeroes the physics slot, which is the only difference between the Hybrid
//! and Neural predictors.
//!
//! A per-step Gaussian noise vector feeds the prior and encoder nets and
//! doubles as the reparameterization noise, so each decoupled net can sample
//! its latent without signals from the others. The decoder sees only the
//! latent features and its own hidden state; its standard deviation is fixed
//! to one in normalized units.

mod train;

pub use train::{train, TrainConfig, TrainResult};

use crate::autodiff::{DiffError, NodeId, Tape, Tensor};
use crate::nn::{
    load_params, save_params, Binding, BilinearLayer, GaussianHead, GruStack, LinearLayer, NnError,
    ParamSet,
};
use crate::physics::{Engine, PhysicsError};
use crate::types::{
    derive_seed, wrap_angle, CoreError, NormStats, Scenario, Trajectory, TrajectoryDistribution,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcvrnnError {
    #[error("non-finite loss at timestep {timestep}")]
    NonFiniteLoss { timestep: usize },
    #[error("KL term {value} negative at timestep {timestep}")]
    NegativeKl { timestep: usize, value: f64 },
    #[error("training diverged at iteration {iteration}: {msg}")]
    Diverged { iteration: u64, msg: String },
    #[error("delta parameterization requires physics conditioning")]
    DeltaNeedsPhysics,
    #[error("configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Architecture and behavior switches; serialized into the checkpoint
/// manifest so a model reloads exactly as constructed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcvrnnConfig {
    pub scenario: Scenario,
    pub latent: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// Decoder predicts a residual on top of the physics guess instead of
    /// the state directly.
    pub delta_mode: bool,
    /// When false the physics slot of every condition is zeroed (the Neural
    /// baseline's ablation).
    pub physics_conditioning: bool,
    /// L2 regularization weight in the loss.
    pub lambda: f64,
    /// Training truncates trajectories to this many transitions.
    pub max_seq_len: usize,
}

impl DcvrnnConfig {
    pub fn ball() -> Self {
        DcvrnnConfig {
            scenario: Scenario::Ball,
            latent: 4,
            gru_hidden: 16,
            gru_layers: 2,
            delta_mode: false,
            physics_conditioning: true,
            lambda: 1e-5,
            max_seq_len: 150,
        }
    }

    pub fn push() -> Self {
        DcvrnnConfig {
            scenario: Scenario::Push,
            latent: 16,
            gru_hidden: 16,
            gru_layers: 2,
            delta_mode: false,
            physics_conditioning: true,
            lambda: 1e-5,
            max_seq_len: 150,
        }
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.scenario.state_enc_dim() + self.scenario.action_enc_dim()
    }

    fn validate(&self) -> Result<(), DcvrnnError> {
        if self.delta_mode && !self.physics_conditioning {
            return Err(DcvrnnError::DeltaNeedsPhysics);
        }
        if self.latent == 0 || self.gru_hidden == 0 || self.gru_layers == 0 {
            return Err(DcvrnnError::BadConfig("zero-sized architecture".into()));
        }
        Ok(())
    }
}

/// Feature extractor stage: identity for the ball experiment, bilinear or
/// linear stacks with tanh for pushing.
#[derive(Debug, Clone)]
enum Extractor {
    Identity { dim: usize },
    /// Two bilinear layers applied as quadratic forms, each tanh-activated.
    BilinearTanh { l1: BilinearLayer, l2: BilinearLayer },
    LinearTanh { l: LinearLayer },
}

impl Extractor {
    fn out_dim(&self) -> usize {
        match self {
            Extractor::Identity { dim } => *dim,
            Extractor::BilinearTanh { l2, .. } => l2.out_dim,
            Extractor::LinearTanh { l } => l.out_dim,
        }
    }

    fn forward(&self, t: &mut Tape, b: &Binding, x: NodeId) -> Result<NodeId, DiffError> {
        match self {
            Extractor::Identity { .. } => Ok(x),
            Extractor::BilinearTanh { l1, l2 } => {
                let h = l1.forward_quadratic(t, b, x)?;
                let h = t.tanh(h);
                let h = l2.forward_quadratic(t, b, h)?;
                Ok(t.tanh(h))
            }
            Extractor::LinearTanh { l } => {
                let h = l.forward(t, b, x)?;
                Ok(t.tanh(h))
            }
        }
    }
}

/// Mean/std output nodes of a Gaussian head.
#[derive(Debug, Clone, Copy)]
pub struct GaussNodes {
    pub mean: NodeId,
    pub std: NodeId,
}

/// The decoupled conditional VRNN. The three recurrent nets share no
/// parameters and no hidden state; `phi_u` feeds the prior and encoder,
/// `phi_z` only the decoder.
#[derive(Debug, Clone)]
pub struct Dcvrnn {
    pub config: DcvrnnConfig,
    pub params: ParamSet,
    pub stats: NormStats,
    phi_x: Extractor,
    phi_u: Extractor,
    phi_z: Extractor,
    prior_rnn: GruStack,
    prior_head: GaussianHead,
    enc_rnn: GruStack,
    enc_head: GaussianHead,
    dec_rnn: GruStack,
    dec_head: GaussianHead,
}

impl Dcvrnn {
    /// Build a freshly initialized model. The same seed reproduces the same
    /// parameters.
    pub fn new(config: DcvrnnConfig, stats: NormStats, seed: u64) -> Result<Self, DcvrnnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let sc = config.scenario;
        let (sdim, cdim, latent) = (sc.state_enc_dim(), config.cond_dim(), config.latent);

        let (phi_x, phi_u, phi_z) = match sc {
            Scenario::Ball => (
                Extractor::Identity { dim: sdim },
                Extractor::Identity { dim: cdim },
                Extractor::Identity { dim: latent },
            ),
            Scenario::Push => (
                Extractor::BilinearTanh {
                    l1: BilinearLayer::new(&mut ps, "phi_x.b1", sdim, sdim, 32, &mut rng)?,
                    l2: BilinearLayer::new(&mut ps, "phi_x.b2", 32, 32, 16, &mut rng)?,
                },
                Extractor::BilinearTanh {
                    l1: BilinearLayer::new(&mut ps, "phi_u.b1", cdim, cdim, 32, &mut rng)?,
                    l2: BilinearLayer::new(&mut ps, "phi_u.b2", 32, 32, 16, &mut rng)?,
                },
                Extractor::LinearTanh {
                    l: LinearLayer::new(&mut ps, "phi_z.l", latent, 16, &mut rng)?,
                },
            ),
        };

        let hidden = config.gru_hidden;
        let layers = config.gru_layers;
        let prior_in = phi_u.out_dim() + latent;
        let enc_in = phi_x.out_dim() + phi_u.out_dim() + latent;
        let dec_in = phi_z.out_dim();

        let prior_rnn = GruStack::new(&mut ps, "prior.gru", prior_in, hidden, layers, &mut rng)?;
        let prior_head = GaussianHead::learned(&mut ps, "prior.head", hidden, latent, &mut rng)?;
        let enc_rnn = GruStack::new(&mut ps, "enc.gru", enc_in, hidden, layers, &mut rng)?;
        let enc_head = GaussianHead::learned(&mut ps, "enc.head", hidden, latent, &mut rng)?;
        let dec_rnn = GruStack::new(&mut ps, "dec.gru", dec_in, hidden, layers, &mut rng)?;
        let dec_head = GaussianHead::fixed_std(&mut ps, "dec.head", hidden, sdim, 1.0, &mut rng)?;

        Ok(Dcvrnn {
            config,
            params: ps,
            stats,
            phi_x,
            phi_u,
            phi_z,
            prior_rnn,
            prior_head,
            enc_rnn,
            enc_head,
            dec_rnn,
            dec_head,
        })
    }

    pub fn scenario(&self) -> Scenario {
        self.config.scenario
    }

    /// Zero all parameters of the decoder's mean layer (used by the
    /// zero-residual identity check).
    pub fn zero_decoder_mean(&mut self) {
        self.params.get_mut(self.dec_head.mean.weight).fill(0.0);
        self.params.get_mut(self.dec_head.mean.bias).fill(0.0);
    }

    /// Names of parameters belonging to the prior and decoder nets — the
    /// only nets [`Dcvrnn::sample`] may touch.
    pub fn generative_param_names(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|(n, _)| n.to_string())
            .filter(|n| {
                n.starts_with("prior.") || n.starts_with("dec.") || n.starts_with("phi_u.")
                    || n.starts_with("phi_z.")
            })
            .collect()
    }

    pub fn zero_hidden(&self, which: Net, t: &mut Tape) -> Vec<NodeId> {
        self.rnn(which).zero_hidden(t)
    }

    fn rnn(&self, which: Net) -> &GruStack {
        match which {
            Net::Prior => &self.prior_rnn,
            Net::Encoder => &self.enc_rnn,
            Net::Decoder => &self.dec_rnn,
        }
    }

    fn prior_step_inner(
        &self,
        t: &mut Tape,
        b: &Binding,
        phi_u_out: NodeId,
        eps: NodeId,
        hidden: &[NodeId],
    ) -> Result<(GaussNodes, NodeId, Vec<NodeId>), DcvrnnError> {
        let input = t.concat(&[phi_u_out, eps])?;
        let (out, hidden2) = self.prior_rnn.step(t, b, input, hidden)?;
        let (mean, std) = self.prior_head.forward(t, b, out)?;
        let z = reparameterize(t, mean, std, eps)?;
        Ok((GaussNodes { mean, std }, z, hidden2))
    }

    fn encode_step_inner(
        &self,
        t: &mut Tape,
        b: &Binding,
        phi_x_out: NodeId,
        phi_u_out: NodeId,
        eps: NodeId,
        hidden: &[NodeId],
    ) -> Result<(GaussNodes, NodeId, Vec<NodeId>), DcvrnnError> {
        let input = t.concat(&[phi_x_out, phi_u_out, eps])?;
        let (out, hidden2) = self.enc_rnn.step(t, b, input, hidden)?;
        let (mean, std) = self.enc_head.forward(t, b, out)?;
        let z = reparameterize(t, mean, std, eps)?;
        Ok((GaussNodes { mean, std }, z, hidden2))
    }

    /// One prior step: features of `u_t` and the noise drive the prior GRU;
    /// its head parameterizes `z_t`, sampled with the same noise.
    pub fn prior_step(
        &self,
        t: &mut Tape,
        b: &Binding,
        u_t: NodeId,
        eps: NodeId,
        hidden: &[NodeId],
    ) -> Result<(GaussNodes, NodeId, Vec<NodeId>), DcvrnnError> {
        let phi_u_out = self.phi_u.forward(t, b, u_t)?;
        self.prior_step_inner(t, b, phi_u_out, eps, hidden)
    }

    /// One posterior step conditioned on the observed `x_t` and `u_t`.
    pub fn encode_step(
        &self,
        t: &mut Tape,
        b: &Binding,
        x_t: NodeId,
        u_t: NodeId,
        eps: NodeId,
        hidden: &[NodeId],
    ) -> Result<(GaussNodes, NodeId, Vec<NodeId>), DcvrnnError> {
        let phi_x_out = self.phi_x.forward(t, b, x_t)?;
        let phi_u_out = self.phi_u.forward(t, b, u_t)?;
        self.encode_step_inner(t, b, phi_x_out, phi_u_out, eps, hidden)
    }

    /// One decoder step: consumes only the latent features and its own
    /// hidden state. The emitted std is the fixed identity value.
    pub fn decode_step(
        &self,
        t: &mut Tape,
        b: &Binding,
        z_t: NodeId,
        hidden: &[NodeId],
    ) -> Result<(GaussNodes, Vec<NodeId>), DcvrnnError> {
        let phi_z_out = self.phi_z.forward(t, b, z_t)?;
        let (out, hidden2) = self.dec_rnn.step(t, b, phi_z_out, hidden)?;
        let (mean, std) = self.dec_head.forward(t, b, out)?;
        Ok((GaussNodes { mean, std }, hidden2))
    }

    /// Negative ELBO of one normalized trajectory:
    /// `sum_t KL(posterior_t || prior_t) - sum_t log p(x_t | z_t)` plus
    /// `lambda * ||theta||^2`, with one reparameterized sample per step.
    ///
    /// `x_targets` are the normalized encoded states `s_1..s_T`, `conds` the
    /// matching condition sequence, and `eps` one noise vector per step.
    pub fn elbo_loss(
        &self,
        t: &mut Tape,
        b: &Binding,
        x_targets: &[Vec<f64>],
        conds: &Conditions,
        eps: &[Vec<f64>],
    ) -> Result<NodeId, DcvrnnError> {
        let horizon = x_targets.len();
        if conds.u.len() != horizon || eps.len() != horizon {
            return Err(DcvrnnError::BadConfig(format!(
                "targets/conditions/noise length mismatch: {} / {} / {}",
                horizon,
                conds.u.len(),
                eps.len()
            )));
        }
        if self.config.delta_mode && conds.physics_norm.len() != horizon {
            return Err(DcvrnnError::DeltaNeedsPhysics);
        }
        let mut h_prior = self.prior_rnn.zero_hidden(t);
        let mut h_enc = self.enc_rnn.zero_hidden(t);
        let mut h_dec = self.dec_rnn.zero_hidden(t);
        let mut loss = t.scalar(0.0);
        for k in 0..horizon {
            let u = t.leaf(Tensor::vector(conds.u[k].clone()));
            let x = t.leaf(Tensor::vector(x_targets[k].clone()));
            let e = t.leaf(Tensor::vector(eps[k].clone()));

            let phi_u_out = self.phi_u.forward(t, b, u)?;
            let phi_x_out = self.phi_x.forward(t, b, x)?;
            let (prior_g, _, hp) = self.prior_step_inner(t, b, phi_u_out, e, &h_prior)?;
            let (post_g, z, he) = self.encode_step_inner(t, b, phi_x_out, phi_u_out, e, &h_enc)?;
            let (dec_g, hd) = self.decode_step(t, b, z, &h_dec)?;
            h_prior = hp;
            h_enc = he;
            h_dec = hd;

            let kl = t.kl_diag(post_g.mean, post_g.std, prior_g.mean, prior_g.std)?;
            let kl_value = t.value(kl).item();
            if kl_value < -1e-9 {
                return Err(DcvrnnError::NegativeKl { timestep: k, value: kl_value });
            }
            let dec_mean = if self.config.delta_mode {
                let phys = t.leaf(Tensor::vector(conds.physics_norm[k].clone()));
                t.add(dec_g.mean, phys)?
            } else {
                dec_g.mean
            };
            let loglik = t.gauss_logpdf(x, dec_mean, dec_g.std)?;
            let step_term = t.sub(kl, loglik)?;
            loss = t.add(loss, step_term)?;
            if !t.value(loss).item().is_finite() {
                return Err(DcvrnnError::NonFiniteLoss { timestep: k });
            }
        }
        let l2 = b.l2(t)?;
        let reg = t.scale(l2, self.config.lambda);
        Ok(t.add(loss, reg)?)
    }

    /// Draw `n_samples` open-loop trajectories through the prior and
    /// decoder; the encoder is never touched. The returned trajectories are
    /// in raw state units with `s0` prepended.
    pub fn sample(
        &self,
        s0_raw: &[f64],
        actions: &[Vec<f64>],
        engine: Option<&Engine>,
        n_samples: usize,
        seed: u64,
    ) -> Result<TrajectoryDistribution, DcvrnnError> {
        let conds = build_conditions(
            &self.stats,
            self.config.scenario,
            s0_raw,
            actions,
            if self.config.physics_conditioning { engine } else { None },
        )?;
        self.sample_with_conditions(s0_raw, actions, &conds, n_samples, seed)
    }

    /// [`Dcvrnn::sample`] with a precomputed condition sequence.
    pub fn sample_with_conditions(
        &self,
        s0_raw: &[f64],
        actions: &[Vec<f64>],
        conds: &Conditions,
        n_samples: usize,
        seed: u64,
    ) -> Result<TrajectoryDistribution, DcvrnnError> {
        if n_samples == 0 {
            return Err(DcvrnnError::BadConfig("n_samples must be at least 1".into()));
        }
        if self.config.delta_mode && conds.physics_raw.len() != actions.len() {
            return Err(DcvrnnError::DeltaNeedsPhysics);
        }
        let sc = self.config.scenario;
        let horizon = actions.len();
        let dt = match sc {
            Scenario::Ball => 1.0 / 60.0,
            Scenario::Push => 0.05,
        };
        let dt = conds.dt.unwrap_or(dt);
        let mut samples = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let mut tape = Tape::new();
            let b = self.params.bind(&mut tape);
            let mut h_prior = self.prior_rnn.zero_hidden(&mut tape);
            let mut h_dec = self.dec_rnn.zero_hidden(&mut tape);
            let mut states = Vec::with_capacity(horizon + 1);
            states.push(s0_raw.to_vec());
            for k in 0..horizon {
                let eps_vals: Vec<f64> = (0..self.config.latent)
                    .map(|_| crate::data::standard_normal(&mut rng))
                    .collect();
                let u = tape.leaf(Tensor::vector(conds.u[k].clone()));
                let e = tape.leaf(Tensor::vector(eps_vals));
                let (_, z, hp) = self.prior_step(&mut tape, &b, u, e, &h_prior)?;
                let (dec_g, hd) = self.decode_step(&mut tape, &b, z, &h_dec)?;
                h_prior = hp;
                h_dec = hd;
                let mean = tape.value(dec_g.mean).data().to_vec();
                let raw = self.assemble_state(&mean, conds.physics_raw.get(k).map(|v| &v[..]))?;
                states.push(raw);
            }
            samples.push(Trajectory::new(dt, states, actions.to_vec())?);
        }
        Ok(TrajectoryDistribution::new(samples)?)
    }

    /// Convert a decoder mean (normalized units) into a raw state row.
    ///
    /// In delta mode the mean is a residual: scaled by the per-dimension
    /// training std and composed with the physics guess — additively for
    /// linear channels, and as a frame rotation by `atan2(r_sin, 1 + r_cos)`
    /// for the push angle channels, so a zero residual reproduces the guess
    /// exactly.
    fn assemble_state(
        &self,
        dec_mean: &[f64],
        physics_raw: Option<&[f64]>,
    ) -> Result<Vec<f64>, DcvrnnError> {
        let sc = self.config.scenario;
        if !self.config.delta_mode {
            let enc = self.stats.denorm_state(dec_mean);
            return Ok(sc.decode_state(&enc));
        }
        let phys = physics_raw.ok_or(DcvrnnError::DeltaNeedsPhysics)?;
        let resid: Vec<f64> = dec_mean
            .iter()
            .zip(&self.stats.state_std)
            .map(|(m, s)| m * s)
            .collect();
        match sc {
            Scenario::Ball => Ok(phys.iter().zip(&resid).map(|(p, r)| p + r).collect()),
            Scenario::Push => {
                let dtheta = resid[3].atan2(1.0 + resid[2]);
                Ok(vec![
                    phys[0] + resid[0],
                    phys[1] + resid[1],
                    wrap_angle(phys[2] + dtheta)?,
                ])
            }
        }
    }

    /// Persist parameters plus the manifest needed to rebuild this model.
    pub fn save(&self, path: &Path) -> Result<(), DcvrnnError> {
        let manifest = serde_json::json!({
            "kind": "dcvrnn",
            "config": self.config,
            "stats": self.stats,
        });
        Ok(save_params(path, &self.params, manifest)?)
    }

    pub fn load(path: &Path) -> Result<Self, DcvrnnError> {
        let (loaded, manifest) = load_params(path)?;
        let config: DcvrnnConfig = serde_json::from_value(manifest["config"].clone())
            .map_err(|e| DcvrnnError::Checkpoint(format!("bad config in manifest: {e}")))?;
        let stats: NormStats = serde_json::from_value(manifest["stats"].clone())
            .map_err(|e| DcvrnnError::Checkpoint(format!("bad stats in manifest: {e}")))?;
        let mut model = Dcvrnn::new(config, stats, 0)?;
        if loaded.len() != model.params.len() {
            return Err(DcvrnnError::Checkpoint(format!(
                "checkpoint has {} tensors, architecture needs {}",
                loaded.len(),
                model.params.len()
            )));
        }
        for (name, tensor) in loaded.iter() {
            let id = model
                .params
                .id_of(name)
                .ok_or_else(|| DcvrnnError::Checkpoint(format!("unknown tensor `{name}`")))?;
            if model.params.get(id).shape() != tensor.shape() {
                return Err(DcvrnnError::Checkpoint(format!("shape mismatch for `{name}`")));
            }
            *model.params.get_mut(id) = tensor.clone();
        }
        Ok(model)
    }
}

/// Which of the three decoupled nets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Prior,
    Encoder,
    Decoder,
}

fn reparameterize(
    t: &mut Tape,
    mean: NodeId,
    std: NodeId,
    eps: NodeId,
) -> Result<NodeId, DiffError> {
    let scaled = t.mul(eps, std)?;
    t.add(mean, scaled)
}

/// Condition sequence for one rollout: normalized `u_t` vectors plus the raw
/// and normalized physics guesses delta mode composes with. The physics
/// vectors are empty when the slot is ablated.
#[derive(Debug, Clone)]
pub struct Conditions {
    pub u: Vec<Vec<f64>>,
    pub physics_norm: Vec<Vec<f64>>,
    pub physics_raw: Vec<Vec<f64>>,
    pub dt: Option<f64>,
}

/// Assemble `u_t = [enc(s0), enc(a_t), enc(s_hat_{t+1})]` for every
/// transition, standardized with `stats`. Passing no engine fills the
/// physics slot with zeros (the Neural ablation); the rollout is computed
/// once, open loop from `s0`.
pub fn build_conditions(
    stats: &NormStats,
    scenario: Scenario,
    s0_raw: &[f64],
    actions: &[Vec<f64>],
    engine: Option<&Engine>,
) -> Result<Conditions, DcvrnnError> {
    let s0_norm = stats.norm_state(&scenario.encode_state(s0_raw));
    let sdim = scenario.state_enc_dim();
    let physics_states = match engine {
        Some(e) => Some(e.rollout_states(s0_raw, actions)?),
        None => None,
    };
    let mut u = Vec::with_capacity(actions.len());
    let mut physics_norm = Vec::new();
    let mut physics_raw = Vec::new();
    for (k, a) in actions.iter().enumerate() {
        let a_norm = stats.norm_action(&scenario.encode_action(a));
        let slot = match &physics_states {
            Some(states) => {
                let raw = &states[k + 1];
                let norm = stats.norm_state(&scenario.encode_state(raw));
                physics_raw.push(raw.clone());
                physics_norm.push(norm.clone());
                norm
            }
            None => vec![0.0; sdim],
        };
        let mut row = Vec::with_capacity(s0_norm.len() + a_norm.len() + slot.len());
        row.extend_from_slice(&s0_norm);
        row.extend_from_slice(&a_norm);
        row.extend_from_slice(&slot);
        u.push(row);
    }
    Ok(Conditions { u, physics_norm, physics_raw, dt: engine.map(|e| e.dt()) })
}
