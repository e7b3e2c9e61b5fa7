//! The four predictor variants behind one interface: Zero (no movement),
//! Physics (deterministic analytical rollout), Neural (the stochastic net
//! with the physics slot ablated), and Hybrid (the same net with full
//! conditions). Neural and Hybrid differ only in that slot.

use crate::dcvrnn::{Dcvrnn, DcvrnnError};
use crate::physics::{Engine, PhysicsError};
use crate::types::{CoreError, Scenario, Trajectory, TrajectoryDistribution};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{kind:?} predictor needs a trained model")]
    MissingModel { kind: PredictorKind },
    #[error("{kind:?} predictor requires a model with physics_conditioning = {want}")]
    WrongConditioning { kind: PredictorKind, want: bool },
    #[error("model scenario {model:?} does not match engine scenario {engine:?}")]
    ScenarioMismatch { model: Scenario, engine: Scenario },
    #[error("empty action sequence")]
    EmptyActions,
    #[error("empty distribution")]
    EmptyDistribution,
    #[error(transparent)]
    Dcvrnn(#[from] DcvrnnError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Zero,
    Physics,
    Neural,
    Hybrid,
}

/// One predictor: an engine, and for the learned variants a trained model.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub engine: Engine,
    pub model: Option<Dcvrnn>,
}

impl Predictor {
    pub fn zero(engine: Engine) -> Self {
        Predictor { kind: PredictorKind::Zero, engine, model: None }
    }

    pub fn physics(engine: Engine) -> Self {
        Predictor { kind: PredictorKind::Physics, engine, model: None }
    }

    /// The Neural baseline: the model must have been trained with the
    /// physics slot zeroed.
    pub fn neural(engine: Engine, model: Dcvrnn) -> Result<Self, ModelError> {
        Self::learned(PredictorKind::Neural, engine, model, false)
    }

    /// The full Hybrid predictor: the model must consume physics conditions.
    pub fn hybrid(engine: Engine, model: Dcvrnn) -> Result<Self, ModelError> {
        Self::learned(PredictorKind::Hybrid, engine, model, true)
    }

    fn learned(
        kind: PredictorKind,
        engine: Engine,
        model: Dcvrnn,
        want_physics: bool,
    ) -> Result<Self, ModelError> {
        if model.scenario() != engine.scenario() {
            return Err(ModelError::ScenarioMismatch {
                model: model.scenario(),
                engine: engine.scenario(),
            });
        }
        if model.config.physics_conditioning != want_physics {
            return Err(ModelError::WrongConditioning { kind, want: want_physics });
        }
        Ok(Predictor { kind, engine, model: Some(model) })
    }

    pub fn scenario(&self) -> Scenario {
        self.engine.scenario()
    }

    /// Predicted trajectory distribution for one rollout, pure in
    /// `(self, s0, actions, n_samples, seed)`.
    pub fn predict(
        &self,
        s0: &[f64],
        actions: &[Vec<f64>],
        n_samples: usize,
        seed: u64,
    ) -> Result<TrajectoryDistribution, ModelError> {
        if actions.is_empty() {
            return Err(ModelError::EmptyActions);
        }
        match self.kind {
            PredictorKind::Zero => {
                let states = vec![s0.to_vec(); actions.len() + 1];
                let t = Trajectory::new(self.engine.dt(), states, actions.to_vec())?;
                Ok(TrajectoryDistribution::new(vec![t])?)
            }
            PredictorKind::Physics => {
                let t = self.engine.rollout(s0, actions)?;
                Ok(TrajectoryDistribution::new(vec![t])?)
            }
            PredictorKind::Neural | PredictorKind::Hybrid => {
                let model = self
                    .model
                    .as_ref()
                    .ok_or(ModelError::MissingModel { kind: self.kind })?;
                Ok(model.sample(s0, actions, Some(&self.engine), n_samples, seed)?)
            }
        }
    }
}

/// Per-timestep mean of a sample cloud; push angles are averaged circularly
/// (mean of cos/sin, then atan2). A single-sample distribution comes back
/// unchanged.
pub fn point_estimate(
    scenario: Scenario,
    dist: &TrajectoryDistribution,
) -> Result<Trajectory, ModelError> {
    let n = dist.n_samples();
    if n == 0 {
        return Err(ModelError::EmptyDistribution);
    }
    if n == 1 {
        return Ok(dist.samples[0].clone());
    }
    let len = dist.samples[0].states.len();
    let dim = dist.samples[0].states[0].len();
    let mut states = Vec::with_capacity(len);
    for k in 0..len {
        let state = match scenario {
            Scenario::Ball => {
                let mut acc = vec![0.0; dim];
                for s in &dist.samples {
                    for (a, v) in acc.iter_mut().zip(&s.states[k]) {
                        *a += v;
                    }
                }
                acc.iter().map(|v| v / n as f64).collect()
            }
            Scenario::Push => {
                let (mut x, mut y, mut c, mut s_) = (0.0, 0.0, 0.0, 0.0);
                for s in &dist.samples {
                    x += s.states[k][0];
                    y += s.states[k][1];
                    c += s.states[k][2].cos();
                    s_ += s.states[k][2].sin();
                }
                let inv = 1.0 / n as f64;
                vec![x * inv, y * inv, (s_ * inv).atan2(c * inv)]
            }
        };
        states.push(state);
    }
    Ok(Trajectory::new(dist.dt, states, dist.samples[0].actions.clone())?)
}
