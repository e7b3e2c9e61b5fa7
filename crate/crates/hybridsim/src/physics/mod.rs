//! Deterministic analytical engines for both scenarios: ballistic bouncing
//! ball and quasi-static planar pushing under the ellipsoidal limit surface.

mod ball;
mod push;

pub use ball::{ball_rollout, ball_step, BallParams};
pub use push::{
    push_motion_cone, push_rollout, push_step, push_step_with_c, PushParams, Twist,
};

use crate::types::{CoreError, PushAction, Scenario, Trajectory};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate contact geometry: {0}")]
    DegenerateContact(String),
    #[error("rollout needs at least one action/step")]
    EmptyActions,
    #[error("pusher speed {speed} exceeds configured max {max}")]
    SpeedLimit { speed: f64, max: f64 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// A scenario-tagged engine exposing the raw-row interface the condition
/// builder and dataset generator share.
#[derive(Debug, Clone)]
pub enum Engine {
    Ball(BallParams),
    Push(PushParams),
}

impl Engine {
    pub fn scenario(&self) -> Scenario {
        match self {
            Engine::Ball(_) => Scenario::Ball,
            Engine::Push(_) => Scenario::Push,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Engine::Ball(p) => p.dt,
            Engine::Push(p) => p.dt,
        }
    }

    /// Advance one step on raw state/action rows (see `types` for layouts).
    pub fn step_raw(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, PhysicsError> {
        match self {
            Engine::Ball(p) => {
                let s = ball_step(crate::types::BallState::from_raw(state), p);
                Ok(s.to_raw())
            }
            Engine::Push(p) => {
                let s = push_step(
                    crate::types::PushState::from_raw(state),
                    PushAction::from_raw(action),
                    p,
                )?;
                Ok(s.to_raw())
            }
        }
    }

    /// Open-loop rollout; returns all states `s_0..s_T` where
    /// `T = actions.len()`.
    pub fn rollout_states(
        &self,
        s0: &[f64],
        actions: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, PhysicsError> {
        if actions.is_empty() {
            return Err(PhysicsError::EmptyActions);
        }
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(s0.to_vec());
        for a in actions {
            let next = self.step_raw(states.last().unwrap(), a)?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn rollout(&self, s0: &[f64], actions: &[Vec<f64>]) -> Result<Trajectory, PhysicsError> {
        let states = self.rollout_states(s0, actions)?;
        Ok(Trajectory::new(self.dt(), states, actions.to_vec())?)
    }
}
