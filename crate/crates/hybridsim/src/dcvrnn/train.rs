//! Minibatch ELBO training with a step-decayed Adam schedule.
//!
//! Condition sequences and normalized targets are precomputed once per
//! trajectory (they never change across iterations); only the noise is
//! fresh, drawn from a counter-derived stream per (iteration, batch slot).
//! Per-element gradients are always reduced in batch-slot order, so the
//! parallel path is bit-identical to the sequential one.

use super::{build_conditions, Conditions, Dcvrnn, DcvrnnError};
use crate::autodiff::{Tape, Tensor};
use crate::nn::{adam_step, lr_schedule, AdamState};
use crate::physics::Engine;
use crate::types::{derive_seed, Dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub base_lr: f64,
    pub decay_every: u64,
    pub decay_factor: f64,
    pub seed: u64,
    /// Batch-element parallelism; 1 keeps everything on one thread.
    pub threads: usize,
    /// Print progress every this many iterations; 0 is silent.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 10_000,
            batch: 100,
            base_lr: 1e-3,
            decay_every: 2500,
            decay_factor: 0.5,
            seed: 0,
            threads: 1,
            log_every: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Mean batch loss per iteration.
    pub loss_curve: Vec<f64>,
}

struct Prepped {
    x_targets: Vec<Vec<f64>>,
    conds: Conditions,
}

/// Train `model` in place on a raw dataset. The engine is consulted only
/// when the model is configured for physics conditioning.
pub fn train(
    model: &mut Dcvrnn,
    dataset: &Dataset,
    engine: Option<&Engine>,
    cfg: &TrainConfig,
) -> Result<TrainResult, DcvrnnError> {
    if dataset.scenario != model.config.scenario {
        return Err(DcvrnnError::BadConfig(format!(
            "dataset scenario {:?} does not match model {:?}",
            dataset.scenario, model.config.scenario
        )));
    }
    if dataset.normalized {
        return Err(DcvrnnError::BadConfig(
            "train expects raw trajectories; normalization happens internally".into(),
        ));
    }
    if cfg.batch == 0 || cfg.iters == 0 {
        return Err(DcvrnnError::BadConfig("batch and iters must be positive".into()));
    }
    let engine_opt = if model.config.physics_conditioning {
        match engine {
            Some(e) => Some(e),
            None => {
                return Err(DcvrnnError::BadConfig(
                    "physics conditioning requested but no engine supplied".into(),
                ))
            }
        }
    } else {
        None
    };

    let sc = model.config.scenario;
    let prepped: Result<Vec<Prepped>, DcvrnnError> = dataset
        .trajectories
        .iter()
        .map(|traj| {
            let horizon = traj.horizon().min(model.config.max_seq_len);
            let actions = &traj.actions[..horizon];
            let conds =
                build_conditions(&model.stats, sc, &traj.states[0], actions, engine_opt)?;
            let x_targets = (1..=horizon)
                .map(|k| model.stats.norm_state(&sc.encode_state(&traj.states[k])))
                .collect();
            Ok(Prepped { x_targets, conds })
        })
        .collect();
    let prepped = prepped?;

    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| DcvrnnError::BadConfig(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut adam = AdamState::new(&model.params);
    let mut loss_curve = Vec::with_capacity(cfg.iters as usize);
    let mut seq_tape = Tape::new();

    for iter in 0..cfg.iters {
        let lr = lr_schedule(cfg.base_lr, iter, cfg.decay_every, cfg.decay_factor);
        let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, iter]));
        let picks: Vec<usize> = (0..cfg.batch)
            .map(|_| rand::Rng::gen_range(&mut batch_rng, 0..prepped.len()))
            .collect();

        let eval = |tape: &mut Tape, slot: usize| -> Result<(f64, Vec<Tensor>), DcvrnnError> {
            tape.clear();
            let p = &prepped[picks[slot]];
            let horizon = p.x_targets.len();
            let mut eps_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, iter, slot as u64]));
            let eps: Vec<Vec<f64>> = (0..horizon)
                .map(|_| {
                    (0..model.config.latent)
                        .map(|_| crate::data::standard_normal(&mut eps_rng))
                        .collect()
                })
                .collect();
            let binding = model.params.bind(tape);
            let loss = model.elbo_loss(tape, &binding, &p.x_targets, &p.conds, &eps)?;
            tape.backward(loss)?;
            Ok((tape.value(loss).item(), binding.grads(tape)))
        };

        let per_element: Result<Vec<(f64, Vec<Tensor>)>, DcvrnnError> = match &pool {
            Some(p) => p.install(|| {
                (0..cfg.batch)
                    .into_par_iter()
                    .map_init(Tape::new, |tape, slot| eval(tape, slot))
                    .collect()
            }),
            None => (0..cfg.batch).map(|slot| eval(&mut seq_tape, slot)).collect(),
        };
        let per_element = per_element.map_err(|e| DcvrnnError::Diverged {
            iteration: iter,
            msg: e.to_string(),
        })?;

        let mut mean_loss = 0.0;
        let mut grad_sum: Vec<Tensor> = model
            .params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        for (loss, grads) in &per_element {
            mean_loss += loss;
            for (acc, g) in grad_sum.iter_mut().zip(grads) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / cfg.batch as f64;
        mean_loss *= inv;
        for g in &mut grad_sum {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        if !mean_loss.is_finite() {
            return Err(DcvrnnError::Diverged {
                iteration: iter,
                msg: format!("batch loss {mean_loss}"),
            });
        }
        adam_step(&mut model.params, &grad_sum, &mut adam, lr).map_err(|e| {
            DcvrnnError::Diverged { iteration: iter, msg: e.to_string() }
        })?;
        loss_curve.push(mean_loss);
        if cfg.log_every > 0 && (iter + 1) % cfg.log_every == 0 {
            eprintln!("iter {:>6}  lr {:.2e}  loss {:.6}", iter + 1, lr, mean_loss);
        }
    }
    Ok(TrainResult { loss_curve })
}
