//! Adam with bias correction and the step-decay learning-rate schedule.

use super::{NnError, ParamSet};
use crate::autodiff::Tensor;

/// First/second-moment accumulators aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Rejects the whole step if any
/// gradient entry is non-finite, naming the offending parameter.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    if grads.len() != params.len() {
        return Err(NnError::GradCount { got: grads.len(), want: params.len() });
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.all_finite() {
            return Err(NnError::NonFiniteGrad(params.name(super::ParamId(i)).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..grads.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.tensors_mut()[i].data_mut();
        for j in 0..g.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Step decay: `base_lr * factor^floor(iteration / decay_every)`.
pub fn lr_schedule(base_lr: f64, iteration: u64, decay_every: u64, factor: f64) -> f64 {
    assert!(decay_every > 0, "decay_every must be positive");
    assert!(factor > 0.0 && factor <= 1.0, "factor must be in (0, 1]");
    base_lr * factor.powi((iteration / decay_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one_param(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor::scalar(v)).unwrap();
        ps
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // mhat = g, vhat = g^2 -> delta = -lr * g/(|g| + eps) ~ -lr
        let mut ps = one_param(1.0);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &[Tensor::scalar(2.0)], &mut st, 1e-3).unwrap();
        let theta = ps.tensors()[0].item();
        assert!((theta - (1.0 - 1e-3)).abs() < 1e-9, "theta = {theta}");
    }

    #[test]
    fn zero_grad_is_a_no_op() {
        let mut ps = one_param(0.7);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &[Tensor::scalar(0.0)], &mut st, 1e-3).unwrap();
        assert_eq!(ps.tensors()[0].item(), 0.7);
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(theta) = theta^2, grad = 2 theta
        let mut ps = one_param(1.0);
        let mut st = AdamState::new(&ps);
        let loss = |p: &ParamSet| p.tensors()[0].item().powi(2);
        let before = loss(&ps);
        for _ in 0..2 {
            let g = 2.0 * ps.tensors()[0].item();
            adam_step(&mut ps, &[Tensor::scalar(g)], &mut st, 1e-2).unwrap();
        }
        assert!(loss(&ps) < before);
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut ps = one_param(0.0);
        let mut st = AdamState::new(&ps);
        let err = adam_step(&mut ps, &[Tensor::scalar(f64::NAN)], &mut st, 1e-3).unwrap_err();
        assert!(err.to_string().contains("theta"));
        // the failed step must not mutate anything
        assert_eq!(ps.tensors()[0].item(), 0.0);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn schedule_matches_stated_decay() {
        assert_eq!(lr_schedule(1e-3, 0, 2500, 0.5), 1e-3);
        assert_eq!(lr_schedule(1e-3, 2500, 2500, 0.5), 5e-4);
        assert!((lr_schedule(1e-3, 9999, 2500, 0.5) - 1.25e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_non_increasing_and_piecewise_constant() {
        let mut prev = f64::INFINITY;
        for it in 0..10_000u64 {
            let lr = lr_schedule(1e-3, it, 2500, 0.5);
            assert!(lr <= prev);
            if it % 2500 != 0 {
                assert_eq!(lr, prev);
            }
            prev = lr;
        }
    }
}
