//! Finite-difference verification of taped gradients.

use super::{DiffError, NodeId, Tape, Tensor};
use rayon::prelude::*;

/// Build a scalar function of several leaves on a fresh tape.
pub trait TapeFn: Sync {
    fn eval(&self, tape: &mut Tape, leaves: &[NodeId]) -> Result<NodeId, DiffError>;
}

impl<F> TapeFn for F
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError> + Sync,
{
    fn eval(&self, tape: &mut Tape, leaves: &[NodeId]) -> Result<NodeId, DiffError> {
        self(tape, leaves)
    }
}

/// Compare the taped gradient of `f` at `point` against central finite
/// differences with the given `step`.
///
/// Returns the max over all coordinates of
/// `|analytic - central| / max(1, |analytic|)`. Central differences assume
/// `f` is smooth near `point`; at a kink the reported error is large, which
/// is the intended failure mode (see the `abs` test below).
pub fn grad_check<F: TapeFn>(f: &F, point: &[Tensor], step: f64) -> Result<f64, DiffError> {
    let analytic = analytic_grads(f, point)?;
    let mut worst: f64 = 0.0;
    for (li, t) in point.iter().enumerate() {
        for ci in 0..t.len() {
            let err = coord_error(f, point, step, &analytic, li, ci)?;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Same as [`grad_check`] but probing coordinates in parallel. Results are
/// identical: every coordinate's probe is independent.
pub fn grad_check_parallel<F: TapeFn>(
    f: &F,
    point: &[Tensor],
    step: f64,
) -> Result<f64, DiffError> {
    let analytic = analytic_grads(f, point)?;
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(li, t)| (0..t.len()).map(move |ci| (li, ci)))
        .collect();
    let errors: Result<Vec<f64>, DiffError> = coords
        .par_iter()
        .map(|&(li, ci)| coord_error(f, point, step, &analytic, li, ci))
        .collect();
    Ok(errors?.into_iter().fold(0.0, f64::max))
}

fn analytic_grads<F: TapeFn>(f: &F, point: &[Tensor]) -> Result<Vec<Tensor>, DiffError> {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f.eval(&mut tape, &leaves)?;
    tape.backward(root)?;
    Ok(leaves.iter().map(|&id| tape.grad(id).clone()).collect())
}

fn coord_error<F: TapeFn>(
    f: &F,
    point: &[Tensor],
    step: f64,
    analytic: &[Tensor],
    li: usize,
    ci: usize,
) -> Result<f64, DiffError> {
    let plus = eval_at(f, point, li, ci, step)?;
    let minus = eval_at(f, point, li, ci, -step)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(DiffError::ProbeFailure { leaf: li, coord: ci });
    }
    let central = (plus - minus) / (2.0 * step);
    let a = analytic[li].data()[ci];
    Ok((a - central).abs() / a.abs().max(1.0))
}

fn eval_at<F: TapeFn>(
    f: &F,
    point: &[Tensor],
    li: usize,
    ci: usize,
    delta: f64,
) -> Result<f64, DiffError> {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = point
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == li {
                let mut t = t.clone();
                t.data_mut()[ci] += delta;
                tape.leaf(t)
            } else {
                tape.leaf(t.clone())
            }
        })
        .collect();
    let root = f.eval(&mut tape, &leaves)?;
    Ok(tape.value(root).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let f = |t: &mut Tape, l: &[NodeId]| {
            let sq = t.mul(l[0], l[0])?;
            Ok(t.sum(sq))
        };
        let err = grad_check(&f, &[Tensor::vector(vec![2.0])], 1e-5).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn abs_near_kink_is_flagged_with_large_error() {
        // Central differences straddle the kink of |x| when |x| < step, so
        // the reported error is O(1). This documents grad_check's failure
        // mode on nondifferentiable points.
        let f = |t: &mut Tape, l: &[NodeId]| {
            let a = t.abs(l[0]);
            Ok(t.sum(a))
        };
        let step = 1e-5;
        let err = grad_check(&f, &[Tensor::vector(vec![step / 2.0])], step).unwrap();
        assert!(err > 0.4, "kink should be detected, err = {err}");
    }

    #[test]
    fn probe_failure_names_the_coordinate() {
        // log of a negative probe point goes NaN
        let f = |t: &mut Tape, l: &[NodeId]| {
            let lg = t.log(l[0]);
            Ok(t.sum(lg))
        };
        let err = grad_check(&f, &[Tensor::vector(vec![1.0, 1e-9])], 1e-5).unwrap_err();
        match err {
            DiffError::ProbeFailure { leaf, coord } => {
                assert_eq!((leaf, coord), (0, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let f = |t: &mut Tape, l: &[NodeId]| {
            let th = t.tanh(l[0]);
            let pr = t.mul(th, l[1])?;
            Ok(t.sum(pr))
        };
        let point = [
            Tensor::vector(vec![0.1, -0.4, 0.9]),
            Tensor::vector(vec![1.0, 2.0, -0.5]),
        ];
        let a = grad_check(&f, &point, 1e-5).unwrap();
        let b = grad_check_parallel(&f, &point, 1e-5).unwrap();
        assert_eq!(a, b);
    }
}
