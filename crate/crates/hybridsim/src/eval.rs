//! Metrics and experiment reports: trans%/pos/rot/vel errors over point
//! estimates, Chamfer distance between outcome clouds, and the report/SVG
//! writers.

use crate::models::{point_estimate, ModelError, Predictor};
use crate::types::{wrap_angle, Dataset, Scenario, Trajectory};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectories have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("chamfer distance of an empty point set")]
    EmptySet,
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] crate::types::CoreError),
}

fn positions(scenario: Scenario, state: &[f64]) -> Vec<f64> {
    match scenario {
        Scenario::Ball => vec![state[0]],
        Scenario::Push => vec![state[0], state[1]],
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Average position error as a percentage of the ground truth's cumulative
/// excursion from its initial pose:
/// `100 * sum_t ||p_hat_t - p_t|| / sum_t ||p_0 - p_t||`.
///
/// Under this normalization a predictor that never moves scores exactly
/// 100. `None` when the ground truth never moves (undefined metric).
pub fn trans_pct(pred: &Trajectory, truth: &Trajectory, scenario: Scenario) -> Result<Option<f64>, EvalError> {
    check_lengths(pred, truth)?;
    let p0 = positions(scenario, &truth.states[0]);
    let mut num = 0.0;
    let mut den = 0.0;
    for (ps, ts) in pred.states.iter().zip(&truth.states) {
        num += dist(&positions(scenario, ps), &positions(scenario, ts));
        den += dist(&p0, &positions(scenario, ts));
    }
    if den == 0.0 {
        return Ok(None);
    }
    Ok(Some(100.0 * num / den))
}

/// Mean Euclidean position error in meters (height for the ball).
pub fn pos_err(pred: &Trajectory, truth: &Trajectory, scenario: Scenario) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let n = truth.states.len() as f64;
    let sum: f64 = pred
        .states
        .iter()
        .zip(&truth.states)
        .map(|(p, t)| dist(&positions(scenario, p), &positions(scenario, t)))
        .sum();
    Ok(sum / n)
}

/// Mean absolute wrapped angle error in degrees (push only).
pub fn rot_err_deg(pred: &Trajectory, truth: &Trajectory) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let n = truth.states.len() as f64;
    let mut sum = 0.0;
    for (p, t) in pred.states.iter().zip(&truth.states) {
        sum += wrap_angle(p[2] - t[2])?.abs();
    }
    Ok((sum / n).to_degrees())
}

/// Mean absolute vertical velocity error in m/s (ball only).
pub fn vel_err(pred: &Trajectory, truth: &Trajectory) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let n = truth.states.len() as f64;
    let sum: f64 = pred
        .states
        .iter()
        .zip(&truth.states)
        .map(|(p, t)| (p[1] - t[1]).abs())
        .sum();
    Ok(sum / n)
}

fn check_lengths(pred: &Trajectory, truth: &Trajectory) -> Result<(), EvalError> {
    if pred.states.len() != truth.states.len() {
        return Err(EvalError::LengthMismatch(pred.states.len(), truth.states.len()));
    }
    Ok(())
}

/// Symmetric mean nearest-neighbor distance between two point sets:
/// `1/|S| sum_p min_q ||p-q|| + 1/|T| sum_q min_p ||p-q||`.
///
/// Brute force; the clouds here are at most a few thousand points.
pub fn chamfer(s: &[Vec<f64>], t: &[Vec<f64>]) -> Result<f64, EvalError> {
    if s.is_empty() || t.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let one_sided = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(one_sided(s, t) + one_sided(t, s))
}

/// Object (x, y) — height for the ball — at a given time, one point per
/// trajectory. The step index is rounded and clamped to the horizon.
pub fn positions_at(trajs: &[Trajectory], time_s: f64) -> Vec<Vec<f64>> {
    trajs
        .iter()
        .map(|t| {
            let k = ((time_s / t.dt).round() as usize).min(t.states.len() - 1);
            let s = &t.states[k];
            if s.len() >= 3 {
                vec![s[0], s[1]]
            } else {
                vec![s[0]]
            }
        })
        .collect()
}

/// Per-model metric row of an [`EvalReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub trans_pct: Option<f64>,
    pub pos_err_m: f64,
    pub rot_err_deg: Option<f64>,
    pub vel_err: Option<f64>,
    /// Final training loss, when the predictor was trained.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub split: String,
    pub n_samples: usize,
    pub seed: u64,
    pub n_trajectories: usize,
    pub rows: Vec<EvalRow>,
    /// Distribution-study result, when one was run.
    pub chamfer: Option<ChamferReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChamferReport {
    pub time_s: f64,
    pub n_points: usize,
    pub per_model: Vec<(String, f64)>,
}

/// Evaluate each predictor's 10-sample point estimates over a dataset.
///
/// Per trajectory the predictor sees only `s0` and the action sequence;
/// metrics compare the point estimate against the recorded ground truth and
/// average over trajectories. Seeds derive from `(seed, predictor, index)`,
/// so reports are reproducible bit for bit.
pub fn run_experiment(
    predictors: &[(&str, &Predictor)],
    dataset: &Dataset,
    split: &str,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let sc = dataset.scenario;
    let mut rows = Vec::with_capacity(predictors.len());
    for (pi, (name, pred)) in predictors.iter().enumerate() {
        let mut trans_sum = 0.0;
        let mut trans_count = 0usize;
        let mut trans_defined = true;
        let mut pos_sum = 0.0;
        let mut rot_sum = 0.0;
        let mut vel_sum = 0.0;
        for (ti, truth) in dataset.trajectories.iter().enumerate() {
            let d = pred.predict(
                truth.initial_state(),
                &truth.actions,
                n_samples,
                crate::types::derive_seed(seed, &[pi as u64, ti as u64]),
            )?;
            let est = point_estimate(sc, &d)?;
            match trans_pct(&est, truth, sc)? {
                Some(v) => {
                    trans_sum += v;
                    trans_count += 1;
                }
                None => trans_defined = false,
            }
            pos_sum += pos_err(&est, truth, sc)?;
            match sc {
                Scenario::Push => rot_sum += rot_err_deg(&est, truth)?,
                Scenario::Ball => vel_sum += vel_err(&est, truth)?,
            }
        }
        let n = dataset.len() as f64;
        rows.push(EvalRow {
            model: name.to_string(),
            trans_pct: if trans_defined && trans_count > 0 {
                Some(trans_sum / trans_count as f64)
            } else {
                None
            },
            pos_err_m: pos_sum / n,
            rot_err_deg: matches!(sc, Scenario::Push).then(|| rot_sum / n),
            vel_err: matches!(sc, Scenario::Ball).then(|| vel_sum / n),
            loss: None,
        });
    }
    Ok(EvalReport {
        scenario: sc,
        split: split.to_string(),
        n_samples,
        seed,
        n_trajectories: dataset.len(),
        rows,
        chamfer: None,
    })
}

impl EvalReport {
    /// Plain-text table; push positions print in millimeters as in the
    /// source tables, ball positions in meters.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario: {:?}  split: {}  trajectories: {}  samples: {}  seed: {}",
            self.scenario, self.split, self.n_trajectories, self.n_samples, self.seed
        );
        let (pos_label, pos_scale) = match self.scenario {
            Scenario::Push => ("pos (mm)", 1000.0),
            Scenario::Ball => ("pos (m)", 1.0),
        };
        let third = match self.scenario {
            Scenario::Push => "rot (deg)",
            Scenario::Ball => "vel (m/s)",
        };
        let _ = writeln!(out, "{:<10} {:>12} {:>12} {:>12} {:>12}", "model", "trans (%)", pos_label, third, "loss");
        for r in &self.rows {
            let trans = r.trans_pct.map_or("N/A".to_string(), |v| format!("{v:.2}"));
            let pos = format!("{:.3}", r.pos_err_m * pos_scale);
            let t3 = match self.scenario {
                Scenario::Push => r.rot_err_deg.map_or("N/A".into(), |v| format!("{v:.3}")),
                Scenario::Ball => r.vel_err.map_or("N/A".into(), |v| format!("{v:.3}")),
            };
            let loss = r.loss.map_or("N/A".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{:<10} {:>12} {:>12} {:>12} {:>12}", r.model, trans, pos, t3, loss);
        }
        if let Some(ch) = &self.chamfer {
            let _ = writeln!(out, "chamfer at t = {} s over {} points:", ch.time_s, ch.n_points);
            for (name, d) in &ch.per_model {
                let _ = writeln!(out, "  {name:<10} {d:.6e}");
            }
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), EvalError> {
        let io =
            |p: &Path, e: std::io::Error| EvalError::Io { path: p.display().to_string(), source: e };
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_table()).map_err(|e| io(&txt, e))?;
        let json = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(self).expect("report serialization");
        std::fs::write(&json, body).map_err(|e| io(&json, e))?;
        Ok(())
    }
}

/// Static SVG scatter of labeled 2-D point clouds.
pub fn write_cloud_svg(
    path: &Path,
    clouds: &[(&str, &[Vec<f64>])],
) -> Result<(), EvalError> {
    const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let (w, h, margin) = (640.0, 480.0, 50.0);
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for (_, pts) in clouds {
        for p in *pts {
            for d in 0..2 {
                let v = p.get(d).copied().unwrap_or(0.0);
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
            }
        }
    }
    for d in 0..2 {
        if !(max[d] > min[d]) {
            max[d] = min[d] + 1e-9;
        }
    }
    let sx = (w - 2.0 * margin) / (max[0] - min[0]);
    let sy = (h - 2.0 * margin) / (max[1] - min[1]);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (ci, (name, pts)) in clouds.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        for p in *pts {
            let x = margin + (p[0] - min[0]) * sx;
            let y = h - margin - (p.get(1).copied().unwrap_or(0.0) - min[1]) * sy;
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}" fill-opacity="0.5"/>"#);
        }
        let ly = 20.0 + 16.0 * ci as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="20" cy="{ly}" r="4" fill="{color}"/><text x="30" y="{:.1}" font-size="12" font-family="sans-serif">{name}</text>"#,
            ly + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.0}" y="{:.0}" font-size="11" font-family="sans-serif">x: [{:.4}, {:.4}]  y: [{:.4}, {:.4}]</text>"#,
        margin,
        h - 12.0,
        min[0],
        max[0],
        min[1],
        max[1]
    );
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)
        .map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        let n = states.len() - 1;
        let w = if states[0].len() == 3 { 4 } else { 0 };
        Trajectory::new(0.1, states, vec![vec![0.0; w]; n]).unwrap()
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let t = traj(vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.5]]);
        assert_eq!(trans_pct(&t, &t, Scenario::Ball).unwrap(), Some(0.0));
        assert_eq!(pos_err(&t, &t, Scenario::Ball).unwrap(), 0.0);
        assert_eq!(vel_err(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn zero_style_prediction_scores_exactly_100() {
        let truth = traj(vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![4.0, 0.5]]);
        let pred = traj(vec![vec![1.0, 0.0]; 3]);
        assert_eq!(trans_pct(&pred, &truth, Scenario::Ball).unwrap(), Some(100.0));
    }

    #[test]
    fn static_ground_truth_is_undefined() {
        let truth = traj(vec![vec![1.0, 0.0]; 3]);
        let pred = traj(vec![vec![2.0, 0.0]; 3]);
        assert_eq!(trans_pct(&pred, &truth, Scenario::Ball).unwrap(), None);
    }

    #[test]
    fn half_excursion_offset_scores_fifty() {
        // truth moves from 0 by 1, 2, 3; prediction offset by exactly half
        // the excursion at every step
        let truth = traj(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]);
        let pred = traj(vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0], vec![1.5, 0.0]]);
        let t = trans_pct(&pred, &truth, Scenario::Ball).unwrap().unwrap();
        assert!((t - 50.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_pos_err() {
        let truth = traj(vec![vec![1.0, 0.0], vec![2.0, 0.0]]);
        let pred = traj(vec![vec![1.002, 0.0], vec![2.002, 0.0]]);
        assert!((pos_err(&pred, &truth, Scenario::Ball).unwrap() - 0.002).abs() < 1e-15);
    }

    #[test]
    fn rot_error_wraps() {
        let deg = |d: f64| d.to_radians();
        let truth = traj(vec![vec![0.0, 0.0, deg(-179.0)], vec![0.0, 0.0, deg(-179.0)]]);
        let pred = traj(vec![vec![0.0, 0.0, deg(179.0)], vec![0.0, 0.0, deg(179.0)]]);
        let r = rot_err_deg(&pred, &truth).unwrap();
        assert!((r - 2.0).abs() < 1e-9, "rot err = {r}");
    }

    #[test]
    fn chamfer_examples() {
        let s = vec![vec![0.0, 0.0]];
        let t = vec![vec![3.0, 4.0]];
        assert_eq!(chamfer(&s, &s).unwrap(), 0.0);
        assert_eq!(chamfer(&s, &t).unwrap(), 10.0);
        assert_eq!(chamfer(&s, &t).unwrap(), chamfer(&t, &s).unwrap());
        assert!(chamfer(&s, &[]).is_err());
    }

    #[test]
    fn chamfer_zero_iff_equal_sets() {
        let s = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let shuffled = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        assert_eq!(chamfer(&s, &shuffled).unwrap(), 0.0);
        let near = vec![vec![0.0, 0.001], vec![1.0, 1.0]];
        assert!(chamfer(&s, &near).unwrap() > 0.0);
    }

    #[test]
    fn metrics_invariant_under_rigid_translation() {
        let truth = traj(vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![2.0, 0.2]]);
        let pred = traj(vec![vec![0.1, 0.0], vec![1.2, 0.5], vec![1.9, 0.2]]);
        let shift = 5.0;
        let shifted = |t: &Trajectory| {
            traj(t.states.iter().map(|s| vec![s[0] + shift, s[1]]).collect())
        };
        let (ts, ps) = (shifted(&truth), shifted(&pred));
        let a = trans_pct(&pred, &truth, Scenario::Ball).unwrap().unwrap();
        let b = trans_pct(&ps, &ts, Scenario::Ball).unwrap().unwrap();
        assert!((a - b).abs() < 1e-9);
        let pa = pos_err(&pred, &truth, Scenario::Ball).unwrap();
        let pb = pos_err(&ps, &ts, Scenario::Ball).unwrap();
        assert!((pa - pb).abs() < 1e-12);
    }

    #[test]
    fn svg_writer_emits_points() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cloud.svg");
        let a = vec![vec![0.0, 0.0], vec![0.1, 0.2]];
        let b = vec![vec![0.05, 0.1]];
        write_cloud_svg(&p, &[("truth", &a), ("model", &b)]).unwrap();
        let body = std::fs::read_to_string(&p).unwrap();
        assert!(body.starts_with("<svg"));
        assert_eq!(body.matches("<circle").count(), 3 + 2); // points + legend dots
    }
}
