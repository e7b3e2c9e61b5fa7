//! Dataset generation, the canonical trajectory file format, and splits.
//!
//! # File format (ingestion schema)
//!
//! Datasets are JSON Lines. Line 1 is a header object:
//!
//! ```text
//! {"format":"hybridsim-dataset","version":1,"scenario":"ball"|"push",
//!  "count":<n>,"normalized":false,"stats":null,"meta":{...}}
//! ```
//!
//! Every following line is one trajectory record:
//!
//! ```text
//! {"dt":<seconds>,"states":[[...],...],"actions":[[...],...],"meta":null}
//! ```
//!
//! State rows are `[height_m, velocity_mps]` for `ball` and
//! `[x_m, y_m, theta_rad]` for `push`; push action rows are
//! `[pusher_x, pusher_y, pusher_vx, pusher_vy]` and ball action rows are
//! empty arrays. `states` must hold exactly `actions + 1` rows and every
//! record must carry the same `dt`; externally converted data (e.g. logged
//! object + pusher pose series) must be resampled to a fixed timestep before
//! conversion. Floats are printed in shortest round-trip form, so
//! load-then-save is byte-identical.

use crate::physics::{ball_rollout, push_step_with_c, BallParams, PushParams};
use crate::types::{
    derive_seed, Dataset, NormStats, PushAction, PushState, Scenario, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: expected {expected} records, found {found} (truncated file?)")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("{path}:{line}: record dt {got} differs from first record dt {want}")]
    MixedDt { path: String, line: usize, got: f64, want: f64 },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("subsample of fraction {0} selects no trajectories")]
    EmptySubsample(f64),
    #[error("fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Core(#[from] crate::types::CoreError),
    #[error(transparent)]
    Physics(#[from] crate::physics::PhysicsError),
}

/// Draw from N(0, 1) via Box-Muller; deterministic given the rng.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// Ball

/// Ground-truth generator settings for the bouncing ball.
///
/// Each trajectory drops the ball from rest at a uniform random height with
/// a per-trajectory restitution drawn from a clamped normal law; the engine
/// used by the Physics/Hybrid predictors keeps its restitution fixed, which
/// is the model mismatch the residual learner targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallGenConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub height_min: f64,
    pub height_max: f64,
    pub restitution_mean: f64,
    pub restitution_std: f64,
    pub restitution_clamp: (f64, f64),
    pub radius: f64,
    pub gravity: f64,
    pub steps: usize,
    pub dt: f64,
}

impl Default for BallGenConfig {
    fn default() -> Self {
        BallGenConfig {
            n_train: 800,
            n_test: 100,
            height_min: 4.0,
            height_max: 5.0,
            restitution_mean: 0.5,
            restitution_std: 0.1,
            restitution_clamp: (0.05, 0.95),
            radius: 0.5,
            gravity: 9.81,
            steps: 400,
            dt: 1.0 / 60.0,
        }
    }
}

impl BallGenConfig {
    /// Engine parameters the Physics/Hybrid predictors should use against
    /// this data (restitution deliberately mismatched at 0.65).
    pub fn nominal_engine(&self) -> BallParams {
        BallParams {
            radius: self.radius,
            gravity: self.gravity,
            restitution: 0.65,
            dt: self.dt,
        }
    }
}

fn gen_ball_trajectory(cfg: &BallGenConfig, seed: u64) -> Result<Trajectory, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h0 = rng.gen_range(cfg.height_min..=cfg.height_max);
    let e = (cfg.restitution_mean + cfg.restitution_std * standard_normal(&mut rng))
        .clamp(cfg.restitution_clamp.0, cfg.restitution_clamp.1);
    let params = BallParams {
        radius: cfg.radius,
        gravity: cfg.gravity,
        restitution: e,
        dt: cfg.dt,
    };
    Ok(ball_rollout(crate::types::BallState::new(h0, 0.0), &params, cfg.steps)?)
}

/// Generate `count` ball trajectories with per-trajectory derived seeds.
pub fn gen_ball_dataset(cfg: &BallGenConfig, count: usize, seed: u64) -> Result<Dataset, DataError> {
    let trajectories: Result<Vec<_>, _> = (0..count)
        .map(|i| gen_ball_trajectory(cfg, derive_seed(seed, &[i as u64])))
        .collect();
    Ok(Dataset::new(Scenario::Ball, trajectories?)?)
}

/// Train/test split with disjoint seed streams.
pub fn gen_ball_split(cfg: &BallGenConfig, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let train = gen_ball_dataset(cfg, cfg.n_train, derive_seed(seed, &[0]))?;
    let test = gen_ball_dataset(cfg, cfg.n_test, derive_seed(seed, &[1]))?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Push

/// Ground-truth generator settings for planar pushing.
///
/// The canonical push is a straight line: contact halfway between the
/// block's center and edge, perpendicular to the edge, 20 mm/s. The ground
/// truth runs the analytical engine with a per-trajectory perturbed
/// limit-surface ratio, a smooth spatially-varying friction field, and a
/// small orientation-dependent anisotropy, so the nominal engine's rollouts
/// carry a nonzero, learnable residual. The `jitter_*` fields vary the push
/// geometry per trajectory for the main comparison; set them to zero to
/// repeat the identical canonical push (distribution study).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushGenConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub steps: usize,
    /// Nominal engine parameters (shared with Physics/Hybrid predictors).
    pub base: PushParams,
    /// Contact offset along the edge, as a fraction of the half side.
    pub contact_frac: f64,
    /// Pusher speed in m/s.
    pub speed: f64,
    pub jitter_contact_frac: f64,
    pub jitter_angle: f64,
    pub jitter_speed_frac: f64,
    pub jitter_theta0: f64,
    /// Lognormal sigma of the per-trajectory ratio multiplier.
    pub c_sigma: f64,
    /// Relative amplitude of the spatial friction field.
    pub field_amp: f64,
    /// Spatial scale of the friction field, meters.
    pub field_scale: f64,
    /// Relative amplitude of the orientation-dependent anisotropy.
    pub aniso_amp: f64,
}

impl Default for PushGenConfig {
    fn default() -> Self {
        PushGenConfig {
            n_train: 600,
            n_test: 150,
            steps: 150,
            base: PushParams::default(),
            contact_frac: 0.5,
            speed: 0.02,
            jitter_contact_frac: 0.35,
            jitter_angle: 0.3,
            jitter_speed_frac: 0.25,
            jitter_theta0: 0.4,
            c_sigma: 0.1,
            field_amp: 0.1,
            field_scale: 0.1,
            aniso_amp: 0.05,
        }
    }
}

impl PushGenConfig {
    /// The identical-push repeat study: canonical geometry, stochastic
    /// ground truth only.
    pub fn repeat_study(mut self, repeats: usize) -> Self {
        self.n_train = repeats;
        self.n_test = 0;
        self.jitter_contact_frac = 0.0;
        self.jitter_angle = 0.0;
        self.jitter_speed_frac = 0.0;
        self.jitter_theta0 = 0.0;
        self
    }

    pub fn nominal_engine(&self) -> PushParams {
        self.base.clone()
    }

    /// Canonical straight-line pusher actions for a given start pose.
    pub fn canonical_actions(&self, theta0: f64, steps: usize) -> Vec<PushAction> {
        let geo = PushGeometry {
            contact_frac: self.contact_frac,
            angle: 0.0,
            speed: self.speed,
            theta0,
        };
        geo.actions(&self.base, self.base.dt, steps)
    }
}

/// One trajectory's push geometry: where the pusher starts and how it moves.
#[derive(Debug, Clone, Copy)]
struct PushGeometry {
    contact_frac: f64,
    angle: f64,
    speed: f64,
    theta0: f64,
}

impl PushGeometry {
    fn sample<R: Rng>(cfg: &PushGenConfig, rng: &mut R) -> Self {
        let u = |rng: &mut R, j: f64| if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        PushGeometry {
            contact_frac: (cfg.contact_frac + u(rng, cfg.jitter_contact_frac)).clamp(-0.8, 0.8),
            angle: u(rng, cfg.jitter_angle),
            speed: cfg.speed * (1.0 + u(rng, cfg.jitter_speed_frac)),
            theta0: u(rng, cfg.jitter_theta0),
        }
    }

    /// Straight-line actions: contact on the left edge, pushing inward,
    /// direction rotated by `angle` off the edge normal.
    fn actions(&self, base: &PushParams, dt: f64, steps: usize) -> Vec<PushAction> {
        let a = base.half_extent;
        let contact_body = [-a, self.contact_frac * a];
        let (s0, c0) = self.theta0.sin_cos();
        let start = [
            c0 * contact_body[0] - s0 * contact_body[1],
            s0 * contact_body[0] + c0 * contact_body[1],
        ];
        let dir_body = [self.angle.cos(), self.angle.sin()];
        let dir = [
            c0 * dir_body[0] - s0 * dir_body[1],
            s0 * dir_body[0] + c0 * dir_body[1],
        ];
        let vel = [self.speed * dir[0], self.speed * dir[1]];
        (0..steps)
            .map(|k| PushAction {
                pusher_pos: [start[0] + vel[0] * dt * k as f64, start[1] + vel[1] * dt * k as f64],
                pusher_vel: vel,
            })
            .collect()
    }
}

/// Per-trajectory ground-truth perturbation of the limit-surface ratio.
#[derive(Debug, Clone)]
struct TruthPerturbation {
    c_mult: f64,
    field_amp: f64,
    field_wavenumber: f64,
    field_dirs: [[f64; 2]; 2],
    field_phases: [f64; 2],
    aniso_amp: f64,
    aniso_phase: f64,
}

impl TruthPerturbation {
    fn sample<R: Rng>(cfg: &PushGenConfig, rng: &mut R) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        let dir = |rng: &mut R| {
            let a = rng.gen_range(0.0..tau);
            [a.cos(), a.sin()]
        };
        TruthPerturbation {
            c_mult: (cfg.c_sigma * standard_normal(rng)).exp(),
            field_amp: cfg.field_amp,
            field_wavenumber: tau / cfg.field_scale.max(1e-6),
            field_dirs: [dir(rng), dir(rng)],
            field_phases: [rng.gen_range(0.0..tau), rng.gen_range(0.0..tau)],
            aniso_amp: cfg.aniso_amp,
            aniso_phase: rng.gen_range(0.0..tau),
        }
    }

    fn effective_c(&self, base_c: f64, pos: [f64; 2], theta: f64) -> f64 {
        let k = self.field_wavenumber;
        let field = 0.5
            * ((k * (pos[0] * self.field_dirs[0][0] + pos[1] * self.field_dirs[0][1])
                + self.field_phases[0])
                .sin()
                + (k * (pos[0] * self.field_dirs[1][0] + pos[1] * self.field_dirs[1][1])
                    + self.field_phases[1])
                    .sin());
        let aniso = (2.0 * (theta - self.aniso_phase)).cos();
        let c = base_c * self.c_mult * (1.0 + self.field_amp * field) * (1.0 + self.aniso_amp * aniso);
        c.max(1e-3 * base_c)
    }
}

fn gen_push_trajectory(cfg: &PushGenConfig, seed: u64) -> Result<Trajectory, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geo = PushGeometry::sample(cfg, &mut rng);
    let perturb = TruthPerturbation::sample(cfg, &mut rng);
    let actions = geo.actions(&cfg.base, cfg.base.dt, cfg.steps);

    let mut state = PushState::new(0.0, 0.0, geo.theta0)?;
    let mut states = Vec::with_capacity(cfg.steps + 1);
    states.push(state.to_raw());
    for act in &actions {
        let c_eff = perturb.effective_c(cfg.base.c, [state.x, state.y], state.theta);
        state = push_step_with_c(state, *act, &cfg.base, c_eff)?;
        states.push(state.to_raw());
    }
    Ok(Trajectory::new(
        cfg.base.dt,
        states,
        actions.iter().map(|a| a.to_raw()).collect(),
    )?)
}

/// Generate `count` push trajectories with per-trajectory derived seeds.
pub fn gen_push_dataset(cfg: &PushGenConfig, count: usize, seed: u64) -> Result<Dataset, DataError> {
    let trajectories: Result<Vec<_>, _> = (0..count)
        .map(|i| gen_push_trajectory(cfg, derive_seed(seed, &[i as u64])))
        .collect();
    Ok(Dataset::new(Scenario::Push, trajectories?)?)
}

pub fn gen_push_split(cfg: &PushGenConfig, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let train = gen_push_dataset(cfg, cfg.n_train, derive_seed(seed, &[0]))?;
    let test = gen_push_dataset(cfg, cfg.n_test, derive_seed(seed, &[1]))?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// File I/O

const FORMAT_NAME: &str = "hybridsim-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    scenario: Scenario,
    count: usize,
    normalized: bool,
    stats: Option<NormStats>,
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    dt: f64,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Write a dataset in the canonical JSON-lines format. `meta` lands in the
/// header for provenance (generation config, seeds).
pub fn save(path: &Path, dataset: &Dataset, meta: serde_json::Value) -> Result<(), DataError> {
    let io_err = |e| DataError::Io { path: path.display().to_string(), source: e };
    let mut out = Vec::new();
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        scenario: dataset.scenario,
        count: dataset.len(),
        normalized: dataset.normalized,
        stats: dataset.stats.clone(),
        meta,
    };
    serde_json::to_writer(&mut out, &header).expect("header serialization");
    out.push(b'\n');
    for t in &dataset.trajectories {
        let rec = Record {
            dt: t.dt,
            states: t.states.clone(),
            actions: t.actions.clone(),
            meta: serde_json::Value::Null,
        };
        serde_json::to_writer(&mut out, &rec).expect("record serialization");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err)
}

/// Load a canonical dataset file, validating every record.
pub fn load(path: &Path) -> Result<Dataset, DataError> {
    let pstr = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| DataError::Io { path: pstr.clone(), source: e })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| DataError::Parse { path: pstr.clone(), line: 1, msg: "empty file".into() })?;
    let first = first.map_err(|e| DataError::Io { path: pstr.clone(), source: e })?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| DataError::Parse { path: pstr.clone(), line: 1, msg: e.to_string() })?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(DataError::Parse {
            path: pstr,
            line: 1,
            msg: format!("unsupported format {}/{}", header.format, header.version),
        });
    }

    let mut trajectories = Vec::with_capacity(header.count);
    let mut dt0: Option<f64> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| DataError::Io { path: pstr.clone(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: pstr.clone(),
            line: lineno,
            msg: format!("record {}: {e}", trajectories.len() + 1),
        })?;
        if let Some(dt) = dt0 {
            if rec.dt != dt {
                return Err(DataError::MixedDt { path: pstr, line: lineno, got: rec.dt, want: dt });
            }
        } else {
            dt0 = Some(rec.dt);
        }
        let traj = Trajectory::new(rec.dt, rec.states, rec.actions).map_err(|e| {
            DataError::Parse {
                path: pstr.clone(),
                line: lineno,
                msg: format!("record {}: {e}", trajectories.len() + 1),
            }
        })?;
        trajectories.push(traj);
    }
    if trajectories.len() != header.count {
        return Err(DataError::Truncated {
            path: pstr,
            expected: header.count,
            found: trajectories.len(),
        });
    }
    let mut ds = Dataset::new(header.scenario, trajectories)?;
    ds.stats = header.stats;
    ds.normalized = header.normalized;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Splits

/// Deterministic seeded subset of `fraction` of the trajectories, preserving
/// the original order.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let n = dataset.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    if k == 0 {
        return Err(DataError::EmptySubsample(fraction));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, then keep the first k in original order
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx.into_iter().take(k).collect();
    chosen.sort_unstable();
    let trajectories = chosen.iter().map(|&i| dataset.trajectories[i].clone()).collect();
    let mut out = Dataset::new(dataset.scenario, trajectories)?;
    out.stats = dataset.stats.clone();
    out.normalized = dataset.normalized;
    Ok(out)
}
