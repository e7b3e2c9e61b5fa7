//! Quasi-static single-point pushing of a square on a flat surface.
//!
//! The object's frictional interaction with the surface is modeled by the
//! ellipsoidal limit surface with ratio `c = m_max / f_max`: a contact
//! wrench `(f_x, f_y, m)` on the ellipsoid maps to the twist direction
//! `(f_x, f_y, m / c^2)`. The pusher-object contact carries Coulomb friction
//! with coefficient `mu_contact`; mapping the two friction-cone edge forces
//! through the limit surface yields the motion cone of pusher velocities for
//! which the contact sticks. Inside the cone the sticking twist has the
//! closed form implemented in [`sticking_twist`]; outside, the contact force
//! saturates on the violated cone edge and the contact point slides.

use super::PhysicsError;
use crate::types::{PushAction, PushState, Trajectory};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PushParams {
    /// Limit-surface ratio `m_max / f_max`, in meters.
    pub c: f64,
    /// Pusher-object Coulomb friction coefficient.
    pub mu_contact: f64,
    /// Half side length of the square object, in meters.
    pub half_extent: f64,
    /// Nominal contact point in the body frame (on the boundary).
    pub contact_point: [f64; 2],
    pub dt: f64,
    /// Upper bound on pusher speed accepted by the engine.
    pub max_pusher_speed: f64,
}

impl Default for PushParams {
    fn default() -> Self {
        // 9 cm square; contact halfway between center and the left edge's end
        PushParams {
            c: 0.05,
            mu_contact: 0.3,
            half_extent: 0.045,
            contact_point: [-0.045, 0.0225],
            dt: 0.05,
            max_pusher_speed: 1.0,
        }
    }
}

impl PushParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.c > 0.0) {
            return Err(PhysicsError::InvalidParams(format!("c = {}", self.c)));
        }
        if !(self.mu_contact >= 0.0) {
            return Err(PhysicsError::InvalidParams(format!("mu_contact = {}", self.mu_contact)));
        }
        if !(self.half_extent > 0.0) {
            return Err(PhysicsError::InvalidParams(format!("half_extent = {}", self.half_extent)));
        }
        if !(self.dt > 0.0) {
            return Err(PhysicsError::InvalidParams(format!("dt = {}", self.dt)));
        }
        let sdf = square_sdf(self.contact_point, self.half_extent);
        if sdf.abs() > 1e-9 {
            return Err(PhysicsError::InvalidParams(format!(
                "contact_point {:?} is {sdf} m off the boundary",
                self.contact_point
            )));
        }
        Ok(())
    }
}

/// A planar body twist: linear velocity plus angular rate, body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub v: [f64; 2],
    pub omega: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { v: [0.0, 0.0], omega: 0.0 };

    /// Velocity of a body-frame point under this twist.
    pub fn point_velocity(&self, p: [f64; 2]) -> [f64; 2] {
        [self.v[0] - self.omega * p[1], self.v[1] + self.omega * p[0]]
    }
}

/// How close to the boundary the pusher must be to count as touching.
const CONTACT_TOL: f64 = 1e-6;

/// Separation up to this width after a contacting step is treated as
/// integration drift and closed; beyond it the pusher has really left.
const GLUE_BAND: f64 = 1e-4;

fn rot(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Signed distance of a point to the square boundary (negative inside).
fn square_sdf(p: [f64; 2], half_extent: f64) -> f64 {
    p[0].abs().max(p[1].abs()) - half_extent
}

/// Inward normal of the edge nearest to a boundary point.
fn edge_normal(p: [f64; 2], half_extent: f64) -> Result<[f64; 2], PhysicsError> {
    let _ = half_extent;
    if p[0] == 0.0 && p[1] == 0.0 {
        return Err(PhysicsError::DegenerateContact("contact at body origin".into()));
    }
    if p[0].abs() >= p[1].abs() {
        Ok([-p[0].signum(), 0.0])
    } else {
        Ok([0.0, -p[1].signum()])
    }
}

/// Map a contact force through the ellipsoidal limit surface to the twist
/// direction it produces, normalized so the contact point's normal velocity
/// is one.
fn force_to_unit_twist(
    force: [f64; 2],
    contact: [f64; 2],
    normal: [f64; 2],
    c: f64,
) -> Result<Twist, PhysicsError> {
    let moment = cross2(contact, force);
    let raw = Twist { v: force, omega: moment / (c * c) };
    let w = raw.point_velocity(contact);
    let scale = dot2(w, normal);
    if scale <= 0.0 {
        return Err(PhysicsError::DegenerateContact(format!(
            "limit-surface twist for force {force:?} at {contact:?} does not advance the contact"
        )));
    }
    Ok(Twist { v: [raw.v[0] / scale, raw.v[1] / scale], omega: raw.omega / scale })
}

fn motion_cone_at(
    contact: [f64; 2],
    params: &PushParams,
) -> Result<(Twist, Twist), PhysicsError> {
    let n = edge_normal(contact, params.half_extent)?;
    let t = [-n[1], n[0]];
    let mu = params.mu_contact;
    let f_left = [n[0] + mu * t[0], n[1] + mu * t[1]];
    let f_right = [n[0] - mu * t[0], n[1] - mu * t[1]];
    let left = force_to_unit_twist(f_left, contact, n, params.c)?;
    let right = force_to_unit_twist(f_right, contact, n, params.c)?;
    Ok((left, right))
}

/// Motion cone for the configured contact point, body frame.
///
/// Returns the boundary twists obtained by mapping the two friction-cone
/// edge forces (half-angle `atan(mu_contact)` about the inward normal)
/// through the limit surface, each normalized to unit contact normal
/// velocity. The cone depends only on the contact geometry, not the pose.
pub fn push_motion_cone(
    _state: PushState,
    params: &PushParams,
) -> Result<(Twist, Twist), PhysicsError> {
    params.validate()?;
    motion_cone_at(params.contact_point, params)
}

/// Closed-form sticking twist: the contact point moves exactly with the
/// pusher. `(x, y)` is the contact in the body frame, `u` the pusher
/// velocity in the body frame.
fn sticking_twist(contact: [f64; 2], u: [f64; 2], c: f64) -> Twist {
    let (x, y) = (contact[0], contact[1]);
    let c2 = c * c;
    let denom = c2 + x * x + y * y;
    let vx = ((c2 + x * x) * u[0] + x * y * u[1]) / denom;
    let vy = (x * y * u[0] + (c2 + y * y) * u[1]) / denom;
    let omega = (x * vy - y * vx) / c2;
    Twist { v: [vx, vy], omega }
}

/// Contact mode and twist for one pusher velocity, body frame.
fn resolve_contact(
    contact: [f64; 2],
    u_body: [f64; 2],
    params: &PushParams,
) -> Result<Twist, PhysicsError> {
    let n = edge_normal(contact, params.half_extent)?;
    let approach = dot2(u_body, n);
    if approach <= 0.0 {
        // separating: quasi-static object does not move
        return Ok(Twist::ZERO);
    }
    let (left, right) = motion_cone_at(contact, params)?;
    let w_left = left.point_velocity(contact);
    let w_right = right.point_velocity(contact);
    let inside = cross2(w_right, u_body) >= -1e-12 && cross2(u_body, w_left) >= -1e-12;
    if inside {
        Ok(sticking_twist(contact, u_body, params.c))
    } else {
        // force saturates on the violated cone edge; normal velocity of the
        // contact matches the pusher, tangential slip absorbs the rest
        let edge = if cross2(w_right, u_body) < 0.0 { right } else { left };
        Ok(Twist {
            v: [edge.v[0] * approach, edge.v[1] * approach],
            omega: edge.omega * approach,
        })
    }
}

/// Advance the object one timestep under a pusher action.
///
/// The pusher position is taken from the action (world frame); an action
/// whose pusher is off the boundary by more than the contact tolerance, or
/// moving away from the surface, leaves the object stationary. Penetration
/// left by the first-order pose integration is resolved by projecting the
/// object along the contact normal.
pub fn push_step(
    state: PushState,
    action: PushAction,
    params: &PushParams,
) -> Result<PushState, PhysicsError> {
    let speed = dot2(action.pusher_vel, action.pusher_vel).sqrt();
    if speed > params.max_pusher_speed {
        return Err(PhysicsError::SpeedLimit { speed, max: params.max_pusher_speed });
    }
    let rel = [action.pusher_pos[0] - state.x, action.pusher_pos[1] - state.y];
    let p_body = rot(-state.theta, rel);
    let sdf = square_sdf(p_body, params.half_extent);
    if sdf > CONTACT_TOL {
        return Ok(state);
    }
    let u_body = rot(-state.theta, action.pusher_vel);
    let twist = resolve_contact(p_body, u_body, params)?;

    let v_world = rot(state.theta, twist.v);
    let mut next = PushState::new(
        state.x + v_world[0] * params.dt,
        state.y + v_world[1] * params.dt,
        state.theta + twist.omega * params.dt,
    )?;

    // keep the pusher on the boundary: project the object along the contact
    // normal, resolving both penetration and the hair-width separation the
    // first-order pose integration leaves behind (a real retreat moves the
    // pusher far outside the glue band within one step)
    let pusher_next = [
        action.pusher_pos[0] + action.pusher_vel[0] * params.dt,
        action.pusher_pos[1] + action.pusher_vel[1] * params.dt,
    ];
    let rel_next = [pusher_next[0] - next.x, pusher_next[1] - next.y];
    let p_body_next = rot(-next.theta, rel_next);
    let sdf_next = square_sdf(p_body_next, params.half_extent);
    if sdf_next != 0.0 && sdf_next <= GLUE_BAND {
        let n_body = edge_normal(p_body_next, params.half_extent)?;
        let n_world = rot(next.theta, n_body);
        let shift = -sdf_next;
        next = PushState::new(
            next.x + shift * n_world[0],
            next.y + shift * n_world[1],
            next.theta,
        )?;
    }
    Ok(next)
}

/// [`push_step`] with an overridden limit-surface ratio; the dataset
/// generator uses this to realize per-step perturbed ground truth.
pub fn push_step_with_c(
    state: PushState,
    action: PushAction,
    params: &PushParams,
    c_effective: f64,
) -> Result<PushState, PhysicsError> {
    let p = PushParams { c: c_effective, ..params.clone() };
    push_step(state, action, &p)
}

/// Open-loop rollout over an action sequence.
pub fn push_rollout(
    s0: PushState,
    actions: &[PushAction],
    params: &PushParams,
) -> Result<Trajectory, PhysicsError> {
    if actions.is_empty() {
        return Err(PhysicsError::EmptyActions);
    }
    params.validate()?;
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(s0.to_raw());
    let mut s = s0;
    for a in actions {
        s = push_step(s, *a, params)?;
        states.push(s.to_raw());
    }
    Ok(Trajectory::new(
        params.dt,
        states,
        actions.iter().map(|a| a.to_raw()).collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PushParams {
        PushParams::default()
    }

    /// Straight-line pusher actions starting at the world-frame contact.
    fn straight_actions(start: [f64; 2], vel: [f64; 2], dt: f64, steps: usize) -> Vec<PushAction> {
        (0..steps)
            .map(|k| PushAction {
                pusher_pos: [start[0] + vel[0] * dt * k as f64, start[1] + vel[1] * dt * k as f64],
                pusher_vel: vel,
            })
            .collect()
    }

    #[test]
    fn sticking_formula_matches_worked_example() {
        let t = sticking_twist([-0.045, 0.0225], [0.02, 0.0], 0.05);
        assert!((t.v[0] - 0.01799).abs() < 1e-5, "vx = {}", t.v[0]);
        assert!((t.v[1] - (-0.00402)).abs() < 1e-5, "vy = {}", t.v[1]);
        assert!((t.omega - (-0.0894)).abs() < 1e-4, "omega = {}", t.omega);
    }

    #[test]
    fn sticking_contact_point_matches_pusher_exactly() {
        let contact = [-0.045, 0.0225];
        let u = [0.018, 0.004];
        let t = sticking_twist(contact, u, 0.05);
        let w = t.point_velocity(contact);
        assert!((w[0] - u[0]).abs() < 1e-10);
        assert!((w[1] - u[1]).abs() < 1e-10);
    }

    #[test]
    fn centroid_push_translates_without_rotation() {
        let p = PushParams { contact_point: [-0.045, 0.0], ..params() };
        let steps = 150; // 7.5 s at 20 mm/s = 15 cm
        let actions = straight_actions([-0.045, 0.0], [0.02, 0.0], p.dt, steps);
        let traj = push_rollout(PushState::new(0.0, 0.0, 0.0).unwrap(), &actions, &p).unwrap();
        let last = traj.states.last().unwrap();
        assert!((last[0] - 0.15).abs() < 1e-9, "x = {}", last[0]);
        assert_eq!(last[1], 0.0);
        assert_eq!(last[2], 0.0);
    }

    #[test]
    fn zero_friction_cone_collapses() {
        let p = PushParams { mu_contact: 0.0, ..params() };
        let (l, r) = push_motion_cone(PushState::new(0.0, 0.0, 0.0).unwrap(), &p).unwrap();
        assert!((l.v[0] - r.v[0]).abs() < 1e-15);
        assert!((l.v[1] - r.v[1]).abs() < 1e-15);
        assert!((l.omega - r.omega).abs() < 1e-15);
    }

    #[test]
    fn cone_symmetric_for_centered_contact() {
        let p = PushParams { contact_point: [-0.045, 0.0], ..params() };
        let (l, r) = push_motion_cone(PushState::new(0.0, 0.0, 0.0).unwrap(), &p).unwrap();
        assert!((l.v[0] - r.v[0]).abs() < 1e-12);
        assert!((l.v[1] + r.v[1]).abs() < 1e-12);
        assert!((l.omega + r.omega).abs() < 1e-12);
    }

    #[test]
    fn cone_edges_match_force_sampling_oracle() {
        // Sweep forces across the friction cone, map each through the limit
        // surface, and compare the extreme contact-velocity directions with
        // the analytic cone edges.
        let p = params();
        let contact = p.contact_point;
        let n = [1.0, 0.0]; // left edge, inward normal
        let (l, r) = push_motion_cone(PushState::new(0.0, 0.0, 0.0).unwrap(), &p).unwrap();
        let mut min_angle = f64::INFINITY;
        let mut max_angle = f64::NEG_INFINITY;
        let half = p.mu_contact.atan();
        for k in 0..=4000 {
            let a = -half + 2.0 * half * k as f64 / 4000.0;
            let f = [n[0] * a.cos() - n[1] * a.sin(), n[0] * a.sin() + n[1] * a.cos()];
            let t = force_to_unit_twist(f, contact, n, p.c).unwrap();
            let w = t.point_velocity(contact);
            let ang = w[1].atan2(w[0]);
            min_angle = min_angle.min(ang);
            max_angle = max_angle.max(ang);
        }
        let wl = l.point_velocity(contact);
        let wr = r.point_velocity(contact);
        assert!((wl[1].atan2(wl[0]) - max_angle).abs() < 1e-6);
        assert!((wr[1].atan2(wr[0]) - min_angle).abs() < 1e-6);
    }

    #[test]
    fn sticking_twist_lies_inside_cone_and_sliding_on_edge() {
        let p = params();
        let contact = p.contact_point;
        let (l, r) = motion_cone_at(contact, &p).unwrap();
        let wl = l.point_velocity(contact);
        let wr = r.point_velocity(contact);

        // aligned push sticks: contact velocity equals pusher, inside cone
        let u = [0.02, 0.0];
        let t = resolve_contact(contact, u, &p).unwrap();
        let w = t.point_velocity(contact);
        assert!(cross2(wr, w) >= -1e-12 && cross2(w, wl) >= -1e-12);

        // steep tangential push slides: twist is the edge twist scaled
        let u_slide = [0.005, 0.019];
        let t2 = resolve_contact(contact, u_slide, &p).unwrap();
        let scale = t2.v[0] / l.v[0];
        assert!((t2.v[1] - l.v[1] * scale).abs() < 1e-12);
        assert!((t2.omega - l.omega * scale).abs() < 1e-12);
        // and the contact's normal velocity still matches the pusher's
        let w2 = t2.point_velocity(contact);
        assert!((w2[0] - u_slide[0]).abs() < 1e-12);
    }

    #[test]
    fn separating_pusher_leaves_object_still() {
        let p = params();
        let s0 = PushState::new(0.0, 0.0, 0.0).unwrap();
        let a = PushAction { pusher_pos: [-0.045, 0.0225], pusher_vel: [-0.02, 0.0] };
        assert_eq!(push_step(s0, a, &p).unwrap(), s0);
    }

    #[test]
    fn detached_pusher_leaves_object_still() {
        let p = params();
        let s0 = PushState::new(0.0, 0.0, 0.0).unwrap();
        let a = PushAction { pusher_pos: [-0.1, 0.0], pusher_vel: [0.02, 0.0] };
        assert_eq!(push_step(s0, a, &p).unwrap(), s0);
    }

    #[test]
    fn offset_push_rotates_and_stays_attached() {
        let p = params();
        let actions = straight_actions([-0.045, 0.0225], [0.02, 0.0], p.dt, 150);
        let traj = push_rollout(PushState::new(0.0, 0.0, 0.0).unwrap(), &actions, &p).unwrap();
        let last = traj.states.last().unwrap();
        assert!(last[2] < -0.2, "expected clockwise rotation, theta = {}", last[2]);
        // the pusher must stay on the boundary the whole way
        for (s, a) in traj.states.iter().zip(&traj.actions) {
            let rel = [a[0] - s[0], a[1] - s[1]];
            let pb = rot(-s[2], rel);
            assert!(square_sdf(pb, p.half_extent).abs() < 1e-5, "sdf = {}", square_sdf(pb, p.half_extent));
        }
    }

    #[test]
    fn halved_dt_agrees_on_final_pose() {
        let p = params();
        let fine = PushParams { dt: p.dt / 2.0, ..p.clone() };
        let coarse_actions = straight_actions([-0.045, 0.0225], [0.02, 0.0], p.dt, 100);
        let fine_actions = straight_actions([-0.045, 0.0225], [0.02, 0.0], fine.dt, 200);
        let s0 = PushState::new(0.0, 0.0, 0.0).unwrap();
        let a = push_rollout(s0, &coarse_actions, &p).unwrap();
        let b = push_rollout(s0, &fine_actions, &fine).unwrap();
        let fa = a.states.last().unwrap();
        let fb = b.states.last().unwrap();
        assert!((fa[0] - fb[0]).abs() < 1e-3);
        assert!((fa[1] - fb[1]).abs() < 1e-3);
    }

    #[test]
    fn empty_action_list_is_an_error() {
        let s0 = PushState::new(0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            push_rollout(s0, &[], &params()),
            Err(PhysicsError::EmptyActions)
        ));
    }

    #[test]
    fn speed_limit_enforced() {
        let p = params();
        let s0 = PushState::new(0.0, 0.0, 0.0).unwrap();
        let a = PushAction { pusher_pos: [-0.045, 0.0], pusher_vel: [2.0, 0.0] };
        assert!(matches!(push_step(s0, a, &p), Err(PhysicsError::SpeedLimit { .. })));
    }

    #[test]
    fn rollouts_are_bit_deterministic() {
        let p = params();
        let actions = straight_actions([-0.045, 0.0225], [0.02, 0.0], p.dt, 80);
        let s0 = PushState::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(
            push_rollout(s0, &actions, &p).unwrap(),
            push_rollout(s0, &actions, &p).unwrap()
        );
    }
}
