//! Planar 5-link biped dynamics.
//!
//! The torso is a rigid body carrying all mass; each leg is a massless
//! thigh/shank/foot chain with per-joint reflected inertia. Contact is a
//! one-sided penalty spring-damper at the heel and toe of each foot with
//! viscous tangential friction under a Coulomb cap. Integration is
//! semi-implicit Euler with `substeps` physics steps per control step.

use serde::{Deserialize, Serialize};

pub const N_JOINTS: usize = 6; // hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r
const N_FEET: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub substeps: u32,
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
    pub gravity: f64,
    pub torso_mass: f64,
    pub torso_inertia: f64,
    pub joint_inertia: f64,
    pub joint_damping: f64,
    pub contact: ContactConfig,
    /// Lower/upper bound per joint kind (hip, knee, ankle), radians.
    pub joint_limits: [[f64; 2]; 3],
    /// Upright rotational spring on the torso. A planar point-mass torso
    /// over ground-level friction is far harder to balance than the 3D
    /// articulated body it stands in for, so this models the missing
    /// whole-body stabilization; it saturates quickly against the contact
    /// torques a bad gait produces, so falls remain reachable.
    pub upright_stiffness: f64,
    pub upright_damping: f64,
    /// Termination: base height threshold as a fraction of nominal height.
    pub height_frac: f64,
    /// Termination: absolute pitch threshold, radians.
    pub pitch_limit: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactConfig {
    pub stiffness: f64,
    pub damping: f64,
    pub friction_mu: f64,
    /// Tangential stick spring stiffness (anchor-based static friction).
    pub tangential_stiffness: f64,
    /// Tangential damping while sticking. Explicitly integrated, so it
    /// must respect h * visc * r^2 / I < 2 for the pitch and joint inertias.
    pub tangential_visc: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        ContactConfig {
            stiffness: 2e4,
            damping: 200.0,
            friction_mu: 0.8,
            tangential_stiffness: 2e3,
            tangential_visc: 50.0,
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.02,
            substeps: 4,
            kp: 120.0,
            kd: 4.0,
            torque_limit: 90.0,
            gravity: 9.81,
            torso_mass: 24.0,
            torso_inertia: 4.0,
            joint_inertia: 0.18,
            joint_damping: 0.08,
            contact: ContactConfig::default(),
            upright_stiffness: 120.0,
            upright_damping: 30.0,
            joint_limits: [[-1.2, 1.4], [-2.4, 0.05], [-0.9, 0.9]],
            height_frac: 0.4,
            pitch_limit: 1.0,
        }
    }
}

/// Geometry and derived constants; cheap to clone around.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BipedModel {
    pub config: SimConfig,
    pub hip_offset: f64,  // hip below torso center, m
    pub thigh_len: f64,
    pub shank_len: f64,
    /// Ankle-to-toe distance along the foot.
    pub foot_len: f64,
    /// Ankle-to-heel distance, opposite the toe.
    pub heel_len: f64,
    /// Per-foot multipliers applied by domain randomization.
    pub kp_scale: [f64; N_JOINTS],
    pub kd_scale: [f64; N_JOINTS],
    pub friction_scale: f64,
    pub nominal_q: [f64; N_JOINTS],
    pub nominal_height: f64,
}

impl BipedModel {
    pub fn new(config: SimConfig) -> Self {
        // Slightly crouched stance; foot roughly level.
        let nominal_leg = [0.32, -0.64, 0.32];
        let mut nominal_q = [0.0; N_JOINTS];
        nominal_q[..3].copy_from_slice(&nominal_leg);
        nominal_q[3..].copy_from_slice(&nominal_leg);
        let mut model = BipedModel {
            config,
            hip_offset: 0.2,
            thigh_len: 0.4,
            shank_len: 0.4,
            foot_len: 0.1,
            heel_len: 0.1,
            kp_scale: [1.0; N_JOINTS],
            kd_scale: [1.0; N_JOINTS],
            friction_scale: 1.0,
            nominal_q,
            nominal_height: 0.0,
        };
        // Nominal base height: place the lowest contact point on the ground.
        let probe = SimState { z: 0.0, q: nominal_q, ..SimState::zeroed() };
        let lowest = model
            .contact_points(&probe)
            .iter()
            .map(|p| p.pos[1])
            .fold(f64::INFINITY, f64::min);
        model.nominal_height = -lowest;
        model
    }

    pub fn nominal_state(&self) -> SimState {
        SimState { z: self.nominal_height, q: self.nominal_q, ..SimState::zeroed() }
    }

    /// Heel and toe world positions/velocities plus contact Jacobian
    /// columns for the owning leg's three joints.
    fn contact_points(&self, s: &SimState) -> Vec<ContactPoint> {
        let mut pts = Vec::with_capacity(4);
        for leg in 0..N_FEET {
            let j0 = leg * 3;
            // Pitch is counterclockwise-positive in the x-z plane; the body
            // "down" axis is (sin pitch, -cos pitch) and joint angles add
            // onto pitch along the chain.
            let hip = [s.x + self.hip_offset * s.pitch.sin(), s.z - self.hip_offset * s.pitch.cos()];
            let a1 = s.pitch + s.q[j0];
            let knee = [hip[0] + self.thigh_len * a1.sin(), hip[1] - self.thigh_len * a1.cos()];
            let a2 = a1 + s.q[j0 + 1];
            let ankle = [knee[0] + self.shank_len * a2.sin(), knee[1] - self.shank_len * a2.cos()];
            let a3 = a2 + s.q[j0 + 2] + std::f64::consts::FRAC_PI_2; // foot roughly horizontal at q=0
            let toe = [ankle[0] + self.foot_len * a3.sin(), ankle[1] - self.foot_len * a3.cos()];
            let heel = [ankle[0] - self.heel_len * a3.sin(), ankle[1] + self.heel_len * a3.cos()];
            for (end, pos) in [(End::Heel, heel), (End::Toe, toe)] {
                // dp/dq_j = (-r_y, r_x) for r from the joint pivot to p.
                let mut jac = [[0.0; 2]; 3];
                let pivots = [hip, knee, ankle];
                for (ji, pivot) in pivots.iter().enumerate() {
                    let r = [pos[0] - pivot[0], pos[1] - pivot[1]];
                    jac[ji] = [-r[1], r[0]];
                }
                pts.push(ContactPoint { leg, end, pos, jac });
            }
        }
        pts
    }

    /// World velocity of a contact point.
    fn point_velocity(&self, s: &SimState, cp: &ContactPoint) -> [f64; 2] {
        // Base translational velocity plus rotation about base center plus
        // joint contributions through the chain jacobian.
        // A ccw spin moves a point at offset r by (-r_z, r_x) per radian.
        let r = [cp.pos[0] - s.x, cp.pos[1] - s.z];
        let mut v = [s.vx - s.pitch_rate * r[1], s.vz + s.pitch_rate * r[0]];
        let j0 = cp.leg * 3;
        for ji in 0..3 {
            v[0] += cp.jac[ji][0] * s.dq[j0 + ji];
            v[1] += cp.jac[ji][1] * s.dq[j0 + ji];
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Heel,
    Toe,
}

struct ContactPoint {
    leg: usize,
    end: End,
    pos: [f64; 2],
    jac: [[f64; 2]; 3],
}

/// Full instantaneous simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch_rate: f64,
    pub q: [f64; N_JOINTS],
    pub dq: [f64; N_JOINTS],
    pub contacts: [bool; N_FEET],
    /// Per-foot (fx, fz) contact force from the last step.
    pub contact_forces: [[f64; 2]; N_FEET],
    /// Friction spring anchors per contact point (heel_l, toe_l, heel_r,
    /// toe_r); None while the point is airborne.
    pub anchors: [Option<f64>; 4],
    pub t: f64,
    pub fault: bool,
}

impl SimState {
    pub fn zeroed() -> Self {
        SimState {
            x: 0.0,
            z: 0.0,
            pitch: 0.0,
            vx: 0.0,
            vz: 0.0,
            pitch_rate: 0.0,
            q: [0.0; N_JOINTS],
            dq: [0.0; N_JOINTS],
            contacts: [false; N_FEET],
            contact_forces: [[0.0; 2]; N_FEET],
            anchors: [None; 4],
            t: 0.0,
            fault: false,
        }
    }

    /// Toe world positions (the clip keypoints).
    pub fn keypoints(&self, model: &BipedModel) -> [[f64; 2]; N_FEET] {
        let pts = model.contact_points(self);
        let mut out = [[0.0; 2]; N_FEET];
        for cp in &pts {
            if cp.end == End::Toe {
                out[cp.leg] = cp.pos;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        let scalars = [self.x, self.z, self.pitch, self.vx, self.vz, self.pitch_rate];
        scalars.iter().all(|v| v.is_finite())
            && self.q.iter().all(|v| v.is_finite())
            && self.dq.iter().all(|v| v.is_finite())
    }

    /// Mechanical energy of the surrogate (base kinetic + potential plus
    /// joint kinetic in the reflected inertias).
    pub fn mechanical_energy(&self, model: &BipedModel) -> f64 {
        let c = &model.config;
        0.5 * c.torso_mass * (self.vx * self.vx + self.vz * self.vz)
            + 0.5 * c.torso_inertia * self.pitch_rate * self.pitch_rate
            + c.torso_mass * c.gravity * self.z
            + 0.5 * c.joint_inertia * self.dq.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Advances one control step (`dt`) given PD joint-position targets.
pub fn sim_step(model: &BipedModel, state: &SimState, joint_targets: &[f64; N_JOINTS]) -> SimState {
    assert!(joint_targets.iter().all(|v| v.is_finite()), "non-finite joint targets");
    let c = &model.config;
    let h = c.dt / c.substeps as f64;
    let mut s = state.clone();
    for _ in 0..c.substeps {
        substep(model, &mut s, joint_targets, h);
        if !s.is_finite() {
            s.fault = true;
            return s;
        }
    }
    s.t = state.t + c.dt;
    s
}

fn substep(model: &BipedModel, s: &mut SimState, targets: &[f64; N_JOINTS], h: f64) {
    let c = &model.config;

    // PD torques, clamped.
    let mut tau = [0.0; N_JOINTS];
    for j in 0..N_JOINTS {
        let raw = c.kp * model.kp_scale[j] * (targets[j] - s.q[j]) - c.kd * model.kd_scale[j] * s.dq[j];
        tau[j] = raw.clamp(-c.torque_limit, c.torque_limit);
    }

    // Contact forces. They act on the base only: the legs are massless
    // servo-driven appendages, so feeding ground forces back into the
    // joint coordinates would couple the stiff contact springs to the
    // small reflected inertias and destabilize the explicit integrator.
    let pts = model.contact_points(s);
    let mut base_force = [0.0, -c.torso_mass * c.gravity];
    let mut base_torque = -c.upright_stiffness * s.pitch - c.upright_damping * s.pitch_rate;
    let mut contacts = [false; N_FEET];
    let mut foot_forces = [[0.0; 2]; N_FEET];
    let mu = c.contact.friction_mu * model.friction_scale;
    for (pi, cp) in pts.iter().enumerate() {
        if cp.pos[1] >= 0.0 {
            s.anchors[pi] = None;
            continue;
        }
        let v = model.point_velocity(s, cp);
        let fn_ = (c.contact.stiffness * (-cp.pos[1]) - c.contact.damping * v[1]).max(0.0);
        if fn_ == 0.0 {
            s.anchors[pi] = None;
            continue;
        }
        // Stick-slip friction: a tangential spring against an anchor under
        // a Coulomb cap; the anchor drags along when the cap is hit.
        let kt = c.contact.tangential_stiffness;
        let anchor = *s.anchors[pi].get_or_insert(cp.pos[0]);
        let raw = -kt * (cp.pos[0] - anchor) - c.contact.tangential_visc * v[0];
        let ft = raw.clamp(-mu * fn_, mu * fn_);
        if raw.abs() > mu * fn_ {
            // Slide: move the anchor so the spring alone produces the
            // capped force at the current position.
            s.anchors[pi] = Some(cp.pos[0] + ft / kt);
        }
        let f = [ft, fn_];
        contacts[cp.leg] = true;
        foot_forces[cp.leg][0] += f[0];
        foot_forces[cp.leg][1] += f[1];
        base_force[0] += f[0];
        base_force[1] += f[1];
        // Counterclockwise-positive torque about the base.
        let r = [cp.pos[0] - s.x, cp.pos[1] - s.z];
        base_torque += r[0] * f[1] - r[1] * f[0];
    }
    s.contacts = contacts;
    s.contact_forces = foot_forces;

    // Semi-implicit Euler.
    s.vx += h * base_force[0] / c.torso_mass;
    s.vz += h * base_force[1] / c.torso_mass;
    s.pitch_rate += h * base_torque / c.torso_inertia;
    s.x += h * s.vx;
    s.z += h * s.vz;
    s.pitch += h * s.pitch_rate;

    for j in 0..N_JOINTS {
        let acc = (tau[j] - c.joint_damping * s.dq[j]) / c.joint_inertia;
        s.dq[j] += h * acc;
        s.q[j] += h * s.dq[j];
        let kind = j % 3;
        let [lo, hi] = c.joint_limits[kind];
        if s.q[j] < lo {
            s.q[j] = lo;
            s.dq[j] = s.dq[j].max(0.0);
        } else if s.q[j] > hi {
            s.q[j] = hi;
            s.dq[j] = s.dq[j].min(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Ok,
    FellHeight,
    FellOrientation,
}

pub fn check_termination(model: &BipedModel, state: &SimState) -> Termination {
    if state.fault || state.z < model.config.height_frac * model.nominal_height {
        Termination::FellHeight
    } else if state.pitch.abs() > model.config.pitch_limit {
        Termination::FellOrientation
    } else {
        Termination::Ok
    }
}
