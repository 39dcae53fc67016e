//! Exponential-kernel tracking reward plus regularizers.
//!
//! Terms omitted at desk scale (no planar analog on a 5-link biped with
//! two toe keypoints): keypoint rotation/angular velocity, keypoint
//! velocity, lower/upper-body keypoint splits, feet air time
//! (ref-aligned 5.0 / dense 1.0), soft torque limits (0.01) and joint
//! acceleration L2 (4e-8). Their reference weights are kept here for
//! documentation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::biped::{BipedModel, SimState, N_JOINTS};
use super::clip::MotionClip;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub weight: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub root_position: Kernel,
    pub root_rotation: Kernel,
    pub root_lin_vel: Kernel,
    pub root_ang_vel: Kernel,
    pub keypoint_position: Kernel,
    pub joint_position: Kernel,
    pub joint_velocity: Kernel,
    pub survival: f64,
    pub joint_velocity_l2: f64,
    pub action_rate_l2: f64,
    pub soft_joint_limit: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            root_position: Kernel { weight: 0.5, sigma: 0.3 },
            root_rotation: Kernel { weight: 0.5, sigma: 0.4 },
            root_lin_vel: Kernel { weight: 1.0, sigma: 1.0 },
            root_ang_vel: Kernel { weight: 1.0, sigma: 3.0 },
            keypoint_position: Kernel { weight: 1.0, sigma: 0.3 },
            joint_position: Kernel { weight: 1.0, sigma: 0.5 },
            joint_velocity: Kernel { weight: 0.5, sigma: 3.0 },
            survival: 3.0,
            joint_velocity_l2: 5e-4,
            action_rate_l2: 0.01,
            soft_joint_limit: 1.0,
        }
    }
}

impl RewardConfig {
    /// Upper bound of the tracking portion (all kernels at 1).
    pub fn tracking_weight_sum(&self) -> f64 {
        self.root_position.weight
            + self.root_rotation.weight
            + self.root_lin_vel.weight
            + self.root_ang_vel.weight
            + self.keypoint_position.weight
            + self.joint_position.weight
            + self.joint_velocity.weight
    }
}

pub type RewardTerms = BTreeMap<&'static str, f64>;

fn kernel(e: f64, k: Kernel) -> f64 {
    k.weight * (-e / k.sigma).exp()
}

/// Tracking reward at `frame` of `clip`, with the current and previous
/// actions for the action-rate regularizer.
pub fn tracking_reward(
    model: &BipedModel,
    cfg: &RewardConfig,
    state: &SimState,
    clip: &MotionClip,
    frame: usize,
    action: &[f64; N_JOINTS],
    prev_action: &[f64; N_JOINTS],
) -> (f64, RewardTerms) {
    let r = clip.clamped(frame as i64);
    let mut terms = RewardTerms::new();

    let e_root = ((state.x - r.base[0]).powi(2) + (state.z - r.base[1]).powi(2)).sqrt();
    terms.insert("root_position", kernel(e_root, cfg.root_position));
    terms.insert("root_rotation", kernel((state.pitch - r.base[2]).abs(), cfg.root_rotation));
    let e_lv = ((state.vx - r.base[3]).powi(2) + (state.vz - r.base[4]).powi(2)).sqrt();
    terms.insert("root_lin_vel", kernel(e_lv, cfg.root_lin_vel));
    terms.insert("root_ang_vel", kernel((state.pitch_rate - r.base[5]).abs(), cfg.root_ang_vel));

    // Keypoints compared base-aligned (x relative to the respective root).
    let kps = state.keypoints(model);
    let mut e_kp = 0.0;
    for (kp, rkp) in kps.iter().zip(&r.keypoints) {
        let dx = (kp[0] - state.x) - (rkp[0] - r.base[0]);
        let dz = kp[1] - rkp[1];
        e_kp += (dx * dx + dz * dz).sqrt();
    }
    terms.insert("keypoint_position", kernel(e_kp / kps.len() as f64, cfg.keypoint_position));

    let e_q = state.q.iter().zip(&r.q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    terms.insert("joint_position", kernel(e_q, cfg.joint_position));
    let e_dq = state.dq.iter().zip(&r.dq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    terms.insert("joint_velocity", kernel(e_dq, cfg.joint_velocity));

    terms.insert("survival", cfg.survival);
    let dq_l2: f64 = state.dq.iter().map(|v| v * v).sum();
    terms.insert("joint_velocity_l2", -cfg.joint_velocity_l2 * dq_l2);
    let rate: f64 = action.iter().zip(prev_action).map(|(a, b)| (a - b) * (a - b)).sum();
    terms.insert("action_rate_l2", -cfg.action_rate_l2 * rate);

    // Soft joint-limit penalty: quadratic beyond 95% of the range.
    let mut limit_pen = 0.0;
    for (j, &qj) in state.q.iter().enumerate() {
        let [lo, hi] = model.config.joint_limits[j % 3];
        let margin = 0.05 * (hi - lo);
        if qj > hi - margin {
            limit_pen += (qj - (hi - margin)).powi(2);
        } else if qj < lo + margin {
            limit_pen += ((lo + margin) - qj).powi(2);
        }
    }
    terms.insert("soft_joint_limit", -cfg.soft_joint_limit * limit_pen);

    (terms.values().sum(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::biped::{BipedModel, SimConfig};
    use crate::sim::clip::{Frame, Segment};

    fn setup() -> (BipedModel, RewardConfig, SimState, MotionClip) {
        let model = BipedModel::new(SimConfig::default());
        let state = model.nominal_state();
        let frame = Frame::from_state(&model, &state);
        let clip = MotionClip {
            frames: vec![frame; 4],
            segments: vec![Segment { start: 0, end: 4, instruction_id: 0 }],
        };
        (model, RewardConfig::default(), state, clip)
    }

    #[test]
    fn zero_error_kernels_hit_one() {
        let (model, cfg, state, clip) = setup();
        let a = [0.0; N_JOINTS];
        let (_, terms) = tracking_reward(&model, &cfg, &state, &clip, 0, &a, &a);
        assert!((terms["root_position"] - cfg.root_position.weight).abs() < 1e-12);
        assert!((terms["joint_position"] - cfg.joint_position.weight).abs() < 1e-12);
    }

    #[test]
    fn kernel_at_sigma_is_inverse_e() {
        let k = Kernel { weight: 1.0, sigma: 0.7 };
        assert!((kernel(0.7, k) - (-1.0f64).exp()).abs() < 1e-9);
        assert!((kernel(0.7, k) - 0.367879441).abs() < 1e-9);
    }

    #[test]
    fn config_matches_reference_table() {
        let cfg = RewardConfig::default();
        assert_eq!((cfg.root_position.weight, cfg.root_position.sigma), (0.5, 0.3));
        assert_eq!((cfg.root_rotation.weight, cfg.root_rotation.sigma), (0.5, 0.4));
        assert_eq!((cfg.root_lin_vel.weight, cfg.root_lin_vel.sigma), (1.0, 1.0));
        assert_eq!((cfg.root_ang_vel.weight, cfg.root_ang_vel.sigma), (1.0, 3.0));
        assert_eq!((cfg.keypoint_position.weight, cfg.keypoint_position.sigma), (1.0, 0.3));
        assert_eq!((cfg.joint_position.weight, cfg.joint_position.sigma), (1.0, 0.5));
        assert_eq!((cfg.joint_velocity.weight, cfg.joint_velocity.sigma), (0.5, 3.0));
        assert_eq!(cfg.survival, 3.0);
        assert_eq!(cfg.joint_velocity_l2, 5e-4);
        assert_eq!(cfg.action_rate_l2, 0.01);
        assert_eq!(cfg.soft_joint_limit, 1.0);
    }

    #[test]
    fn tracking_total_bounded_by_weight_sum() {
        let (model, cfg, mut state, clip) = setup();
        state.x += 0.3;
        state.pitch += 0.2;
        let a = [0.1; N_JOINTS];
        let (_, terms) = tracking_reward(&model, &cfg, &state, &clip, 0, &a, &[0.0; N_JOINTS]);
        let tracking: f64 = [
            "root_position",
            "root_rotation",
            "root_lin_vel",
            "root_ang_vel",
            "keypoint_position",
            "joint_position",
            "joint_velocity",
        ]
        .iter()
        .map(|k| terms[*k])
        .sum();
        assert!(tracking > 0.0 && tracking <= cfg.tracking_weight_sum());
    }
}
