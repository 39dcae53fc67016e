//! Observation builders. `o_prop` is deployable (simulation history and
//! past actions only), `o_ref` reads the reference clip at a configured
//! temporal offset set, `o_priv` adds simulator-only signals.

use serde::{Deserialize, Serialize};

use super::biped::{SimState, N_JOINTS};
use super::clip::MotionClip;

/// Past offsets (frames ago) of the proprioceptive history stack.
pub const PROP_BLOCK_OFFSETS: [usize; 9] = [0, 1, 2, 3, 4, 8, 12, 16, 20];
const ACTION_HISTORY: usize = 8;
const PROP_FRAME_WIDTH: usize = 1 + 2 + N_JOINTS + N_JOINTS; // pitch_rate, gravity, q, dq

/// Per-reference-frame feature width in `o_ref`.
pub const REF_FRAME_WIDTH: usize = 1 + 5 + N_JOINTS + N_JOINTS + 4;

const PRIV_FUTURE_STEPS: [i64; 5] = [5, 10, 15, 20, 25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetVariant {
    NoFuture,
    ShortFuture,
    Full,
    DenseFuture,
    LongFuture,
}

/// Signed frame offsets compressed into the joint-intent latent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetSet {
    pub name: String,
    pub offsets: Vec<i64>,
}

impl OffsetSet {
    pub fn variant(v: OffsetVariant) -> Self {
        let (name, offsets): (&str, Vec<i64>) = match v {
            OffsetVariant::NoFuture => ("no_future", vec![0, -1, -2, -4, -8, -12, -16]),
            OffsetVariant::ShortFuture => ("short_future", vec![0, 1, 2, -1, -2, -4, -8, -12, -16]),
            OffsetVariant::Full => ("full", vec![0, 1, 2, 3, 4, -1, -2, -4, -8, -12, -16]),
            OffsetVariant::DenseFuture => {
                ("dense_future", vec![0, 1, 2, 3, 4, 5, 6, 7, 8, -1, -2, -4, -8, -12, -16])
            }
            OffsetVariant::LongFuture => ("long_future", vec![0, 1, 2, 3, 4, 8, 12, 16, 20, -1, -2, -4, -8]),
        };
        let set = OffsetSet { name: name.to_string(), offsets };
        debug_assert!(set.offsets.contains(&0));
        set
    }

    pub fn parse(name: &str) -> Option<Self> {
        let v = match name {
            "no_future" => OffsetVariant::NoFuture,
            "short_future" => OffsetVariant::ShortFuture,
            "full" => OffsetVariant::Full,
            "dense_future" => OffsetVariant::DenseFuture,
            "long_future" => OffsetVariant::LongFuture,
            _ => return None,
        };
        Some(OffsetSet::variant(v))
    }

    pub fn ref_width(&self) -> usize {
        self.offsets.len() * REF_FRAME_WIDTH
    }
}

/// Rolling record of executed simulation states and applied actions.
/// Index `len-1` is the current frame.
#[derive(Debug, Clone, Default)]
pub struct SimHistory {
    states: Vec<SimState>,
    actions: Vec<[f64; N_JOINTS]>,
}

impl SimHistory {
    pub fn new() -> Self {
        SimHistory::default()
    }

    pub fn push(&mut self, state: SimState, action: [f64; N_JOINTS]) {
        self.states.push(state);
        self.actions.push(action);
        // 21 past state frames and 8 past actions are all observers need.
        if self.states.len() > 64 {
            self.states.remove(0);
            self.actions.remove(0);
        }
    }

    pub fn current(&self) -> &SimState {
        self.states.last().expect("empty history")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State `ago` frames back, padded by repeating the earliest frame.
    fn state_ago(&self, ago: usize) -> &SimState {
        let idx = self.states.len().saturating_sub(1 + ago);
        &self.states[idx]
    }

    fn action_ago(&self, ago: usize) -> [f64; N_JOINTS] {
        let idx = self.actions.len().saturating_sub(1 + ago);
        self.actions[idx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsBundle {
    pub prop: Vec<f64>,
    pub reference: Vec<f64>,
    pub privileged: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsConfig {
    pub variant: String,
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig { variant: "full".to_string() }
    }
}

pub fn prop_width() -> usize {
    PROP_BLOCK_OFFSETS.len() * PROP_FRAME_WIDTH + ACTION_HISTORY * N_JOINTS
}

pub fn priv_width() -> usize {
    3 + 4 + PRIV_FUTURE_STEPS.len() * 3
}

/// Builds the three observation groups for the current frame.
///
/// `o_prop` is a pure function of the simulation history and past
/// actions; `o_ref` stacks reference frames at the offset set, future
/// indices clamped to the clip end by last-frame repetition.
pub fn build_observations(history: &SimHistory, clip: &MotionClip, frame: usize, offsets: &OffsetSet) -> ObsBundle {
    assert!(frame < clip.len(), "frame {frame} out of range for clip of {}", clip.len());
    let mut prop = Vec::with_capacity(prop_width());
    for &ago in &PROP_BLOCK_OFFSETS {
        let s = history.state_ago(ago);
        prop.push(s.pitch_rate);
        prop.push(-s.pitch.sin()); // projected gravity, body x
        prop.push(-s.pitch.cos()); // projected gravity, body z
        prop.extend_from_slice(&s.q);
        prop.extend_from_slice(&s.dq);
    }
    for ago in 0..ACTION_HISTORY {
        prop.extend_from_slice(&history.action_ago(ago));
    }

    let reference = build_reference_obs(clip, frame, offsets);

    let s = history.current();
    let mut privileged = Vec::with_capacity(priv_width());
    privileged.extend_from_slice(&[s.vx, s.vz, s.pitch_rate]);
    for foot in &s.contact_forces {
        privileged.extend_from_slice(foot);
    }
    let now = clip.clamped(frame as i64);
    for &k in &PRIV_FUTURE_STEPS {
        let f = clip.clamped(frame as i64 + k);
        privileged.push(f.base[0] - now.base[0]);
        privileged.push(f.base[1]);
        privileged.push(f.base[2]);
    }
    ObsBundle { prop, reference, privileged }
}

/// The reference block alone (also used by latent export, which needs no
/// simulation history).
pub fn build_reference_obs(clip: &MotionClip, frame: usize, offsets: &OffsetSet) -> Vec<f64> {
    assert!(frame < clip.len(), "frame {frame} out of range");
    let now = clip.clamped(frame as i64);
    let mut out = Vec::with_capacity(offsets.ref_width());
    for &off in &offsets.offsets {
        let f = clip.clamped(frame as i64 + off);
        out.push(f.base[0] - now.base[0]); // root displacement relative to current
        out.push(f.base[1]);
        out.push(f.base[2]);
        out.push(f.base[3]);
        out.push(f.base[4]);
        out.push(f.base[5]);
        out.extend_from_slice(&f.q);
        out.extend_from_slice(&f.dq);
        for kp in &f.keypoints {
            out.push(kp[0] - f.base[0]);
            out.push(kp[1]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::biped::{BipedModel, SimConfig};
    use crate::sim::clip::{Frame, Segment};

    fn test_clip(n: usize) -> MotionClip {
        let model = BipedModel::new(SimConfig::default());
        let mut s = model.nominal_state();
        let frames: Vec<Frame> = (0..n)
            .map(|i| {
                s.x = 0.01 * i as f64;
                s.q[0] = 0.3 + 0.1 * (i as f64 * 0.2).sin();
                Frame::from_state(&model, &s)
            })
            .collect();
        MotionClip { frames, segments: vec![Segment { start: 0, end: n, instruction_id: 0 }] }
    }

    fn test_history() -> SimHistory {
        let model = BipedModel::new(SimConfig::default());
        let mut h = SimHistory::new();
        h.push(model.nominal_state(), [0.0; 6]);
        h
    }

    #[test]
    fn no_future_has_seven_reference_frames() {
        let set = OffsetSet::variant(OffsetVariant::NoFuture);
        assert_eq!(set.offsets.len(), 7);
        let obs = build_observations(&test_history(), &test_clip(60), 30, &set);
        assert_eq!(obs.reference.len(), 7 * REF_FRAME_WIDTH);
    }

    #[test]
    fn full_has_eleven_reference_frames() {
        let set = OffsetSet::variant(OffsetVariant::Full);
        assert_eq!(set.offsets.len(), 11);
        let obs = build_observations(&test_history(), &test_clip(60), 30, &set);
        assert_eq!(obs.reference.len(), 11 * REF_FRAME_WIDTH);
    }

    #[test]
    fn ref_width_matches_all_variants() {
        for v in [
            OffsetVariant::NoFuture,
            OffsetVariant::ShortFuture,
            OffsetVariant::Full,
            OffsetVariant::DenseFuture,
            OffsetVariant::LongFuture,
        ] {
            let set = OffsetSet::variant(v);
            let obs = build_observations(&test_history(), &test_clip(80), 40, &set);
            assert_eq!(obs.reference.len(), set.ref_width());
        }
    }

    #[test]
    fn future_offsets_clamp_to_final_frame() {
        let set = OffsetSet::variant(OffsetVariant::Full);
        let clip = test_clip(40);
        let at_end = build_reference_obs(&clip, 39, &set);
        // Every future slot must equal the offset-0 slot (the final frame),
        // except the relative-displacement channel which is 0 for both.
        let zero_pos = set.offsets.iter().position(|&o| o == 0).unwrap();
        let base = &at_end[zero_pos * REF_FRAME_WIDTH..(zero_pos + 1) * REF_FRAME_WIDTH];
        for (i, &off) in set.offsets.iter().enumerate() {
            if off > 0 {
                let slot = &at_end[i * REF_FRAME_WIDTH..(i + 1) * REF_FRAME_WIDTH];
                assert_eq!(slot, base, "future offset {off} not clamped");
            }
        }
    }

    #[test]
    fn prop_ignores_future_clip_frames() {
        let set = OffsetSet::variant(OffsetVariant::Full);
        let mut clip = test_clip(60);
        let h = test_history();
        let a = build_observations(&h, &clip, 10, &set);
        for f in clip.frames.iter_mut().skip(11) {
            f.q[0] += 1.0;
            f.base[0] += 5.0;
        }
        let b = build_observations(&h, &clip, 10, &set);
        assert_eq!(a.prop, b.prop, "o_prop must not depend on future reference frames");
    }
}
