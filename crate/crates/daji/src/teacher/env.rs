//! Reference-tracking episode environment over the biped surrogate.

use crate::numerics::RngStream;
use crate::sim::{
    build_observations, check_termination, sim_step, tracking_reward, BipedModel, Frame, MotionClip, ObsBundle,
    OffsetSet, RewardConfig, RewardTerms, SimHistory, SimState, Termination, N_JOINTS,
};

/// Initial simulator state matching a reference frame (contact anchors
/// and forces start cold).
pub fn state_from_frame(frame: &Frame, t: f64) -> SimState {
    let mut s = SimState::zeroed();
    s.x = frame.base[0];
    s.z = frame.base[1];
    s.pitch = frame.base[2];
    s.vx = frame.base[3];
    s.vz = frame.base[4];
    s.pitch_rate = frame.base[5];
    s.q = frame.q;
    s.dq = frame.dq;
    s.contacts = frame.contacts;
    s.t = t;
    s
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: ObsBundle,
    pub reward: f64,
    pub terms: RewardTerms,
    /// Episode over (fall, clip end, or horizon cap).
    pub done: bool,
    /// Fall specifically, as opposed to running out of reference.
    pub terminated: bool,
}

/// One episode tracks one reference clip from its first frame; actions
/// are absolute PD joint targets.
#[derive(Debug, Clone)]
pub struct TrackingEnv {
    pub model: BipedModel,
    pub clips: Vec<MotionClip>,
    pub offsets: OffsetSet,
    pub reward_cfg: RewardConfig,
    /// Hard episode cap in control steps (50 per second).
    pub max_steps: usize,
    clip_idx: usize,
    frame: usize,
    history: SimHistory,
    prev_action: [f64; N_JOINTS],
    done: bool,
}

impl TrackingEnv {
    pub fn new(model: BipedModel, clips: Vec<MotionClip>, offsets: OffsetSet) -> Self {
        assert!(!clips.is_empty(), "tracking env needs at least one clip");
        let mut env = TrackingEnv {
            model,
            clips,
            offsets,
            reward_cfg: RewardConfig::default(),
            max_steps: 1000,
            clip_idx: 0,
            frame: 0,
            history: SimHistory::new(),
            prev_action: [0.0; N_JOINTS],
            done: false,
        };
        env.reset(0);
        env
    }

    pub fn clip(&self) -> &MotionClip {
        &self.clips[self.clip_idx]
    }

    pub fn clip_idx(&self) -> usize {
        self.clip_idx
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn state(&self) -> &SimState {
        self.history.current()
    }

    pub fn history(&self) -> &SimHistory {
        &self.history
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self, clip_idx: usize) -> ObsBundle {
        assert!(clip_idx < self.clips.len(), "clip index out of range");
        self.clip_idx = clip_idx;
        self.frame = 0;
        self.done = false;
        let f0 = &self.clips[clip_idx].frames[0];
        let s0 = state_from_frame(f0, 0.0);
        self.prev_action = f0.q;
        self.history = SimHistory::new();
        self.history.push(s0, f0.q);
        self.observe()
    }

    pub fn reset_random(&mut self, rng: &mut RngStream) -> ObsBundle {
        let idx = rng.gen_range_usize(self.clips.len());
        self.reset(idx)
    }

    pub fn observe(&self) -> ObsBundle {
        build_observations(&self.history, self.clip(), self.frame, &self.offsets)
    }

    pub fn step(&mut self, action: [f64; N_JOINTS]) -> StepOutcome {
        assert!(!self.done, "step on finished episode; call reset");
        let next = sim_step(&self.model, self.history.current(), &action);
        self.frame += 1;
        let (reward, terms) = tracking_reward(
            &self.model,
            &self.reward_cfg,
            &next,
            &self.clips[self.clip_idx],
            self.frame,
            &action,
            &self.prev_action,
        );
        let terminated = check_termination(&self.model, &next) != Termination::Ok;
        self.history.push(next, action);
        self.prev_action = action;
        let out_of_clip = self.frame + 1 >= self.clips[self.clip_idx].len();
        self.done = terminated || out_of_clip || self.frame >= self.max_steps;
        // When the clip is exhausted the reference lookup clamps, so the
        // observation stays valid even on the terminal step.
        let frame_for_obs = self.frame.min(self.clips[self.clip_idx].len() - 1);
        let obs = build_observations(&self.history, self.clip(), frame_for_obs, &self.offsets);
        StepOutcome { obs, reward, terms, done: self.done, terminated }
    }
}
