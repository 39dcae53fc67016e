//! Deterministic scripted teacher: reads the reference a couple of frames
//! ahead and hands it to the PD layer. Future-aware in the minimal sense
//! needed for distillation experiments, and fast enough for tests.

use crate::sim::{MotionClip, SimState, N_JOINTS};

/// Default lookahead in frames (40 ms at 50 Hz).
pub const ORACLE_LOOKAHEAD: i64 = 2;

pub fn oracle_teacher(state: &SimState, clip: &MotionClip, frame: usize) -> [f64; N_JOINTS] {
    oracle_teacher_with(state, clip, frame, ORACLE_LOOKAHEAD)
}

pub fn oracle_teacher_with(_state: &SimState, clip: &MotionClip, frame: usize, lookahead: i64) -> [f64; N_JOINTS] {
    clip.clamped(frame as i64 + lookahead).q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{BipedModel, Frame, MotionClip, Segment, SimConfig, SimState};

    fn clip_with_ramp() -> (MotionClip, SimState) {
        let model = BipedModel::new(SimConfig::default());
        let mut s = model.nominal_state();
        let frames: Vec<Frame> = (0..20)
            .map(|i| {
                s.q[0] = 0.32 + 0.01 * i as f64;
                Frame::from_state(&model, &s)
            })
            .collect();
        (MotionClip { frames, segments: vec![Segment { start: 0, end: 20, instruction_id: 0 }] }, s)
    }

    #[test]
    fn zero_lookahead_returns_current_reference() {
        let (clip, s) = clip_with_ramp();
        let a = oracle_teacher_with(&s, &clip, 7, 0);
        assert_eq!(a, clip.frames[7].q);
    }

    #[test]
    fn lookahead_reads_future_and_clamps_at_end() {
        let (clip, s) = clip_with_ramp();
        assert_eq!(oracle_teacher(&s, &clip, 5), clip.frames[7].q);
        assert_eq!(oracle_teacher(&s, &clip, 19), clip.frames[19].q);
    }

    #[test]
    fn constant_clip_gives_constant_actions() {
        let model = BipedModel::new(SimConfig::default());
        let s = model.nominal_state();
        let frames = vec![Frame::from_state(&model, &s); 10];
        let clip = MotionClip { frames, segments: vec![Segment { start: 0, end: 10, instruction_id: 0 }] };
        let a0 = oracle_teacher(&s, &clip, 0);
        for f in 1..10 {
            assert_eq!(oracle_teacher(&s, &clip, f), a0);
        }
    }
}
