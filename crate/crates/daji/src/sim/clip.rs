use serde::{Deserialize, Serialize};

use super::biped::{BipedModel, SimState, N_JOINTS};

pub const FPS: f64 = 50.0;

/// Flat channel layout used by observation builders, metrics and the
/// motion file format:
/// base (x, z, pitch, vx, vz, pitch_rate), q[6], dq[6], keypoints
/// (toe_l x/z, toe_r x/z), contact flags (2).
pub const CLIP_CHANNELS: usize = 6 + N_JOINTS + N_JOINTS + 4 + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub base: [f64; 6],
    pub q: [f64; N_JOINTS],
    pub dq: [f64; N_JOINTS],
    pub keypoints: [[f64; 2]; 2],
    pub contacts: [bool; 2],
}

impl Frame {
    pub fn from_state(model: &BipedModel, s: &SimState) -> Self {
        Frame {
            base: [s.x, s.z, s.pitch, s.vx, s.vz, s.pitch_rate],
            q: s.q,
            dq: s.dq,
            keypoints: s.keypoints(model),
            contacts: s.contacts,
        }
    }

    pub fn to_channels(&self) -> [f64; CLIP_CHANNELS] {
        let mut out = [0.0; CLIP_CHANNELS];
        out[..6].copy_from_slice(&self.base);
        out[6..12].copy_from_slice(&self.q);
        out[12..18].copy_from_slice(&self.dq);
        out[18] = self.keypoints[0][0];
        out[19] = self.keypoints[0][1];
        out[20] = self.keypoints[1][0];
        out[21] = self.keypoints[1][1];
        out[22] = self.contacts[0] as u8 as f64;
        out[23] = self.contacts[1] as u8 as f64;
        out
    }

    pub fn from_channels(ch: &[f64]) -> Self {
        assert_eq!(ch.len(), CLIP_CHANNELS, "bad frame channel count");
        let mut base = [0.0; 6];
        base.copy_from_slice(&ch[..6]);
        let mut q = [0.0; N_JOINTS];
        q.copy_from_slice(&ch[6..12]);
        let mut dq = [0.0; N_JOINTS];
        dq.copy_from_slice(&ch[12..18]);
        Frame {
            base,
            q,
            dq,
            keypoints: [[ch[18], ch[19]], [ch[20], ch[21]]],
            contacts: [ch[22] > 0.5, ch[23] > 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize, // exclusive
    pub instruction_id: u32,
}

/// Fixed-rate sequence of surrogate frames with per-segment instruction
/// labels. Segments tile the clip without overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub frames: Vec<Frame>,
    pub segments: Vec<Segment>,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.frames.is_empty() {
            return Err("clip has no frames".into());
        }
        let mut cursor = 0;
        for seg in &self.segments {
            if seg.start != cursor || seg.end <= seg.start {
                return Err(format!("segments do not tile the clip at frame {cursor}"));
            }
            cursor = seg.end;
        }
        if cursor != self.frames.len() {
            return Err(format!("segments cover {cursor} of {} frames", self.frames.len()));
        }
        Ok(())
    }

    /// Frame index clamped to the clip (future offsets repeat the last
    /// frame, past offsets the first).
    pub fn clamped(&self, frame: i64) -> &Frame {
        let idx = frame.clamp(0, self.frames.len() as i64 - 1) as usize;
        &self.frames[idx]
    }

    pub fn instruction_at(&self, frame: usize) -> u32 {
        self.segments
            .iter()
            .find(|s| frame >= s.start && frame < s.end)
            .map(|s| s.instruction_id)
            .unwrap_or_else(|| self.segments.last().expect("labeled clip").instruction_id)
    }

    /// Instruction boundaries (frame indices where the label switches).
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.windows(2).map(|w| w[1].start).collect()
    }
}
