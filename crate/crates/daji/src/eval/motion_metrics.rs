//! Boundary-centered transition metrics (tFID, tDiv, jerk) and the
//! execution metrics of streaming rollouts (Succ, Fall, L-MPJPE, Skate).

use serde::{Deserialize, Serialize};

use super::evaluator::{diversity, fid, EvalError, Evaluator, FeatureSet};
use crate::deploy::RolloutRecord;
use crate::numerics::RngStream;
use crate::sim::{MotionClip, Segment, FPS, N_JOINTS};

/// Half-width of a boundary-centered transition window.
pub const TRANSITION_HALF: usize = 15;

/// 30-frame motion window centered on an instruction boundary: frames
/// b−15 .. b+15 (upper end exclusive).
#[derive(Debug, Clone)]
pub struct TransitionClip {
    pub boundary: usize,
    pub clip: MotionClip,
}

/// Extracts the transition window around boundary `b`; `None` when the
/// window would run off either end of the clip.
pub fn extract_transition(clip: &MotionClip, b: usize) -> Option<TransitionClip> {
    if b < TRANSITION_HALF || b + TRANSITION_HALF > clip.len() {
        return None;
    }
    let frames = clip.frames[b - TRANSITION_HALF..b + TRANSITION_HALF].to_vec();
    let n = frames.len();
    debug_assert_eq!(n, 2 * TRANSITION_HALF);
    Some(TransitionClip {
        boundary: b,
        clip: MotionClip {
            frames,
            segments: vec![Segment { start: 0, end: n, instruction_id: clip.instruction_at(b) }],
        },
    })
}

/// Third-difference jerk on the joint-position channels:
/// j_t = x_{t+3} − 3·x_{t+2} + 3·x_{t+1} − x_t, magnitudes by Euclidean
/// norm across joints. Returns (peak, mean) with mean divisor T − 3.
pub fn jerk(q: &[[f64; N_JOINTS]]) -> (f64, f64) {
    let t_x = q.len();
    assert!(t_x >= 4, "jerk needs at least 4 frames, got {t_x}");
    let mut peak = 0.0f64;
    let mut total = 0.0;
    for t in 0..t_x - 3 {
        let mut sq = 0.0;
        for j in 0..N_JOINTS {
            let jt = q[t + 3][j] - 3.0 * q[t + 2][j] + 3.0 * q[t + 1][j] - q[t][j];
            sq += jt * jt;
        }
        let mag = sq.sqrt();
        peak = peak.max(mag);
        total += mag;
    }
    (peak, total / (t_x - 3) as f64)
}

fn joint_track(clip: &MotionClip) -> Vec<[f64; N_JOINTS]> {
    clip.frames.iter().map(|f| f.q).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionMetrics {
    pub t_fid: f64,
    pub t_div: f64,
    pub pj: f64,
    pub mj: f64,
    pub n_clips: usize,
}

/// Metrics over boundary-centered transition clips of the generated
/// rollouts, referenced against transition clips from the dataset's
/// multi-segment clips. Returns `None` when the rollouts contain no
/// usable boundary.
pub fn transition_metrics(
    records: &[RolloutRecord],
    reference: &[MotionClip],
    ev: &Evaluator,
    rng: &mut RngStream,
) -> Result<Option<TransitionMetrics>, EvalError> {
    let mut generated = Vec::new();
    for r in records {
        for &b in &r.boundaries {
            if let Some(t) = extract_transition(&r.motion, b) {
                generated.push(t);
            }
        }
    }
    if generated.is_empty() {
        return Ok(None);
    }
    let mut ref_clips = Vec::new();
    for clip in reference {
        for b in clip.boundaries() {
            if let Some(t) = extract_transition(clip, b) {
                ref_clips.push(t);
            }
        }
    }
    let gen_refs: Vec<&MotionClip> = generated.iter().map(|t| &t.clip).collect();
    let gen_feat = FeatureSet::from_clips(ev, &gen_refs, "generated-transitions");
    let t_fid = if ref_clips.is_empty() {
        f64::NAN
    } else {
        let rr: Vec<&MotionClip> = ref_clips.iter().map(|t| &t.clip).collect();
        fid(&gen_feat, &FeatureSet::from_clips(ev, &rr, "reference-transitions"))?
    };
    let t_div = if gen_feat.len() >= 2 { diversity(&gen_feat, 1000, rng)? } else { 0.0 };
    let mut pj = 0.0;
    let mut mj = 0.0;
    for t in &generated {
        let (p, m) = jerk(&joint_track(&t.clip));
        pj += p;
        mj += m;
    }
    let n = generated.len() as f64;
    Ok(Some(TransitionMetrics { t_fid, t_div, pj: pj / n, mj: mj / n, n_clips: generated.len() }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionMetrics {
    pub succ_pct: f64,
    pub fall_pct: f64,
    /// Base-aligned keypoint tracking error in mm (NaN without references).
    pub l_mpjpe_mm: f64,
    /// Mean in-contact horizontal foot speed in mm/s.
    pub skate_mm_s: f64,
}

/// Success/fall rates, keypoint tracking error against optional
/// per-record reference clips, and foot skate. Failed rollouts stay in
/// every denominator.
pub fn execution_metrics(
    records: &[RolloutRecord],
    references: Option<&[MotionClip]>,
) -> ExecutionMetrics {
    assert!(!records.is_empty(), "execution metrics need at least one record");
    let n = records.len() as f64;
    let succ = records.iter().filter(|r| r.succeeded()).count() as f64;
    let succ_pct = 100.0 * succ / n;

    let l_mpjpe_mm = match references {
        None => f64::NAN,
        Some(refs) => {
            assert_eq!(refs.len(), records.len(), "one reference per record");
            let mut total = 0.0;
            let mut count = 0usize;
            for (rec, rf) in records.iter().zip(refs) {
                let frames = rec.motion.len().min(rf.len());
                for t in 0..frames {
                    let a = &rec.motion.frames[t];
                    let b = &rf.frames[t];
                    for k in 0..2 {
                        // Base-aligned: keypoints relative to the base x.
                        let dx = (a.keypoints[k][0] - a.base[0]) - (b.keypoints[k][0] - b.base[0]);
                        let dz = a.keypoints[k][1] - b.keypoints[k][1];
                        total += (dx * dx + dz * dz).sqrt();
                        count += 1;
                    }
                }
            }
            if count == 0 { f64::NAN } else { 1000.0 * total / count as f64 }
        }
    };

    let mut skate_total = 0.0;
    let mut skate_count = 0usize;
    for rec in records {
        for w in rec.motion.frames.windows(2) {
            for k in 0..2 {
                if w[1].contacts[k] {
                    skate_total += (w[1].keypoints[k][0] - w[0].keypoints[k][0]).abs() * FPS;
                    skate_count += 1;
                }
            }
        }
    }
    let skate_mm_s = if skate_count == 0 { 0.0 } else { 1000.0 * skate_total / skate_count as f64 };

    ExecutionMetrics { succ_pct, fall_pct: 100.0 - succ_pct, l_mpjpe_mm, skate_mm_s }
}
