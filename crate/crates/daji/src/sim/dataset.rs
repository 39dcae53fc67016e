//! Procedural labeled reference motions. Each family is a parametric
//! joint-target generator; a candidate clip is accepted only after the
//! scripted lookahead controller executes it in simulation without
//! triggering termination, and the recorded clip contains the *simulated*
//! states, so references are dynamically consistent by construction.

use serde::{Deserialize, Serialize};

use super::biped::{check_termination, sim_step, BipedModel, Termination, N_JOINTS};
use super::clip::{Frame, MotionClip, Segment, FPS};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    WalkForward,
    WalkBackward,
    Squat,
    Hop,
    Wave,
    Balance,
}

pub const ALL_FAMILIES: [MotionFamily; 6] = [
    MotionFamily::WalkForward,
    MotionFamily::WalkBackward,
    MotionFamily::Squat,
    MotionFamily::Hop,
    MotionFamily::Wave,
    MotionFamily::Balance,
];

impl MotionFamily {
    pub fn label(self) -> &'static str {
        match self {
            MotionFamily::WalkForward => "walk forward",
            MotionFamily::WalkBackward => "walk backward",
            MotionFamily::Squat => "squat up and down",
            MotionFamily::Hop => "hop in place",
            MotionFamily::Wave => "swing the left leg",
            MotionFamily::Balance => "stand and balance",
        }
    }

    pub fn instruction_id(self) -> u32 {
        ALL_FAMILIES.iter().position(|f| *f == self).unwrap() as u32
    }
}

/// Sampled gait parameters for one clip.
#[derive(Debug, Clone)]
struct GaitParams {
    amplitude: f64,
    knee_lift: f64,
    freq_hz: f64,
}

/// Joint-position targets of a family at time `t`, built around the
/// nominal crouch. Ankles counter-rotate to keep the feet level.
fn family_targets(family: MotionFamily, p: &GaitParams, nominal: &[f64; N_JOINTS], t: f64) -> [f64; N_JOINTS] {
    let phase = 2.0 * std::f64::consts::PI * p.freq_hz * t;
    let mut q = *nominal;
    let mut set_leg = |leg: usize, dhip: f64, dknee: f64| {
        q[leg * 3] = nominal[0] + dhip;
        q[leg * 3 + 1] = nominal[1] + dknee;
        q[leg * 3 + 2] = nominal[2] - (dhip + dknee);
    };
    match family {
        MotionFamily::WalkForward | MotionFamily::WalkBackward => {
            let dir = if family == MotionFamily::WalkForward { 1.0 } else { -1.0 };
            for leg in 0..2 {
                let ph = phase + leg as f64 * std::f64::consts::PI;
                let dhip = dir * p.amplitude * ph.sin();
                let dknee = -p.knee_lift * (ph + 0.4 * dir).sin().max(0.0);
                set_leg(leg, dhip, dknee);
            }
        }
        MotionFamily::Squat => {
            let dev = 0.5 * p.amplitude * (1.0 - phase.cos());
            for leg in 0..2 {
                set_leg(leg, dev, -2.0 * dev);
            }
        }
        MotionFamily::Hop => {
            let dev = p.amplitude * phase.sin().max(0.0);
            for leg in 0..2 {
                set_leg(leg, dev, -2.0 * dev);
            }
        }
        MotionFamily::Wave => {
            let dhip = p.amplitude * phase.sin();
            let dknee = -0.8 * p.amplitude * (1.0 - phase.cos());
            set_leg(0, dhip, dknee);
        }
        MotionFamily::Balance => {
            let dev = p.amplitude * phase.sin();
            for leg in 0..2 {
                set_leg(leg, dev, -dev);
            }
        }
    }
    q
}

fn sample_params(family: MotionFamily, rng: &mut RngStream) -> GaitParams {
    let (amp, knee, freq) = match family {
        MotionFamily::WalkForward | MotionFamily::WalkBackward => ((0.12, 0.19), (0.18, 0.27), (0.8, 1.1)),
        MotionFamily::Squat => ((0.25, 0.45), (0.0, 0.0), (0.4, 0.7)),
        MotionFamily::Hop => ((0.18, 0.28), (0.0, 0.0), (1.1, 1.6)),
        MotionFamily::Wave => ((0.12, 0.22), (0.0, 0.0), (0.5, 0.9)),
        MotionFamily::Balance => ((0.02, 0.06), (0.0, 0.0), (0.2, 0.4)),
    };
    GaitParams {
        amplitude: rng.uniform_range(amp.0, amp.1),
        knee_lift: rng.uniform_range(knee.0, knee.1),
        freq_hz: rng.uniform_range(freq.0, freq.1),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Clips per single-family label.
    pub min_clips: usize,
    /// Multi-segment clips (>= 2 concatenated families) for streaming eval.
    pub multi_clips: usize,
    /// Segments per multi-segment clip.
    pub multi_segments: usize,
    pub clip_seconds_min: f64,
    pub clip_seconds_max: f64,
    pub max_retries: usize,
    /// Scripted-controller lookahead in frames.
    pub lookahead: usize,
    /// Frames of target cross-blending at family switches.
    pub blend_frames: usize,
    pub families: Vec<MotionFamily>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            min_clips: 5,
            multi_clips: 6,
            multi_segments: 3,
            clip_seconds_min: 4.0,
            clip_seconds_max: 7.0,
            max_retries: 10,
            lookahead: 2,
            blend_frames: 15,
            families: ALL_FAMILIES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FamilyStats {
    pub family: String,
    pub accepted: usize,
    pub rejected: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMeta {
    pub index: usize,
    pub frames: usize,
    pub instruction_ids: Vec<u32>,
    pub multi_segment: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// instruction_id -> label text.
    pub instructions: Vec<String>,
    pub clips: Vec<ClipMeta>,
    pub family_stats: Vec<FamilyStats>,
}

#[derive(Debug, Clone)]
pub struct ReferenceDataset {
    pub clips: Vec<MotionClip>,
    pub manifest: DatasetManifest,
}

/// A planned clip: per-frame target schedule plus segment labels.
struct PlannedClip {
    segments: Vec<(usize, usize, u32)>, // start, end, instruction
    targets: Vec<[f64; N_JOINTS]>,      // includes `lookahead` extra frames
}

fn plan_clip(
    cfg: &DatasetConfig,
    families: &[MotionFamily],
    model: &BipedModel,
    rng: &mut RngStream,
) -> PlannedClip {
    let mut segments = Vec::new();
    let mut targets: Vec<[f64; N_JOINTS]> = Vec::new();
    let mut cursor = 0usize;
    for (si, &fam) in families.iter().enumerate() {
        let secs = rng.uniform_range(cfg.clip_seconds_min, cfg.clip_seconds_max);
        let n = (secs * FPS) as usize;
        let p = sample_params(fam, rng);
        let seg_targets: Vec<[f64; N_JOINTS]> =
            (0..n + cfg.lookahead).map(|f| family_targets(fam, &p, &model.nominal_q, f as f64 / FPS)).collect();
        if si == 0 {
            targets.extend_from_slice(&seg_targets[..n]);
        } else {
            // Cross-blend into the new family over blend_frames.
            let b = cfg.blend_frames.min(n);
            let from = *targets.last().unwrap();
            for (f, tgt) in seg_targets[..n].iter().enumerate() {
                if f < b {
                    let w = (f + 1) as f64 / (b + 1) as f64;
                    let mut mixed = [0.0; N_JOINTS];
                    for j in 0..N_JOINTS {
                        mixed[j] = (1.0 - w) * from[j] + w * tgt[j];
                    }
                    targets.push(mixed);
                } else {
                    targets.push(*tgt);
                }
            }
        }
        segments.push((cursor, cursor + n, fam.instruction_id()));
        cursor += n;
    }
    // Lookahead tail repeats the final target.
    let tail = *targets.last().unwrap();
    for _ in 0..cfg.lookahead {
        targets.push(tail);
    }
    PlannedClip { segments, targets }
}

/// Executes a planned clip with the scripted lookahead controller and
/// records the simulated states. Returns None when termination triggers.
fn execute_plan(model: &BipedModel, plan: &PlannedClip, lookahead: usize) -> Option<MotionClip> {
    let n = plan.segments.last().map(|s| s.1).unwrap_or(0);
    let mut s = model.nominal_state();
    // Settle the contact springs on the first target before recording.
    for _ in 0..15 {
        s = sim_step(model, &s, &plan.targets[0]);
        s.t = 0.0;
    }
    let mut frames = Vec::with_capacity(n);
    for f in 0..n {
        let target = &plan.targets[(f + lookahead).min(plan.targets.len() - 1)];
        s = sim_step(model, &s, target);
        if check_termination(model, &s) != Termination::Ok {
            return None;
        }
        frames.push(Frame::from_state(model, &s));
    }
    let segments = plan
        .segments
        .iter()
        .map(|&(start, end, instruction_id)| Segment { start, end, instruction_id })
        .collect();
    Some(MotionClip { frames, segments })
}

/// Generates the labeled reference corpus. Deterministic in `seed`.
pub fn gen_reference_dataset(cfg: &DatasetConfig, model: &BipedModel, seed: u64) -> ReferenceDataset {
    assert!(cfg.families.len() >= 4, "need at least 4 motion families");
    let mut rng = RngStream::new(seed, 101);
    let mut clips = Vec::new();
    let mut metas = Vec::new();
    let mut stats: Vec<FamilyStats> = cfg
        .families
        .iter()
        .map(|f| FamilyStats { family: f.label().to_string(), ..FamilyStats::default() })
        .collect();

    for (fi, &fam) in cfg.families.iter().enumerate() {
        let mut accepted = 0;
        while accepted < cfg.min_clips {
            let mut ok = false;
            for _ in 0..cfg.max_retries {
                let plan = plan_clip(cfg, &[fam], model, &mut rng);
                match execute_plan(model, &plan, cfg.lookahead) {
                    Some(clip) => {
                        metas.push(ClipMeta {
                            index: clips.len(),
                            frames: clip.len(),
                            instruction_ids: vec![fam.instruction_id()],
                            multi_segment: false,
                        });
                        clips.push(clip);
                        accepted += 1;
                        stats[fi].accepted += 1;
                        ok = true;
                        break;
                    }
                    None => stats[fi].rejected += 1,
                }
            }
            if !ok {
                stats[fi].excluded += 1;
                break; // family generator not executable at these settings
            }
        }
    }

    let mut multi_rng = rng.substream(7);
    for _ in 0..cfg.multi_clips {
        for _ in 0..cfg.max_retries {
            let picks: Vec<MotionFamily> = (0..cfg.multi_segments)
                .map(|_| cfg.families[multi_rng.gen_range_usize(cfg.families.len())])
                .collect();
            let plan = plan_clip(cfg, &picks, model, &mut multi_rng);
            if let Some(clip) = execute_plan(model, &plan, cfg.lookahead) {
                metas.push(ClipMeta {
                    index: clips.len(),
                    frames: clip.len(),
                    instruction_ids: picks.iter().map(|f| f.instruction_id()).collect(),
                    multi_segment: true,
                });
                clips.push(clip);
                break;
            }
        }
    }

    let manifest = DatasetManifest {
        seed,
        instructions: ALL_FAMILIES.iter().map(|f| f.label().to_string()).collect(),
        clips: metas,
        family_stats: stats,
    };
    ReferenceDataset { clips, manifest }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::biped::SimConfig;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            min_clips: 2,
            multi_clips: 2,
            clip_seconds_min: 2.0,
            clip_seconds_max: 3.0,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let model = BipedModel::new(SimConfig::default());
        let a = gen_reference_dataset(&small_cfg(), &model, 7);
        let b = gen_reference_dataset(&small_cfg(), &model, 7);
        assert_eq!(a.clips, b.clips);
        assert_eq!(serde_json::to_string(&a.manifest).unwrap(), serde_json::to_string(&b.manifest).unwrap());
    }

    #[test]
    fn every_family_reaches_min_clips() {
        let model = BipedModel::new(SimConfig::default());
        let cfg = small_cfg();
        let ds = gen_reference_dataset(&cfg, &model, 3);
        for fam in &cfg.families {
            let n = ds
                .manifest
                .clips
                .iter()
                .filter(|m| !m.multi_segment && m.instruction_ids == vec![fam.instruction_id()])
                .count();
            assert!(n >= cfg.min_clips, "{} has {n} clips", fam.label());
        }
    }

    #[test]
    fn validation_pass_rate_is_high() {
        let model = BipedModel::new(SimConfig::default());
        let ds = gen_reference_dataset(&small_cfg(), &model, 11);
        for st in &ds.manifest.family_stats {
            let total = st.accepted + st.rejected;
            assert!(total > 0, "{} generated nothing", st.family);
            let rate = st.accepted as f64 / total as f64;
            assert!(rate >= 0.95, "{} pass rate {rate}", st.family);
        }
    }

    #[test]
    fn segments_tile_and_multi_clips_exist() {
        let model = BipedModel::new(SimConfig::default());
        let ds = gen_reference_dataset(&small_cfg(), &model, 5);
        for clip in &ds.clips {
            clip.validate().unwrap();
        }
        assert!(ds.manifest.clips.iter().any(|m| m.multi_segment));
    }
}
