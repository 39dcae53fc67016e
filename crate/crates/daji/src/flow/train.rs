//! Flow-matching training with the scheduled self-conditioning curriculum,
//! Euler chunk generation, and autoregressive rollout.

use serde::{Deserialize, Serialize};

use super::model::{flow_bucket, sample_flow_time, ConditionSeq, FlowConfig, FlowError, FlowModel, LatentChunk};
use crate::act::LatentTrajectory;
use crate::numerics::nn::BoundParams;
use crate::numerics::{adam_step, lr_schedule, Array, RngStream, Tape, Tensor};

/// Self-conditioning curriculum: off, then a linear ramp to always-on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfCondSchedule {
    pub off_until: usize,
    pub ramp_len: usize,
    pub ksc: usize,
    pub lambda_sc: f64,
}

impl SelfCondSchedule {
    pub fn from_config(cfg: &FlowConfig) -> Self {
        SelfCondSchedule {
            off_until: (cfg.off_frac * cfg.total_steps as f64).round() as usize,
            ramp_len: ((cfg.ramp_frac * cfg.total_steps as f64).round() as usize).max(1),
            ksc: cfg.ksc,
            lambda_sc: cfg.lambda_sc,
        }
    }
}

/// Probability of using the self-conditioned objective at step u.
pub fn p_sc(u: usize, sched: &SelfCondSchedule) -> f64 {
    if u < sched.off_until {
        0.0
    } else {
        (((u - sched.off_until) as f64) / sched.ramp_len as f64).min(1.0)
    }
}

/// Teacher-forced flow-matching loss for one chunk: MSE between the
/// predicted velocity at X_s = (1−s)ε + s·X_0 and the target (X_0 − ε).
pub fn flow_loss(x0: &[f64], cond: &ConditionSeq, s: f64, eps: &[f64], model: &FlowModel) -> f64 {
    assert_eq!(x0.len(), eps.len(), "chunk/noise shape mismatch");
    let tape = Tape::new();
    let bp = BoundParams::bind(&tape, &model.params);
    let c = tape.leaf(&cond.tokens);
    flow_loss_on_tape(&tape, &bp, model, x0, &c, s, eps, None).scalar_value()
}

/// The same loss built on a caller-provided tape (training path).
#[allow(clippy::too_many_arguments)]
fn flow_loss_on_tape(
    tape: &Tape,
    bp: &BoundParams,
    model: &FlowModel,
    x0: &[f64],
    cond: &Tensor,
    s: f64,
    eps: &[f64],
    drop: Option<(&mut RngStream, f64)>,
) -> Tensor {
    let (h, dz) = (model.config.h_chunk, model.config.dz);
    assert_eq!(x0.len(), h * dz, "chunk shape mismatch");
    let xs: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| (1.0 - s) * e + s * x).collect();
    let target: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| x - e).collect();
    let xs = tape.leaf(&Array::new(vec![h, dz], xs));
    let target = tape.leaf(&Array::new(vec![h, dz], target));
    let v = model.velocity(bp, &xs, flow_bucket(s, model.config.buckets), cond, drop);
    v.sub(&target).square().mean()
}

/// Euler integration X ← X + (1/M)·f(X, s_k) over the grid s_k = k/M.
pub fn euler_integrate(f: impl Fn(&[f64], f64) -> Vec<f64>, eps: &[f64], m: usize) -> Vec<f64> {
    let mut x = eps.to_vec();
    for k in 0..m {
        let s = k as f64 / m as f64;
        let v = f(&x, s);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += vi / m as f64;
        }
    }
    x
}

/// Generates one chunk from noise with M Euler steps (gradient-free).
pub fn generate_chunk(cond: &ConditionSeq, model: &FlowModel, m: usize, rng: &mut RngStream) -> LatentChunk {
    let (h, dz) = (model.config.h_chunk, model.config.dz);
    let eps = rng.normal_vec(h * dz);
    let data = euler_integrate(|x, s| model.velocity_plain(x, s, cond), &eps, m);
    LatentChunk::new(h, dz, data)
}

/// Self-conditioned loss over ksc chunks starting at frame `start` (the
/// first frame of chunk 1). Chunks ≥ 2 condition on histories where the
/// model's own gradient-detached generations replace the ground truth.
/// Returns (loss tensor, L¹, mean Lᵏ).
#[allow(clippy::too_many_arguments)]
fn sc_loss_on_tape(
    tape: &Tape,
    bp: &BoundParams,
    model: &FlowModel,
    traj: &LatentTrajectory,
    text: &[f64],
    start: usize,
    sched: &SelfCondSchedule,
    rng: &mut RngStream,
    drop_p: Option<f64>,
) -> (Tensor, f64, f64) {
    let (h, dz, t_obs) = (model.config.h_chunk, model.config.dz, model.config.t_obs);
    let gt_lo = start.saturating_sub(t_obs);
    // Rolling history: ground truth up to `start`, then generated chunks.
    let mut history: Vec<f64> = traj.latents[gt_lo * dz..start * dz].to_vec();
    let mut loss: Option<Tensor> = None;
    let mut l1 = 0.0;
    let mut lk_sum = 0.0;
    for k in 0..sched.ksc {
        let c0 = start + k * h;
        let x0 = &traj.latents[c0 * dz..(c0 + h) * dz];
        let cond = model.condition_tokens(bp, text, &history);
        let s = sample_flow_time(rng);
        let eps = rng.normal_vec(h * dz);
        let drop = drop_p.map(|p| (&mut *rng, p));
        let lk = flow_loss_on_tape(tape, bp, model, x0, &cond, s, &eps, drop);
        let weight = if k == 0 { 1.0 } else { sched.lambda_sc / (sched.ksc - 1) as f64 };
        if k == 0 {
            l1 = lk.scalar_value();
        } else {
            lk_sum += lk.scalar_value();
        }
        let term = lk.scale(weight);
        loss = Some(match loss {
            None => term,
            Some(acc) => acc.add(&term),
        });
        if k + 1 < sched.ksc {
            // Generate the chunk the deployment path would append; detach
            // by construction (plain values, fresh tapes inside).
            let cond_plain = ConditionSeq { tokens: cond.value(), n_text: 1, n_obs: 0 };
            let generated = generate_chunk(&cond_plain, model, model.config.m_euler, rng);
            history.extend_from_slice(&generated.data);
            let frames = history.len() / dz;
            if frames > t_obs {
                history.drain(0..(frames - t_obs) * dz);
            }
        }
    }
    (loss.unwrap(), l1, lk_sum / (sched.ksc - 1).max(1) as f64)
}

/// Standalone self-conditioned objective value (no update).
pub fn self_conditioned_loss(
    traj: &LatentTrajectory,
    instruction_id: u32,
    model: &FlowModel,
    sched: &SelfCondSchedule,
    rng: &mut RngStream,
) -> Result<f64, FlowError> {
    let need = model.config.t_obs + sched.ksc * model.config.h_chunk;
    if traj.frames() < need {
        return Err(FlowError::TrajectoryTooShort { have: traj.frames(), need });
    }
    let text = model.text_embedding(instruction_id)?.to_vec();
    let tape = Tape::new();
    let bp = BoundParams::bind(&tape, &model.params);
    let start = model.config.t_obs + rng.gen_range_usize(traj.frames() - need + 1);
    let (loss, _, _) = sc_loss_on_tape(&tape, &bp, model, traj, &text, start, sched, rng, None);
    Ok(loss.scalar_value())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowLogRow {
    pub step: usize,
    pub lr: f64,
    pub p_sc: f64,
    pub used_sc: bool,
    pub loss: f64,
    pub l1: f64,
    pub lsc: f64,
}

/// Stage-3 training: teacher-forced flow matching, switching to the
/// self-conditioned objective with probability p_sc(u).
pub fn train_flow(
    corpus: &[LatentTrajectory],
    cfg: &FlowConfig,
    seed: u64,
) -> Result<(FlowModel, Vec<FlowLogRow>), FlowError> {
    if corpus.is_empty() {
        return Err(FlowError::SchemaMismatch("empty latent corpus".into()));
    }
    for t in corpus {
        if t.dz != cfg.dz {
            return Err(FlowError::SchemaMismatch(format!("trajectory dz {} vs config dz {}", t.dz, cfg.dz)));
        }
        if t.frames() < cfg.h_chunk + 1 {
            return Err(FlowError::SchemaMismatch(format!(
                "trajectory of {} frames shorter than one chunk",
                t.frames()
            )));
        }
    }
    let mut model = FlowModel::new(cfg.clone(), seed);
    let sched = SelfCondSchedule::from_config(cfg);
    let mut rng = RngStream::new(seed, 43);
    let sc_need = cfg.t_obs + sched.ksc * cfg.h_chunk;
    let dz = cfg.dz;
    let mut log = Vec::with_capacity(cfg.total_steps);
    for u in 0..cfg.total_steps {
        let lr = lr_schedule((u + 1) as u64, cfg.total_steps as u64, cfg.lr, cfg.min_lr, cfg.warmup_steps as u64);
        let p = p_sc(u, &sched);
        let traj = &corpus[rng.gen_range_usize(corpus.len())];
        let use_sc = rng.uniform() < p && traj.frames() >= sc_need;
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &model.params);
        let drop_p = (cfg.dropout > 0.0).then_some(cfg.dropout);
        let (loss, l1, lsc) = if use_sc {
            let start = cfg.t_obs + rng.gen_range_usize(traj.frames() - sc_need + 1);
            let text = model.text_embedding(traj.instruction_ids[start])?.to_vec();
            sc_loss_on_tape(&tape, &bp, &model, traj, &text, start, &sched, &mut rng, drop_p)
        } else {
            // Teacher-forced single chunk with ground-truth history.
            let start = 1 + rng.gen_range_usize(traj.frames() - cfg.h_chunk);
            let text = model.text_embedding(traj.instruction_ids[start])?.to_vec();
            let gt_lo = start.saturating_sub(cfg.t_obs);
            let history = &traj.latents[gt_lo * dz..start * dz];
            let cond = model.condition_tokens(&bp, &text, history);
            let x0 = &traj.latents[start * dz..(start + cfg.h_chunk) * dz];
            let s = sample_flow_time(&mut rng);
            let eps = rng.normal_vec(cfg.h_chunk * dz);
            let drop = drop_p.map(|p| (&mut rng, p));
            let l = flow_loss_on_tape(&tape, &bp, &model, x0, &cond, s, &eps, drop);
            let v = l.scalar_value();
            (l, v, 0.0)
        };
        let loss_v = loss.scalar_value();
        assert!(loss_v.is_finite(), "non-finite flow loss at step {u}");
        let grads = loss.backward();
        let grad_vecs = bp.grads(&grads);
        adam_step(model.params.arrays_mut(), &grad_vecs, &mut model.opt, lr, cfg.grad_clip);
        log.push(FlowLogRow { step: u, lr, p_sc: p, used_sc: use_sc, loss: loss_v, l1, lsc });
    }
    model.trained = true;
    Ok((model, log))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutStats {
    /// Instruction-embedding lookups (cache misses).
    pub text_lookups: usize,
    pub chunks: usize,
}

/// Autoregressive free rollout: one instruction id per chunk; the condition
/// text embedding is re-fetched only when the id changes.
pub fn autoregressive_rollout(
    model: &FlowModel,
    instructions: &[u32],
    rng: &mut RngStream,
) -> Result<(LatentTrajectory, RolloutStats), FlowError> {
    let cfg = &model.config;
    let (h, dz) = (cfg.h_chunk, cfg.dz);
    let max_hist = cfg.t_obs.min(cfg.k_history * h);
    let mut history: Vec<f64> = Vec::new();
    let mut latents = Vec::with_capacity(instructions.len() * h * dz);
    let mut ids = Vec::with_capacity(instructions.len() * h);
    let mut stats = RolloutStats::default();
    let mut cached: Option<(u32, Vec<f64>)> = None;
    for &instr in instructions {
        let text = match &cached {
            Some((id, t)) if *id == instr => t.clone(),
            _ => {
                let t = model.text_embedding(instr)?.to_vec();
                stats.text_lookups += 1;
                cached = Some((instr, t.clone()));
                t
            }
        };
        let cond = model.encode_condition_plain(&text, &history);
        let chunk = generate_chunk(&cond, model, cfg.m_euler, rng);
        latents.extend_from_slice(&chunk.data);
        ids.extend(std::iter::repeat_n(instr, h));
        history.extend_from_slice(&chunk.data);
        let frames = history.len() / dz;
        if frames > max_hist {
            history.drain(0..(frames - max_hist) * dz);
        }
        assert!(history.len() / dz <= cfg.t_obs, "history buffer exceeded T_obs");
        stats.chunks += 1;
    }
    Ok((LatentTrajectory { clip_index: 0, dz, latents, instruction_ids: ids }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> FlowModel {
        FlowModel::new(super::super::model::tests::tiny_config(), seed)
    }

    fn synthetic_traj(model: &FlowModel, frames: usize, instr: u32, seed: u64) -> LatentTrajectory {
        // Smooth multi-sine latent trajectory, one instruction throughout.
        let dz = model.config.dz;
        let mut rng = RngStream::new(seed, 0);
        let phases: Vec<f64> = (0..dz).map(|_| rng.uniform_range(0.0, 6.28)).collect();
        let freqs: Vec<f64> = (0..dz).map(|_| rng.uniform_range(0.05, 0.2)).collect();
        let mut latents = Vec::with_capacity(frames * dz);
        for t in 0..frames {
            for d in 0..dz {
                latents.push((freqs[d] * t as f64 + phases[d]).sin());
            }
        }
        LatentTrajectory { clip_index: 0, dz, latents, instruction_ids: vec![instr; frames] }
    }

    #[test]
    fn p_sc_piecewise_values() {
        let sched = SelfCondSchedule { off_until: 100_000, ramp_len: 40_000, ksc: 8, lambda_sc: 0.25 };
        assert_eq!(p_sc(0, &sched), 0.0);
        assert_eq!(p_sc(99_999, &sched), 0.0);
        assert_eq!(p_sc(100_000, &sched), 0.0);
        assert_eq!(p_sc(120_000, &sched), 0.5);
        assert_eq!(p_sc(140_000, &sched), 1.0);
        assert_eq!(p_sc(1_000_000, &sched), 1.0);
    }

    #[test]
    fn flow_path_endpoints_and_target_independence() {
        let model = tiny_model(5);
        let n = model.config.h_chunk * model.config.dz;
        let x0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let eps: Vec<f64> = (0..n).map(|i| (i as f64 * 0.71).cos()).collect();
        let path = |s: f64| -> Vec<f64> { x0.iter().zip(&eps).map(|(x, e)| (1.0 - s) * e + s * x).collect() };
        assert_eq!(path(0.0), eps);
        assert_eq!(path(1.0), x0);
        // The regression target X_0 − ε does not depend on s: losses at two
        // s values differ only through the velocity input.
        let text = model.text_embedding(0).unwrap().to_vec();
        let cond = model.encode_condition_plain(&text, &[]);
        let l = flow_loss(&x0, &cond, 0.2, &eps, &model);
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn euler_constant_field_is_exact() {
        let c = vec![0.3, -0.7, 1.1];
        let eps = vec![0.1, 0.2, 0.3];
        for m in [1, 4, 7] {
            let out = euler_integrate(|_, _| c.clone(), &eps, m);
            for ((o, e), ci) in out.iter().zip(&eps).zip(&c) {
                assert!((o - (e + ci)).abs() < 1e-12, "M={m}");
            }
        }
    }

    #[test]
    fn euler_affine_field_matches_recurrence() {
        // v(X) = A − X: hand-computed recurrence x ← x + (a − x)/M.
        let a = vec![1.0, -2.0];
        let eps = vec![0.5, 0.25];
        let m = 4;
        let got = euler_integrate(|x, _| a.iter().zip(x).map(|(ai, xi)| ai - xi).collect(), &eps, m);
        let mut expect = eps.clone();
        for _ in 0..m {
            for (e, ai) in expect.iter_mut().zip(&a) {
                *e += (ai - *e) / m as f64;
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn generate_chunk_seed_determinism() {
        let model = tiny_model(7);
        let text = model.text_embedding(1).unwrap().to_vec();
        let cond = model.encode_condition_plain(&text, &[]);
        let a = generate_chunk(&cond, &model, 4, &mut RngStream::new(3, 1));
        let b = generate_chunk(&cond, &model, 4, &mut RngStream::new(3, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn flow_loss_gradient_matches_finite_differences() {
        use crate::numerics::fd::{finite_diff_grad, max_rel_error};
        let mut model = tiny_model(13);
        // Liven the zero-initialized gates so every path carries gradient.
        let mut prng = RngStream::new(4, 0);
        for i in 0..model.config.depth {
            for g in ["gate1", "gate2", "gate3"] {
                for v in model.params.get_mut(&format!("b{i}.{g}.w")).data.iter_mut() {
                    *v = 0.2 * prng.normal();
                }
            }
        }
        let n = model.config.h_chunk * model.config.dz;
        let x0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.13).sin()).collect();
        let eps: Vec<f64> = (0..n).map(|i| (i as f64 * 0.29).cos()).collect();
        let hist: Vec<f64> = (0..6 * model.config.dz).map(|i| 0.1 * (i as f64).sin()).collect();
        let text = model.text_embedding(0).unwrap().to_vec();
        let s = 0.37;
        let analytic = {
            let tape = Tape::new();
            let bp = BoundParams::bind(&tape, &model.params);
            let cond = model.condition_tokens(&bp, &text, &hist);
            let loss = flow_loss_on_tape(&tape, &bp, &model, &x0, &cond, s, &eps, None);
            bp.grads(&loss.backward())
        };
        let numeric = finite_diff_grad(
            model.params.arrays(),
            |arrays| {
                let mut m = model.clone();
                m.params.arrays_mut().clone_from_slice(arrays);
                let tape = Tape::new();
                let bp = BoundParams::bind(&tape, &m.params);
                let cond = m.condition_tokens(&bp, &text, &hist);
                flow_loss_on_tape(&tape, &bp, &m, &x0, &cond, s, &eps, None).scalar_value()
            },
            1e-6,
        );
        let err = max_rel_error(&analytic, &numeric, 1e-5);
        assert!(err < 1e-4, "gradient mismatch: {err}");
    }

    #[test]
    fn self_conditioned_loss_rules() {
        let model = tiny_model(5);
        let cfg = &model.config;
        let sched = SelfCondSchedule { off_until: 0, ramp_len: 1, ksc: 3, lambda_sc: 0.25 };
        let need = cfg.t_obs + sched.ksc * cfg.h_chunk;
        let short = synthetic_traj(&model, need - 1, 0, 1);
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(
            self_conditioned_loss(&short, 0, &model, &sched, &mut rng),
            Err(FlowError::TrajectoryTooShort { .. })
        ));
        let traj = synthetic_traj(&model, need + 10, 0, 1);
        let l = self_conditioned_loss(&traj, 0, &model, &sched, &mut RngStream::new(1, 0)).unwrap();
        assert!(l.is_finite() && l > 0.0);
        // ksc = 1 degenerates to the teacher-forced first-chunk loss.
        let sched1 = SelfCondSchedule { ksc: 1, ..sched.clone() };
        let mut r1 = RngStream::new(9, 0);
        let mut r2 = RngStream::new(9, 0);
        let l1 = self_conditioned_loss(&traj, 0, &model, &sched1, &mut r1).unwrap();
        // Recompute the single-chunk loss with the identical rng stream.
        let start = cfg.t_obs + r2.gen_range_usize(traj.frames() - (cfg.t_obs + cfg.h_chunk) + 1);
        let text = model.text_embedding(0).unwrap().to_vec();
        let history = &traj.latents[(start - cfg.t_obs) * cfg.dz..start * cfg.dz];
        let cond = model.encode_condition_plain(&text, history);
        let s = sample_flow_time(&mut r2);
        let eps = r2.normal_vec(cfg.h_chunk * cfg.dz);
        let x0 = &traj.latents[start * cfg.dz..(start + cfg.h_chunk) * cfg.dz];
        let direct = flow_loss(x0, &cond, s, &eps, &model);
        assert!((l1 - direct).abs() < 1e-12, "ksc=1: {l1} vs {direct}");
    }

    #[test]
    fn stop_gradient_through_fed_back_chunks() {
        // Gradients of L_SC must equal the weighted sum of per-chunk
        // gradients computed independently from the recorded (detached)
        // histories: any leakage through the generation path would differ.
        let mut model = tiny_model(5);
        let mut prng = RngStream::new(4, 0);
        for i in 0..model.config.depth {
            for g in ["gate1", "gate2", "gate3"] {
                for v in model.params.get_mut(&format!("b{i}.{g}.w")).data.iter_mut() {
                    *v = 0.2 * prng.normal();
                }
            }
        }
        let cfg = model.config.clone();
        let sched = SelfCondSchedule { off_until: 0, ramp_len: 1, ksc: 3, lambda_sc: 0.25 };
        let traj = synthetic_traj(&model, cfg.t_obs + sched.ksc * cfg.h_chunk + 5, 0, 2);
        let text = model.text_embedding(0).unwrap().to_vec();
        let start = cfg.t_obs;

        let full = {
            let tape = Tape::new();
            let bp = BoundParams::bind(&tape, &model.params);
            let mut rng = RngStream::new(17, 0);
            let (loss, _, _) =
                sc_loss_on_tape(&tape, &bp, &model, &traj, &text, start, &sched, &mut rng, None);
            bp.grads(&loss.backward())
        };
        // Replay: recompute each chunk's loss on its own tape using the
        // same rng stream (so the same s, ε, and generated histories).
        let mut replay: Vec<Vec<f64>> = model.params.arrays().iter().map(|a| vec![0.0; a.data.len()]).collect();
        {
            let mut rng = RngStream::new(17, 0);
            let dz = cfg.dz;
            let mut history: Vec<f64> = traj.latents[(start - cfg.t_obs) * dz..start * dz].to_vec();
            for k in 0..sched.ksc {
                let c0 = start + k * cfg.h_chunk;
                let x0 = &traj.latents[c0 * dz..(c0 + cfg.h_chunk) * dz];
                let s = sample_flow_time(&mut rng);
                let eps = rng.normal_vec(cfg.h_chunk * dz);
                let tape = Tape::new();
                let bp = BoundParams::bind(&tape, &model.params);
                let cond = model.condition_tokens(&bp, &text, &history);
                let loss = flow_loss_on_tape(&tape, &bp, &model, x0, &cond, s, &eps, None);
                let w = if k == 0 { 1.0 } else { sched.lambda_sc / (sched.ksc - 1) as f64 };
                for (acc, g) in replay.iter_mut().zip(bp.grads(&loss.backward())) {
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += w * gi;
                    }
                }
                if k + 1 < sched.ksc {
                    let cond_plain = model.encode_condition_plain(&text, &history);
                    let generated = generate_chunk(&cond_plain, &model, cfg.m_euler, &mut rng);
                    history.extend_from_slice(&generated.data);
                    let frames = history.len() / dz;
                    if frames > cfg.t_obs {
                        history.drain(0..(frames - cfg.t_obs) * dz);
                    }
                }
            }
        }
        for (f, r) in full.iter().zip(&replay) {
            for (a, b) in f.iter().zip(r) {
                assert!((a - b).abs() < 1e-9, "gradient leaked through fed-back chunks: {a} vs {b}");
            }
        }
    }

    #[test]
    fn train_flow_determinism_and_frozen_embeddings() {
        let cfg = FlowConfig { total_steps: 30, warmup_steps: 3, dropout: 0.0, ..super::super::model::tests::tiny_config() };
        let probe = FlowModel::new(cfg.clone(), 19);
        let traj = synthetic_traj(&probe, 200, 0, 3);
        let corpus = vec![traj];
        let (m1, log1) = train_flow(&corpus, &cfg, 19).unwrap();
        let (m2, _) = train_flow(&corpus, &cfg, 19).unwrap();
        assert_eq!(m1.params.arrays(), m2.params.arrays());
        assert!(m1.trained);
        assert_eq!(m1.embed, probe.embed, "frozen embedding table changed during training");
        for row in &log1 {
            let sched = SelfCondSchedule::from_config(&cfg);
            assert_eq!(row.p_sc, p_sc(row.step, &sched));
        }
    }

    #[test]
    fn train_flow_rejects_mismatched_corpus() {
        let cfg = super::super::model::tests::tiny_config();
        let bad = LatentTrajectory { clip_index: 0, dz: cfg.dz + 1, latents: vec![0.0; 300], instruction_ids: vec![0; 60] };
        assert!(matches!(train_flow(&[bad], &cfg, 1), Err(FlowError::SchemaMismatch(_))));
        assert!(matches!(train_flow(&[], &cfg, 1), Err(FlowError::SchemaMismatch(_))));
    }

    #[test]
    fn overfit_single_trajectory_rollout_drift() {
        // Post-training autoregressive drift from the ground truth stays
        // below 10% of the trajectory norm on an overfit corpus.
        let cfg = FlowConfig {
            total_steps: 1800,
            warmup_steps: 30,
            dropout: 0.0,
            lr: 3e-3,
            min_lr: 3e-5,
            off_frac: 0.4,
            ramp_frac: 0.2,
            ksc: 3,
            t_obs: 20,
            ..super::super::model::tests::tiny_config()
        };
        let probe = FlowModel::new(cfg.clone(), 23);
        // Constant-per-dim trajectory: the easiest consistent target.
        let dz = cfg.dz;
        let frames = 150;
        let mut latents = Vec::with_capacity(frames * dz);
        for _ in 0..frames {
            for d in 0..dz {
                latents.push(0.3 * (d as f64 + 1.0));
            }
        }
        let traj = LatentTrajectory { clip_index: 0, dz, latents, instruction_ids: vec![0; frames] };
        let _ = probe;
        let (model, _) = train_flow(&[traj.clone()], &cfg, 23).unwrap();
        let mut rng = RngStream::new(2, 0);
        let (rollout, _) = autoregressive_rollout(&model, &vec![0; cfg.ksc], &mut rng).unwrap();
        let n = rollout.latents.len();
        let gt = &traj.latents[..n];
        let drift: f64 = rollout.latents.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = gt.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(drift <= 0.10 * norm, "drift {drift:.4} vs 10% of norm {norm:.4}");
    }

    #[test]
    fn rollout_lengths_cache_and_history_bound() {
        let model = {
            let cfg = FlowConfig { total_steps: 10, warmup_steps: 2, ..super::super::model::tests::tiny_config() };
            let probe = FlowModel::new(cfg.clone(), 3);
            let traj = synthetic_traj(&probe, 120, 0, 1);
            train_flow(&[traj], &cfg, 3).unwrap().0
        };
        let h = model.config.h_chunk;
        // 20 chunks, instruction switches once at chunk 10.
        let instr: Vec<u32> = (0..20).map(|i| if i < 10 { 0 } else { 1 }).collect();
        let mut rng = RngStream::new(4, 0);
        let (traj, stats) = autoregressive_rollout(&model, &instr, &mut rng).unwrap();
        assert_eq!(traj.frames(), 20 * h);
        assert_eq!(stats.text_lookups, 2, "text encoder must be invoked once per switch");
        assert_eq!(stats.chunks, 20);
        assert_eq!(traj.instruction_ids[10 * h], 1);
    }
}
