//! Student-driven in-loop distillation from a frozen teacher, and offline
//! mean-code latent export over the reference corpus.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{kl_gaussian_tensor, ActConfig, ActPolicy, DecodeNoise};
use super::schedule::ddpm_noise;
use crate::numerics::nn::BoundParams;
use crate::numerics::{adam_step, Array, RngStream, Tape, Tensor};
use crate::sim::{build_reference_obs, prop_width, MotionClip, N_JOINTS};
use crate::teacher::{oracle_teacher_with, TeacherPolicy, TrackingEnv, ORACLE_LOOKAHEAD};

#[derive(Debug, Error)]
pub enum ActError {
    #[error("teacher checkpoint incompatible with observation schema: {0}")]
    IncompatibleTeacher(String),
    #[error("non-finite distillation loss: {0}")]
    NonFiniteLoss(String),
}

/// Frozen action-label source: the scripted future-reading controller or a
/// PPO-trained teacher checkpoint.
#[derive(Debug, Clone)]
pub enum TeacherSource {
    Oracle { lookahead: i64 },
    Policy(Box<TeacherPolicy>),
}

impl TeacherSource {
    pub fn oracle() -> Self {
        TeacherSource::Oracle { lookahead: ORACLE_LOOKAHEAD }
    }

    fn label(&self, env: &TrackingEnv) -> [f64; N_JOINTS] {
        match self {
            TeacherSource::Oracle { lookahead } => {
                oracle_teacher_with(env.state(), env.clip(), env.frame(), *lookahead)
            }
            TeacherSource::Policy(p) => {
                let o = env.observe();
                p.act_mean(&o.prop, &o.reference, &o.privileged)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillLogRow {
    pub frames: usize,
    pub denoise_loss: f64,
    pub kl: f64,
    pub total_loss: f64,
    pub mean_reward: f64,
}

/// One distillation buffer: student-visited states with teacher labels.
pub struct DistillBuffer {
    pub prop: Vec<f64>,
    pub reference: Vec<f64>,
    pub teacher_actions: Vec<f64>,
    /// Joint positions of the states the student itself visited, kept for
    /// auditing that the buffer is on-policy.
    pub visited_q: Vec<[f64; N_JOINTS]>,
    pub rewards: Vec<f64>,
}

impl DistillBuffer {
    pub fn len(&self) -> usize {
        self.visited_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visited_q.is_empty()
    }
}

/// Drives the envs with the student policy and labels every visited state
/// with the frozen teacher.
pub fn collect_distill_buffer(
    policy: &ActPolicy,
    teacher: &TeacherSource,
    envs: &mut [TrackingEnv],
    steps: usize,
    rng: &mut RngStream,
) -> DistillBuffer {
    let rw = policy.offsets.ref_width();
    let mut buf = DistillBuffer {
        prop: Vec::with_capacity(steps * envs.len() * prop_width()),
        reference: Vec::with_capacity(steps * envs.len() * rw),
        teacher_actions: Vec::with_capacity(steps * envs.len() * N_JOINTS),
        visited_q: Vec::with_capacity(steps * envs.len()),
        rewards: Vec::with_capacity(steps * envs.len()),
    };
    let mut obs: Vec<_> = envs.iter().map(|e| e.observe()).collect();
    for _ in 0..steps {
        for (e, env) in envs.iter_mut().enumerate() {
            let o = &obs[e];
            let a_tea = teacher.label(env);
            buf.prop.extend_from_slice(&o.prop);
            buf.reference.extend_from_slice(&o.reference);
            buf.teacher_actions.extend_from_slice(&a_tea);
            buf.visited_q.push(env.state().q);
            let posterior = policy.intent_posterior(&o.reference);
            let z = super::policy::sample_intent(&posterior, rng, false);
            let action = policy.decode_raw(&o.prop, &z, DecodeNoise::Seeded(rng));
            let out = env.step(action);
            buf.rewards.push(out.reward);
            obs[e] = if out.done { env.reset_random(rng) } else { out.obs };
        }
    }
    buf
}

/// One optimization pass over a buffer: `epochs` × `minibatches` updates of
/// L = ‖a_tea − x̂_0‖² + β·KL, fresh (τ, ε_a, ε_z) per sample per visit.
pub fn distill_update(
    policy: &mut ActPolicy,
    buf: &DistillBuffer,
    rng: &mut RngStream,
) -> Result<(f64, f64), ActError> {
    let cfg = policy.config.clone();
    let (pw, rw, a, dz) = (prop_width(), policy.offsets.ref_width(), policy.action_dim, cfg.dz);
    let n = buf.len();
    let (mut sum_den, mut sum_kl, mut updates) = (0.0, 0.0, 0.0);
    for _ in 0..cfg.epochs {
        let order = rng.permutation(n);
        for mb in 0..cfg.minibatches {
            let idx: Vec<usize> = order.iter().skip(mb).step_by(cfg.minibatches).copied().collect();
            if idx.is_empty() {
                continue;
            }
            let b = idx.len();
            let gather = |src: &[f64], width: usize| -> Vec<f64> {
                let mut out = Vec::with_capacity(b * width);
                for &i in &idx {
                    out.extend_from_slice(&src[i * width..(i + 1) * width]);
                }
                out
            };
            let a_tea = gather(&buf.teacher_actions, a);
            let mut taus = Vec::with_capacity(b);
            let mut x_tau = Vec::with_capacity(b * a);
            for row in a_tea.chunks(a) {
                let tau = 1 + rng.gen_range_usize(cfg.ddpm_t);
                taus.push(tau);
                let eps = rng.normal_vec(a);
                x_tau.extend(ddpm_noise(row, tau, &eps, &policy.schedule));
            }
            let eps_z = rng.normal_vec(b * dz);

            let tape = Tape::new();
            let bp = BoundParams::bind(&tape, &policy.params);
            let prop = tape.leaf(&Array { shape: vec![b, pw], data: gather(&buf.prop, pw) });
            let refr = tape.leaf(&Array { shape: vec![b, rw], data: gather(&buf.reference, rw) });
            let (mu, log_var) = policy.intent(&bp, &refr);
            let noise = tape.leaf(&Array { shape: vec![b, dz], data: eps_z });
            let z = mu.add(&log_var.scale(0.5).exp().mul(&noise));
            let feat = policy.prop_feature(&bp, &prop);
            let c = Tensor::concat_last(&[feat, z]);
            let xt = tape.leaf(&Array { shape: vec![b, a], data: x_tau });
            let temb = tape.leaf(&policy.time_embedding(&taus));
            let pred = policy.denoise(&bp, &xt, &temb, &c);
            let target = tape.leaf(&Array { shape: vec![b, a], data: a_tea });
            let denoise_loss = pred.sub(&target).square().sum_last().mean();
            let kl = kl_gaussian_tensor(&mu, &log_var, cfg.free_bits);
            let loss = denoise_loss.add(&kl.scale(cfg.beta_kl));
            let loss_v = loss.scalar_value();
            if !loss_v.is_finite() {
                return Err(ActError::NonFiniteLoss(format!(
                    "denoise {} kl {} over minibatch of {b}",
                    denoise_loss.scalar_value(),
                    kl.scalar_value()
                )));
            }
            let grads = loss.backward();
            let grad_vecs = bp.grads(&grads);
            adam_step(policy.params.arrays_mut(), &grad_vecs, &mut policy.opt, cfg.lr, cfg.grad_clip);
            sum_den += denoise_loss.scalar_value();
            sum_kl += kl.scalar_value();
            updates += 1.0;
        }
    }
    Ok((sum_den / updates, sum_kl / updates))
}

/// Full in-loop distillation: the student drives the simulator, the frozen
/// teacher labels the student's own states.
pub fn distill_train(
    env_template: &TrackingEnv,
    teacher: &TeacherSource,
    cfg: &ActConfig,
    seed: u64,
) -> Result<(ActPolicy, Vec<DistillLogRow>), ActError> {
    if let TeacherSource::Policy(p) = teacher {
        if p.offsets != env_template.offsets {
            return Err(ActError::IncompatibleTeacher(format!(
                "teacher offsets {:?} vs env offsets {:?}",
                p.offsets.offsets, env_template.offsets.offsets
            )));
        }
    }
    let mut rng = RngStream::new(seed, 37);
    let mut policy = ActPolicy::new(cfg.clone(), env_template.offsets.clone(), seed);
    let mut envs: Vec<TrackingEnv> = (0..cfg.n_envs).map(|_| env_template.clone()).collect();
    for env in envs.iter_mut() {
        env.reset_random(&mut rng);
    }
    let mut log = Vec::new();
    let mut frames = 0usize;
    while frames < cfg.total_frames {
        let buf = collect_distill_buffer(&policy, teacher, &mut envs, cfg.buffer_len, &mut rng);
        frames += buf.len();
        let mean_reward = buf.rewards.iter().sum::<f64>() / buf.rewards.len() as f64;
        let (denoise_loss, kl) = distill_update(&mut policy, &buf, &mut rng)?;
        log.push(DistillLogRow {
            frames,
            denoise_loss,
            kl,
            total_loss: denoise_loss + cfg.beta_kl * kl,
            mean_reward,
        });
    }
    policy.trained = true;
    Ok((policy, log))
}

/// Per-clip mean-code latent trajectory with frame-aligned instruction ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub clip_index: usize,
    pub dz: usize,
    /// Frame-major latents, len = frames × dz.
    pub latents: Vec<f64>,
    /// Instruction id per frame (from the clip's segment labels).
    pub instruction_ids: Vec<u32>,
}

impl LatentTrajectory {
    pub fn frames(&self) -> usize {
        self.instruction_ids.len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.latents[t * self.dz..(t + 1) * self.dz]
    }
}

/// Encodes every clip frame with the mean intent code μ(o_ref). This is the
/// deterministic corpus the chunk generator trains on.
pub fn export_latents(clips: &[MotionClip], policy: &ActPolicy) -> Vec<LatentTrajectory> {
    assert!(policy.trained, "export_latents requires a trained policy");
    clips
        .iter()
        .enumerate()
        .map(|(clip_index, clip)| {
            let dz = policy.config.dz;
            let mut latents = Vec::with_capacity(clip.len() * dz);
            let mut instruction_ids = Vec::with_capacity(clip.len());
            for t in 0..clip.len() {
                let o_ref = build_reference_obs(clip, t, &policy.offsets);
                let posterior = policy.intent_posterior(&o_ref);
                latents.extend(posterior.mu);
                instruction_ids.push(clip.instruction_at(t));
            }
            LatentTrajectory { clip_index, dz, latents, instruction_ids }
        })
        .collect()
}
