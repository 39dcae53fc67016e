//! PPO with clipped surrogate, GAE and annealed entropy bonus.

use serde::{Deserialize, Serialize};

use super::env::TrackingEnv;
use super::gae::gae;
use super::policy::{gaussian_entropy, gaussian_log_prob, TeacherConfig, TeacherPolicy};
use super::TeacherError;
use crate::numerics::nn::BoundParams;
use crate::numerics::{adam_step, Array, RngStream, Tape, Tensor};
use crate::sim::{priv_width, prop_width, N_JOINTS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub grad_clip: f64,
    pub value_coef: f64,
    pub n_envs: usize,
    pub buffer_len: usize,
    pub total_frames: usize,
    /// Divergence guard: abort when the buffer-mean reward stays below
    /// this floor for `divergence_patience` consecutive buffers.
    pub reward_floor: f64,
    pub divergence_patience: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_start: 0.01,
            entropy_end: 0.0025,
            lr: 5e-4,
            epochs: 5,
            minibatches: 8,
            grad_clip: 1.0,
            value_coef: 0.5,
            n_envs: 64,
            buffer_len: 64,
            total_frames: 2_000_000,
            reward_floor: 0.1,
            divergence_patience: 50,
        }
    }
}

/// Entropy coefficient, linearly annealed over training progress ∈ [0, 1].
pub fn entropy_coef(cfg: &PpoConfig, progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * p
}

/// Time-major rollout storage; sample (t, e) lives at flat index t*n_envs+e.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub len: usize,
    pub prop: Vec<f64>,
    pub reference: Vec<f64>,
    pub privileged: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// V(s) after the final step, per env.
    pub bootstrap: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn samples(&self) -> usize {
        self.n_envs * self.len
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    /// Runs GAE per environment stream and fills advantages/returns.
    pub fn finalize(&mut self, gamma: f64, lambda: f64) -> Result<(), TeacherError> {
        let (t_len, e_len) = (self.len, self.n_envs);
        let mut advantages = vec![0.0; t_len * e_len];
        let mut returns = vec![0.0; t_len * e_len];
        for e in 0..e_len {
            let rewards: Vec<f64> = (0..t_len).map(|t| self.rewards[t * e_len + e]).collect();
            let values: Vec<f64> = (0..t_len).map(|t| self.values[t * e_len + e]).collect();
            let dones: Vec<bool> = (0..t_len).map(|t| self.dones[t * e_len + e]).collect();
            let (a, r) = gae(&rewards, &values, &dones, self.bootstrap[e], gamma, lambda)?;
            for t in 0..t_len {
                advantages[t * e_len + e] = a[t];
                returns[t * e_len + e] = r[t];
            }
        }
        self.advantages = Some(advantages);
        self.returns = Some(returns);
        Ok(())
    }
}

fn batch_leaf(tape: &Tape, rows: usize, width: usize, data: Vec<f64>) -> Tensor {
    tape.leaf(&Array { shape: vec![rows, width], data })
}

/// Collects `len` steps from every env under the stochastic policy,
/// resetting finished episodes to a random clip.
pub fn collect_rollout(
    policy: &TeacherPolicy,
    envs: &mut [TrackingEnv],
    len: usize,
    rng: &mut RngStream,
) -> RolloutBuffer {
    let e_len = envs.len();
    let (pw, rw, vw) = (prop_width(), policy.offsets.ref_width(), priv_width());
    let mut buf = RolloutBuffer {
        n_envs: e_len,
        len,
        prop: Vec::with_capacity(len * e_len * pw),
        reference: Vec::with_capacity(len * e_len * rw),
        privileged: Vec::with_capacity(len * e_len * vw),
        actions: Vec::with_capacity(len * e_len * N_JOINTS),
        log_probs: Vec::with_capacity(len * e_len),
        rewards: Vec::with_capacity(len * e_len),
        values: Vec::with_capacity(len * e_len),
        dones: Vec::with_capacity(len * e_len),
        bootstrap: vec![0.0; e_len],
        advantages: None,
        returns: None,
    };
    let mut obs: Vec<_> = envs.iter().map(|e| e.observe()).collect();
    for _ in 0..len {
        let (mean, log_std, value) = {
            let tape = Tape::new();
            let bp = BoundParams::bind(&tape, &policy.params);
            let prop = batch_leaf(&tape, e_len, pw, obs.iter().flat_map(|o| o.prop.iter().copied()).collect());
            let refr = batch_leaf(&tape, e_len, rw, obs.iter().flat_map(|o| o.reference.iter().copied()).collect());
            let prv = batch_leaf(&tape, e_len, vw, obs.iter().flat_map(|o| o.privileged.iter().copied()).collect());
            let (m, ls, v) = policy.forward(&tape, &bp, &prop, &refr, &prv);
            (m.value().data, ls.value().data, v.value().data)
        };
        for (e, env) in envs.iter_mut().enumerate() {
            let mut action = [0.0; N_JOINTS];
            let mut log_prob = 0.0;
            for j in 0..N_JOINTS {
                let mu = mean[e * N_JOINTS + j];
                let std = log_std[j].exp();
                let a = mu + std * rng.normal();
                action[j] = a;
                let z = (a - mu) / std;
                log_prob += -0.5 * z * z - log_std[j] - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
            let o = &obs[e];
            buf.prop.extend_from_slice(&o.prop);
            buf.reference.extend_from_slice(&o.reference);
            buf.privileged.extend_from_slice(&o.privileged);
            buf.actions.extend_from_slice(&action);
            buf.log_probs.push(log_prob);
            buf.values.push(value[e]);
            let out = env.step(action);
            buf.rewards.push(out.reward);
            buf.dones.push(out.done);
            obs[e] = if out.done { env.reset_random(rng) } else { out.obs };
        }
    }
    // Bootstrap values of the post-rollout observations. Post-done envs
    // were reset, but their done flag already truncates GAE there.
    let tape = Tape::new();
    let bp = BoundParams::bind(&tape, &policy.params);
    let prop = batch_leaf(&tape, e_len, pw, obs.iter().flat_map(|o| o.prop.iter().copied()).collect());
    let refr = batch_leaf(&tape, e_len, rw, obs.iter().flat_map(|o| o.reference.iter().copied()).collect());
    let prv = batch_leaf(&tape, e_len, vw, obs.iter().flat_map(|o| o.privileged.iter().copied()).collect());
    let (_, _, v) = policy.forward(&tape, &bp, &prop, &refr, &prv);
    buf.bootstrap = v.value().data;
    buf
}

/// Clipped PPO surrogate per sample (to be maximized):
/// min(ratio·A, clamp(ratio, 1−ε, 1+ε)·A).
pub(crate) fn clipped_surrogate(ratio: &Tensor, advantage: &Tensor, eps: f64) -> Tensor {
    let unclipped = ratio.mul(advantage);
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps).mul(advantage);
    unclipped.minimum(&clipped)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// One optimization pass over a finalized buffer: `epochs` sweeps of
/// `minibatches` shuffled minibatches. `progress` anneals entropy.
pub fn ppo_update(
    policy: &mut TeacherPolicy,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    progress: f64,
    rng: &mut RngStream,
) -> Result<PpoStats, TeacherError> {
    let advantages = buffer.advantages.as_ref().expect("finalize buffer before ppo_update");
    let returns = buffer.returns.as_ref().expect("finalize buffer before ppo_update");
    let n = buffer.samples();
    let (pw, rw, vw) = (prop_width(), policy.offsets.ref_width(), priv_width());
    let ent_coef = entropy_coef(cfg, progress);
    let mut stats = PpoStats { mean_reward: buffer.mean_reward(), ..PpoStats::default() };
    let mut updates = 0.0;

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
            // Per-minibatch advantage normalization.
            let adv_raw: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();
            let mean_a = adv_raw.iter().sum::<f64>() / b as f64;
            let var_a = adv_raw.iter().map(|a| (a - mean_a) * (a - mean_a)).sum::<f64>() / b as f64;
            let std_a = var_a.sqrt();
            let adv_n: Vec<f64> = if std_a > 1e-8 {
                adv_raw.iter().map(|a| (a - mean_a) / std_a).collect()
            } else {
                adv_raw
            };

            let tape = Tape::new();
            let bp = BoundParams::bind(&tape, &policy.params);
            let prop = batch_leaf(&tape, b, pw, gather(&buffer.prop, pw));
            let refr = batch_leaf(&tape, b, rw, gather(&buffer.reference, rw));
            let prv = batch_leaf(&tape, b, vw, gather(&buffer.privileged, vw));
            let actions = batch_leaf(&tape, b, N_JOINTS, gather(&buffer.actions, N_JOINTS));
            let adv = tape.leaf(&Array { shape: vec![b], data: adv_n });
            let old_lp = tape.leaf(&Array { shape: vec![b], data: idx.iter().map(|&i| buffer.log_probs[i]).collect() });
            let ret = tape.leaf(&Array { shape: vec![b, 1], data: idx.iter().map(|&i| returns[i]).collect() });

            let (mean, log_std, value) = policy.forward(&tape, &bp, &prop, &refr, &prv);
            let log_prob = gaussian_log_prob(&actions, &mean, &log_std);
            let ratio = log_prob.sub(&old_lp).exp();
            let policy_loss = clipped_surrogate(&ratio, &adv, cfg.clip).mean().neg();
            let value_loss = value.sub(&ret).square().mean();
            let entropy = gaussian_entropy(&log_std).mean();
            let loss = policy_loss
                .add(&value_loss.scale(cfg.value_coef))
                .sub(&entropy.scale(ent_coef));

            let loss_v = loss.scalar_value();
            if !loss_v.is_finite() {
                return Err(TeacherError::NonFiniteLoss(format!(
                    "minibatch of {b}: policy {} value {} entropy {} (reward mean {:.3})",
                    policy_loss.scalar_value(),
                    value_loss.scalar_value(),
                    entropy.scalar_value(),
                    stats.mean_reward,
                )));
            }
            let grads = loss.backward();
            let grad_vecs = bp.grads(&grads);
            adam_step(policy.params.arrays_mut(), &grad_vecs, &mut policy.opt, cfg.lr, cfg.grad_clip);

            let ratio_v = ratio.value();
            let clipped = ratio_v.data.iter().filter(|r| (**r - 1.0).abs() > cfg.clip).count();
            stats.policy_loss += policy_loss.scalar_value();
            stats.value_loss += value_loss.scalar_value();
            stats.entropy += entropy.scalar_value();
            stats.clip_fraction += clipped as f64 / b as f64;
            updates += 1.0;
        }
    }
    stats.policy_loss /= updates;
    stats.value_loss /= updates;
    stats.entropy /= updates;
    stats.clip_fraction /= updates;
    Ok(stats)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub frames: usize,
    pub stats: PpoStats,
}

/// Full PPO training loop over a template env (cloned per parallel env).
pub fn train_teacher(
    env_template: &TrackingEnv,
    teacher_cfg: &TeacherConfig,
    ppo: &PpoConfig,
    seed: u64,
) -> Result<(TeacherPolicy, Vec<TrainLogRow>), TeacherError> {
    let mut rng = RngStream::new(seed, 23);
    let nominal = env_template.model.nominal_q;
    let mut policy = TeacherPolicy::new(teacher_cfg.clone(), env_template.offsets.clone(), nominal, seed);
    let mut envs: Vec<TrackingEnv> = (0..ppo.n_envs).map(|_| env_template.clone()).collect();
    for env in envs.iter_mut() {
        env.reset_random(&mut rng);
    }
    let mut log = Vec::new();
    let mut frames = 0usize;
    let mut low_buffers = 0usize;
    while frames < ppo.total_frames {
        let mut buffer = collect_rollout(&policy, &mut envs, ppo.buffer_len, &mut rng);
        buffer.finalize(ppo.gamma, ppo.gae_lambda)?;
        frames += buffer.samples();
        let progress = frames as f64 / ppo.total_frames as f64;
        let stats = ppo_update(&mut policy, &buffer, ppo, progress, &mut rng)?;
        if stats.mean_reward < ppo.reward_floor {
            low_buffers += 1;
            if low_buffers >= ppo.divergence_patience {
                return Err(TeacherError::Diverged {
                    reward: stats.mean_reward,
                    floor: ppo.reward_floor,
                    buffers: low_buffers,
                });
            }
        } else {
            low_buffers = 0;
        }
        log.push(TrainLogRow { frames, stats });
    }
    Ok((policy, log))
}
