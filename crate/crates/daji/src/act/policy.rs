//! The intent-bottleneck diffusion action head: proprioceptive encoder,
//! stochastic intent encoder, AdaLN denoiser, and DDIM decoding.

use serde::{Deserialize, Serialize};

use super::schedule::{ddim_step, NoiseSchedule};
use crate::numerics::nn::{apply_mlp, insert_mlp, sinusoidal_embedding, Activation, BoundParams, ParamStore};
use crate::numerics::{AdamState, Array, RngStream, Tape, Tensor};
use crate::sim::{prop_width, OffsetSet, N_JOINTS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActConfig {
    pub dz: usize,
    pub hidden: usize,
    pub denoiser_width: usize,
    pub denoiser_blocks: usize,
    pub ddpm_t: usize,
    pub ddim_steps: usize,
    pub beta_kl: f64,
    pub free_bits: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub grad_clip: f64,
    pub buffer_len: usize,
    pub n_envs: usize,
    pub total_frames: usize,
}

impl Default for ActConfig {
    fn default() -> Self {
        ActConfig {
            dz: 8,
            hidden: 128,
            denoiser_width: 256,
            denoiser_blocks: 4,
            ddpm_t: 50,
            ddim_steps: 2,
            beta_kl: 1e-4,
            free_bits: 0.0,
            lr: 1e-4,
            epochs: 5,
            minibatches: 8,
            grad_clip: 1.0,
            buffer_len: 256,
            n_envs: 16,
            total_frames: 200_000,
        }
    }
}

/// Diagonal-Gaussian intent posterior q(z | o_ref).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// z = μ + σ⊙ε, or μ exactly in mean mode.
pub fn sample_intent(posterior: &IntentPosterior, rng: &mut RngStream, mean_mode: bool) -> Vec<f64> {
    if mean_mode {
        return posterior.mu.clone();
    }
    posterior
        .mu
        .iter()
        .zip(&posterior.log_var)
        .map(|(m, lv)| m + (0.5 * lv).exp() * rng.normal())
        .collect()
}

/// KL(q ‖ N(0, I)) with each dimension clamped at `free_bits` from below
/// before summation.
pub fn kl_gaussian(posterior: &IntentPosterior, free_bits: f64) -> f64 {
    posterior
        .mu
        .iter()
        .zip(&posterior.log_var)
        .map(|(m, lv)| (-0.5 * (1.0 + lv - m * m - lv.exp())).max(free_bits))
        .sum()
}

/// Decode-time x_T initialization: per-step seeded Gaussian by default, or
/// all-zeros for bit-reproducible strict mode.
pub enum DecodeNoise<'a> {
    Seeded(&'a mut RngStream),
    Strict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActPolicy {
    pub params: ParamStore,
    pub opt: AdamState,
    pub config: ActConfig,
    pub offsets: OffsetSet,
    pub schedule: NoiseSchedule,
    pub action_dim: usize,
    pub trained: bool,
}

const LOGVAR_MIN: f64 = -10.0;
const LOGVAR_MAX: f64 = 4.0;

impl ActPolicy {
    pub fn new(config: ActConfig, offsets: OffsetSet, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 31);
        let mut params = ParamStore::new();
        let (h, w, a, dz) = (config.hidden, config.denoiser_width, N_JOINTS, config.dz);
        insert_mlp(&mut params, "prop", &[prop_width(), h, h], &mut rng);
        insert_mlp(&mut params, "ref", &[offsets.ref_width(), h, h], &mut rng);
        params.insert_linear("mu", h, dz, &mut rng);
        params.insert_linear("logvar", h, dz, &mut rng);
        params.insert_linear("den_in", a, w, &mut rng);
        params.insert_linear("den_cond", h + dz, w, &mut rng);
        params.insert_linear("den_temb", w, w, &mut rng);
        for i in 0..config.denoiser_blocks {
            params.insert_linear(&format!("den{i}.mod"), w, 2 * w, &mut rng);
            params.insert_zero_linear(&format!("den{i}.gate"), w, w);
            params.insert_linear(&format!("den{i}.fc0"), w, w, &mut rng);
            params.insert_linear(&format!("den{i}.fc1"), w, w, &mut rng);
        }
        params.insert_linear("den_base", w, a, &mut rng);
        params.insert_zero_linear("den_out", w, a);
        let opt = AdamState::new(params.arrays());
        let schedule = NoiseSchedule::cosine(config.ddpm_t);
        ActPolicy { params, opt, config, offsets, schedule, action_dim: a, trained: false }
    }

    /// 128-d proprioceptive feature (2-layer ELU MLP).
    pub fn prop_feature(&self, bp: &BoundParams, o_prop: &Tensor) -> Tensor {
        apply_mlp(bp, "prop", o_prop, 2, Activation::Elu).elu()
    }

    /// Intent posterior heads over the reference observation.
    pub fn intent(&self, bp: &BoundParams, o_ref: &Tensor) -> (Tensor, Tensor) {
        let h = apply_mlp(bp, "ref", o_ref, 2, Activation::Elu).elu();
        let mu = bp.linear("mu", &h);
        let log_var = bp.linear("logvar", &h).clamp(LOGVAR_MIN, LOGVAR_MAX);
        (mu, log_var)
    }

    /// Intent posterior for a single observation, plain vectors.
    pub fn intent_posterior(&self, o_ref: &[f64]) -> IntentPosterior {
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &self.params);
        let x = tape.leaf(&Array { shape: vec![1, o_ref.len()], data: o_ref.to_vec() });
        let (mu, lv) = self.intent(&bp, &x);
        IntentPosterior { mu: mu.value().data, log_var: lv.value().data }
    }

    /// Sinusoidal embedding rows for per-sample diffusion steps.
    pub fn time_embedding(&self, taus: &[usize]) -> Array {
        let w = self.config.denoiser_width;
        let mut data = Vec::with_capacity(taus.len() * w);
        for &t in taus {
            data.extend(sinusoidal_embedding(t as f64, w));
        }
        Array { shape: vec![taus.len(), w], data }
    }

    /// Clean-action prediction x̂_0 = D(x_τ, τ, c). The residual path is
    /// gated to zero at init, so a fresh policy reduces to the base
    /// projection of the input embedding.
    pub fn denoise(&self, bp: &BoundParams, x_tau: &Tensor, temb: &Tensor, c: &Tensor) -> Tensor {
        let cond = bp.linear("den_cond", c).add(&bp.linear("den_temb", temb));
        let e = bp.linear("den_in", x_tau).add(&cond);
        let mut h = e.clone();
        let w = self.config.denoiser_width;
        for i in 0..self.config.denoiser_blocks {
            let m = bp.linear(&format!("den{i}.mod"), &cond);
            let scale = m.slice_last(0, w);
            let shift = m.slice_last(w, 2 * w);
            let hn = h.layer_norm(1e-5).mul(&scale.add_scalar(1.0)).add(&shift);
            let u = bp.linear(&format!("den{i}.fc1"), &bp.linear(&format!("den{i}.fc0"), &hn).silu());
            let gate = bp.linear(&format!("den{i}.gate"), &cond);
            h = h.add(&gate.mul(&u));
        }
        bp.linear("den_base", &e).add(&bp.linear("den_out", &h))
    }

    /// Deployment decode: x_T → action with `ddim_steps` deterministic DDIM
    /// steps, conditioning only on o_prop and z.
    pub fn act_decode(&self, o_prop: &[f64], z: &[f64], noise: DecodeNoise) -> [f64; N_JOINTS] {
        assert!(self.trained, "act_decode called on an untrained policy");
        self.decode_raw(o_prop, z, noise)
    }

    /// Decode without the trained-flag guard (tests and diagnostics).
    /// Tape-free single-sample path; matches the tape forward exactly.
    pub fn decode_raw(&self, o_prop: &[f64], z: &[f64], noise: DecodeNoise) -> [f64; N_JOINTS] {
        assert_eq!(z.len(), self.config.dz);
        let a = self.action_dim;
        let mut x = match noise {
            DecodeNoise::Seeded(rng) => rng.normal_vec(a),
            DecodeNoise::Strict => vec![0.0; a],
        };
        let mut feat = self.lin("prop.0", o_prop);
        elu_inplace(&mut feat);
        feat = self.lin("prop.1", &feat);
        elu_inplace(&mut feat);
        let mut c = feat;
        c.extend_from_slice(z);
        let grid = self.schedule.ddim_grid(self.config.ddim_steps);
        for w in grid.windows(2) {
            let (tau, tau_next) = (w[0], w[1]);
            let x0_hat = self.denoise_f64(&x, tau, &c);
            x = if tau_next == 0 { x0_hat } else { ddim_step(&x, &x0_hat, tau, tau_next, &self.schedule) };
        }
        let mut out = [0.0; N_JOINTS];
        out.copy_from_slice(&x);
        out
    }

    fn lin(&self, prefix: &str, x: &[f64]) -> Vec<f64> {
        let w = self.params.get(&format!("{prefix}.w"));
        let b = self.params.get(&format!("{prefix}.b"));
        let (fan_in, fan_out) = (w.shape[0], w.shape[1]);
        assert_eq!(x.len(), fan_in, "{prefix}: input width mismatch");
        let mut out = b.data.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &w.data[i * fan_out..(i + 1) * fan_out];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
        out
    }

    /// Plain-f64 denoiser forward for a single sample.
    pub fn denoise_f64(&self, x_tau: &[f64], tau: usize, c: &[f64]) -> Vec<f64> {
        let w = self.config.denoiser_width;
        let temb = sinusoidal_embedding(tau as f64, w);
        let mut cond = self.lin("den_cond", c);
        for (ci, ti) in cond.iter_mut().zip(self.lin("den_temb", &temb)) {
            *ci += ti;
        }
        let mut e = self.lin("den_in", x_tau);
        for (ei, ci) in e.iter_mut().zip(&cond) {
            *ei += ci;
        }
        let mut h = e.clone();
        for i in 0..self.config.denoiser_blocks {
            let m = self.lin(&format!("den{i}.mod"), &cond);
            let mut hn = layer_norm_f64(&h, 1e-5);
            for (j, v) in hn.iter_mut().enumerate() {
                *v = *v * (1.0 + m[j]) + m[w + j];
            }
            let mut u = self.lin(&format!("den{i}.fc0"), &hn);
            for v in u.iter_mut() {
                *v /= 1.0 + (-*v).exp();
            }
            let u = self.lin(&format!("den{i}.fc1"), &u);
            let gate = self.lin(&format!("den{i}.gate"), &cond);
            for ((hi, gi), ui) in h.iter_mut().zip(&gate).zip(&u) {
                *hi += gi * ui;
            }
        }
        let mut out = self.lin("den_base", &e);
        for (o, r) in out.iter_mut().zip(self.lin("den_out", &h)) {
            *o += r;
        }
        out
    }
}

fn elu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v <= 0.0 {
            *v = v.exp_m1();
        }
    }
}

fn layer_norm_f64(x: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

/// KL term on the tape: per-dim values clamped at `free_bits`, summed over
/// dims, averaged over the batch.
pub fn kl_gaussian_tensor(mu: &Tensor, log_var: &Tensor, free_bits: f64) -> Tensor {
    let per_dim = mu
        .square()
        .add(&log_var.exp())
        .sub(log_var)
        .add_scalar(-1.0)
        .scale(0.5)
        .max_scalar(free_bits);
    per_dim.sum_last().mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_policy() -> ActPolicy {
        let cfg = ActConfig { hidden: 16, denoiser_width: 32, dz: 4, ..ActConfig::default() };
        ActPolicy::new(cfg, OffsetSet::parse("full").unwrap(), 7)
    }

    #[test]
    fn mean_mode_ignores_rng() {
        let p = IntentPosterior { mu: vec![0.3, -0.7], log_var: vec![1.0, 2.0] };
        let mut r1 = RngStream::new(1, 0);
        let mut r2 = RngStream::new(99, 5);
        assert_eq!(sample_intent(&p, &mut r1, true), p.mu);
        assert_eq!(sample_intent(&p, &mut r2, true), p.mu);
    }

    #[test]
    fn zero_sigma_returns_mean() {
        let p = IntentPosterior { mu: vec![0.4, 0.1], log_var: vec![-600.0, -600.0] };
        let mut rng = RngStream::new(2, 0);
        let z = sample_intent(&p, &mut rng, false);
        for (zi, mi) in z.iter().zip(&p.mu) {
            assert!((zi - mi).abs() < 1e-100);
        }
    }

    #[test]
    fn sample_mean_converges_to_mu() {
        let p = IntentPosterior { mu: vec![0.5, -1.2, 0.0], log_var: vec![0.0, -1.0, 1.0] };
        let mut rng = RngStream::new(3, 0);
        let n = 100_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..n {
            for (a, z) in acc.iter_mut().zip(sample_intent(&p, &mut rng, false)) {
                *a += z;
            }
        }
        for (a, m) in acc.iter().zip(&p.mu) {
            assert!((a / n as f64 - m).abs() < 0.02);
        }
    }

    #[test]
    fn kl_closed_form_cases() {
        let std_normal = IntentPosterior { mu: vec![0.0; 3], log_var: vec![0.0; 3] };
        assert!(kl_gaussian(&std_normal, 0.0).abs() < 1e-12);
        let shifted = IntentPosterior { mu: vec![1.0], log_var: vec![0.0] };
        assert!((kl_gaussian(&shifted, 0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn free_bits_floor_applies_per_dimension() {
        // Posterior with per-dim KL ≈ 0.05 < 0.1 floor → 0.1 per dim.
        let mu = (0.1f64).sqrt(); // KL = μ²/2 = 0.05 at σ = 1
        let p = IntentPosterior { mu: vec![mu, mu], log_var: vec![0.0, 0.0] };
        assert!((kl_gaussian(&p, 0.1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q − log p] estimated by sampling, within 1% at 1e5.
        let p = IntentPosterior { mu: vec![0.8, -0.5], log_var: vec![0.4, -0.6] };
        let analytic = kl_gaussian(&p, 0.0);
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            for d in 0..2 {
                let sigma = (0.5 * p.log_var[d]).exp();
                let z = p.mu[d] + sigma * rng.normal();
                let log_q = -0.5 * ((z - p.mu[d]) / sigma).powi(2) - sigma.ln();
                let log_p = -0.5 * z * z;
                acc += log_q - log_p;
            }
        }
        let mc = acc / n as f64;
        assert!((mc - analytic).abs() / analytic < 0.01, "{mc} vs {analytic}");
    }

    #[test]
    fn kl_tensor_matches_scalar_form() {
        let p = IntentPosterior { mu: vec![0.8, -0.5, 0.1], log_var: vec![0.4, -0.6, 0.0] };
        let tape = Tape::new();
        let mu = tape.leaf(&Array { shape: vec![1, 3], data: p.mu.clone() });
        let lv = tape.leaf(&Array { shape: vec![1, 3], data: p.log_var.clone() });
        for fb in [0.0, 0.2] {
            let t = kl_gaussian_tensor(&mu, &lv, fb).scalar_value();
            assert!((t - kl_gaussian(&p, fb)).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_policy_reduces_to_base_projection() {
        // Gates and output projection are zero-initialized: the denoiser
        // output equals den_base applied to the input embedding, and is
        // unchanged if the residual-block fc weights are scrambled.
        let mut p = tiny_policy();
        let o_prop = vec![0.05; prop_width()];
        let z = vec![0.2; p.config.dz];
        let before = p.decode_raw(&o_prop, &z, DecodeNoise::Strict);
        for v in p.params.get_mut("den1.fc0.w").data.iter_mut() {
            *v += 7.0;
        }
        let after = p.decode_raw(&o_prop, &z, DecodeNoise::Strict);
        assert_eq!(before, after);
    }

    #[test]
    fn fast_decode_path_matches_tape_forward() {
        // Randomize the zero-initialized gates/output so the residual path
        // is live, then compare the f64 decode against the tape denoiser.
        let mut p = tiny_policy();
        let mut rng = RngStream::new(21, 0);
        for name in ["den0.gate.w", "den1.gate.w", "den2.gate.w", "den3.gate.w", "den_out.w"] {
            for v in p.params.get_mut(name).data.iter_mut() {
                *v = 0.3 * rng.normal();
            }
        }
        let o_prop: Vec<f64> = (0..prop_width()).map(|_| 0.1 * rng.normal()).collect();
        let z: Vec<f64> = (0..p.config.dz).map(|_| rng.normal()).collect();
        let fast = p.decode_raw(&o_prop, &z, DecodeNoise::Strict);

        let tape = Tape::new();
        let bp = crate::numerics::nn::BoundParams::bind(&tape, &p.params);
        let prop = tape.leaf(&Array { shape: vec![1, o_prop.len()], data: o_prop.clone() });
        let feat = p.prop_feature(&bp, &prop);
        let zt = tape.leaf(&Array { shape: vec![1, z.len()], data: z.clone() });
        let c = Tensor::concat_last(&[feat, zt]);
        let mut x = vec![0.0; p.action_dim];
        let grid = p.schedule.ddim_grid(p.config.ddim_steps);
        for w in grid.windows(2) {
            let xt = tape.leaf(&Array { shape: vec![1, p.action_dim], data: x.clone() });
            let temb = tape.leaf(&p.time_embedding(&[w[0]]));
            let x0 = p.denoise(&bp, &xt, &temb, &c).value().data;
            x = if w[1] == 0 { x0 } else { crate::act::schedule::ddim_step(&x, &x0, w[0], w[1], &p.schedule) };
        }
        for (f, t) in fast.iter().zip(&x) {
            assert!((f - t).abs() < 1e-12, "fast {f} vs tape {t}");
        }
    }

    #[test]
    fn strict_decode_is_bit_deterministic_and_prop_z_pure() {
        let mut p = tiny_policy();
        p.trained = true;
        let o_prop = vec![0.03; prop_width()];
        let z = vec![-0.1; p.config.dz];
        let a = p.act_decode(&o_prop, &z, DecodeNoise::Strict);
        let b = p.act_decode(&o_prop, &z, DecodeNoise::Strict);
        assert_eq!(a, b);
        let mut z2 = z.clone();
        z2[0] += 0.5;
        assert_ne!(p.act_decode(&o_prop, &z2, DecodeNoise::Strict), a);
    }

    #[test]
    fn seeded_decode_reproducible_from_stream_state() {
        let mut p = tiny_policy();
        p.trained = true;
        let o_prop = vec![0.03; prop_width()];
        let z = vec![0.4; p.config.dz];
        let mut r1 = RngStream::new(5, 2);
        let mut r2 = RngStream::new(5, 2);
        assert_eq!(
            p.act_decode(&o_prop, &z, DecodeNoise::Seeded(&mut r1)),
            p.act_decode(&o_prop, &z, DecodeNoise::Seeded(&mut r2))
        );
    }

    #[test]
    #[should_panic(expected = "untrained")]
    fn untrained_decode_is_an_error() {
        let p = tiny_policy();
        p.act_decode(&vec![0.0; prop_width()], &vec![0.0; p.config.dz], DecodeNoise::Strict);
    }

    #[test]
    fn decode_latency_under_budget() {
        let mut p = ActPolicy::new(ActConfig::default(), OffsetSet::parse("full").unwrap(), 1);
        p.trained = true;
        let o_prop = vec![0.01; prop_width()];
        let z = vec![0.1; p.config.dz];
        p.act_decode(&o_prop, &z, DecodeNoise::Strict); // warm-up
        let start = std::time::Instant::now();
        let reps = 20;
        for _ in 0..reps {
            p.act_decode(&o_prop, &z, DecodeNoise::Strict);
        }
        let per_call = start.elapsed().as_secs_f64() / reps as f64;
        assert!(per_call < 5e-3, "decode took {:.3} ms", per_call * 1e3);
    }
}
