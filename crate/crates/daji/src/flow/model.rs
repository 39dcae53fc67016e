//! The chunk generator: frozen instruction embeddings, latent-history
//! condition encoder, and a small cross-attending transformer velocity
//! field with flow-time AdaLN modulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::nn::{sinusoidal_embedding, BoundParams, ParamStore};
use crate::numerics::{AdamState, Array, RngStream, Tape, Tensor};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("unknown instruction id {0}")]
    UnknownInstruction(u32),
    #[error("latent corpus incompatible with model config: {0}")]
    SchemaMismatch(String),
    #[error("trajectory too short for self-conditioning: {have} frames, need {need}")]
    TrajectoryTooShort { have: usize, need: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub dz: usize,
    pub dcond: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Latent frames per generated chunk.
    pub h_chunk: usize,
    /// Maximum latent-history frames observed by the condition encoder.
    pub t_obs: usize,
    /// Chunks of history kept during autoregressive rollout.
    pub k_history: usize,
    /// Euler integration steps at generation time.
    pub m_euler: usize,
    /// Default chunks per free rollout.
    pub n_chunks: usize,
    /// Self-conditioning unroll depth.
    pub ksc: usize,
    pub lambda_sc: f64,
    /// Self-conditioning curriculum, as fractions of total steps.
    pub off_frac: f64,
    pub ramp_frac: f64,
    pub n_queries: usize,
    pub n_instructions: usize,
    pub buckets: usize,
    pub dropout: f64,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub grad_clip: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dz: 8,
            dcond: 64,
            width: 64,
            depth: 2,
            heads: 4,
            h_chunk: 15,
            t_obs: 120,
            k_history: 8,
            m_euler: 4,
            n_chunks: 20,
            ksc: 8,
            lambda_sc: 0.25,
            off_frac: 0.5,
            ramp_frac: 0.2,
            n_queries: 32,
            n_instructions: 6,
            buckets: 1000,
            dropout: 0.2,
            lr: 1e-4,
            min_lr: 5e-7,
            warmup_steps: 200,
            total_steps: 3000,
            grad_clip: 1.0,
        }
    }
}

/// One generated chunk of H latent frames (frame-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentChunk {
    pub h: usize,
    pub dz: usize,
    pub data: Vec<f64>,
}

impl LatentChunk {
    pub fn new(h: usize, dz: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * dz);
        assert!(data.iter().all(|v| v.is_finite()), "non-finite latent chunk");
        LatentChunk { h, dz, data }
    }
}

/// Condition tokens: the instruction embedding followed by encoded
/// latent-history tokens (or a learned null token on cold start).
#[derive(Debug, Clone)]
pub struct ConditionSeq {
    pub tokens: Array,
    pub n_text: usize,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowModel {
    pub params: ParamStore,
    /// Instruction embedding table, one row per id. Frozen: it lives
    /// outside the optimizer state and never receives updates.
    pub embed: Array,
    pub opt: AdamState,
    pub config: FlowConfig,
    pub trained: bool,
}

fn gaussian_array(shape: Vec<usize>, std: f64, rng: &mut RngStream) -> Array {
    let n: usize = shape.iter().product();
    Array::new(shape, (0..n).map(|_| std * rng.normal()).collect())
}

impl FlowModel {
    pub fn new(config: FlowConfig, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 41);
        let c = &config;
        let (w, dc, dz) = (c.width, c.dcond, c.dz);
        let embed = gaussian_array(vec![c.n_instructions, dc], 1.0, &mut rng);
        let mut p = ParamStore::new();
        p.insert_linear("obs_proj.0", dz, w, &mut rng);
        p.insert_linear("obs_proj.1", w, dc, &mut rng);
        p.insert("obs_pos", gaussian_array(vec![c.t_obs, dc], 0.02, &mut rng));
        p.insert("null_obs", gaussian_array(vec![1, dc], 0.02, &mut rng));
        p.insert_linear("cond_proj", dc, w, &mut rng);
        p.insert_linear("x_proj", dz, w, &mut rng);
        p.insert("x_pos", gaussian_array(vec![c.h_chunk, w], 0.02, &mut rng));
        p.insert("query", gaussian_array(vec![c.n_queries, w], 0.02, &mut rng));
        p.insert_linear("temb", w, w, &mut rng);
        for i in 0..c.depth {
            for part in ["attn.q", "attn.k", "attn.v", "attn.o", "cross.q", "cross.k", "cross.v", "cross.o"] {
                p.insert_linear(&format!("b{i}.{part}"), w, w, &mut rng);
            }
            p.insert_linear(&format!("b{i}.mlp.0"), w, 2 * w, &mut rng);
            p.insert_linear(&format!("b{i}.mlp.1"), 2 * w, w, &mut rng);
            p.insert_linear(&format!("b{i}.mod1"), w, 2 * w, &mut rng);
            p.insert_linear(&format!("b{i}.mod3"), w, 2 * w, &mut rng);
            p.insert_zero_linear(&format!("b{i}.gate1"), w, w);
            p.insert_zero_linear(&format!("b{i}.gate2"), w, w);
            p.insert_zero_linear(&format!("b{i}.gate3"), w, w);
        }
        p.insert_linear("head.0", w, w, &mut rng);
        p.insert_linear("head.1", w, dz, &mut rng);
        let opt = AdamState::new(p.arrays());
        FlowModel { params: p, embed, opt, config, trained: false }
    }

    pub fn text_embedding(&self, instruction_id: u32) -> Result<&[f64], FlowError> {
        let n = self.embed.shape[0];
        let i = instruction_id as usize;
        if i >= n {
            return Err(FlowError::UnknownInstruction(instruction_id));
        }
        let dc = self.embed.shape[1];
        Ok(&self.embed.data[i * dc..(i + 1) * dc])
    }

    /// Builds condition tokens on the tape so the history-encoder
    /// parameters receive gradients. `text` is a frozen embedding row;
    /// `history` is frame-major latents (truncated here to the last T_obs).
    pub fn condition_tokens(&self, bp: &BoundParams, text: &[f64], history: &[f64]) -> Tensor {
        let tape = bp.get("obs_pos").tape().clone();
        let dc = self.config.dcond;
        let dz = self.config.dz;
        let text_tok = tape.leaf(&Array::new(vec![1, dc], text.to_vec()));
        let frames = history.len() / dz;
        let obs = if frames == 0 {
            bp.get("null_obs").clone()
        } else {
            let keep = frames.min(self.config.t_obs);
            let tail = &history[(frames - keep) * dz..];
            let x = tape.leaf(&Array::new(vec![keep, dz], tail.to_vec()));
            let h = bp.linear("obs_proj.0", &x).gelu();
            let h = bp.linear("obs_proj.1", &h);
            // Oldest kept frame sits at position 0.
            let pos = bp.get("obs_pos").slice_rows(0, keep);
            h.add(&pos).layer_norm(1e-5)
        };
        Tensor::concat_rows(&[text_tok, obs])
    }

    /// Deployment-side condition encoding to plain arrays.
    pub fn encode_condition_plain(&self, text: &[f64], history: &[f64]) -> ConditionSeq {
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &self.params);
        let t = self.condition_tokens(&bp, text, history);
        let tokens = t.value();
        let n = tokens.shape[0];
        ConditionSeq { tokens, n_text: 1, n_obs: n - 1 }
    }

    fn heads_attend(&self, q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let heads = self.config.heads;
        let dh = self.config.width / heads;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qs = q.slice_last(lo, hi);
            let ks = k.slice_last(lo, hi);
            let vs = v.slice_last(lo, hi);
            let scores = qs.matmul_nt(&ks).scale(1.0 / (dh as f64).sqrt()).softmax();
            outs.push(scores.matmul(&vs));
        }
        Tensor::concat_last(&outs)
    }

    /// Velocity field v(X_s, s, C) over one chunk. `drop` enables training
    /// dropout with the given keep rng.
    pub fn velocity(
        &self,
        bp: &BoundParams,
        x_s: &Tensor,
        bucket: usize,
        cond: &Tensor,
        mut drop: Option<(&mut RngStream, f64)>,
    ) -> Tensor {
        let tape = x_s.tape().clone();
        let w = self.config.width;
        let temb_row = tape.leaf(&Array::new(vec![1, w], sinusoidal_embedding(bucket as f64, w)));
        let t = bp.linear("temb", &temb_row).silu().reshape(vec![w]);
        let modulate = |h: &Tensor, name: &str| -> Tensor {
            let m = bp.linear(name, &t.reshape(vec![1, w])).reshape(vec![2 * w]);
            let scale = m.slice_last(0, w);
            let shift = m.slice_last(w, 2 * w);
            h.layer_norm(1e-5).mul(&scale.add_scalar(1.0)).add(&shift)
        };
        let gate = |name: &str| -> Tensor {
            bp.linear(name, &t.reshape(vec![1, w])).reshape(vec![w])
        };
        let dropout = |h: Tensor, drop: &mut Option<(&mut RngStream, f64)>| -> Tensor {
            if let Some((rng, p)) = drop.as_mut() {
                let keep = 1.0 - *p;
                let mask: Vec<f64> =
                    (0..h.len()).map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 }).collect();
                let m = tape.leaf(&Array::new(h.shape().to_vec(), mask));
                h.mul(&m)
            } else {
                h
            }
        };

        let xt = bp.linear("x_proj", x_s).add(bp.get("x_pos"));
        let mut h = Tensor::concat_rows(&[bp.get("query").clone(), xt]);
        let cw = bp.linear("cond_proj", cond);
        for i in 0..self.config.depth {
            let hn = modulate(&h, &format!("b{i}.mod1"));
            let attn = self.heads_attend(
                &bp.linear(&format!("b{i}.attn.q"), &hn),
                &bp.linear(&format!("b{i}.attn.k"), &hn),
                &bp.linear(&format!("b{i}.attn.v"), &hn),
            );
            let attn = dropout(bp.linear(&format!("b{i}.attn.o"), &attn), &mut drop);
            h = h.add(&gate(&format!("b{i}.gate1")).mul(&attn));

            let hn = h.layer_norm(1e-5);
            let cross = self.heads_attend(
                &bp.linear(&format!("b{i}.cross.q"), &hn),
                &bp.linear(&format!("b{i}.cross.k"), &cw),
                &bp.linear(&format!("b{i}.cross.v"), &cw),
            );
            let cross = dropout(bp.linear(&format!("b{i}.cross.o"), &cross), &mut drop);
            h = h.add(&gate(&format!("b{i}.gate2")).mul(&cross));

            let hn = modulate(&h, &format!("b{i}.mod3"));
            let u = bp.linear(&format!("b{i}.mlp.1"), &bp.linear(&format!("b{i}.mlp.0"), &hn).gelu());
            let u = dropout(u, &mut drop);
            h = h.add(&gate(&format!("b{i}.gate3")).mul(&u));
        }
        let nq = self.config.n_queries;
        let out = h.slice_rows(nq, nq + self.config.h_chunk).layer_norm(1e-5);
        bp.linear("head.1", &bp.linear("head.0", &out).gelu())
    }

    /// Velocity evaluated to plain values (generation path, no gradients).
    pub fn velocity_plain(&self, x: &[f64], s: f64, cond: &ConditionSeq) -> Vec<f64> {
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &self.params);
        let xs = tape.leaf(&Array::new(vec![self.config.h_chunk, self.config.dz], x.to_vec()));
        let c = tape.leaf(&cond.tokens);
        self.velocity(&bp, &xs, flow_bucket(s, self.config.buckets), &c, None).value().data
    }
}

/// Timestep bucket index: floor(s·buckets), capped at buckets − 1.
pub fn flow_bucket(s: f64, buckets: usize) -> usize {
    ((s * buckets as f64) as usize).min(buckets - 1)
}

/// s = 0.999·u with u ~ Beta(1.5, 1).
pub fn sample_flow_time(rng: &mut RngStream) -> f64 {
    0.999 * rng.beta(1.5, 1.0)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> FlowConfig {
        FlowConfig {
            dz: 4,
            dcond: 16,
            width: 16,
            depth: 2,
            heads: 2,
            h_chunk: 5,
            t_obs: 20,
            n_queries: 6,
            n_instructions: 4,
            total_steps: 50,
            warmup_steps: 5,
            ..FlowConfig::default()
        }
    }

    #[test]
    fn flow_time_distribution_matches_beta_moments() {
        let mut rng = RngStream::new(1, 0);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let s = sample_flow_time(&mut rng);
            assert!((0.0..=0.999).contains(&s));
            acc += s;
        }
        let mean = acc / n as f64;
        assert!((mean - 0.999 * 1.5 / 2.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn bucket_rule() {
        assert_eq!(flow_bucket(0.0, 1000), 0);
        assert_eq!(flow_bucket(0.5, 1000), 500);
        assert_eq!(flow_bucket(0.999, 1000), 999);
        assert_eq!(flow_bucket(1.0, 1000), 999);
    }

    #[test]
    fn unknown_instruction_rejected() {
        let m = FlowModel::new(tiny_config(), 3);
        assert!(m.text_embedding(3).is_ok());
        assert!(matches!(m.text_embedding(4), Err(FlowError::UnknownInstruction(4))));
    }

    #[test]
    fn history_truncated_to_t_obs() {
        let m = FlowModel::new(tiny_config(), 3);
        let text = m.text_embedding(0).unwrap().to_vec();
        let dz = m.config.dz;
        // 30 frames with a marker on frame 9 (counting from 0): frames
        // 0..10 fall outside the 20-frame window and must not matter.
        let mut hist = vec![0.1; 30 * dz];
        hist[9 * dz] = 50.0;
        let c1 = m.encode_condition_plain(&text, &hist);
        hist[9 * dz] = -50.0;
        let c2 = m.encode_condition_plain(&text, &hist);
        assert_eq!(c1.tokens.data, c2.tokens.data, "frames beyond T_obs leaked in");
        assert_eq!(c1.n_obs, 20);
        // A frame inside the window does matter.
        hist[15 * dz] = 50.0;
        let c3 = m.encode_condition_plain(&text, &hist);
        assert_ne!(c2.tokens.data, c3.tokens.data);
    }

    #[test]
    fn empty_history_gives_single_null_token() {
        let m = FlowModel::new(tiny_config(), 3);
        let text = m.text_embedding(1).unwrap().to_vec();
        let c = m.encode_condition_plain(&text, &[]);
        assert_eq!(c.n_text, 1);
        assert_eq!(c.n_obs, 1);
        assert_eq!(c.tokens.shape, vec![2, m.config.dcond]);
        let null = m.params.get("null_obs");
        assert_eq!(&c.tokens.data[m.config.dcond..], &null.data[..]);
    }

    #[test]
    fn velocity_shape_and_determinism() {
        let mut m = FlowModel::new(tiny_config(), 9);
        // At init the gates are zero and the output is time-independent
        // by construction; liven them so the time path is exercised.
        let mut prng = RngStream::new(11, 0);
        for i in 0..m.config.depth {
            for g in ["gate1", "gate2", "gate3"] {
                for v in m.params.get_mut(&format!("b{i}.{g}.w")).data.iter_mut() {
                    *v = 0.2 * prng.normal();
                }
            }
        }
        let text = m.text_embedding(0).unwrap().to_vec();
        let hist = vec![0.05; 8 * m.config.dz];
        let cond = m.encode_condition_plain(&text, &hist);
        let x = vec![0.2; m.config.h_chunk * m.config.dz];
        let v1 = m.velocity_plain(&x, 0.3, &cond);
        let v2 = m.velocity_plain(&x, 0.3, &cond);
        assert_eq!(v1.len(), m.config.h_chunk * m.config.dz);
        assert_eq!(v1, v2);
        assert_ne!(v1, m.velocity_plain(&x, 0.8, &cond), "flow time must matter");
    }
}
