//! Contrastive text-motion evaluator and the feature-space metrics built
//! on it (MM-D, R-precision, FID, Diversity, MultiModality).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::linalg::{matmul, mean_cov, spd_sqrt};
use crate::numerics::nn::{apply_mlp, insert_mlp, Activation, BoundParams, ParamStore};
use crate::numerics::{adam_step, AdamState, Array, RngStream, Tape, Tensor};
use crate::sim::{MotionClip, CLIP_CHANNELS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("too few samples: need {need}, have {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("non-finite features in {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub d_e: usize,
    pub hidden: usize,
    pub temperature: f64,
    pub lr: f64,
    pub steps: usize,
    pub n_instructions: usize,
    pub retrieval_batch: usize,
    pub grad_clip: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            d_e: 16,
            hidden: 32,
            temperature: 0.07,
            lr: 3e-3,
            steps: 400,
            n_instructions: 6,
            retrieval_batch: 32,
            grad_clip: 1.0,
        }
    }
}

/// Temporal mean+std pooling of the flat frame channels: the motion
/// branch's clip summary.
pub fn motion_summary(clip: &MotionClip) -> Vec<f64> {
    assert!(!clip.is_empty(), "empty clip");
    let n = clip.len() as f64;
    let mut mean = vec![0.0; CLIP_CHANNELS];
    for f in &clip.frames {
        for (m, v) in mean.iter_mut().zip(f.to_channels()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; CLIP_CHANNELS];
    for f in &clip.frames {
        for (s, (v, m)) in var.iter_mut().zip(f.to_channels().iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    let mut out = mean;
    out.extend(var.iter().map(|s| (s / n).sqrt()));
    out
}

/// Frozen two-branch embedding model. Instruction ids feed a learned
/// table + MLP; motions feed mean+std pooled channels + MLP. Both outputs
/// are unit-normalized.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub params: ParamStore,
    pub config: EvalConfig,
}

const SUMMARY_WIDTH: usize = 2 * CLIP_CHANNELS;

impl Evaluator {
    fn new(config: EvalConfig, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 51);
        let mut params = ParamStore::new();
        let mut emb = vec![0.0; config.n_instructions * config.hidden];
        for v in emb.iter_mut() {
            *v = 0.5 * rng.normal();
        }
        params.insert("text_emb", Array::new(vec![config.n_instructions, config.hidden], emb));
        insert_mlp(&mut params, "text", &[config.hidden, config.hidden, config.d_e], &mut rng);
        insert_mlp(&mut params, "motion", &[SUMMARY_WIDTH, config.hidden, config.d_e], &mut rng);
        Evaluator { params, config }
    }

    fn normalize_rows(x: &Tensor) -> Tensor {
        let d = *x.shape().last().unwrap();
        let b = x.len() / d;
        let sumsq = x.square().sum_last().add_scalar(1e-12);
        let inv = sumsq.ln().scale(-0.5).exp().reshape(vec![b, 1]);
        let ones = x.tape().leaf(&Array::new(vec![1, d], vec![1.0; d]));
        x.mul(&inv.matmul(&ones))
    }

    fn text_tower(&self, bp: &BoundParams, ids: &[u32]) -> Tensor {
        let table = bp.get("text_emb");
        let rows: Vec<Tensor> = ids
            .iter()
            .map(|&id| {
                assert!((id as usize) < self.config.n_instructions, "instruction id out of range");
                table.slice_rows(id as usize, id as usize + 1)
            })
            .collect();
        let x = Tensor::concat_rows(&rows);
        Self::normalize_rows(&apply_mlp(bp, "text", &x, 2, Activation::Elu))
    }

    fn motion_tower(&self, bp: &BoundParams, summaries: &Array) -> Tensor {
        let x = bp.get("text_emb").tape().leaf(summaries);
        Self::normalize_rows(&apply_mlp(bp, "motion", &x, 2, Activation::Elu))
    }

    /// Unit-norm text embedding for one instruction id.
    pub fn embed_text(&self, id: u32) -> Vec<f64> {
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &self.params);
        self.text_tower(&bp, &[id]).value().data
    }

    /// Unit-norm motion embedding for one clip.
    pub fn embed_motion(&self, clip: &MotionClip) -> Vec<f64> {
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &self.params);
        let s = Array::new(vec![1, SUMMARY_WIDTH], motion_summary(clip));
        self.motion_tower(&bp, &s).value().data
    }
}

/// Symmetric in-batch contrastive training; each batch holds one clip per
/// distinct label so every off-diagonal entry is a true negative. The
/// evaluator is frozen on return (no optimizer state kept).
pub fn train_evaluator(
    pairs: &[(u32, MotionClip)],
    config: &EvalConfig,
    seed: u64,
) -> Result<Evaluator, EvalError> {
    let mut labels: Vec<u32> = pairs.iter().map(|(id, _)| *id).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(EvalError::DegenerateCorpus(format!(
            "need at least 2 distinct instruction labels, found {}",
            labels.len()
        )));
    }
    let mut by_label: Vec<Vec<usize>> = labels
        .iter()
        .map(|&l| (0..pairs.len()).filter(|&i| pairs[i].0 == l).collect())
        .collect();
    let _ = &mut by_label;
    let mut ev = Evaluator::new(config.clone(), seed);
    let mut opt = AdamState::new(ev.params.arrays());
    let mut rng = RngStream::new(seed, 53);
    let b = labels.len();
    let summaries: Vec<Vec<f64>> = pairs.iter().map(|(_, c)| motion_summary(&c.clone())).collect();
    for _ in 0..config.steps {
        // One random clip per label.
        let batch: Vec<usize> =
            by_label.iter().map(|idxs| idxs[rng.gen_range_usize(idxs.len())]).collect();
        let ids: Vec<u32> = batch.iter().map(|&i| pairs[i].0).collect();
        let mut s = Vec::with_capacity(b * SUMMARY_WIDTH);
        for &i in &batch {
            s.extend_from_slice(&summaries[i]);
        }
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &ev.params);
        let t = ev.text_tower(&bp, &ids);
        let m = ev.motion_tower(&bp, &Array::new(vec![b, SUMMARY_WIDTH], s));
        let sim = t.matmul_nt(&m).scale(1.0 / config.temperature);
        let mut eye = vec![0.0; b * b];
        for i in 0..b {
            eye[i * b + i] = 1.0;
        }
        let eye = tape.leaf(&Array::new(vec![b, b], eye));
        let loss_t = sim.softmax().ln().mul(&eye).sum_last().mean().neg();
        let sim_m = m.matmul_nt(&t).scale(1.0 / config.temperature);
        let loss_m = sim_m.softmax().ln().mul(&eye).sum_last().mean().neg();
        let loss = loss_t.add(&loss_m).scale(0.5);
        let grads = loss.backward();
        let gv = bp.grads(&grads);
        adam_step(ev.params.arrays_mut(), &gv, &mut opt, config.lr, config.grad_clip);
    }
    Ok(ev)
}

/// Rows of unit-norm motion embeddings with a provenance label.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub rows: Vec<f64>,
    pub d: usize,
    pub label: String,
}

impl FeatureSet {
    pub fn new(rows: Vec<f64>, d: usize, label: &str) -> Self {
        assert!(d > 0 && rows.len() % d == 0, "ragged feature matrix");
        FeatureSet { rows, d, label: label.to_string() }
    }

    pub fn from_clips(ev: &Evaluator, clips: &[&MotionClip], label: &str) -> Self {
        let d = ev.config.d_e;
        let mut rows = Vec::with_capacity(clips.len() * d);
        for c in clips {
            rows.extend(ev.embed_motion(c));
        }
        FeatureSet::new(rows, d, label)
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub mm_d: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

/// MM-D and R-precision over shuffled candidate batches.
/// Pairs are (text embedding, motion embedding) rows.
pub fn retrieval_metrics(
    text: &FeatureSet,
    motion: &FeatureSet,
    batch: usize,
    rng: &mut RngStream,
) -> Result<RetrievalMetrics, EvalError> {
    let n = text.len();
    assert_eq!(n, motion.len(), "text/motion pair count mismatch");
    if n < batch {
        return Err(EvalError::TooFewSamples { need: batch, have: n });
    }
    let mm_d = (0..n).map(|i| euclid(text.row(i), motion.row(i))).sum::<f64>() / n as f64;
    let perm = rng.permutation(n);
    let mut hits = [0usize; 3];
    let mut queries = 0usize;
    for group in perm.chunks_exact(batch) {
        for &qi in group {
            // Rank the batch's motions by distance to this text query.
            let dq = euclid(text.row(qi), motion.row(qi));
            let better = group
                .iter()
                .filter(|&&cj| cj != qi && euclid(text.row(qi), motion.row(cj)) < dq)
                .count();
            for k in 0..3 {
                if better <= k {
                    hits[k] += 1;
                }
            }
            queries += 1;
        }
    }
    let q = queries as f64;
    Ok(RetrievalMetrics { mm_d, r1: hits[0] as f64 / q, r2: hits[1] as f64 / q, r3: hits[2] as f64 / q })
}

/// Fréchet distance between Gaussians fit to the two feature sets:
/// ‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2}).
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64, EvalError> {
    assert_eq!(a.d, b.d, "feature dims differ");
    for (set, name) in [(a, "a"), (b, "b")] {
        if set.rows.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite(format!("feature set {name} ({})", set.label)));
        }
        if set.len() < 2 {
            return Err(EvalError::TooFewSamples { need: 2, have: set.len() });
        }
    }
    let d = a.d;
    let jitter_a = if a.len() < d + 1 { 1e-6 } else { 0.0 };
    let jitter_b = if b.len() < d + 1 { 1e-6 } else { 0.0 };
    let (mu_a, cov_a) = mean_cov(&a.rows, a.len(), d, jitter_a);
    let (mu_b, cov_b) = mean_cov(&b.rows, b.len(), d, jitter_b);
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();
    // tr((Σa Σb)^{1/2}) via the symmetric form (A½ Σb A½)^{1/2}.
    let a_half = spd_sqrt(&cov_a, d, 1e-10);
    let inner = matmul(&matmul(&a_half, &cov_b, d, d, d), &a_half, d, d, d);
    let (vals, _) = super::linalg::jacobi_eigh(&inner, d);
    let tr_sqrt: f64 = vals.iter().map(|&l| l.max(1e-10).sqrt()).sum();
    let tr_a: f64 = (0..d).map(|i| cov_a[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| cov_b[i * d + i]).sum();
    Ok((mean_term + tr_a + tr_b - 2.0 * tr_sqrt).max(0.0))
}

/// Mean Euclidean distance over random disjoint feature pairs.
pub fn diversity(f: &FeatureSet, n_pairs: usize, rng: &mut RngStream) -> Result<f64, EvalError> {
    let n = f.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { need: 2, have: n });
    }
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let i = rng.gen_range_usize(n);
        let mut j = rng.gen_range_usize(n - 1);
        if j >= i {
            j += 1;
        }
        total += euclid(f.row(i), f.row(j));
    }
    Ok(total / n_pairs as f64)
}

/// Per-text repeated-generation mean pairwise feature distance, averaged
/// over texts. `generate` maps (instruction_id, seed) to a motion; a
/// `None` result is excluded and counted.
pub fn multimodality(
    ev: &Evaluator,
    texts: &[u32],
    mut generate: impl FnMut(u32, u64) -> Option<MotionClip>,
    repeats: usize,
    rng: &mut RngStream,
) -> Result<(f64, usize), EvalError> {
    assert!(repeats >= 2, "multimodality needs at least 2 repeats");
    let mut per_text = Vec::new();
    let mut failures = 0usize;
    for &text in texts {
        let mut feats: Vec<Vec<f64>> = Vec::new();
        for _ in 0..repeats {
            let seed = (rng.uniform() * 1e12) as u64;
            match generate(text, seed) {
                Some(clip) => feats.push(ev.embed_motion(&clip)),
                None => failures += 1,
            }
        }
        if feats.len() < 2 {
            continue;
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..feats.len() {
            for j in (i + 1)..feats.len() {
                total += euclid(&feats[i], &feats[j]);
                count += 1;
            }
        }
        per_text.push(total / count as f64);
    }
    if per_text.is_empty() {
        return Err(EvalError::TooFewSamples { need: 1, have: 0 });
    }
    Ok((per_text.iter().sum::<f64>() / per_text.len() as f64, failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{gen_reference_dataset, DatasetConfig, MotionFamily};

    fn toy_pairs() -> Vec<(u32, MotionClip)> {
        let model = crate::sim::BipedModel::new(crate::sim::SimConfig::default());
        let cfg = DatasetConfig {
            families: vec![
                MotionFamily::Balance,
                MotionFamily::Squat,
                MotionFamily::Wave,
                MotionFamily::Hop,
            ],
            min_clips: 6,
            multi_clips: 0,
            clip_seconds_min: 2.0,
            clip_seconds_max: 2.5,
            ..DatasetConfig::default()
        };
        let ds = gen_reference_dataset(&cfg, &model, 11);
        ds.clips
            .iter()
            .map(|c| (c.segments[0].instruction_id, c.clone()))
            .collect()
    }

    fn unit_rows(n: usize, d: usize, rng: &mut RngStream) -> Vec<f64> {
        let mut rows = Vec::with_capacity(n * d);
        for _ in 0..n {
            let v = rng.normal_vec(d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.extend(v.iter().map(|x| x / norm));
        }
        rows
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let pairs = toy_pairs();
        let cfg = EvalConfig { steps: 20, ..EvalConfig::default() };
        let ev = train_evaluator(&pairs, &cfg, 3).unwrap();
        for id in 0..4 {
            let e = ev.embed_text(id);
            let n: f64 = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "text norm {n}");
        }
        let m = ev.embed_motion(&pairs[0].1);
        let n: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9, "motion norm {n}");
    }

    #[test]
    fn single_label_corpus_rejected() {
        let pairs: Vec<(u32, MotionClip)> =
            toy_pairs().into_iter().filter(|(id, _)| *id == 0).collect();
        assert!(matches!(
            train_evaluator(&pairs, &EvalConfig::default(), 1),
            Err(EvalError::DegenerateCorpus(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = toy_pairs();
        let cfg = EvalConfig { steps: 15, ..EvalConfig::default() };
        let a = train_evaluator(&pairs, &cfg, 7).unwrap();
        let b = train_evaluator(&pairs, &cfg, 7).unwrap();
        assert_eq!(a.params.arrays(), b.params.arrays());
    }

    #[test]
    fn matched_similarity_beats_mismatched_after_training() {
        let pairs = toy_pairs();
        // Held-out split: train on even indices, test on odd.
        let train: Vec<(u32, MotionClip)> = pairs.iter().step_by(2).cloned().collect();
        let test: Vec<&(u32, MotionClip)> = pairs.iter().skip(1).step_by(2).collect();
        let ev = train_evaluator(&train, &EvalConfig::default(), 5).unwrap();
        let mut labels: Vec<u32> = pairs.iter().map(|(id, _)| *id).collect();
        labels.sort_unstable();
        labels.dedup();
        let texts: Vec<(u32, Vec<f64>)> =
            labels.iter().map(|&id| (id, ev.embed_text(id))).collect();
        let mut wins = 0;
        let mut total = 0;
        for (id, clip) in &test {
            let m = ev.embed_motion(clip);
            let cos = |t: &[f64]| t.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
            let matched = cos(&texts.iter().find(|(l, _)| l == id).unwrap().1);
            for (other, emb) in &texts {
                if other == id {
                    continue;
                }
                total += 1;
                if matched > cos(emb) {
                    wins += 1;
                }
            }
        }
        let frac = wins as f64 / total as f64;
        assert!(frac >= 0.95, "matched beat mismatched only {frac:.3} of the time");
    }

    #[test]
    fn retrieval_perfect_and_nested() {
        // Identical per-pair embeddings, distinct across pairs.
        let mut rng = RngStream::new(1, 0);
        let rows = unit_rows(64, 8, &mut rng);
        let text = FeatureSet::new(rows.clone(), 8, "text");
        let motion = FeatureSet::new(rows, 8, "motion");
        let m = retrieval_metrics(&text, &motion, 32, &mut rng).unwrap();
        assert_eq!(m.mm_d, 0.0);
        assert_eq!(m.r1, 1.0);
        assert!(m.r1 <= m.r2 && m.r2 <= m.r3);
    }

    #[test]
    fn retrieval_random_binomial_oracle() {
        // Independent random embeddings: R@1 should be 1/32 within 3σ
        // over ~1e4 queries.
        let mut rng = RngStream::new(2, 0);
        let n = 10_016; // multiple of 32
        let text = FeatureSet::new(unit_rows(n, 8, &mut rng), 8, "t");
        let motion = FeatureSet::new(unit_rows(n, 8, &mut rng), 8, "m");
        let m = retrieval_metrics(&text, &motion, 32, &mut rng).unwrap();
        let p = 1.0 / 32.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((m.r1 - p).abs() < 3.0 * sigma, "r1 {} vs {}±{}", m.r1, p, 3.0 * sigma);
        assert!(m.r1 <= m.r2 && m.r2 <= m.r3);
    }

    #[test]
    fn retrieval_matches_brute_force_ranking() {
        let mut rng = RngStream::new(3, 0);
        let n = 64;
        let text = FeatureSet::new(unit_rows(n, 4, &mut rng), 4, "t");
        let motion = FeatureSet::new(unit_rows(n, 4, &mut rng), 4, "m");
        let mut rng_a = RngStream::new(9, 0);
        let got = retrieval_metrics(&text, &motion, 32, &mut rng_a).unwrap();
        // Independent brute-force oracle over the same permutation.
        let mut rng_b = RngStream::new(9, 0);
        let perm = rng_b.permutation(n);
        let mut hits = [0usize; 3];
        let mut q = 0;
        for group in perm.chunks_exact(32) {
            for &qi in group {
                let mut ranked: Vec<usize> = group.to_vec();
                ranked.sort_by(|&x, &y| {
                    euclid(text.row(qi), motion.row(x))
                        .partial_cmp(&euclid(text.row(qi), motion.row(y)))
                        .unwrap()
                });
                let pos = ranked.iter().position(|&c| c == qi).unwrap();
                for k in 0..3 {
                    if pos <= k {
                        hits[k] += 1;
                    }
                }
                q += 1;
            }
        }
        assert_eq!(got.r1, hits[0] as f64 / q as f64);
        assert_eq!(got.r2, hits[1] as f64 / q as f64);
        assert_eq!(got.r3, hits[2] as f64 / q as f64);
    }

    #[test]
    fn fid_zero_symmetric_and_closed_form() {
        let mut rng = RngStream::new(4, 0);
        let a = FeatureSet::new(unit_rows(200, 6, &mut rng), 6, "a");
        assert!(fid(&a, &a).unwrap() < 1e-8);
        // N(0, I) vs N(d·e1, I) at 10k samples: FID = d².
        let d_shift = 1.7;
        let n = 10_000;
        let dim = 6;
        let mut xa = Vec::with_capacity(n * dim);
        let mut xb = Vec::with_capacity(n * dim);
        for _ in 0..n {
            xa.extend(rng.normal_vec(dim));
            let mut row = rng.normal_vec(dim);
            row[0] += d_shift;
            xb.extend(row);
        }
        let fa = FeatureSet::new(xa, dim, "ga");
        let fb = FeatureSet::new(xb, dim, "gb");
        let got = fid(&fa, &fb).unwrap();
        let want = d_shift * d_shift;
        assert!((got - want).abs() / want < 0.02, "fid {got} vs {want}");
        let sym = fid(&fb, &fa).unwrap();
        assert!((got - sym).abs() < 1e-8, "fid asymmetric: {got} vs {sym}");
    }

    #[test]
    fn diversity_oracles() {
        let mut rng = RngStream::new(5, 0);
        let all_same = FeatureSet::new(vec![0.5; 40 * 4], 4, "same");
        assert_eq!(diversity(&all_same, 100, &mut rng).unwrap(), 0.0);
        // Two antipodal unit clusters, balanced: a random ordered pair is
        // cross-cluster with probability ~1/2 (distance 2), else 0.
        let mut rows = Vec::new();
        for i in 0..400 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows.extend([sign, 0.0, 0.0, 0.0]);
        }
        let f = FeatureSet::new(rows, 4, "antipodal");
        let div = diversity(&f, 10_000, &mut rng).unwrap();
        assert!((div - 1.0).abs() < 0.05, "diversity {div}");
        // Homogeneity: scaling features by 2 doubles diversity.
        let scaled = FeatureSet::new(f.rows.iter().map(|v| 2.0 * v).collect(), 4, "x2");
        let mut r1 = RngStream::new(6, 0);
        let mut r2 = RngStream::new(6, 0);
        let d1 = diversity(&f, 2000, &mut r1).unwrap();
        let d2 = diversity(&scaled, 2000, &mut r2).unwrap();
        assert!((d2 - 2.0 * d1).abs() < 1e-12);
    }

    #[test]
    fn multimodality_deterministic_generator_is_zero() {
        let pairs = toy_pairs();
        let cfg = EvalConfig { steps: 10, ..EvalConfig::default() };
        let ev = train_evaluator(&pairs, &cfg, 8).unwrap();
        let fixed = pairs[0].1.clone();
        let mut rng = RngStream::new(7, 0);
        let (mm, failures) =
            multimodality(&ev, &[0, 1], |_, _| Some(fixed.clone()), 3, &mut rng).unwrap();
        assert_eq!(mm, 0.0);
        assert_eq!(failures, 0);
        // Failed generations are excluded and counted.
        let mut rng = RngStream::new(7, 0);
        let mut calls = 0;
        let (_, failures) = multimodality(
            &ev,
            &[0],
            |_, _| {
                calls += 1;
                if calls == 1 {
                    None
                } else {
                    Some(fixed.clone())
                }
            },
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(failures, 1);
    }
}
