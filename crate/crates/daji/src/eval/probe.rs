//! Latent diagnostics: the future-motion ridge probe, temporal latent
//! correlation, and fixed-horizon streaming success.

use super::evaluator::EvalError;
use super::linalg::{jacobi_eigh, matmul, mean_cov, pearson, sym_ridge_solve, transpose};
use crate::act::LatentTrajectory;
use crate::numerics::RngStream;
use crate::sim::{FPS, N_JOINTS};

/// One sequence for probing: per-frame latents (frame-major) and the
/// matching joint-position track.
#[derive(Debug, Clone)]
pub struct ProbeSeq {
    pub dz: usize,
    pub latents: Vec<f64>,
    pub q: Vec<[f64; N_JOINTS]>,
}

impl ProbeSeq {
    pub fn frames(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// Mean per-component held-out Pearson correlation.
    pub score: f64,
    /// PCA components kept (may be truncated on rank-deficient targets).
    pub components: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Linear ridge probe from latents to PCA-projected future joint
/// residuals Δq_{t,horizon} = q_{t+horizon} − q_t. PCA and ridge are fit
/// on training sequences only; the score is the mean per-component
/// Pearson correlation on held-out sequences.
pub fn probe_future(
    seqs: &[ProbeSeq],
    horizon: usize,
    ridge_lambda: f64,
    n_pca: usize,
    train_frac: f64,
    seed: u64,
) -> Result<ProbeReport, EvalError> {
    if horizon == 0 {
        return Err(EvalError::DegenerateCorpus("horizon 0 gives identically zero targets".into()));
    }
    if seqs.len() < 2 {
        return Err(EvalError::TooFewSamples { need: 2, have: seqs.len() });
    }
    let dz = seqs[0].dz;
    for s in seqs {
        assert_eq!(s.dz, dz, "mixed latent widths");
        assert_eq!(s.latents.len(), s.frames() * dz, "ragged latent sequence");
    }
    // Disjoint split by sequence.
    let mut rng = RngStream::new(seed, 61);
    let perm = rng.permutation(seqs.len());
    let n_train = ((seqs.len() as f64 * train_frac).ceil() as usize).clamp(1, seqs.len() - 1);
    let (train_idx, test_idx) = perm.split_at(n_train);

    let gather = |idx: &[usize]| -> (Vec<f64>, Vec<f64>, usize) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut rows = 0;
        for &i in idx {
            let s = &seqs[i];
            if s.frames() <= horizon {
                continue;
            }
            for t in 0..s.frames() - horizon {
                x.extend_from_slice(&s.latents[t * dz..(t + 1) * dz]);
                for j in 0..N_JOINTS {
                    y.push(s.q[t + horizon][j] - s.q[t][j]);
                }
                rows += 1;
            }
        }
        (x, y, rows)
    };
    let (x_tr, y_tr, n_tr) = gather(train_idx);
    let (x_te, y_te, n_te) = gather(test_idx);
    if n_tr < dz + 2 || n_te < 4 {
        return Err(EvalError::TooFewSamples { need: dz + 2, have: n_tr.min(n_te) });
    }

    // PCA on training targets only; rank-deficient directions truncated.
    let (mu_y, cov_y) = mean_cov(&y_tr, n_tr, N_JOINTS, 0.0);
    let (evals, evecs) = jacobi_eigh(&cov_y, N_JOINTS);
    let keep = evals.iter().take(n_pca.min(N_JOINTS)).filter(|&&l| l > 1e-12).count();
    if keep == 0 {
        return Err(EvalError::DegenerateCorpus("all target variance below rank floor".into()));
    }
    // Columns 0..keep of evecs, as a N_JOINTS×keep projection.
    let mut proj = vec![0.0; N_JOINTS * keep];
    for r in 0..N_JOINTS {
        proj[r * keep..(r + 1) * keep].copy_from_slice(&evecs[r * N_JOINTS..r * N_JOINTS + keep]);
    }
    let project = |y: &[f64], rows: usize| -> Vec<f64> {
        let centered: Vec<f64> = y
            .chunks_exact(N_JOINTS)
            .flat_map(|row| row.iter().zip(&mu_y).map(|(v, m)| v - m).collect::<Vec<f64>>())
            .collect();
        matmul(&centered, &proj, rows, N_JOINTS, keep)
    };
    let yp_tr = project(&y_tr, n_tr);
    let yp_te = project(&y_te, n_te);

    // Centered ridge: W = (XᵀX + λI)⁻¹ Xᵀ Y.
    let mut mu_x = vec![0.0; dz];
    for row in x_tr.chunks_exact(dz) {
        for (m, v) in mu_x.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu_x.iter_mut().for_each(|m| *m /= n_tr as f64);
    let center = |x: &[f64]| -> Vec<f64> {
        x.chunks_exact(dz)
            .flat_map(|row| row.iter().zip(&mu_x).map(|(v, m)| v - m).collect::<Vec<f64>>())
            .collect()
    };
    let xc_tr = center(&x_tr);
    let xc_te = center(&x_te);
    let xtx = matmul(&transpose(&xc_tr, n_tr, dz), &xc_tr, dz, n_tr, dz);
    let xty = matmul(&transpose(&xc_tr, n_tr, dz), &yp_tr, dz, n_tr, keep);
    // No intercept needed: X is centered, so XᵀY = Xᵀ(Y − μy), and
    // Pearson is shift-invariant on the prediction side.
    let w = sym_ridge_solve(&xtx, dz, ridge_lambda, &xty, keep);
    let pred = matmul(&xc_te, &w, n_te, dz, keep);

    let mut score = 0.0;
    for c in 0..keep {
        let p: Vec<f64> = (0..n_te).map(|r| pred[r * keep + c]).collect();
        let t: Vec<f64> = (0..n_te).map(|r| yp_te[r * keep + c]).collect();
        score += pearson(&p, &t);
    }
    Ok(ProbeReport { score: score / keep as f64, components: keep, train_rows: n_tr, test_rows: n_te })
}

/// Mean cosine similarity between latents Δ frames apart; zero-norm
/// frames are excluded and counted.
pub fn latent_corr(seqs: &[LatentTrajectory], delta: usize) -> Result<(f64, usize), EvalError> {
    assert!(delta > 0, "delta must be positive");
    let mut total = 0.0;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for s in seqs {
        if s.frames() <= delta {
            continue;
        }
        for t in 0..s.frames() - delta {
            let a = s.frame(t);
            let b = s.frame(t + delta);
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                excluded += 1;
                continue;
            }
            total += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::TooFewSamples { need: 1, have: 0 });
    }
    Ok((total / count as f64, excluded))
}

/// Fraction of rollouts surviving each horizon. `rollout(seed)` returns
/// the number of frames survived; each seed's single longest rollout is
/// scored against every horizon, so shorter horizons are automatic
/// prefixes of longer ones.
pub fn fixed_horizon_success(
    horizons_s: &[f64],
    n_rollouts: usize,
    mut rollout: impl FnMut(u64) -> usize,
) -> Vec<(f64, f64)> {
    assert!(!horizons_s.is_empty() && n_rollouts > 0);
    let survived: Vec<usize> = (0..n_rollouts).map(|i| rollout(i as u64)).collect();
    horizons_s
        .iter()
        .map(|&h| {
            let need = (h * FPS).round() as usize;
            let ok = survived.iter().filter(|&&s| s >= need).count();
            (h, 100.0 * ok as f64 / n_rollouts as f64)
        })
        .collect()
}
