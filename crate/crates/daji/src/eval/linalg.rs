//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition
//! and the helpers the metric suite needs (SPD square roots, ridge
//! solves, PCA). Everything is row-major `Vec<f64>` with explicit
//! dimensions; the matrices here are at most a few dozen wide.

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors) with eigenvectors in the COLUMNS
/// of the returned matrix: A = V diag(λ) Vᵀ. Eigenvalues are sorted
/// descending.
pub fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "matrix must be square");
    let mut m = a.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[i * n + j] - m[j * n + i]).abs();
            assert!(d < 1e-9 * (1.0 + m[i * n + j].abs()), "matrix not symmetric at ({i},{j})");
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = v[k * n + old];
        }
    }
    (vals, vecs)
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// C = A·B for row-major A: m×k, B: k×n.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let x = a[i * k + l];
            if x == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += x * b[l * n + j];
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Symmetric square root of an SPD matrix with eigenvalue floor.
pub fn spd_sqrt(a: &[f64], n: usize, floor: f64) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigh(a, n);
    let sq: Vec<f64> = vals.iter().map(|&l| l.max(floor).sqrt()).collect();
    // V diag(sqrt λ) Vᵀ
    let mut scaled = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            scaled[i * n + j] = vecs[i * n + j] * sq[j];
        }
    }
    matmul(&scaled, &transpose(&vecs, n, n), n, n, n)
}

/// Solves (A + λI) X = B for symmetric A via eigendecomposition;
/// B: n×k, returns n×k.
pub fn sym_ridge_solve(a: &[f64], n: usize, lambda: f64, b: &[f64], k: usize) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigh(a, n);
    let vt_b = matmul(&transpose(&vecs, n, n), b, n, n, k);
    let mut scaled = vt_b;
    for i in 0..n {
        let d = vals[i] + lambda;
        assert!(d > 0.0, "ridge system not positive definite");
        for j in 0..k {
            scaled[i * k + j] /= d;
        }
    }
    matmul(&vecs, &scaled, n, n, k)
}

/// Mean vector and covariance (denominator n−1; `jitter` added to the
/// diagonal) of rows of X: n×d.
pub fn mean_cov(x: &[f64], n: usize, d: usize, jitter: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least 2 rows for covariance");
    let mut mu = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in x.chunks_exact(d) {
        for i in 0..d {
            let ci = row[i] - mu[i];
            for j in i..d {
                cov[i * d + j] += ci * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    for i in 0..d {
        cov[i * d + i] += jitter;
    }
    (mu, cov)
}

/// Pearson correlation of two equal-length slices.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}
