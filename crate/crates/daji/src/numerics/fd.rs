//! Central finite differences. Evaluates only the forward pass, so it is
//! an oracle independent of the reverse-mode path it checks.

use super::Array;

/// Central-difference gradient of `f` with respect to `params`, one
/// perturbed forward evaluation pair per coordinate.
pub fn finite_diff_grad<F>(params: &[Array], mut f: F, h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Array]) -> f64,
{
    let mut work: Vec<Array> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].len()];
        for i in 0..params[pi].len() {
            let orig = work[pi].data[i];
            work[pi].data[i] = orig + h;
            let fp = f(&work);
            work[pi].data[i] = orig - h;
            let fm = f(&work);
            work[pi].data[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Max relative error between analytic and finite-difference gradients,
/// with an absolute floor on the denominator.
pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>], abs_floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&x, &y) in a.iter().zip(n) {
            let denom = x.abs().max(y.abs()).max(abs_floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
