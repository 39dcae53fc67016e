use serde::{Deserialize, Serialize};

use super::Array;

/// First/second moment accumulators for one parameter set, keyed by the
/// same order as the parameter list it was created for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step_count: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Bias-corrected Adam update with global-norm gradient clipping applied
/// before the moment updates. `clip <= 0` disables clipping.
pub fn adam_step(params: &mut [Array], grads: &[Vec<f64>], state: &mut AdamState, lr: f64, clip: f64) {
    assert_eq!(params.len(), grads.len(), "params/grads count mismatch");
    assert!(lr > 0.0, "lr must be positive");
    for (p, g) in params.iter().zip(grads) {
        assert_eq!(p.len(), g.len(), "param/grad shape mismatch");
    }
    let global_sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let global_norm = global_sq.sqrt();
    let scale = if clip > 0.0 && global_norm > clip { clip / global_norm } else { 1.0 };

    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);

    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..g.len() {
            let gi = g[i] * scale;
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = vec![Array::vector(vec![1.0, -2.0])];
        let grads = vec![vec![0.0, 0.0]];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3, 1.0);
        assert_eq!(params[0].data, vec![1.0, -2.0]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn global_norm_clip_scales_exactly() {
        // grads with global norm 10, clip 1 -> scaled by 0.1.
        let mut params = vec![Array::vector(vec![0.0, 0.0])];
        let grads = vec![vec![6.0, 8.0]];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3, 1.0);
        assert!((state.m[0][0] - 0.1 * 0.6).abs() < 1e-15);
        assert!((state.m[0][1] - 0.1 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [0.8, -0.5, 0.25, 0.6];
        let mut params = vec![Array::vector(vec![0.0; 4])];
        let mut state = AdamState::new(&params);
        for _ in 0..500 {
            let g: Vec<f64> = params[0].data.iter().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
            adam_step(&mut params, &[g].to_vec(), &mut state, 1e-2, 0.0);
        }
        let err: f64 = params[0]
            .data
            .iter()
            .zip(&target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-3, "distance to optimum {err}");
    }
}
