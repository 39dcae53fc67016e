//! Cosine DDPM noise schedule and the deterministic DDIM reverse step.

use serde::{Deserialize, Serialize};

/// Cumulative noise schedule ᾱ_τ for τ ∈ 0..=T, cosine shaped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub alpha_bar: Vec<f64>,
}

/// ᾱ_τ = f(τ)/f(0) with f(τ) = cos²(((τ/T + 0.008)/1.008)·π/2).
pub fn cosine_alpha_bar(tau: usize, t_max: usize) -> f64 {
    assert!(tau <= t_max, "diffusion step {tau} out of range 0..={t_max}");
    let f = |t: f64| {
        let a = ((t / t_max as f64 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2;
        a.cos() * a.cos()
    };
    f(tau as f64) / f(0.0)
}

impl NoiseSchedule {
    pub fn cosine(t_max: usize) -> Self {
        let alpha_bar = (0..=t_max).map(|t| cosine_alpha_bar(t, t_max)).collect();
        NoiseSchedule { t_max, alpha_bar }
    }

    pub fn alpha_bar(&self, tau: usize) -> f64 {
        self.alpha_bar[tau]
    }

    /// Descending τ grid for `steps` DDIM steps, endpoints included:
    /// e.g. steps = 2 → [T, T/2, 0].
    pub fn ddim_grid(&self, steps: usize) -> Vec<usize> {
        assert!(steps >= 1);
        (0..=steps)
            .map(|i| ((steps - i) as f64 / steps as f64 * self.t_max as f64).round() as usize)
            .collect()
    }
}

/// Forward noising x_τ = √ᾱ_τ·a + √(1−ᾱ_τ)·ε.
pub fn ddpm_noise(a_tea: &[f64], tau: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    assert_eq!(a_tea.len(), eps.len(), "action/noise shape mismatch");
    let ab = schedule.alpha_bar(tau);
    let (sa, se) = (ab.sqrt(), (1.0 - ab).sqrt());
    a_tea.iter().zip(eps).map(|(a, e)| sa * a + se * e).collect()
}

/// Deterministic (η = 0) DDIM step from τ to τ′ < τ given the model's
/// clean-sample prediction x̂_0.
pub fn ddim_step(
    x_tau: &[f64],
    x0_hat: &[f64],
    tau: usize,
    tau_next: usize,
    schedule: &NoiseSchedule,
) -> Vec<f64> {
    assert!(tau > 0, "ddim_step requires tau > 0: no noise to invert");
    assert!(tau_next < tau, "ddim_step must move toward 0: {tau_next} >= {tau}");
    assert_eq!(x_tau.len(), x0_hat.len(), "state/prediction shape mismatch");
    let ab = schedule.alpha_bar(tau);
    let ab_next = schedule.alpha_bar(tau_next);
    let denom = (1.0 - ab).sqrt();
    let (sa, se) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    x_tau
        .iter()
        .zip(x0_hat)
        .map(|(x, x0)| {
            let eps_hat = (x - ab.sqrt() * x0) / denom;
            sa * x0 + se * eps_hat
        })
        .collect()
}
