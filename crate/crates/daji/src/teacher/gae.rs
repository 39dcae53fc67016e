//! Generalized advantage estimation.

use super::TeacherError;

/// Standard GAE recursion over one trajectory stream:
/// δ_t = r_t + γ·V_{t+1}·(1−done_t) − V_t,
/// A_t = δ_t + γλ·(1−done_t)·A_{t+1}, returns = A + V.
/// `bootstrap` is V of the state after the last step.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TeacherError> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(TeacherError::LengthMismatch(format!(
            "rewards {} values {} dones {}",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation of A_t = Σ_k (γλ)^k δ_{t+k}, cutting at dones.
    fn brute_force(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut factor = 1.0;
                for k in t..n {
                    let next_v = if k + 1 < n { values[k + 1] } else { bootstrap };
                    let not_done = if dones[k] { 0.0 } else { 1.0 };
                    let delta = rewards[k] + gamma * next_v * not_done - values[k];
                    total += factor * delta;
                    if dones[k] {
                        break;
                    }
                    factor *= gamma * lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn single_done_step_is_reward_minus_value() {
        let (a, ret) = gae(&[2.5], &[0.7], &[true], 9.9, 0.99, 0.95).unwrap();
        assert!((a[0] - (2.5 - 0.7)).abs() < 1e-12);
        assert!((ret[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_gives_one_step_deltas() {
        let rewards = [1.0, -0.5, 0.3];
        let values = [0.2, 0.4, -0.1];
        let dones = [false, false, false];
        let (a, _) = gae(&rewards, &values, &dones, 0.8, 0.99, 0.0).unwrap();
        for t in 0..3 {
            let next_v = if t + 1 < 3 { values[t + 1] } else { 0.8 };
            let delta = rewards[t] + 0.99 * next_v - values[t];
            assert!((a[t] - delta).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(gae(&[1.0, 2.0], &[0.0], &[false, false], 0.0, 0.99, 0.95).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(
            rewards in proptest::collection::vec(-2.0f64..2.0, 1..=12),
            seedvals in proptest::collection::vec(-1.0f64..1.0, 12),
            doneseed in proptest::collection::vec(0u8..4, 12),
            bootstrap in -1.0f64..1.0,
        ) {
            let n = rewards.len();
            let values = &seedvals[..n];
            let dones: Vec<bool> = doneseed[..n].iter().map(|&d| d == 0).collect();
            let (a, ret) = gae(&rewards, values, &dones, bootstrap, 0.99, 0.95).unwrap();
            let oracle = brute_force(&rewards, values, &dones, bootstrap, 0.99, 0.95);
            for t in 0..n {
                prop_assert!((a[t] - oracle[t]).abs() < 1e-10);
                prop_assert!((ret[t] - (oracle[t] + values[t])).abs() < 1e-10);
            }
        }
    }
}
