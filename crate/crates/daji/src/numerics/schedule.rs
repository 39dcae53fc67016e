/// Linear warmup to `base_lr` over `warmup` steps, cosine decay to
/// `min_lr` at `total`, clamped at `min_lr` afterwards.
pub fn lr_schedule(step: u64, total: u64, base_lr: f64, min_lr: f64, warmup: u64) -> f64 {
    assert!(warmup < total, "warmup must be below total");
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if step >= total {
        return min_lr;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::lr_schedule;

    #[test]
    fn warmup_endpoints() {
        assert_eq!(lr_schedule(0, 1000, 1e-4, 5e-7, 100), 0.0);
        assert_eq!(lr_schedule(100, 1000, 1e-4, 5e-7, 100), 1e-4);
    }

    #[test]
    fn cosine_midpoint_is_half_base() {
        // midpoint of the decay span with min_lr = 0
        let lr = lr_schedule(550, 1000, 2e-4, 0.0, 100);
        assert!((lr - 1e-4).abs() < 1e-9);
    }

    #[test]
    fn saturates_at_min_lr() {
        assert_eq!(lr_schedule(1000, 1000, 1e-4, 5e-7, 100), 5e-7);
        assert_eq!(lr_schedule(5000, 1000, 1e-4, 5e-7, 100), 5e-7);
    }
}
