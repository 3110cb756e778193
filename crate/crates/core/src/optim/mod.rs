//! Optimizer, learning-rate schedule and the training loop.

mod adam;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{
    evaluate, evaluate_bicubic, evaluate_with, run, train, EvalSummary, ImageScore, RunOutputs, TrainConfig, TrainOutcome,
    Trainer,
};

/// Half-cosine decay from `lr_start` at `t = 0` to `lr_min` at `t = total`;
/// later iterations stay at `lr_min`.
pub fn cosine_lr(t: u64, total: u64, lr_start: f64, lr_min: f64) -> f64 {
    if total == 0 || t >= total {
        return lr_min;
    }
    let progress = t as f64 / total as f64;
    lr_min + 0.5 * (lr_start - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 500_000, 1e-3, 1e-5), 1e-3);
        assert_eq!(cosine_lr(500_000, 500_000, 1e-3, 1e-5), 1e-5);
        assert!((cosine_lr(250_000, 500_000, 1e-3, 1e-5) - 5.05e-4).abs() < 1e-15);
        assert_eq!(cosine_lr(600_000, 500_000, 1e-3, 1e-5), 1e-5);
    }

    #[test]
    fn cosine_is_non_increasing() {
        let mut prev = f64::INFINITY;
        for t in 0..=1000 {
            let lr = cosine_lr(t, 1000, 1e-3, 1e-5);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
