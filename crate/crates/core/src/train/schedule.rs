use std::f64::consts::PI;

use super::config::TrainConfig;

/// Linear warmup from `min_lr` to the peak, then cosine decay back to
/// `min_lr` at the final epoch. `epoch` may be fractional.
pub fn cosine_warmup_lr(epoch: f64, cfg: &TrainConfig) -> f64 {
    let (peak, min) = (cfg.learning_rate, cfg.min_lr);
    let w = cfg.warmup_epochs as f64;
    let e = cfg.epochs as f64;
    let epoch = epoch.clamp(0.0, e);
    // Written as convex combinations so the endpoints are exact.
    if epoch < w {
        let t = epoch / w;
        min * (1.0 - t) + peak * t
    } else {
        let c = 0.5 * (1.0 + (PI * (epoch - w) / (e - w)).cos());
        peak * c + min * (1.0 - c)
    }
}

/// Per-step rate: step `s` of an epoch with `steps` steps sits at
/// `epoch + s/steps`.
pub fn lr_at_step(global_step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    cosine_warmup_lr(global_step as f64 / steps_per_epoch.max(1) as f64, cfg)
}
