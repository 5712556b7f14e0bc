//! Learning-rate schedule: linear warmup for the first `warmup_epochs`
//! (starting at `lr_max / warmup`), then cosine annealing from `lr_max`
//! down to `lr_min` over the remaining epochs.

use crate::config::OptimConfig;
use crate::error::{Error, Result};

/// Cosine segment evaluated at `offset` of `span` epochs past warmup.
/// At `offset == span` this equals `lr_min` up to floating-point identity
/// (`cos(pi) == -1`).
pub fn cosine_segment(lr_min: f64, lr_max: f64, offset: usize, span: usize) -> f64 {
    let phase = std::f64::consts::PI * offset as f64 / span as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}

pub fn lr_schedule(cfg: &OptimConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} out of range for {} training epochs",
            cfg.epochs
        )));
    }
    if epoch < cfg.warmup_epochs {
        Ok(cfg.lr_max * (epoch + 1) as f64 / cfg.warmup_epochs as f64)
    } else {
        Ok(cosine_segment(
            cfg.lr_min,
            cfg.lr_max,
            epoch - cfg.warmup_epochs,
            cfg.epochs - cfg.warmup_epochs,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_ends_at_lr_max_and_cosine_starts_there() {
        let cfg = OptimConfig::default();
        assert_eq!(lr_schedule(&cfg, 4).unwrap(), 0.1); // last warmup epoch
        let start = lr_schedule(&cfg, 5).unwrap(); // cosine offset 0
        assert!((start - 0.1).abs() < 1e-15, "cosine start {start}");
        assert!(lr_schedule(&cfg, 90).is_err());
    }

    #[test]
    fn warmup_ramps_linearly() {
        let cfg = OptimConfig::default();
        for e in 0..5 {
            let lr = lr_schedule(&cfg, e).unwrap();
            assert!((lr - 0.1 * (e + 1) as f64 / 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn final_epoch_value_matches_direct_evaluation() {
        // e = 89 of 90: lr_min + (lr_max-lr_min)/2 * (1 + cos(84 pi / 85))
        let cfg = OptimConfig::default();
        let lr = lr_schedule(&cfg, 89).unwrap();
        let expect = 0.0001
            + 0.5 * (0.1 - 0.0001) * (1.0 + (84.0 * std::f64::consts::PI / 85.0).cos());
        assert_eq!(lr, expect);
        assert!((lr - 0.0001341).abs() < 1e-7, "lr {lr}");
    }

    #[test]
    fn cosine_endpoint_identity() {
        let end = cosine_segment(0.0001, 0.1, 85, 85);
        assert!((end - 0.0001).abs() < 1e-12, "endpoint {end}");
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let cfg = OptimConfig::default();
        let mut prev = f64::INFINITY;
        for e in 5..90 {
            let lr = lr_schedule(&cfg, e).unwrap();
            assert!(lr <= prev + 1e-15);
            assert!(lr >= cfg.lr_min - 1e-15);
            prev = lr;
        }
    }
}
