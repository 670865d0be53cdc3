use super::TrainConfig;

/// Learning rate at `step`:
/// `lr_init · (lr_min / lr_init)^(step / total_steps)`, clamped to
/// `lr_min` from `total_steps` on. Both endpoints are returned exactly.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    decay(step, cfg.total_steps, cfg.lr_init, cfg.lr_min)
}

pub fn decay(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if step == 0 {
        return lr_init;
    }
    if step >= total_steps {
        return lr_min;
    }
    let t = step as f64 / total_steps as f64;
    lr_init * (lr_min / lr_init).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize) -> TrainConfig {
        TrainConfig {
            total_steps: total,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let c = cfg(1000);
        assert_eq!(lr_at(0, &c), 5e-4);
        assert_eq!(lr_at(1000, &c), 5e-6);
        assert!((lr_at(500, &c) - 5e-5).abs() / 5e-5 < 1e-12);
    }

    #[test]
    fn monotone_and_continuous() {
        let c = cfg(997);
        let mut prev = lr_at(0, &c);
        for s in 1..=997 {
            let lr = lr_at(s, &c);
            assert!(lr <= prev);
            // one step changes the rate by the constant factor (lr_min/lr_init)^(1/total)
            assert!(prev / lr < 1.005 + 1e-12);
            prev = lr;
        }
        assert_eq!(lr_at(5000, &c), 5e-6);
    }
}
