//! Linear warmup to lr_peak, then linear decay to lr_final.

use super::TrainConfig;

pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    if config.warmup_steps > 0 && step < config.warmup_steps {
        return config.lr_peak * step as f64 / config.warmup_steps as f64;
    }
    if step >= config.steps {
        return config.lr_final;
    }
    let decay_span = config.steps.saturating_sub(config.warmup_steps);
    if decay_span == 0 {
        return config.lr_peak;
    }
    let frac = (step - config.warmup_steps) as f64 / decay_span as f64;
    config.lr_peak + (config.lr_final - config.lr_peak) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr_peak: 1e-3,
            lr_final: 1e-4,
            warmup_steps: 1000,
            steps: 10_000,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ramp_endpoints() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.0);
        assert!((lr_at(1000, &c) - 1e-3).abs() < 1e-12);
        assert!((lr_at(10_000, &c) - 1e-4).abs() < 1e-12);
        assert!((lr_at(20_000, &c) - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn piecewise_linear_midpoints() {
        let c = cfg();
        assert!((lr_at(500, &c) - 5e-4).abs() < 1e-12);
        let mid = lr_at(5500, &c);
        assert!((mid - (1e-3 + (1e-4 - 1e-3) * 0.5)).abs() < 1e-12);
    }
}
