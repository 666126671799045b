//! Adam with bias correction and the step-decay learning-rate schedule,
//! plus global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::param::Param;
use super::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl OptimizerConfig {
    /// Defaults for the recurrent models.
    pub fn hybrid() -> Self {
        OptimizerConfig {
            lr0: 0.0006,
            decay_factor: 0.99,
            decay_every: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 10.0,
        }
    }

    /// Defaults for the fully convolutional model.
    pub fn fcn() -> Self {
        OptimizerConfig { lr0: 0.001, ..Self::hybrid() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(format!("decay_factor {} outside (0, 1]", self.decay_factor));
        }
        if self.decay_every == 0 {
            return Err("decay_every must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.lr0 <= 0.0 {
            return Err(format!("lr0 {} must be positive", self.lr0));
        }
        Ok(())
    }

    /// Effective learning rate at iteration `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr0 * self.decay_factor.powi((t / self.decay_every) as i32)
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<S: Scalar>(params: &mut [&mut Param<S>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        for g in p.grad.data() {
            let g = g.to_f64();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64(max_norm / norm);
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// One Adam update over every parameter. `t` is the 1-based iteration count;
/// bias correction uses it directly, the schedule decays lr0 stepwise.
pub fn adam_step<S: Scalar>(params: &mut [&mut Param<S>], cfg: &OptimizerConfig, t: u64) {
    assert!(t >= 1, "Adam iteration count is 1-based");
    let lr = S::from_f64(cfg.lr_at(t));
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let eps = S::from_f64(cfg.epsilon);
    let corr1 = S::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let corr2 = S::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let one = S::ONE;
    for p in params.iter_mut() {
        let n = p.value.len();
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let m = p.moment1.data_mut();
        let v = p.moment2.data_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let mhat = m[i] / corr1;
            let vhat = v[i] / corr2;
            value[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        p.value.debug_check_finite(&p.name);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::tensor::Tensor;

    #[test]
    fn lr_schedule_steps_down() {
        let cfg = OptimizerConfig::hybrid();
        assert_eq!(cfg.lr_at(1), 0.0006);
        assert_eq!(cfg.lr_at(999), 0.0006);
        assert!((cfg.lr_at(1000) - 0.000594).abs() < 1e-12);
        assert!((cfg.lr_at(2500) - 0.0006 * 0.99 * 0.99).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p: Param<f64> = Param::new("w", Tensor::filled(&[4], 1.25));
        adam_step(&mut [&mut p], &OptimizerConfig::hybrid(), 1);
        assert!(p.value.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn matches_scalar_adam_oracle() {
        // Independent textbook implementation on one scalar weight.
        let cfg = OptimizerConfig::hybrid();
        let mut p: Param<f64> = Param::new("w", Tensor::filled(&[1], 0.5));
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.5f64);
        for t in 1..=2500u64 {
            let g = 0.3 + 0.1 * (t as f64 * 0.01).sin();
            p.grad.data_mut()[0] = g;
            adam_step(&mut [&mut p], &cfg, t);

            let lr = cfg.lr0 * cfg.decay_factor.powi((t / cfg.decay_every) as i32);
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mhat = m / (1.0 - cfg.beta1.powi(t as i32));
            let vhat = v / (1.0 - cfg.beta2.powi(t as i32));
            w -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
            assert!(
                (p.value.data()[0] - w).abs() < 1e-10,
                "diverged at t={t}: {} vs {w}",
                p.value.data()[0]
            );
        }
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut p: Param<f64> = Param::new("w", Tensor::zeros(&[2]));
        p.grad.data_mut().copy_from_slice(&[3.0, 4.0]);
        let norm = clip_global_norm(&mut [&mut p], 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(p.grad.data(), &[3.0, 4.0]);
        let norm = clip_global_norm(&mut [&mut p], 1.0);
        assert_eq!(norm, 5.0);
        assert!((p.grad.data()[0] - 0.6).abs() < 1e-12);
        assert!((p.grad.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With constant gradient, bias-corrected Adam's first step is
        // lr * g / (|g| + eps·corr), essentially lr in magnitude.
        let cfg = OptimizerConfig::hybrid();
        let mut p: Param<f64> = Param::new("w", Tensor::zeros(&[1]));
        p.grad.data_mut()[0] = 7.0;
        adam_step(&mut [&mut p], &cfg, 1);
        assert!((p.value.data()[0] + cfg.lr0).abs() < 1e-6);
    }
}
