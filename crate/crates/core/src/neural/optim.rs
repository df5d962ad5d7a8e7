use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{Error, Result};

/// Learning-rate schedule and EMA settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    /// Learning rate per batch item.
    pub base_lr: f64,
    pub batch_size: usize,
    pub epoch: usize,
    pub total_epochs: usize,
    pub ema_decay: f64,
}

impl Default for OptimState {
    fn default() -> Self {
        Self {
            base_lr: 2e-6,
            batch_size: 1,
            epoch: 0,
            total_epochs: 120,
            ema_decay: 0.9998,
        }
    }
}

impl OptimState {
    pub fn validate(&self) -> Result<()> {
        if self.epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {} beyond total_epochs {}",
                self.epoch, self.total_epochs
            )));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config("ema_decay must be in (0, 1)".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config("base_lr must be >= 0 and batch_size > 0".into()));
        }
        Ok(())
    }

    /// `base_lr · batch_size · ½(1 + cos(π·epoch/total_epochs))`.
    pub fn learning_rate(&self) -> f64 {
        let peak = self.base_lr * self.batch_size as f64;
        if self.total_epochs == 0 {
            return peak;
        }
        let progress = self.epoch as f64 / self.total_epochs as f64;
        peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// `p ← p − lr·g` for every tensor pair.
pub fn sgd_step(params: &mut [Tensor2], grads: &[Tensor2], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// `shadow ← decay·shadow + (1 − decay)·params`.
pub fn ema_update(shadow: &mut [Tensor2], params: &[Tensor2], decay: f64) -> Result<()> {
    if shadow.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: shadow.len(),
            actual: params.len(),
        });
    }
    for (s, p) in shadow.iter_mut().zip(params) {
        if s.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "ema_update",
                lhs: s.shape(),
                rhs: p.shape(),
            });
        }
        for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
    Ok(())
}

/// Decay ramp `decay·(1 − e^{−updates/ramp})`, so early averages track the
/// weights instead of the initialization.
pub fn ramped_decay(decay: f64, updates: u64, ramp: f64) -> f64 {
    if ramp <= 0.0 {
        return decay;
    }
    decay * (1.0 - (-(updates as f64) / ramp).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let mut s = OptimState {
            base_lr: 2e-6,
            batch_size: 64,
            total_epochs: 120,
            ..Default::default()
        };
        assert_eq!(s.learning_rate(), 2e-6 * 64.0);
        s.epoch = 120;
        assert!(s.learning_rate().abs() < 1e-20);
        s.epoch = 60;
        assert!((s.learning_rate() - 64e-6).abs() < 1e-18);
    }

    #[test]
    fn sgd_on_square() {
        // f(w) = w², f'(1) = 2.
        let mut w = vec![Tensor2::scalar(1.0)];
        let g = vec![Tensor2::scalar(2.0)];
        sgd_step(&mut w, &g, 0.1).unwrap();
        assert!((w[0].data()[0] - 0.8).abs() < 1e-15);
        assert!(sgd_step(&mut w, &[Tensor2::zeros(1, 2)], 0.1).is_err());
    }

    #[test]
    fn ema_limits() {
        let p = vec![Tensor2::row_vector(vec![1.0, 2.0])];
        let mut s = vec![Tensor2::row_vector(vec![5.0, -5.0])];
        ema_update(&mut s, &p, 0.0).unwrap();
        assert_eq!(s, p);
        let mut s = vec![Tensor2::row_vector(vec![5.0, -5.0])];
        ema_update(&mut s, &p, 1.0).unwrap();
        assert_eq!(s[0].data(), &[5.0, -5.0]);
    }

    #[test]
    fn ema_error_halves_each_step() {
        let p = vec![Tensor2::scalar(1.0)];
        let mut s = vec![Tensor2::scalar(0.0)];
        let mut err = 1.0;
        for _ in 0..20 {
            ema_update(&mut s, &p, 0.5).unwrap();
            let e = (s[0].data()[0] - 1.0).abs();
            assert!((e - err / 2.0).abs() < 1e-15);
            err = e;
        }
    }

    #[test]
    fn ramp_starts_at_zero() {
        assert_eq!(ramped_decay(0.9998, 0, 2000.0), 0.0);
        assert!((ramped_decay(0.9998, 1_000_000, 2000.0) - 0.9998).abs() < 1e-12);
    }
}
