use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates aligned with the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Length {
                op: "adam_step",
                expected: self.m.len(),
                actual: if params.len() != self.m.len() { params.len() } else { grad.len() },
            });
        }
        if !(lr >= 0.0) {
            return Err(invalid("adam_step: learning rate must be nonnegative"));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], grad: &[f64], lr: f64) -> Result<(AdamState, Vec<f64>)> {
    let mut s = state.clone();
    let mut p = params.to_vec();
    s.step(&mut p, grad, lr)?;
    Ok((s, p))
}

/// Constant `lr` for `main_epochs`, then linear decay to zero over
/// `anneal_epochs`.
pub fn lr_schedule(epoch: usize, main_epochs: usize, anneal_epochs: usize, lr: f64) -> Result<f64> {
    let total = main_epochs + anneal_epochs;
    if epoch >= total {
        return Err(invalid(alloc::format!("epoch {epoch} outside schedule of {total} epochs")));
    }
    if epoch < main_epochs {
        Ok(lr)
    } else {
        Ok(lr * (total - epoch) as f64 / anneal_epochs as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let s = AdamState::new(3, AdamConfig::default());
        let (s2, p) = adam_step(&s, &[1.0, -2.0, 0.5], &[0.0; 3], 0.002).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let s = AdamState::new(2, AdamConfig::default());
        let (_, p) = adam_step(&s, &[0.0, 1.0], &[1.0, 1.0], 0.002).unwrap();
        let expected = 0.002 / (1.0 + 1e-8);
        assert!((p[0] + expected).abs() < 1e-15);
        assert!((p[1] - (1.0 - expected)).abs() < 1e-15);
    }

    #[test]
    fn step_opposes_gradient_sign() {
        let s = AdamState::new(4, AdamConfig::default());
        let g = [0.3, -2.0, 1e-3, -7.0];
        let (_, p) = adam_step(&s, &[0.0; 4], &g, 0.01).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            assert!(pi.signum() == -gi.signum());
        }
    }

    #[test]
    fn fresh_step_is_odd() {
        let s = AdamState::new(3, AdamConfig::default());
        let g = [0.25, -1.5, 3.0];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let (_, a) = adam_step(&s, &[0.0; 3], &g, 0.01).unwrap();
        let (_, b) = adam_step(&s, &[0.0; 3], &neg, 0.01).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut s = AdamState::new(2, AdamConfig::default());
        assert!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0, 100, 50, 0.002).unwrap(), 0.002);
        assert!((lr_schedule(125, 100, 50, 0.002).unwrap() - 0.001).abs() < 1e-15);
        assert!((lr_schedule(149, 100, 50, 0.002).unwrap() - 4e-5).abs() < 1e-15);
        assert!(lr_schedule(150, 100, 50, 0.002).is_err());
        // The decay line reaches zero at the end of the schedule.
        assert_eq!(0.002 * (150 - 150) as f64 / 50.0, 0.0);
    }
}
