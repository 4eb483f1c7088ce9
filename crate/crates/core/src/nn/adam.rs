//! Adam with an exponentially decaying learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::Tensor;

/// Lower bound on the decayed learning rate.
pub const LR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    /// Per-epoch exponent: `lr = base_lr · exp(−decay · epoch)`.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, decay: f64) -> Self {
        Self {
            base_lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Effective rate at `epoch` (0-based), floored at [`LR_FLOOR`] (or at
    /// the base rate if that is smaller).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decayed = self.base_lr * (-self.decay * epoch as f64).exp();
        decayed.max(LR_FLOOR.min(self.base_lr))
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], epoch: usize) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {name}"
                )));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let lr = c.lr_at(epoch);
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x", Tensor::new(&[1], vec![x]).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_params(3.0);
        let mut s = AdamState::new(AdamConfig::new(0.1, 0.0), &p);
        s.step(&mut p, &[Tensor::zeros(&[1])], 0).unwrap();
        assert_eq!(p.get(0).data(), &[3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(AdamConfig::new(0.01, 0.0), &p);
        s.step(&mut p, &[Tensor::new(&[1], vec![1.0]).unwrap()], 0).unwrap();
        assert!((p.get(0).data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn two_steps_on_square_match_hand_trace() {
        // f(x) = x², x0 = 1, lr = 0.1
        let lr = 0.1;
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = scalar_params(1.0);
        let mut s = AdamState::new(AdamConfig::new(lr, 0.0), &p);
        for _ in 0..2 {
            let g = 2.0 * p.get(0).data()[0];
            s.step(&mut p, &[Tensor::new(&[1], vec![g]).unwrap()], 0).unwrap();
        }
        assert!((p.get(0).data()[0] - x).abs() < 1e-15);
        // x1 = 0.9 exactly up to eps; x2 a little below 0.8
        assert!((x - 0.8).abs() < 1e-3);
    }

    #[test]
    fn learning_rate_decays_to_floor() {
        let c = AdamConfig::new(0.001, 0.25);
        assert_eq!(c.lr_at(0), 0.001);
        assert!((c.lr_at(4) - 0.001 * (-1.0f64).exp()).abs() < 1e-18);
        assert_eq!(c.lr_at(1000), LR_FLOOR);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new(AdamConfig::new(0.1, 0.0), &p);
        let err = s
            .step(&mut p, &[Tensor::new(&[1], vec![f64::NAN]).unwrap()], 0)
            .unwrap_err();
        assert!(err.to_string().contains("parameter x"), "{err}");
    }

    #[test]
    fn converges_on_two_parameter_bowl() {
        // f(a, b) = (a − 3)² + 10·(b + 1)²
        let mut p = ParamSet::new();
        p.push("ab", Tensor::new(&[2], vec![0.0, 0.0]).unwrap());
        let mut s = AdamState::new(AdamConfig::new(0.05, 0.0), &p);
        let f = |a: f64, b: f64| (a - 3.0).powi(2) + 10.0 * (b + 1.0).powi(2);
        let mut steps = 0;
        while steps < 2000 {
            let (a, b) = (p.get(0).data()[0], p.get(0).data()[1]);
            if f(a, b) < 1e-6 {
                break;
            }
            let g = Tensor::new(&[2], vec![2.0 * (a - 3.0), 20.0 * (b + 1.0)]).unwrap();
            s.step(&mut p, &[g], 0).unwrap();
            steps += 1;
        }
        let (a, b) = (p.get(0).data()[0], p.get(0).data()[1]);
        assert!(f(a, b) < 1e-6, "loss {} after {steps} steps", f(a, b));
    }
}
