use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Parameters, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub step: u64,
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<T>,
    second: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Clips the accumulated gradients to the configured global norm and
    /// applies one bias-corrected update. Gradients are left in place.
    pub fn step<P: Parameters<T> + ?Sized>(&mut self, params: &mut P) -> StepReport {
        let mut sq = 0.0f64;
        let mut n = 0usize;
        params.visit_params("", &mut |_, _, g| {
            n += g.len();
            sq += g.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>();
        });
        if self.first.len() != n {
            self.first = vec![T::zero(); n];
            self.second = vec![T::zero(); n];
        }
        let grad_norm = libm::sqrt(sq);
        let scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as f64;
        let cfg = self.config;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let bc1 = T::lit(1.0 - libm::pow(cfg.beta1, t));
        let bc2 = T::lit(1.0 - libm::pow(cfg.beta2, t));
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.eps);
        let decay = T::lit(cfg.lr * cfg.weight_decay);
        let scale_t = T::lit(scale);
        let one = T::one();

        let mut offset = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_params("", &mut |_, values, grads| {
            for (i, (v, &g)) in values.iter_mut().zip(grads.iter()).enumerate() {
                let g = g * scale_t;
                let m = &mut first[offset + i];
                let s = &mut second[offset + i];
                *m = b1 * *m + (one - b1) * g;
                *s = b2 * *s + (one - b2) * g * g;
                let mhat = *m / bc1;
                let shat = *s / bc2;
                *v = *v - lr * (mhat / (shat.sqrt() + eps)) - decay * *v;
            }
            offset += values.len();
        });

        StepReport {
            grad_norm,
            clipped_norm: grad_norm * scale,
            step: self.step,
        }
    }
}
