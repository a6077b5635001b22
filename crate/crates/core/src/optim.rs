//! Adam optimiser over flat parameter buffers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0 }
    }

    /// Advance the shared step counter; call once per optimisation step,
    /// before the `update`s of that step.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Gradient *descent* update of `params` with `grads`.
    pub fn update(&self, moments: &mut Moments, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert!(self.t > 0, "tick() before update()");
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let lr = c.step_size * bc2.sqrt() / bc1;
        let eps = c.eps * bc2.sqrt();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        }
    }
}
