//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{EcaError, Result};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    // running products beta^t, kept instead of powi so long runs stay exact-ish
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamState {
    /// Zeroed moments for `dim` parameters, `eps = 1e-8`.
    pub fn new(dim: usize, lr: f64, betas: (f64, f64)) -> Result<Self> {
        if dim == 0 {
            return Err(EcaError::config("Adam needs at least one parameter"));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(EcaError::config(format!("learning rate must be > 0, got {lr}")));
        }
        let (beta1, beta2) = betas;
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(EcaError::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps: DEFAULT_EPS,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn betas(&self) -> (f64, f64) {
        (self.beta1, self.beta2)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.dim() || grad.len() != self.dim() {
            return Err(EcaError::dim(format!(
                "Adam state has {} parameters, got params {} and grad {}",
                self.dim(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(EcaError::Numerics("non-finite gradient passed to Adam".into()));
        }
        self.step_count += 1;
        self.beta1_pow *= self.beta1;
        self.beta2_pow *= self.beta2;
        let c1 = 1.0 - self.beta1_pow;
        let c2 = 1.0 - self.beta2_pow;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
