use serde::{Deserialize, Serialize};

use super::{real, Parameters, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Real> Adam<F> {
    pub fn new<P: Parameters<F>>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<F>> = params.tensors().iter().map(|t| vec![F::zero(); t.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step<P: Parameters<F>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        if p.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                actual: p.len().min(g.len()),
            });
        }
        for ((pt, gt), mt) in p.iter().zip(&g).zip(&self.m) {
            if pt.len() != mt.len() || gt.len() != mt.len() {
                return Err(Error::LengthMismatch {
                    expected: mt.len(),
                    actual: if pt.len() != mt.len() { pt.len() } else { gt.len() },
                });
            }
        }
        self.step += 1;
        let c = &self.config;
        let b1: F = real(c.beta1);
        let b2: F = real(c.beta2);
        let one = F::one();
        let corr1: F = real(1.0 - c.beta1.powi(self.step as i32));
        let corr2: F = real(1.0 - c.beta2.powi(self.step as i32));
        let lr: F = real(c.lr);
        let eps: F = real(c.eps);
        for (((pt, gt), mt), vt) in p.iter_mut().zip(&g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..pt.len() {
                let gi = gt[i];
                mt[i] = b1 * mt[i] + (one - b1) * gi;
                vt[i] = b2 * vt[i] + (one - b2) * gi * gi;
                let mhat = mt[i] / corr1;
                let vhat = vt[i] / corr2;
                pt[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
