//! AdamW with decoupled weight decay, plus the step learning-rate decay
//! schedule.

use crate::numerics::{Scalar, Tensor};
use crate::params::{ModelPar, ParamTree};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in block {block}; step skipped")]
    NonFiniteGrad { block: String },
    #[error("gradient layout mismatch: expected {expect} blocks, got {got}")]
    GradLayout { expect: usize, got: usize },
}

/// AdamW hyperparameters (common defaults).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// First/second moment estimates per parameter block, in walk order.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub hyper: AdamWHyper,
    /// Number of completed steps (bias correction uses step + 1).
    pub step_count: u64,
    pub moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(hyper: AdamWHyper, params: &ModelPar<Tensor<T>>) -> Self {
        let mut moments = Vec::new();
        params.walk("", &mut |_, t: &Tensor<T>| {
            moments.push((vec![T::ZERO; t.numel()], vec![T::ZERO; t.numel()]));
        });
        AdamW { hyper, step_count: 0, moments }
    }

    /// One update over all blocks. Gradients must be in walk order. If any
    /// gradient is non-finite the step is skipped atomically: no parameter
    /// or moment changes, no step-count advance.
    pub fn step(
        &mut self,
        params: &mut ModelPar<Tensor<T>>,
        grads: &[Vec<T>],
        lr: f64,
    ) -> Result<(), OptimError> {
        let names: Vec<String> = {
            let mut v = Vec::new();
            params.walk("", &mut |n: &str, _t: &Tensor<T>| v.push(n.to_string()));
            v
        };
        if grads.len() != names.len() || grads.len() != self.moments.len() {
            return Err(OptimError::GradLayout { expect: names.len(), got: grads.len() });
        }
        for (name, g) in names.iter().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGrad { block: name.clone() });
            }
        }

        let t = self.step_count + 1;
        let h = self.hyper;
        let beta1 = T::from_f64(h.beta1);
        let beta2 = T::from_f64(h.beta2);
        let one_m_b1 = T::from_f64(1.0 - h.beta1);
        let one_m_b2 = T::from_f64(1.0 - h.beta2);
        let corr1 = T::from_f64(1.0 - h.beta1.powi(t as i32));
        let corr2 = T::from_f64(1.0 - h.beta2.powi(t as i32));
        let eps = T::from_f64(h.eps);
        let wd = T::from_f64(h.weight_decay);
        let lr_t = T::from_f64(lr);

        let mut block = 0;
        let moments = &mut self.moments;
        params.walk_mut("", &mut |_, tensor: &mut Tensor<T>| {
            let (m, v) = &mut moments[block];
            let g = &grads[block];
            for ((theta, (mi, vi)), &gi) in
                tensor.data_mut().iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(g)
            {
                *mi = beta1 * *mi + one_m_b1 * gi;
                *vi = beta2 * *vi + one_m_b2 * gi * gi;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *theta = *theta - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
            }
            block += 1;
        });
        self.step_count = t;
        Ok(())
    }
}

/// Step decay: `lr0 * factor^(epoch / every)` with integer division.
pub fn lr_schedule(epoch: usize, lr0: f64, factor: f64, every: usize) -> f64 {
    assert!(every >= 1, "decay interval must be at least 1 epoch");
    lr0 * factor.powi((epoch / every) as i32)
}
