//! AdamW with decoupled weight decay.
//!
//! Bias-corrected first/second moments with beta1 = 0.9, beta2 = 0.999,
//! epsilon = 1e-8; the update is
//! `value -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * value)`.

use ndarray::{ArrayD, ArrayViewMutD, NdFloat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient tensor {index} contains a non-finite value")]
    NonFiniteGradient { index: usize },
    #[error("parameter/gradient tensor {index} has shape {got:?}, state expects {expected:?}")]
    ShapeMismatch {
        index: usize,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("expected {expected} tensors, got {got}")]
    CountMismatch { expected: usize, got: usize },
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    step: u64,
}

impl<F: NdFloat> AdamW<F> {
    /// Fresh state with zero moments, shaped like `template`.
    pub fn new(template: &[ArrayD<F>]) -> Self {
        Self {
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            epsilon: F::from(1e-8).unwrap(),
            m: template.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect(),
            v: template.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameter tensors. Increments the step counter
    /// first, so bias correction uses t = 1 on the first call.
    pub fn step(
        &mut self,
        params: &mut [ArrayViewMutD<'_, F>],
        grads: &[ArrayD<F>],
        lr: F,
        weight_decay: F,
    ) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::CountMismatch {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (index, g) in grads.iter().enumerate() {
            if g.shape() != self.m[index].shape() {
                return Err(OptimError::ShapeMismatch {
                    index,
                    got: g.shape().to_vec(),
                    expected: self.m[index].shape().to_vec(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { index });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (F::one() - self.beta1) * g;
                *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * (m_hat / (v_hat.sqrt() + self.epsilon) + weight_decay * *p);
            }
        }
        Ok(())
    }
}
