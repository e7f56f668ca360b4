//! ADAM optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;

/// ADAM state for one parameter group. Moment buffers are allocated up front
/// and always match their parameters' shapes; the parameter list passed to
/// [`AdamState::step`] must line up with the one used at construction.
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of completed steps (used for bias correction).
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for a group of named parameters with default betas
    /// (0.9, 0.999) and epsilon 1e-8.
    pub fn new(learning_rate: f64, params: &[(String, Tensor)]) -> AdamState {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: params.iter().map(|(_, p)| alloc::vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|(_, p)| alloc::vec![0.0; p.numel()]).collect(),
        }
    }

    /// Number of parameter tensors in this group.
    pub fn group_len(&self) -> usize {
        self.m.len()
    }

    /// Apply one update and clear the gradients.
    ///
    /// Bias corrections are computed from `step_count` alone (not carried
    /// incrementally), so a state restored from a checkpoint continues
    /// bit-exactly.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Config(alloc::format!(
                "optimizer group has {} moment buffers but {} parameters were passed",
                self.m.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (i, (name, p)) in params.iter().enumerate() {
            let grad = p
                .grad()
                .ok_or_else(|| Error::MissingGrad { name: name.clone() })?;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if grad.len() != m.len() {
                return Err(Error::shape(
                    "adam_step",
                    alloc::format!(
                        "parameter '{name}' has {} elements, moment buffer has {}",
                        grad.len(),
                        m.len()
                    ),
                ));
            }
            let mut values = p.values();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                values[j] -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
            }
            p.set_values(&values)?;
            p.clear_grad();
        }
        Ok(())
    }

    /// Flat view of the moment buffers for checkpointing: `(m, v)` per
    /// parameter, in group order.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Restore moment buffers captured by [`AdamState::moments`].
    pub fn restore_moments(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::Config(alloc::format!(
                "checkpoint has {}/{} moment buffers, optimizer group expects {}",
                m.len(),
                v.len(),
                self.m.len()
            )));
        }
        for (have, want) in m.iter().zip(&self.m).chain(v.iter().zip(&self.v)) {
            if have.len() != want.len() {
                return Err(Error::Config(alloc::format!(
                    "moment buffer length {} does not match parameter ({} elements)",
                    have.len(),
                    want.len()
                )));
            }
        }
        self.m = m;
        self.v = v;
        Ok(())
    }
}
