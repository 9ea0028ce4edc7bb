use serde::{Deserialize, Serialize};

use super::params::{global_norm, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            clip_norm: None,
        }
    }

    pub fn for_store(store: &ParameterStore, lr: f64) -> Self {
        Self::new(store.flat_len(), lr)
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Tensor]) -> Result<()> {
        store.check_aligned(grads)?;
        if self.m.len() != store.flat_len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "state holds {} moments, store has {} values",
                    self.m.len(),
                    store.flat_len()
                ),
            ));
        }
        let scale = match self.clip_norm {
            Some(c) => {
                let n = global_norm(grads);
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut flat = store.to_flat();
        let grad_values = grads.iter().flat_map(|g| g.data());
        for (i, &g) in grad_values.enumerate() {
            let g = g * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            flat[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        store.set_flat(&flat)
    }
}
