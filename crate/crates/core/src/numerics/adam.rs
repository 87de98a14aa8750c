use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction.
///
/// Moment buffers are keyed by parameter name and created lazily on the
/// first step, so the optimizer can be constructed before the model.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears the gradient slots.
    /// Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::Contract(format!("parameter {name} has no gradient")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, tensor) in params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; tensor.numel()], vec![0.0; tensor.numel()]));
            let grad = tensor.grad().expect("checked above").to_vec();
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.clear_grad();
        }
        Ok(())
    }
}
