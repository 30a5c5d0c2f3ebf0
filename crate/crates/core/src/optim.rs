//! Adam with bias correction and a constant learning rate.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for a list of parameter tensors, addressed by index.
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = shapes.into_iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let second = first.clone();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the step counter. Call once per update, before [`Adam::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates `param` (slot `index`) from `grad`. Updated values are rounded
    /// to `f32` so that parameters survive the checkpoint format bit-exactly.
    pub fn update(&mut self, index: usize, param: &mut Tensor, grad: &Tensor) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let m = self.first[index].data_mut();
        let v = self.second[index].data_mut();
        for (((p, g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = (*p - learning_rate * m_hat / (v_hat.sqrt() + eps)) as f32 as f64;
        }
    }
}
