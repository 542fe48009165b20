//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// AdamW optimizer state over a fixed list of parameter tensors.
///
/// The moment buffers are serializable so a training run can be suspended
/// and resumed without perturbing the update sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    /// Optimizer for parameters with the given shapes, zero-initialized moments.
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Tensor]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Self::new(lr, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. `params` and `grads` must line up with the shapes the
    /// optimizer was created with.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            assert_eq!(params[i].shape(), self.m[i].shape(), "shape mismatch");
            assert_eq!(grads[i].shape(), self.m[i].shape(), "shape mismatch");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[j]);
            }
        }
    }
}
