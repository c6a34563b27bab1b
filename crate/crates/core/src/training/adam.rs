//! Adam optimizer over a backbone parameter set.

use std::collections::BTreeMap;

use crate::backbone::BackboneParams;
use crate::tensor::Gradients;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One update over every parameter, in key order. Parameters without a
    /// gradient entry are treated as having zero gradient.
    pub fn step(&mut self, params: &mut BackboneParams, grads: &Gradients) {
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        for (key, tensor) in params.iter_mut() {
            let grad = grads.get_or_zeros(tensor);
            let m = self
                .first_moment
                .entry(key.clone())
                .or_insert_with(|| vec![0.0; tensor.len()]);
            let v = self
                .second_moment
                .entry(key.clone())
                .or_insert_with(|| vec![0.0; tensor.len()]);
            let mut data = tensor.data().to_vec();
            for i in 0..data.len() {
                let g = grad.at(i);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.set_data(data);
        }
    }
}
