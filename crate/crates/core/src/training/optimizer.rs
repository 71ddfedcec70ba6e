//! Adaptive moment estimation.

use crate::params::{Grads, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![None; num_params],
            v: vec![None; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Parameters without a gradient are left
    /// alone and keep their moment estimates.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let p = store.get_mut(id).data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = b1 * *mk + (1.0 - b1) * gk;
                let vk = &mut v.data_mut()[k];
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let m_hat = m.data()[k] / c1;
                let v_hat = v.data()[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
