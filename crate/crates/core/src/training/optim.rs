use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup to `base` over `warmup` steps, constant afterwards.
/// Steps count from 1.
pub fn warmup_lr(base: f64, step: u64, warmup: u64) -> f64 {
    if warmup == 0 {
        return base;
    }
    base * (step as f64 / warmup as f64).min(1.0)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: u64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(
        store: &ParamStore,
        base_lr: f64,
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
        warmup: u64,
    ) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            base_lr,
            beta1,
            beta2,
            eps: ADAM_EPS,
            weight_decay,
            warmup,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Learning rate the next call to [`AdamW::step`] will use.
    pub fn next_lr(&self) -> f64 {
        warmup_lr(self.base_lr, self.step + 1, self.warmup)
    }

    /// Applies the accumulated gradients, then zeroes them. Nothing is
    /// updated if any gradient is non-finite. Returns the rate used.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64> {
        if self.m.len() != store.len() {
            return Err(Error::Validation(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        self.step += 1;
        let lr = warmup_lr(self.base_lr, self.step, self.warmup);
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let grad = p.grad.data();
            for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *theta -= lr * decay * *theta;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(lr)
    }
}
