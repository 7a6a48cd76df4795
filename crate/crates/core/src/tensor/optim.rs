use crate::error::{Error, Result};

use super::{ParamStore, Tensor};

/// Scales trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1.0 when the norm is already within bounds).
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for p in store.iter_mut().filter(|p| p.trainable) {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
    }
    factor
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// First moment of parameter `index`, once at least one step was taken.
    pub fn first_moment(&self, index: usize) -> Option<&Tensor> {
        self.m.get(index)
    }

    /// Updates every trainable parameter from its gradient, then zeroes all
    /// gradients. Nothing is modified when a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.trainable && !p.grad.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for `{}`", p.name)));
        }
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, (w, &g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
