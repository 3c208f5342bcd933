//! Adam with bias-corrected first and second moments.

use crate::error::TensorError;
use crate::param::ParamStore;
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One optimizer step over every parameter in the store, using the gradients
/// accumulated since the last `zero_grads`. Aborts without touching any value
/// if some parameter holds a non-finite gradient, naming that parameter.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<(), TensorError> {
    for p in store.params_mut().iter() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFiniteGrad {
                name: p.name.clone(),
            });
        }
    }
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let eps = T::of(cfg.eps);
    for p in store.params_mut().iter_mut() {
        p.step += 1;
        let corr1 = T::of(1.0 - cfg.beta1.powi(p.step as i32));
        let corr2 = T::of(1.0 - cfg.beta2.powi(p.step as i32));
        let lr = T::of(cfg.lr);
        let value = p.value.data_mut();
        for i in 0..value.len() {
            let g = p.grad[i];
            p.m[i] = b1 * p.m[i] + (one - b1) * g;
            p.v[i] = b2 * p.v[i] + (one - b2) * g * g;
            let m_hat = p.m[i] / corr1;
            let v_hat = p.v[i] / corr2;
            value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
