//! Adam with bias correction and per-group learning rates.

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam<T> {
    config: AdamConfig,
    group_lr: Vec<f64>,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// `group_lr[g]` is the learning rate for parameters in group `g`.
    pub fn new(config: AdamConfig, group_lr: Vec<f64>, params: &ParamSet<T>) -> Result<Self> {
        if let Some(p) = params.iter().find(|p| p.group >= group_lr.len()) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{}` is in group {} but only {} learning rates were given",
                p.name,
                p.group,
                group_lr.len()
            )));
        }
        Ok(Self {
            config,
            group_lr,
            step: 0,
            first: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.tensor.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("`{}`: {:?} vs {:?}", p.name, p.tensor.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let eps = T::lit(eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = self.group_lr[p.group];
            // lr·m̂/(√v̂+ε) = (lr/c1)·m / (√v/√c2 + ε)
            let step_size = T::lit(lr / c1);
            let inv_sqrt_c2 = T::lit(1.0 / c2.sqrt());
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *w = *w - step_size * *mi / (vi.sqrt() * inv_sqrt_c2 + eps);
            }
        }
        Ok(())
    }
}

/// Single bias-corrected Adam update for one scalar at step `t ≥ 1`.
/// Returns `(delta, m, v)`.
pub fn adam_scalar_update(
    config: AdamConfig,
    lr: f64,
    t: u64,
    m: f64,
    v: f64,
    grad: f64,
) -> (f64, f64, f64) {
    let m = config.beta1 * m + (1.0 - config.beta1) * grad;
    let v = config.beta2 * v + (1.0 - config.beta2) * grad * grad;
    let m_hat = m / (1.0 - config.beta1.powi(t as i32));
    let v_hat = v / (1.0 - config.beta2.powi(t as i32));
    (-lr * m_hat / (v_hat.sqrt() + config.eps), m, v)
}
