//! Bias-corrected Adam.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if !params.grads_populated() {
            let name = params.names().next().unwrap_or("<empty>").to_string();
            return Err(Error::MissingGrad(name));
        }
        if self.m.len() != params.len() {
            return Err(shape_err("adam_step", "optimizer state built for a different parameter set"));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - num_traits::Float::powf(c.beta1, t));
        let bc2 = T::of(1.0 - num_traits::Float::powf(c.beta2, t));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.shape() != p.value.shape() {
                return Err(shape_err("adam_step", alloc::format!("moment shape for `{}`", p.name)));
            }
            let grads = p.grad.data();
            let vals = p.value.data_mut();
            for (((x, &g), m), v) in vals.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
