use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::ConvSpec;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{truncated_normal, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Default weight initialization scale.
pub const INIT_STDDEV: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    TruncatedNormal(f64),
    Zeros,
}

/// A convolution with its registered weight and optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec<T>,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec<T>,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = spec.weight_shape();
        let w = match init {
            Init::TruncatedNormal(s) => truncated_normal(shape.to_vec(), s, rng)?,
            Init::Zeros => Tensor::zeros(shape.to_vec()),
        };
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([spec.out_channels]))?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, &self.spec, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        core::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// `max(1, round(base * multiplier))`.
pub fn scaled(base: usize, multiplier: f64) -> usize {
    let v = base as f64 * multiplier + 0.5;
    (v as usize).max(1)
}
