//! Named trainable tensors with gradient accumulators.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered collection of parameters. Insertion order is the canonical
/// order used by checkpoints and the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    grads_populated: bool,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), grads_populated: false }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::DuplicateParam(name));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
        self.grads_populated = false;
    }

    /// True once a backward pass has written into the accumulators since the
    /// last [`zero_grad`](Self::zero_grad).
    pub fn grads_populated(&self) -> bool {
        self.grads_populated
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[T]) {
        let dst = self.params[id.0].grad.data_mut();
        for (d, &s) in dst.iter_mut().zip(g) {
            *d += s;
        }
        self.grads_populated = true;
    }

    pub(crate) fn mark_populated(&mut self) {
        self.grads_populated = true;
    }

    /// Replaces a parameter's value, keeping its shape contract.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(shape_err(
                "set_value",
                alloc::format!("`{}`: {:?} vs {:?}", name, p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

/// Draws from N(0, stddev^2), redrawing anything outside two standard
/// deviations.
pub fn truncated_normal<T: Real, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    stddev: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(arg_err("truncated_normal", "stddev must be positive and finite"));
    }
    let normal = Normal::new(0.0, stddev).map_err(|_| arg_err("truncated_normal", "bad stddev"))?;
    let bound = 2.0 * stddev;
    Ok(Tensor::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= bound {
            break T::of(v);
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_respect_truncation_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: Tensor<f64> = truncated_normal([10_000], 0.1, &mut rng).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 0.2));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a: Tensor<f32> = truncated_normal([4, 3, 3], 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: Tensor<f32> = truncated_normal([4, 3, 3], 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t: Tensor<f64> = truncated_normal([100_000], 0.1, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn rejects_nonpositive_stddev() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(truncated_normal::<f64, _>([2], 0.0, &mut rng).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros([1])).unwrap();
        assert_eq!(s.add("w", Tensor::zeros([1])), Err(Error::DuplicateParam("w".into())));
    }
}
