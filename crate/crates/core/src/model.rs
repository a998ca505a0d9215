//! The two trainable stages wired together: conditioning + PixelCNN as one
//! jointly optimized chroma model, the refinement network as the other,
//! and end-to-end colorization.

use alloc::vec::Vec;

use rand::Rng;

use crate::adam::AdamState;
use crate::color::{ycc_to_rgb_luma_preserving, ChromaGrid, RgbImage, YccImage};
use crate::conditioning::{ConditioningConfig, ConditioningNet};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::pixelcnn::{PixelCnn, PixelCnnConfig};
use crate::real::Real;
use crate::refine::{refine_loss, upsample_grid, RefineExample, RefinementNet};
use crate::tensor::Tensor;

/// Luminance planes as a `[N, 1, H, W]` tensor scaled to `[-1, 1]`.
pub fn gray_input<T: Real>(planes: &[&[f64]], width: usize, height: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(planes.len() * width * height);
    for p in planes {
        if p.len() != width * height {
            return Err(shape_err("gray_input", "plane size does not match dimensions"));
        }
        data.extend(p.iter().map(|&v| T::of(v / 127.5 - 1.0)));
    }
    Tensor::new([planes.len(), 1, height, width], data)
}

/// A luminance plane paired with its ground-truth chroma grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaExample {
    pub width: usize,
    pub height: usize,
    pub gray: Vec<f64>,
    pub grid: ChromaGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChromaModel<T> {
    pub cond: ConditioningNet<T>,
    pub pixelcnn: PixelCnn<T>,
}

impl<T: Real> ChromaModel<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cond: ConditioningConfig,
        pixelcnn: PixelCnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if cond.feature_channels != pixelcnn.feature_channels {
            return Err(arg_err("chroma_model", "conditioning and PixelCNN feature widths differ"));
        }
        let cond = ConditioningNet::new(store, cond, rng)?;
        let pixelcnn = PixelCnn::new(store, pixelcnn, rng)?;
        Ok(Self { cond, pixelcnn })
    }

    /// Conditioning features for inference.
    pub fn features(&self, store: &ParamStore<T>, gray: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(gray.clone());
        let f = self.cond.forward(&mut g, store, x, 0.0)?;
        Ok(g.value(f).clone())
    }

    /// Teacher-forced loss with the gradient multiplier for `step`.
    pub fn loss(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &[ChromaExample], step: u64) -> Result<Var> {
        let first = batch.first().ok_or_else(|| arg_err("pixelcnn_nll", "empty batch"))?;
        let planes: Vec<&[f64]> = batch.iter().map(|e| &e.gray[..]).collect();
        let gray = g.constant(gray_input(&planes, first.width, first.height)?);
        let feats = self.cond.forward(g, store, gray, self.cond.config.gradient_factor(step))?;
        let grids: Vec<ChromaGrid> = batch.iter().map(|e| e.grid.clone()).collect();
        self.pixelcnn.nll_loss(g, store, &grids, feats)
    }

    /// Mean NLL (nats per subpixel) without touching gradients.
    pub fn nll(&self, store: &ParamStore<T>, batch: &[ChromaExample]) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.loss(&mut g, store, batch, 0)?;
        Ok(g.value(loss).item().as_f64())
    }
}

/// One optimizer update of the chroma model on `batch`; returns the loss
/// before the update. The step counter lives in `adam`.
pub fn chroma_train_step<T: Real>(
    model: &ChromaModel<T>,
    store: &mut ParamStore<T>,
    adam: &mut AdamState<T>,
    batch: &[ChromaExample],
) -> Result<f64> {
    store.zero_grad();
    let mut g = Graph::new();
    let loss = model.loss(&mut g, store, batch, adam.step)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Diverged(adam.step));
    }
    g.backward(loss, store)?;
    adam.step(store)?;
    Ok(value.as_f64())
}

/// One optimizer update of the refinement network.
pub fn refine_train_step<T: Real>(
    net: &RefinementNet<T>,
    store: &mut ParamStore<T>,
    adam: &mut AdamState<T>,
    batch: &[RefineExample],
) -> Result<f64> {
    store.zero_grad();
    let mut g = Graph::new();
    let loss = refine_loss(&mut g, store, net, batch)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Diverged(adam.step));
    }
    g.backward(loss, store)?;
    adam.step(store)?;
    Ok(value.as_f64())
}

/// Mean L1 chroma error of the refinement network on one example.
pub fn refine_l1<T: Real>(net: &RefinementNet<T>, store: &ParamStore<T>, example: &RefineExample) -> Result<f64> {
    let (cr, cb) = net.refine(store, &example.gray, example.width, example.height, &example.hint)?;
    let pred = cr.iter().chain(&cb);
    Ok(pred.zip(&example.target).map(|(a, b)| (a - b).abs()).sum::<f64>() / example.target.len() as f64)
}

/// Trained networks needed for colorization.
pub struct Colorizer<'a, T> {
    pub chroma: &'a ChromaModel<T>,
    pub chroma_params: &'a ParamStore<T>,
    pub refiner: &'a RefinementNet<T>,
    pub refine_params: &'a ParamStore<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Colorization {
    pub seed: u64,
    pub grid: ChromaGrid,
    pub log_likelihood: f64,
    pub refined: RgbImage,
    /// Luminance recombined with the bilinearly upsampled sample.
    pub unrefined: RgbImage,
}

impl<T: Real> Colorizer<'_, T> {
    /// Features for a luminance plane whose sides are multiples of 8.
    pub fn features(&self, gray: &[f64], width: usize, height: usize) -> Result<Tensor<T>> {
        let x = gray_input(&[gray], width, height)?;
        self.chroma.features(self.chroma_params, &x)
    }

    /// One sample: PixelCNN draw, refinement, luminance passthrough.
    pub fn colorize_one(
        &self,
        gray: &[f64],
        width: usize,
        height: usize,
        features: &Tensor<T>,
        seed: u64,
        temperature: f64,
    ) -> Result<Colorization> {
        let grid = self.chroma.pixelcnn.sample(self.chroma_params, features, seed, temperature)?;
        let log_likelihood = self.chroma.pixelcnn.log_likelihoods(self.chroma_params, core::slice::from_ref(&grid), features)?[0];
        let (cr, cb) = self.refiner.refine(self.refine_params, gray, width, height, &grid)?;
        let refined = ycc_to_rgb_luma_preserving(&YccImage::new(width, height, gray.to_vec(), cb, cr)?);
        let (ucr, ucb) = upsample_grid(&grid, width, height)?;
        let unrefined = ycc_to_rgb_luma_preserving(&YccImage::new(width, height, gray.to_vec(), ucb, ucr)?);
        Ok(Colorization { seed, grid, log_likelihood, refined, unrefined })
    }

    /// `seeds.len()` colorizations of one luminance plane.
    pub fn colorize(&self, gray: &[f64], width: usize, height: usize, seeds: &[u64], temperature: f64) -> Result<Vec<Colorization>> {
        let features = self.features(gray, width, height)?;
        seeds
            .iter()
            .map(|&s| self.colorize_one(gray, width, height, &features, s, temperature))
            .collect()
    }
}
