//! Feed-forward refinement: full-resolution luminance plus a bilinearly
//! upsampled low-resolution chroma hint in, full-resolution chroma out.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::color::{downsample_chroma, ChromaGrid, YccImage};
use crate::conv::ConvSpec;
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{Graph, Var};
use crate::layers::{scaled, ConvLayer, Init, INIT_STDDEV};
use crate::params::ParamStore;
use crate::real::Real;
use crate::resample::bilinear_plane;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineLayer {
    /// 3x3 or 5x5 convolution followed by ReLU; `channels` before width scaling.
    Conv { kernel: usize, stride: usize, channels: usize },
    /// Bilinear resize to `ceil(H / divisor) x ceil(W / divisor)`.
    Upsample { divisor: usize },
    /// Appends the network input's channels; only valid at full resolution.
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementConfig {
    pub width_multiplier: f64,
    pub plan: Vec<RefineLayer>,
    pub init_stddev: f64,
}

fn conv(kernel: usize, stride: usize, channels: usize) -> RefineLayer {
    RefineLayer::Conv { kernel, stride, channels }
}

impl RefinementConfig {
    /// Encoder down to H/32, decoder back to H/4 with two bilinear
    /// upsamples, then a bilinear resize to H x W where one convolution sees
    /// the full-resolution input again.
    pub fn appendix(width_multiplier: f64) -> Self {
        let plan = alloc::vec![
            conv(3, 2, 64),
            conv(3, 1, 128),
            conv(3, 2, 128),
            conv(3, 1, 256),
            conv(3, 2, 256),
            conv(3, 1, 512),
            conv(3, 1, 512),
            conv(3, 1, 256),
            conv(3, 2, 512),
            conv(3, 1, 512),
            conv(3, 2, 512),
            conv(3, 1, 512),
            conv(5, 1, 1024),
            conv(3, 1, 512),
            conv(3, 1, 128),
            conv(3, 1, 128),
            RefineLayer::Upsample { divisor: 8 },
            conv(3, 1, 64),
            conv(3, 1, 64),
            RefineLayer::Upsample { divisor: 4 },
            conv(3, 1, 32),
            conv(3, 1, 32),
            RefineLayer::Upsample { divisor: 1 },
            RefineLayer::Skip,
            conv(3, 1, 32),
        ];
        Self { width_multiplier, plan, init_stddev: INIT_STDDEV }
    }

    /// The same stack with the deepest block kept at H/8, the chroma grid
    /// resolution, which is what a 64-pixel input can afford.
    pub fn desk() -> Self {
        let mut cfg = Self::appendix(0.25);
        for layer in &mut cfg.plan {
            if let RefineLayer::Conv { channels: 512, stride, .. } = layer {
                *stride = 1;
            }
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementNet<T> {
    pub config: RefinementConfig,
    pub layers: Vec<(RefineLayer, Option<ConvLayer<T>>)>,
    pub head: ConvLayer<T>,
}

/// Input channels: luminance, Cr hint, Cb hint.
pub const REFINE_INPUTS: usize = 3;

impl<T: Real> RefinementNet<T> {
    /// Registers parameters under `refine.*`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, config: RefinementConfig, rng: &mut R) -> Result<Self> {
        if !(config.width_multiplier > 0.0) {
            return Err(arg_err("refinement_config", "width_multiplier must be > 0"));
        }
        let init = Init::TruncatedNormal(config.init_stddev);
        let mut cin = REFINE_INPUTS;
        let mut layers = Vec::new();
        for (i, &layer) in config.plan.iter().enumerate() {
            let conv = match layer {
                RefineLayer::Conv { kernel, stride, channels } => {
                    let cout = scaled(channels, config.width_multiplier);
                    let spec = ConvSpec::square(kernel, stride, cin, cout)?;
                    cin = cout;
                    Some(ConvLayer::new(store, &format!("refine.layer{i}"), spec, true, init, rng)?)
                }
                RefineLayer::Upsample { divisor } => {
                    if divisor == 0 {
                        return Err(arg_err("refinement_config", "upsample divisor must be > 0"));
                    }
                    None
                }
                RefineLayer::Skip => {
                    cin += REFINE_INPUTS;
                    None
                }
            };
            layers.push((layer, conv));
        }
        let head = ConvLayer::new(store, "refine.head", ConvSpec::square(1, 1, cin, 2)?, true, Init::Zeros, rng)?;
        Ok(Self { config, layers, head })
    }

    /// `[N, 3, H, W]` input to chroma `[N, 2, H, W]` (Cr, Cb) in `[0, 255]`:
    /// `255 * sigmoid(logit(hint / 255) + head)`. The head starts at zero, so
    /// an untrained network reproduces the bilinearly upsampled hint.
    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, input: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(input).dims4("refine_forward")?;
        if c != REFINE_INPUTS {
            return Err(shape_err("refine_forward", format!("expected 3 input channels, got {c}")));
        }
        let mut x = input;
        for (layer, conv) in &self.layers {
            x = match (layer, conv) {
                (RefineLayer::Conv { .. }, Some(conv)) => {
                    let y = conv.forward(g, store, x)?;
                    g.relu(y)
                }
                (RefineLayer::Upsample { divisor }, _) => {
                    let [_, _, xh, xw] = g.value(x).dims4("refine_forward")?;
                    let (th, tw) = (h.div_ceil(*divisor).max(xh), w.div_ceil(*divisor).max(xw));
                    g.upsample_bilinear(x, th, tw)?
                }
                (RefineLayer::Skip, _) => {
                    let [_, _, xh, xw] = g.value(x).dims4("refine_forward")?;
                    if (xh, xw) != (h, w) {
                        return Err(shape_err("refine_forward", format!("skip at {xh}x{xw}, input is {h}x{w}")));
                    }
                    g.concat_channels(&[x, input])?
                }
                _ => unreachable!("conv layers always carry parameters"),
            };
        }
        let y = self.head.forward(g, store, x)?;
        let [_, _, yh, yw] = g.value(y).dims4("refine_forward")?;
        let correction = if (yh, yw) == (h, w) { y } else { g.upsample_bilinear(y, h, w)? };
        let prior = g.constant(hint_logits(g.value(input))?);
        let z = g.add(prior, correction)?;
        let z = g.sigmoid(z);
        Ok(g.scale(z, T::of(255.0)))
    }

    /// Inference on one image: returns `(cr, cb)` full-resolution planes.
    pub fn refine(&self, store: &ParamStore<T>, gray: &[f64], width: usize, height: usize, grid: &ChromaGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = refine_input::<T>(&[(gray, grid)], width, height)?;
        let mut g = Graph::new();
        let x = g.constant(input);
        let y = self.forward(&mut g, store, x)?;
        let d = g.value(y).data();
        let n = width * height;
        Ok((d[..n].iter().map(|v| v.as_f64()).collect(), d[n..].iter().map(|v| v.as_f64()).collect()))
    }
}

/// `logit(hint / 255)` of the two hint channels of a refinement input.
fn hint_logits<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let (n, plane) = (s[0], s[2] * s[3]);
    let mut data = Vec::with_capacity(n * 2 * plane);
    for item in input.data().chunks_exact(REFINE_INPUTS * plane) {
        data.extend(item[plane..].iter().map(|&v| {
            let p = (v.as_f64() + 1.0) / 2.0;
            T::of((p / (1.0 - p)).ln())
        }));
    }
    Tensor::new([n, 2, s[2], s[3]], data)
}

/// Bilinear upsample of a grid's bin centres to `width x height`: `(cr, cb)`.
pub fn upsample_grid(grid: &ChromaGrid, width: usize, height: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if grid.width * height != grid.height * width {
        return Err(arg_err(
            "refine_forward",
            format!("grid {}x{} does not match image aspect {}x{}", grid.width, grid.height, width, height),
        ));
    }
    let (cr, cb) = grid.dequantized();
    Ok((
        bilinear_plane(&cr, grid.height, grid.width, height, width),
        bilinear_plane(&cb, grid.height, grid.width, height, width),
    ))
}

/// Stacks `(luminance, grid)` pairs into the network input, each channel
/// mapped from `[0, 255]` to `[-1, 1]`.
pub fn refine_input<T: Real>(items: &[(&[f64], &ChromaGrid)], width: usize, height: usize) -> Result<Tensor<T>> {
    let n = width * height;
    let norm = |v: f64| T::of(v / 127.5 - 1.0);
    let mut data = Vec::with_capacity(items.len() * REFINE_INPUTS * n);
    for (gray, grid) in items {
        if gray.len() != n {
            return Err(shape_err("refine_input", "luminance plane size"));
        }
        let (cr, cb) = upsample_grid(grid, width, height)?;
        data.extend(gray.iter().chain(&cr).chain(&cb).map(|&v| norm(v)));
    }
    Tensor::new([items.len(), REFINE_INPUTS, height, width], data)
}

/// One supervised refinement example. The chroma hint is always derived
/// from the image's own chroma; there is deliberately no constructor that
/// accepts an externally generated grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineExample {
    pub width: usize,
    pub height: usize,
    pub gray: Vec<f64>,
    pub hint: ChromaGrid,
    /// `[cr, cb]` concatenated planes.
    pub target: Vec<f64>,
}

impl RefineExample {
    pub fn from_ycc(img: &YccImage, chroma_side: usize) -> Result<Self> {
        let low = downsample_chroma(img, chroma_side)?;
        let hint = ChromaGrid::quantize(low.width, low.height, &low.cr, &low.cb)?;
        let mut target = img.cr.clone();
        target.extend_from_slice(&img.cb);
        Ok(Self { width: img.width, height: img.height, gray: img.y.clone(), hint, target })
    }
}

/// Mean absolute chroma error (8-bit units) of `net` over a batch.
pub fn refine_loss<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, net: &RefinementNet<T>, batch: &[RefineExample]) -> Result<Var> {
    let first = batch.first().ok_or_else(|| arg_err("refine_loss", "empty batch"))?;
    let (w, h) = (first.width, first.height);
    let items: Vec<(&[f64], &ChromaGrid)> = batch.iter().map(|e| (&e.gray[..], &e.hint)).collect();
    let input = g.constant(refine_input(&items, w, h)?);
    let target = Tensor::new(
        [batch.len(), 2, h, w],
        batch.iter().flat_map(|e| e.target.iter().map(|&v| T::of(v))).collect(),
    )?;
    let pred = net.forward(g, store, input)?;
    g.l1_loss(pred, &target)
}

/// Mean absolute error between the plain bilinear hint and the target.
pub fn bilinear_baseline_l1(example: &RefineExample) -> Result<f64> {
    let (cr, cb) = upsample_grid(&example.hint, example.width, example.height)?;
    let pred = cr.iter().chain(&cb);
    Ok(pred.zip(&example.target).map(|(a, b)| (a - b).abs()).sum::<f64>() / example.target.len() as f64)
}
