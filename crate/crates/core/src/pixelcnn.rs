//! Conditional gated PixelCNN over a two-subchannel chroma grid.
//!
//! Pixels are generated in raster order and, within a pixel, Cr before Cb.
//! Hidden channels are split in two halves: the first half may only carry
//! information a Cr prediction is allowed to see, the second half may also
//! see the current pixel's Cr.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{dequantize_chroma, ChromaGrid, CHROMA_BINS};
use crate::conv::{ConvSpec, MaskKind};
use crate::error::{arg_err, shape_err, Result};
use crate::graph::{log_softmax_in_place, Graph, Var};
use crate::layers::{scaled, ConvLayer, Init, INIT_STDDEV};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Subchannel index of Cr within the grid and the logits.
pub const CR: usize = 0;
/// Subchannel index of Cb.
pub const CB: usize = 1;
pub const SUBCHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PixelCnnConfig {
    pub hidden_channels: usize,
    pub gated_blocks: usize,
    pub head_channels: usize,
    pub feature_channels: usize,
    pub init_stddev: f64,
}

impl PixelCnnConfig {
    pub fn paper() -> Self {
        Self { hidden_channels: 64, gated_blocks: 10, head_channels: 1024, feature_channels: 64, init_stddev: INIT_STDDEV }
    }

    /// Channel counts scaled by `width`; block count unchanged.
    pub fn scaled(width: f64, feature_channels: usize) -> Self {
        let even = |c: usize| (c + 1) / 2 * 2;
        Self {
            hidden_channels: even(scaled(64, width)),
            head_channels: even(scaled(1024, width)),
            feature_channels,
            ..Self::paper()
        }
    }

    pub fn desk() -> Self {
        Self::scaled(0.25, 64)
    }
}

/// Two-way subpixel group of each of `n` channels: first half Cr, second Cb.
pub fn halves(n: usize) -> Vec<usize> {
    (0..n).map(|c| if c < n / 2 { CR } else { CB }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GatedBlock<T> {
    pub conv: ConvLayer<T>,
    pub cond: ConvLayer<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelCnn<T> {
    pub config: PixelCnnConfig,
    pub stem: ConvLayer<T>,
    pub blocks: Vec<GatedBlock<T>>,
    pub head_hidden: ConvLayer<T>,
    pub head_logits: ConvLayer<T>,
}

impl<T: Real> PixelCnn<T> {
    /// Registers parameters under `pixelcnn.*`. The logit layer starts at
    /// zero so an untrained model predicts the uniform distribution.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, config: PixelCnnConfig, rng: &mut R) -> Result<Self> {
        let c = config.hidden_channels;
        if c < 2 || c % 2 != 0 || config.head_channels < 2 || config.head_channels % 2 != 0 {
            return Err(arg_err("pixelcnn_config", "hidden and head channels must be even and >= 2"));
        }
        let init = Init::TruncatedNormal(config.init_stddev);
        let hid = halves(c);
        let gates: Vec<usize> = hid.iter().chain(&hid).copied().collect();
        let stem_spec = ConvSpec::square(7, 1, SUBCHANNELS, c)?.masked_grouped(MaskKind::A, &[CR, CB], &hid)?;
        let stem = ConvLayer::new(store, "pixelcnn.stem", stem_spec, true, init, rng)?;
        let mut blocks = Vec::new();
        for i in 0..config.gated_blocks {
            let spec = ConvSpec::square(5, 1, c, 2 * c)?.masked_grouped(MaskKind::B, &hid, &gates)?;
            let conv = ConvLayer::new(store, &format!("pixelcnn.block{i}.conv"), spec, true, init, rng)?;
            let cspec = ConvSpec::square(1, 1, config.feature_channels, 2 * c)?;
            let cond = ConvLayer::new(store, &format!("pixelcnn.block{i}.cond"), cspec, false, init, rng)?;
            blocks.push(GatedBlock { conv, cond });
        }
        let hh = config.head_channels;
        let spec = ConvSpec::square(1, 1, c, hh)?.masked_grouped(MaskKind::B, &hid, &halves(hh))?;
        let head_hidden = ConvLayer::new(store, "pixelcnn.head_hidden", spec, true, init, rng)?;
        let out_groups: Vec<usize> = (0..SUBCHANNELS * CHROMA_BINS).map(|k| k / CHROMA_BINS).collect();
        let spec = ConvSpec::square(1, 1, hh, SUBCHANNELS * CHROMA_BINS)?.masked_grouped(MaskKind::B, &halves(hh), &out_groups)?;
        let head_logits = ConvLayer::new(store, "pixelcnn.head_logits", spec, true, Init::Zeros, rng)?;
        Ok(Self { config, stem, blocks, head_hidden, head_logits })
    }

    /// Logits `[N, 2*32, h, w]`: channels `0..32` score Cr, `32..64` Cb.
    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, chroma: Var, cond: Var) -> Result<Var> {
        let [n, c, h, w] = g.value(chroma).dims4("pixelcnn_forward")?;
        let [cn, cf, ch, cw] = g.value(cond).dims4("pixelcnn_forward")?;
        if c != SUBCHANNELS {
            return Err(shape_err("pixelcnn_forward", format!("chroma input has {c} channels, expected 2")));
        }
        if (cn, ch, cw) != (n, h, w) || cf != self.config.feature_channels {
            return Err(shape_err(
                "pixelcnn_forward",
                format!("conditioning {:?} does not match grid [{n}, {}, {h}, {w}]", [cn, cf, ch, cw], self.config.feature_channels),
            ));
        }
        let hidden = self.config.hidden_channels;
        let mut x = self.stem.forward(g, store, chroma)?;
        for block in &self.blocks {
            let pre = block.conv.forward(g, store, x)?;
            let bias = block.cond.forward(g, store, cond)?;
            let pre = g.add(pre, bias)?;
            let a = g.slice_channels(pre, 0, hidden)?;
            let b = g.slice_channels(pre, hidden, hidden)?;
            let gate = g.gated(a, b)?;
            x = g.add(x, gate)?;
        }
        let x = g.relu(x);
        let x = self.head_hidden.forward(g, store, x)?;
        let x = g.relu(x);
        self.head_logits.forward(g, store, x)
    }

    /// Teacher-forced mean cross-entropy (nats per subpixel) of `grids`.
    pub fn nll_loss(&self, g: &mut Graph<T>, store: &ParamStore<T>, grids: &[ChromaGrid], cond: Var) -> Result<Var> {
        let input = g.constant(chroma_input(grids)?);
        let logits = self.forward(g, store, input, cond)?;
        g.softmax_cross_entropy(logits, &chroma_targets(grids), CHROMA_BINS)
    }

    /// Mean NLL in nats per subpixel.
    pub fn nll(&self, store: &ParamStore<T>, grids: &[ChromaGrid], cond: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::new();
        let c = g.constant(cond.clone());
        let loss = self.nll_loss(&mut g, store, grids, c)?;
        Ok(g.value(loss).item().as_f64())
    }

    /// Logits for a batch of grids given constant conditioning features.
    /// A single-image `cond` is shared by every grid.
    pub fn logits(&self, store: &ParamStore<T>, grids: &[ChromaGrid], cond: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let input = g.constant(chroma_input(grids)?);
        let shared = cond.shape().first() == Some(&1) && grids.len() > 1;
        let c = g.constant(if shared { Tensor::stack_batch(&alloc::vec![cond.clone(); grids.len()])? } else { cond.clone() });
        let out = self.forward(&mut g, store, input, c)?;
        Ok(g.value(out).clone())
    }

    /// Total log-probability of each grid (natural log).
    pub fn log_likelihoods(&self, store: &ParamStore<T>, grids: &[ChromaGrid], cond: &Tensor<T>) -> Result<Vec<f64>> {
        let logits = self.logits(store, grids, cond)?;
        grids
            .iter()
            .enumerate()
            .map(|(i, grid)| {
                // Neumaier summation keeps long totals correctly rounded.
                let (mut total, mut carry) = (0.0f64, 0.0f64);
                for sub in 0..SUBCHANNELS {
                    for site in 0..grid.sites() {
                        let mut row = site_logits(&logits, i, sub, site);
                        log_softmax_in_place(&mut row);
                        let v = row[target_of(grid, sub, site)];
                        let t = total + v;
                        carry += if total.abs() >= v.abs() { (total - t) + v } else { (v - t) + total };
                        total = t;
                    }
                }
                Ok(total + carry)
            })
            .collect()
    }

    /// Raster-order ancestral sampling for one image's conditioning
    /// `[1, F, h, w]`. Temperature zero decodes greedily.
    pub fn sample(&self, store: &ParamStore<T>, cond: &Tensor<T>, seed: u64, temperature: f64) -> Result<ChromaGrid> {
        Ok(self.sample_traced(store, cond, seed, temperature)?.grid)
    }

    /// Like [`sample`](Self::sample) but also returns the logits each
    /// subpixel was drawn from, in generation order.
    pub fn sample_traced(&self, store: &ParamStore<T>, cond: &Tensor<T>, seed: u64, temperature: f64) -> Result<SampleTrace> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(arg_err("pixelcnn_sample", "temperature must be finite and >= 0"));
        }
        let [n, _, h, w] = cond.dims4("pixelcnn_sample")?;
        if n != 1 {
            return Err(shape_err("pixelcnn_sample", "conditioning must hold exactly one image"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = ChromaGrid::filled(w, h, 0);
        let mut used = Vec::with_capacity(SUBCHANNELS * h * w);
        for site in 0..h * w {
            for sub in [CR, CB] {
                let logits = self.logits(store, core::slice::from_ref(&grid), cond)?;
                let row = site_logits(&logits, 0, sub, site);
                let bin = draw(&row, temperature, &mut rng) as u8;
                match sub {
                    CR => grid.cr[site] = bin,
                    _ => grid.cb[site] = bin,
                }
                used.push(row);
            }
        }
        Ok(SampleTrace { grid, logits: used })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub grid: ChromaGrid,
    /// One 32-way logit row per subpixel: site 0 Cr, site 0 Cb, site 1 Cr, ...
    pub logits: Vec<Vec<f64>>,
}

/// 32 logits of subchannel `sub` at raster `site` of batch item `item`.
pub fn site_logits<T: Real>(logits: &Tensor<T>, item: usize, sub: usize, site: usize) -> Vec<f64> {
    let s = logits.shape();
    let plane = s[2] * s[3];
    let base = (item * s[1] + sub * CHROMA_BINS) * plane + site;
    (0..CHROMA_BINS).map(|k| logits.data()[base + k * plane].as_f64()).collect()
}

fn target_of(grid: &ChromaGrid, sub: usize, site: usize) -> usize {
    (if sub == CR { grid.cr[site] } else { grid.cb[site] }) as usize
}

/// Picks a class from `logits / temperature` by inverse-CDF sampling.
fn draw<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    if temperature == 0.0 {
        // first maximum wins ties
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        return best;
    }
    let mut scaled: Vec<f64> = logits.iter().map(|&v| v / temperature).collect();
    log_softmax_in_place(&mut scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lp) in scaled.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return k;
        }
    }
    scaled.len() - 1
}

/// Grid bins as network input `[N, 2, h, w]`: bin centres mapped by
/// `v / 128 - 1`.
pub fn chroma_input<T: Real>(grids: &[ChromaGrid]) -> Result<Tensor<T>> {
    let first = grids.first().ok_or_else(|| arg_err("chroma_input", "no grids"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(grids.len() * 2 * w * h);
    for g in grids {
        if (g.width, g.height) != (w, h) {
            return Err(shape_err("chroma_input", "grids differ in size"));
        }
        for plane in [&g.cr, &g.cb] {
            data.extend(plane.iter().map(|&b| T::of(dequantize_chroma(b) / 128.0 - 1.0)));
        }
    }
    Tensor::new([grids.len(), SUBCHANNELS, h, w], data)
}

/// Class targets in `[N, 2, h, w]` order.
pub fn chroma_targets(grids: &[ChromaGrid]) -> Vec<usize> {
    grids
        .iter()
        .flat_map(|g| g.cr.iter().chain(&g.cb).map(|&b| b as usize))
        .collect()
}

/// Orders sample indices by descending log-likelihood; ties keep the lower
/// index first.
pub fn rank_by_likelihood(scores: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = scores.to_vec();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn greedy_draw_takes_first_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(draw(&[0.0, 2.0, 2.0, 1.0], 0.0, &mut rng), 1);
    }

    #[test]
    fn input_encoding_uses_bin_centres() {
        let grid = ChromaGrid::new(1, 1, vec![16], vec![0]).unwrap();
        let t: Tensor<f64> = chroma_input(&[grid]).unwrap();
        assert_eq!(t.data(), &[132.0 / 128.0 - 1.0, 4.0 / 128.0 - 1.0]);
    }

    #[test]
    fn ranking_is_stable_on_ties() {
        let ranked = rank_by_likelihood(&[(2, -1.0), (0, -3.0), (1, -1.0)]);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 2, 0]);
    }
}
