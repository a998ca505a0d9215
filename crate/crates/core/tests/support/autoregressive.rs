//! Oracles for the autoregressive chroma model: perturbation causality and
//! a chi-square uniformity test.

use pixcolor_core::color::{ChromaGrid, CHROMA_BINS};
use pixcolor_core::pixelcnn::{site_logits, PixelCnn, PixelCnnConfig, SUBCHANNELS};
use pixcolor_core::{truncated_normal, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn tiny_config() -> PixelCnnConfig {
    PixelCnnConfig { hidden_channels: 8, gated_blocks: 2, head_channels: 16, feature_channels: 4, init_stddev: 0.3 }
}

/// A small model whose logit layer is random instead of zero, so every
/// output actually varies with its inputs.
pub fn random_model(seed: u64) -> (ParamStore<f64>, PixelCnn<f64>) {
    random_model_with(tiny_config(), seed)
}

pub fn random_model_with(config: PixelCnnConfig, seed: u64) -> (ParamStore<f64>, PixelCnn<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = PixelCnn::new(&mut store, config, &mut rng).unwrap();
    let id = store.id("pixelcnn.head_logits.weight").unwrap();
    let shape = store.value(id).shape().to_vec();
    let w = truncated_normal(shape, 0.3, &mut rng).unwrap();
    store.set_value("pixelcnn.head_logits.weight", w).unwrap();
    (store, model)
}

pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ChromaGrid {
    let mut draw = || (0..w * h).map(|_| rng.random_range(0..CHROMA_BINS as u8)).collect::<Vec<u8>>();
    let cr = draw();
    let cb = draw();
    ChromaGrid::new(w, h, cr, cb).unwrap()
}

pub fn random_cond(rng: &mut ChaCha8Rng, f: usize, w: usize, h: usize) -> Tensor<f64> {
    Tensor::from_fn([1, f, h, w], |_| rng.random_range(-1.0..1.0))
}

/// Generation-order index of subpixel `sub` at raster `site`.
pub fn position(site: usize, sub: usize) -> usize {
    site * SUBCHANNELS + sub
}

fn all_rows(logits: &Tensor<f64>, sites: usize) -> Vec<Vec<f64>> {
    (0..sites).flat_map(|site| (0..SUBCHANNELS).map(move |sub| (site, sub))).map(|(site, sub)| site_logits(logits, 0, sub, site)).collect()
}

#[derive(Debug, Default)]
pub struct CausalityReport {
    /// Perturbations checked (one per subpixel).
    pub perturbations: usize,
    /// Outputs at or before the perturbed position that changed at all.
    pub violations: usize,
    /// Perturbations that changed at least one later output.
    pub influential: usize,
}

/// Changes each input subpixel in turn and requires every output at or
/// before it in generation order to stay bit-identical.
pub fn check_causality(store: &ParamStore<f64>, model: &PixelCnn<f64>, grid: &ChromaGrid, cond: &Tensor<f64>) -> CausalityReport {
    let sites = grid.sites();
    let base = all_rows(&model.logits(store, std::slice::from_ref(grid), cond).unwrap(), sites);
    let mut report = CausalityReport::default();
    for site in 0..sites {
        for sub in 0..SUBCHANNELS {
            let mut g = grid.clone();
            let plane = if sub == 0 { &mut g.cr } else { &mut g.cb };
            plane[site] = (plane[site] + 13) % CHROMA_BINS as u8;
            let rows = all_rows(&model.logits(store, std::slice::from_ref(&g), cond).unwrap(), sites);
            let p = position(site, sub);
            report.perturbations += 1;
            for (q, (a, b)) in base.iter().zip(&rows).enumerate() {
                let same = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
                if q <= p && !same {
                    report.violations += 1;
                }
            }
            if base.iter().zip(&rows).skip(p + 1).any(|(a, b)| a != b) {
                report.influential += 1;
            }
        }
    }
    report
}

/// Pearson chi-square p-value of `counts` against the uniform distribution.
pub fn uniform_p_value(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}
