//! Evaluation metrics: Lab marginal histograms, histogram intersection,
//! MS-SSIM and pairwise sample diversity.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::color::{rgb_to_lab, RgbImage};
use crate::error::{arg_err, shape_err, Result};

pub const LAB_RANGE: (f64, f64) = (-110.0, 110.0);
pub const LAB_BINS: usize = 110;

/// Uniform-bin normalized histogram over `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    mass: Vec<f64>,
}

impl Histogram {
    /// Values outside the range are clamped into the edge bins.
    pub fn from_values(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(arg_err("histogram", "need bins > 0 and hi > lo"));
        }
        let mut counts = vec![0u64; bins];
        let mut n = 0u64;
        for v in values {
            counts[Self::bin_of(v, lo, hi, bins)] += 1;
            n += 1;
        }
        if n == 0 {
            return Err(arg_err("histogram", "no values"));
        }
        let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Self { lo, hi, mass })
    }

    fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(bins - 1)
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    /// `bins + 1` edges.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.mass.len();
        (0..=n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64).collect()
    }

    pub fn bin_of_value(&self, v: f64) -> usize {
        Self::bin_of(v, self.lo, self.hi, self.mass.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabChannel {
    A,
    B,
}

/// Pooled per-pixel histogram of one Lab chroma channel over `[-110, 110]`.
pub fn lab_channel_histogram(images: &[RgbImage], channel: LabChannel, bins: usize) -> Result<Histogram> {
    if images.is_empty() {
        return Err(arg_err("lab_channel_histogram", "empty image set"));
    }
    let mut values = Vec::new();
    for img in images {
        let lab = rgb_to_lab(img);
        values.extend_from_slice(match channel {
            LabChannel::A => &lab.a,
            LabChannel::B => &lab.b,
        });
    }
    Histogram::from_values(values, LAB_RANGE.0, LAB_RANGE.1, bins)
}

/// Sum of elementwise minima; the histograms must share bin edges.
pub fn histogram_intersection(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.lo != h2.lo || h1.hi != h2.hi || h1.mass.len() != h2.mass.len() {
        return Err(shape_err("histogram_intersection", "bin edges differ"));
    }
    Ok(h1.mass.iter().zip(&h2.mass).map(|(a, b)| a.min(*b)).sum())
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Smallest image side accepted for a given scale count.
pub fn ms_ssim_min_side(scales: usize) -> usize {
    match scales {
        0..=3 => 32,
        _ => 128,
    }
}

/// MS-SSIM with 5 scales from 128px up and 3 scales otherwise.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let side = a.width().min(a.height());
    let scales = if side >= ms_ssim_min_side(5) { 5 } else { 3 };
    ms_ssim_scales(a, b, scales)
}

/// Per-channel MS-SSIM averaged over R, G, B.
pub fn ms_ssim_scales(a: &RgbImage, b: &RgbImage, scales: usize) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(shape_err("ms_ssim", "image dimensions differ"));
    }
    if !(1..=SCALE_WEIGHTS.len()).contains(&scales) {
        return Err(arg_err("ms_ssim", "scale count must be in 1..=5"));
    }
    if a.width().min(a.height()) < ms_ssim_min_side(scales) {
        return Err(arg_err("ms_ssim", "image too small for scale count"));
    }
    let weights = &SCALE_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let mut per_channel: Vec<f64> = (0..3)
        .map(|c| channel_ms_ssim(a.channel(c), b.channel(c), a.width(), a.height(), weights, total))
        .collect();
    // Summation order fixed by value so that channel order cannot matter.
    per_channel.sort_by(f64::total_cmp);
    Ok(per_channel.iter().sum::<f64>() / 3.0)
}

fn channel_ms_ssim(mut x: Vec<f64>, mut y: Vec<f64>, mut w: usize, mut h: usize, weights: &[f64], total: f64) -> f64 {
    let kernel = gaussian_kernel();
    let mut score = 1.0;
    for (i, &weight) in weights.iter().enumerate() {
        let (l, cs) = ssim_terms(&x, &y, w, h, &kernel);
        let last = i + 1 == weights.len();
        let term = if last { l * cs } else { cs };
        score *= term.max(0.0).powf(weight / total);
        if !last {
            x = halve(&x, w, h);
            y = halve(&y, w, h);
            w /= 2;
            h /= 2;
        }
    }
    score
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    k
}

/// Same-size separable Gaussian blur; taps falling outside the image are
/// dropped and the remaining weights renormalized.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = WINDOW / 2;
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            for i in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (t, &kv) in k.iter().enumerate() {
                    let j = i as isize + t as isize - r as isize;
                    if j >= 0 && (j as usize) < len {
                        acc += kv * src[line * line_stride + j as usize * stride];
                        norm += kv;
                    }
                }
                out[line * line_stride + i * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(src, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

/// Mean luminance term and mean contrast-structure term.
fn ssim_terms(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = (K1 * 255.0) * (K1 * 255.0);
    let c2 = (K2 * 255.0) * (K2 * 255.0);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (blur(x, w, h, k), blur(y, w, h, k));
    let (exx, eyy, exy) = (blur(&xx, w, h, k), blur(&yy, w, h, k), blur(&xy, w, h, k));
    let (mut l_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..x.len() {
        let vx = exx[i] - mx[i] * mx[i];
        let vy = eyy[i] - my[i] * my[i];
        let cov = exy[i] - mx[i] * my[i];
        l_sum += (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        cs_sum += (2.0 * cov + c2) / (vx + vy + c2);
    }
    let n = x.len() as f64;
    (l_sum / n, cs_sum / n)
}

/// 2×2 average pooling, dropping an odd trailing row or column.
fn halve(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push((src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) / 4.0);
        }
    }
    out
}

/// MS-SSIM for every unordered pair `(i, j)`, `i < j`, in lexicographic order.
pub fn pairwise_ms_ssim(samples: &[RgbImage]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(arg_err("diversity", "need at least 2 samples per image"));
    }
    let mut out = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            out.push(ms_ssim(&samples[i], &samples[j])?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairStats {
    pub scores: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl PairStats {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(arg_err("diversity", "no pairs"));
        }
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self { scores, min, mean, max })
    }
}

pub const DIVERSITY_BINS: usize = 20;

/// Per-image pair statistics plus the pooled histogram of all pair scores
/// over `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityReport {
    pub per_image: Vec<PairStats>,
    pub pooled: Histogram,
}

pub fn diversity_report(samples_per_image: &[Vec<RgbImage>]) -> Result<DiversityReport> {
    let per_image = samples_per_image
        .iter()
        .map(|s| PairStats::new(pairwise_ms_ssim(s)?))
        .collect::<Result<Vec<_>>>()?;
    let pooled = Histogram::from_values(per_image.iter().flat_map(|p| p.scores.iter().copied()), 0.0, 1.0, DIVERSITY_BINS)?;
    Ok(DiversityReport { per_image, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssim_kernel_is_symmetric() {
        let k = gaussian_kernel();
        for i in 0..WINDOW {
            assert_eq!(k[i], k[WINDOW - 1 - i]);
        }
        assert_eq!(k[WINDOW / 2], 1.0);
    }

    #[test]
    fn blur_keeps_constants() {
        let src = vec![7.0; 9 * 5];
        for v in blur(&src, 9, 5, &gaussian_kernel()) {
            assert!((v - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upper_edge_lands_in_last_bin() {
        let h = Histogram::from_values([1.0, 0.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.mass(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(h.edges().len(), 5);
    }
}
