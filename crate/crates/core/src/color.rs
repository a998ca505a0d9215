//! Colour representations: full-range BT.601 YCbCr, 32-bin chroma
//! quantization, area resampling, CIELab, and the low-resolution chroma
//! recombination used to show how little colour detail an image needs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// float math for no_std builds; std shadows it with inherent methods
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{arg_err, shape_err, Result};
use crate::resample::bilinear_plane;

/// Number of discrete levels per chroma channel.
pub const CHROMA_BINS: usize = 32;
const BIN_WIDTH: f64 = 256.0 / CHROMA_BINS as f64;

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
/// Cr -> R gain, 1.402.
const CR_R: f64 = 2.0 * (1.0 - KR);
/// Cb -> B gain, 1.772.
const CB_B: f64 = 2.0 * (1.0 - KB);
const CB_G: f64 = CB_B * KB / KG;
const CR_G: f64 = CR_R * KR / KG;

/// 8-bit interleaved RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(shape_err(
                "rgb_image",
                format!("{}x{} needs {} bytes, got {}", width, height, width * height * 3, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Replicates a luminance plane into all three channels.
    pub fn from_gray(width: usize, height: usize, luma: &[f64]) -> Self {
        let data = luma.iter().flat_map(|&v| [to_u8(v); 3]).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// One channel as a float plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
    }

    /// Largest centred square.
    pub fn center_crop_square(&self) -> Self {
        let side = self.width.min(self.height);
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        Self::from_fn(side, side, |x, y| self.pixel(x0 + x, y0 + y))
    }

    /// Area-averaged resize of all three channels.
    pub fn resize_area(&self, width: usize, height: usize) -> Result<Self> {
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| area_resize(&self.channel(c), self.width, self.height, width, height))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(width * height * 3);
        for i in 0..width * height {
            for p in &planes {
                data.push(to_u8(p[i]));
            }
        }
        Ok(Self { width, height, data })
    }
}

/// Planar luminance and chroma on the `[0, 255]` scale.
#[derive(Clone, Debug, PartialEq)]
pub struct YccImage {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f64>,
    pub cb: Vec<f64>,
    pub cr: Vec<f64>,
}

impl YccImage {
    pub fn new(width: usize, height: usize, y: Vec<f64>, cb: Vec<f64>, cr: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if y.len() != n || cb.len() != n || cr.len() != n {
            return Err(shape_err("ycc_image", "planes must share the declared dimensions"));
        }
        Ok(Self { width, height, y, cb, cr })
    }
}

/// Low-resolution chroma as bin indices; Cr plane first, then Cb, matching
/// the order in which they are generated.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChromaGrid {
    pub width: usize,
    pub height: usize,
    pub cr: Vec<u8>,
    pub cb: Vec<u8>,
}

impl ChromaGrid {
    pub fn new(width: usize, height: usize, cr: Vec<u8>, cb: Vec<u8>) -> Result<Self> {
        if cr.len() != width * height || cb.len() != width * height {
            return Err(shape_err("chroma_grid", "plane length != width*height"));
        }
        if cr.iter().chain(&cb).any(|&b| b as usize >= CHROMA_BINS) {
            return Err(arg_err("chroma_grid", "bin index >= 32"));
        }
        Ok(Self { width, height, cr, cb })
    }

    pub fn filled(width: usize, height: usize, bin: u8) -> Self {
        let n = width * height;
        Self { width, height, cr: vec![bin; n], cb: vec![bin; n] }
    }

    pub fn quantize(width: usize, height: usize, cr: &[f64], cb: &[f64]) -> Result<Self> {
        Self::new(
            width,
            height,
            cr.iter().map(|&v| quantize_chroma(v)).collect(),
            cb.iter().map(|&v| quantize_chroma(v)).collect(),
        )
    }

    /// Subchannel planes as bin centres: `(cr, cb)`.
    pub fn dequantized(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.cr.iter().map(|&b| dequantize_chroma(b)).collect(),
            self.cb.iter().map(|&b| dequantize_chroma(b)).collect(),
        )
    }

    pub fn sites(&self) -> usize {
        self.width * self.height
    }
}

/// CIELab planes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Full-range BT.601 forward transform of one pixel, chroma clamped to
/// `[0, 255]`.
pub fn rgb_to_ycc_pixel([r, g, b]: [u8; 3]) -> [f64; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = KR * r + KG * g + KB * b;
    let cb = (128.0 + (b - y) / CB_B).clamp(0.0, 255.0);
    let cr = (128.0 + (r - y) / CR_R).clamp(0.0, 255.0);
    [y, cb, cr]
}

/// Inverse transform with per-channel clamping.
pub fn ycc_to_rgb_pixel(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let (dcb, dcr) = (cb - 128.0, cr - 128.0);
    [to_u8(y + CR_R * dcr), to_u8(y - CB_G * dcb - CR_G * dcr), to_u8(y + CB_B * dcb)]
}

/// Inverse transform that keeps luminance: chroma is pulled toward neutral
/// just far enough for every channel to fit in `[0, 255]`.
pub fn ycc_to_rgb_pixel_luma_preserving(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let y = y.clamp(0.0, 255.0);
    let (dcb, dcr) = (cb - 128.0, cr - 128.0);
    let gains = [CR_R * dcr, -CB_G * dcb - CR_G * dcr, CB_B * dcb];
    // slack absorbs rounding in in-gamut conversions
    const SLACK: f64 = 1e-9;
    let mut t: f64 = 1.0;
    for &k in &gains {
        if y + k > 255.0 + SLACK {
            t = t.min((255.0 - y) / k);
        } else if y + k < -SLACK {
            t = t.min(-y / k);
        }
    }
    let t = t.max(0.0);
    [to_u8(y + t * gains[0]), to_u8(y + t * gains[1]), to_u8(y + t * gains[2])]
}

pub fn rgb_to_ycc(img: &RgbImage) -> YccImage {
    let n = img.width * img.height;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let [a, b, c] = rgb_to_ycc_pixel([px[0], px[1], px[2]]);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    YccImage { width: img.width, height: img.height, y, cb, cr }
}

pub fn ycc_to_rgb(img: &YccImage) -> RgbImage {
    let data = (0..img.width * img.height)
        .flat_map(|i| ycc_to_rgb_pixel(img.y[i], img.cb[i], img.cr[i]))
        .collect();
    RgbImage { width: img.width, height: img.height, data }
}

pub fn ycc_to_rgb_luma_preserving(img: &YccImage) -> RgbImage {
    let data = (0..img.width * img.height)
        .flat_map(|i| ycc_to_rgb_pixel_luma_preserving(img.y[i], img.cb[i], img.cr[i]))
        .collect();
    RgbImage { width: img.width, height: img.height, data }
}

/// `floor(v / 8)`, clamped to the last bin.
pub fn quantize_chroma(v: f64) -> u8 {
    let b = (v / BIN_WIDTH).floor();
    b.clamp(0.0, (CHROMA_BINS - 1) as f64) as u8
}

/// Centre of bin `b`: `8 b + 4`.
pub fn dequantize_chroma(b: u8) -> f64 {
    BIN_WIDTH * b as f64 + BIN_WIDTH / 2.0
}

/// Overlap weights mapping `src` samples onto `dst` equal-width cells.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Box-filter resize: every output cell is the coverage-weighted mean of
/// the input samples it overlaps.
pub fn area_resize(plane: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Result<Vec<f64>> {
    if plane.len() != w * h {
        return Err(shape_err("area_resize", "plane length != w*h"));
    }
    if out_w == 0 || out_h == 0 || w == 0 || h == 0 {
        return Err(arg_err("area_resize", "zero extent"));
    }
    let xw = area_weights(w, out_w);
    let yw = area_weights(h, out_h);
    let mut rows = vec![0.0; h * out_w];
    for y in 0..h {
        for (ox, taps) in xw.iter().enumerate() {
            rows[y * out_w + ox] = taps.iter().map(|&(i, wt)| plane[y * w + i] * wt).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (oy, taps) in yw.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = taps.iter().map(|&(i, wt)| rows[i * out_w + ox] * wt).sum();
        }
    }
    Ok(out)
}

/// Output extents whose shorter side equals `small_side`, aspect preserved.
pub fn small_side_dims(width: usize, height: usize, small_side: usize) -> Result<(usize, usize)> {
    if small_side == 0 {
        return Err(arg_err("downsample_chroma", "target side must be > 0"));
    }
    if small_side > width.min(height) {
        return Err(arg_err(
            "downsample_chroma",
            format!("target {} exceeds smallest side of {}x{}", small_side, width, height),
        ));
    }
    let scale = |long: usize, short: usize| -> usize {
        (((long * small_side) as f64 / short as f64).round() as usize).max(small_side)
    };
    Ok(if width <= height {
        (small_side, scale(height, width))
    } else {
        (scale(width, height), small_side)
    })
}

/// Low-resolution chroma planes.
#[derive(Clone, Debug, PartialEq)]
pub struct LowChroma {
    pub width: usize,
    pub height: usize,
    pub cb: Vec<f64>,
    pub cr: Vec<f64>,
}

/// Area-averages both chroma planes so the shorter side is `small_side`.
pub fn downsample_chroma(img: &YccImage, small_side: usize) -> Result<LowChroma> {
    let (w, h) = small_side_dims(img.width, img.height, small_side)?;
    Ok(LowChroma {
        width: w,
        height: h,
        cb: area_resize(&img.cb, img.width, img.height, w, h)?,
        cr: area_resize(&img.cr, img.width, img.height, w, h)?,
    })
}

/// Replaces the chroma of `img` with its `small_side` downsample,
/// bilinearly upsampled back, keeping the original luminance.
pub fn chroma_bottleneck(img: &RgbImage, small_side: usize) -> Result<RgbImage> {
    let ycc = rgb_to_ycc(img);
    let low = downsample_chroma(&ycc, small_side)?;
    let cb = bilinear_plane(&low.cb, low.height, low.width, img.height, img.width);
    let cr = bilinear_plane(&low.cr, low.height, low.width, img.height, img.width);
    let merged = YccImage { width: img.width, height: img.height, y: ycc.y, cb, cr };
    Ok(ycc_to_rgb_luma_preserving(&merged))
}

/// The grayscale rendering of an image (luminance in every channel).
pub fn gray_replication(img: &RgbImage) -> RgbImage {
    let ycc = rgb_to_ycc(img);
    RgbImage::from_gray(img.width, img.height, &ycc.y)
}

// sRGB primaries with a D65 white; the white point is the row sums so that
// (255, 255, 255) maps to a = b = 0.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

pub fn srgb_to_lab_pixel(px: [u8; 3]) -> [f64; 3] {
    let lin = px.map(|c| srgb_to_linear(c as f64 / 255.0));
    if px[0] == px[1] && px[1] == px[2] {
        // Neutrals sit exactly on the L axis; the matrix path leaves ~1e-15 residue.
        return [116.0 * lab_f(lin[0]) - 16.0, 0.0, 0.0];
    }
    let mut f = [0.0; 3];
    for (k, row) in RGB_TO_XYZ.iter().enumerate() {
        let white: f64 = row.iter().sum();
        let v: f64 = row.iter().zip(&lin).map(|(m, c)| m * c).sum();
        f[k] = lab_f(v / white);
    }
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.width * img.height;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.data.chunks_exact(3) {
        let [x, y, z] = srgb_to_lab_pixel([px[0], px[1], px[2]]);
        l.push(x);
        a.push(y);
        b.push(z);
    }
    LabImage { width: img.width, height: img.height, l, a, b }
}

/// Peak signal-to-noise ratio over all RGB samples, in dB (infinite for
/// identical images).
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(shape_err("psnr", "image dimensions differ"));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0 * 255.0 / mse).log10() })
}


/// Mean over pixels of `max(|Cb-128|, |Cr-128|) / 128`.
pub fn colorness(img: &YccImage) -> f64 {
    if img.cb.is_empty() {
        return 0.0;
    }
    let total: f64 = img
        .cb
        .iter()
        .zip(&img.cr)
        .map(|(&cb, &cr)| (cb - 128.0).abs().max((cr - 128.0).abs()) / 128.0)
        .sum();
    total / img.cb.len() as f64
}
