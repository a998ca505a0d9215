//! Procedural scene generator for a small local training corpus.
//!
//! Each scene is a sky over grass or sand with a few foreground objects.
//! Object classes carry distinctive luminance textures so chroma is partly
//! predictable from the gray image, and per-object hue jitter keeps the
//! chroma distribution multimodal.

use std::path::{Path, PathBuf};

use pixcolor_core::color::{ycc_to_rgb_pixel, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::io::save_png;

#[derive(Clone, Copy, Debug)]
struct Material {
    y: f64,
    cb: f64,
    cr: f64,
    /// Amplitude of per-pixel luminance noise.
    grain: f64,
    /// Period of horizontal luminance stripes, 0 for none.
    stripes: usize,
}

const SKY: Material = Material { y: 170.0, cb: 168.0, cr: 108.0, grain: 0.0, stripes: 0 };
const GRASS: Material = Material { y: 105.0, cb: 95.0, cr: 100.0, grain: 22.0, stripes: 0 };
const SAND: Material = Material { y: 185.0, cb: 100.0, cr: 150.0, grain: 4.0, stripes: 0 };
const FRUIT: Material = Material { y: 110.0, cb: 90.0, cr: 195.0, grain: 0.0, stripes: 0 };
const BRICK: Material = Material { y: 90.0, cb: 110.0, cr: 170.0, grain: 6.0, stripes: 4 };
const LEAF: Material = Material { y: 70.0, cb: 110.0, cr: 90.0, grain: 12.0, stripes: 0 };

enum Shape {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }

    /// Radial shading for discs, flat for rectangles.
    fn shade(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Disc { cx, cy, r } => {
                let d = ((x - cx + 0.3 * r).powi(2) + (y - cy + 0.3 * r).powi(2)).sqrt() / r;
                40.0 * (0.6 - d)
            }
            Shape::Rect { .. } => 0.0,
        }
    }
}

fn jitter(m: Material, rng: &mut ChaCha8Rng) -> Material {
    Material {
        y: m.y + rng.random_range(-15.0..15.0),
        cb: m.cb + rng.random_range(-14.0..14.0),
        cr: m.cr + rng.random_range(-14.0..14.0),
        ..m
    }
}

/// One scene, fully determined by `rng`.
pub fn scene(width: usize, height: usize, rng: &mut ChaCha8Rng, gray: bool) -> RgbImage {
    let (w, h) = (width as f64, height as f64);
    let horizon = h * rng.random_range(0.3..0.6);
    let sky = jitter(SKY, rng);
    let ground = jitter(if rng.random_bool(0.5) { GRASS } else { SAND }, rng);
    let count = rng.random_range(1..=3);
    let objects: Vec<(Shape, Material)> = (0..count)
        .map(|_| {
            let kind = rng.random_range(0..3);
            let material = jitter([FRUIT, BRICK, LEAF][kind], rng);
            let shape = if kind == 1 {
                let x0 = rng.random_range(0.0..0.7) * w;
                let y0 = rng.random_range(0.2..0.7) * h;
                Shape::Rect { x0, y0, x1: x0 + rng.random_range(0.2..0.4) * w, y1: y0 + rng.random_range(0.2..0.4) * h }
            } else {
                Shape::Disc { cx: rng.random_range(0.15..0.85) * w, cy: rng.random_range(0.3..0.85) * h, r: rng.random_range(0.08..0.2) * w.min(h) }
            };
            (shape, material)
        })
        .collect();
    let noise: Vec<f64> = (0..width * height).map(|_| rng.random_range(-1.0..1.0)).collect();
    RgbImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut material = if fy < horizon { sky } else { ground };
        let mut luma = material.y;
        if fy < horizon {
            luma += 30.0 * (fy / horizon - 0.5);
        }
        for (shape, m) in &objects {
            if shape.contains(fx, fy) {
                material = *m;
                luma = m.y + shape.shade(fx, fy);
            }
        }
        luma += material.grain * noise[y * width + x];
        if material.stripes > 0 && (y / material.stripes) % 2 == 0 {
            luma -= 25.0;
        }
        if gray {
            ycc_to_rgb_pixel(luma, 128.0, 128.0)
        } else {
            ycc_to_rgb_pixel(luma, material.cb, material.cr)
        }
    })
}

/// Generates `count` scenes; the first `gray_count` are achromatic.
pub fn generate(count: usize, gray_count: usize, width: usize, height: usize, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            scene(width, height, &mut rng, i < gray_count)
        })
        .collect()
}

/// Writes `scene_0000.png`, `scene_0001.png`, ... into `dir`.
pub fn write_corpus(dir: &Path, images: &[RgbImage]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let path = dir.join(format!("scene_{i:04}.png"));
            save_png(&path, img)?;
            Ok(path)
        })
        .collect()
}
