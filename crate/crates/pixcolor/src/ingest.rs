//! Corpus loading: decode, center-crop, area-resize, colorness filter and
//! deterministic per-epoch shuffling.

use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use log::warn;
use pixcolor_core::color::{colorness, downsample_chroma, rgb_to_ycc, ChromaGrid, RgbImage, YccImage};
use pixcolor_core::model::ChromaExample;
use pixcolor_core::refine::RefineExample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::io::{list_pngs, load_png};

/// One training item: luminance, full-resolution color, and the quantized
/// low-resolution chroma grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub id: String,
    pub ycc: YccImage,
    pub grid: ChromaGrid,
}

impl Triple {
    pub fn gray(&self) -> &[f64] {
        &self.ycc.y
    }

    pub fn chroma_example(&self) -> ChromaExample {
        ChromaExample { width: self.ycc.width, height: self.ycc.height, gray: self.ycc.y.clone(), grid: self.grid.clone() }
    }

    pub fn refine_example(&self, chroma_side: usize) -> Result<RefineExample> {
        Ok(RefineExample::from_ycc(&self.ycc, chroma_side)?)
    }
}

/// Square crop, area resize to `side`, conversion, and the chroma grid.
pub fn prepare(img: &RgbImage, side: usize, chroma_side: usize) -> Result<(RgbImage, YccImage, ChromaGrid)> {
    let rgb = img.center_crop_square().resize_area(side, side)?;
    let ycc = rgb_to_ycc(&rgb);
    let low = downsample_chroma(&ycc, chroma_side)?;
    let grid = ChromaGrid::quantize(low.width, low.height, &low.cr, &low.cb)?;
    Ok((rgb, ycc, grid))
}

pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("PIXCOLOR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |cap| cap.min(available))
}

/// Decodes `paths` on worker threads and yields results in input order.
/// At most `depth` decoded images wait ahead of the consumer.
pub fn decode_ordered<F>(paths: &[PathBuf], depth: usize, mut consume: F)
where
    F: FnMut(&Path, Result<RgbImage>),
{
    let threads = worker_threads().min(paths.len()).max(1);
    std::thread::scope(|scope| {
        let mut receivers = Vec::new();
        for t in 0..threads {
            let (tx, rx) = sync_channel(depth.max(1));
            receivers.push(rx);
            scope.spawn(move || {
                for path in paths.iter().skip(t).step_by(threads) {
                    if tx.send(load_png(path)).is_err() {
                        break;
                    }
                }
            });
        }
        for (i, path) in paths.iter().enumerate() {
            let result = receivers[i % threads].recv().expect("decoder thread exited early");
            consume(path, result);
        }
    });
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub items: Vec<Triple>,
    pub unreadable: Vec<PathBuf>,
    /// Ids dropped by the colorness filter.
    pub achromatic: Vec<String>,
}

impl Dataset {
    /// Loads every PNG in `dir` (sorted by name).
    pub fn ingest(dir: &Path, config: &TrainConfig) -> Result<Self> {
        let paths = list_pngs(dir)?;
        let mut data = Self::default();
        let mut failure = None;
        decode_ordered(&paths, 8, |path, decoded| {
            if failure.is_some() {
                return;
            }
            let img = match decoded {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping unreadable {}: {e}", path.display());
                    data.unreadable.push(path.to_path_buf());
                    return;
                }
            };
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            match prepare(&img, config.image_side, config.chroma_side) {
                Ok((_, ycc, grid)) => {
                    if colorness(&ycc) < config.colorness_threshold {
                        data.achromatic.push(id);
                    } else {
                        data.items.push(Triple { id, ycc, grid });
                    }
                }
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if data.items.is_empty() {
            return Err(Error::Dataset(format!("no usable images in {}", dir.display())));
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item indices in the shuffled order of `epoch`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    /// Items of training step `step`: positions `step * batch ..` of the
    /// concatenated epoch orders, so any step can be reproduced on resume.
    pub fn batch(&self, seed: u64, step: u64, batch: usize) -> Vec<&Triple> {
        let n = self.items.len() as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (0..batch as u64)
            .map(|i| {
                let pos = step * batch as u64 + i;
                let epoch = pos / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    cached = Some((epoch, self.epoch_order(seed, epoch)));
                }
                let order = &cached.as_ref().expect("just filled").1;
                &self.items[order[(pos % n) as usize]]
            })
            .collect()
    }
}
