//! Colorizing PNG files with trained checkpoints.

use std::path::{Path, PathBuf};

use pixcolor_core::color::{rgb_to_ycc, RgbImage};
use pixcolor_core::model::{Colorization, Colorizer};
use pixcolor_core::pixelcnn::rank_by_likelihood;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::ingest::worker_threads;
use crate::io::{load_png, save_png};
use crate::train::{ChromaStage, RefineStage};

pub struct Models {
    pub chroma: ChromaStage,
    pub refine: RefineStage,
}

impl Models {
    pub fn load(pixelcnn: &Path, refine: &Path) -> Result<Self> {
        Ok(Self {
            chroma: ChromaStage::from_checkpoint(&Checkpoint::load(pixelcnn)?)?,
            refine: RefineStage::from_checkpoint(&Checkpoint::load(refine)?)?,
        })
    }

    fn colorizer(&self) -> Colorizer<'_, f32> {
        Colorizer {
            chroma: &self.chroma.model,
            chroma_params: &self.chroma.store,
            refiner: &self.refine.net,
            refine_params: &self.refine.store,
        }
    }
}

/// Edge-replicating pad of a plane to `pw x ph`.
fn pad_plane(src: &[f64], w: usize, h: usize, pw: usize, ph: usize) -> Vec<f64> {
    (0..pw * ph).map(|i| src[(i / pw).min(h - 1) * w + (i % pw).min(w - 1)]).collect()
}

fn crop(img: &RgbImage, w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| img.pixel(x, y))
}

/// Colorizes one image for every seed. Sides that are not multiples of 8
/// are padded for the networks and cropped back afterwards. Seeds run on
/// up to `PIXCOLOR_THREADS` threads; results come back in seed order.
pub fn colorize_image(models: &Models, img: &RgbImage, seeds: &[u64], temperature: f64) -> Result<Vec<Colorization>> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::Invalid("empty image".into()));
    }
    let (pw, ph) = (w.next_multiple_of(8), h.next_multiple_of(8));
    let gray = pad_plane(&rgb_to_ycc(img).y, w, h, pw, ph);
    let colorizer = models.colorizer();
    let features = colorizer.features(&gray, pw, ph)?;
    let threads = worker_threads().min(seeds.len()).max(1);
    let mut slots: Vec<Option<Result<Colorization>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = seeds.len().div_ceil(threads).max(1);
        for (seed_chunk, slot_chunk) in seeds.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let (colorizer, gray, features) = (&colorizer, &gray, &features);
            scope.spawn(move || {
                for (&seed, slot) in seed_chunk.iter().zip(slot_chunk) {
                    *slot = Some(colorizer.colorize_one(gray, pw, ph, features, seed, temperature).map_err(Error::from));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            let mut c = s.expect("every seed is processed")?;
            if (pw, ph) != (w, h) {
                c.refined = crop(&c.refined, w, h);
                c.unrefined = crop(&c.unrefined, w, h);
            }
            Ok(c)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodRow {
    pub image: String,
    pub seed: u64,
    pub log_likelihood: f64,
    /// 1 for the most likely sample of the image.
    pub rank: usize,
}

/// Writes `<stem>_seed<k>.png`, `debug/<stem>/unrefined_seed<k>.png` and
/// `likelihoods.csv` into `out`.
pub fn colorize_files(models: &Models, inputs: &[PathBuf], seeds: &[u64], temperature: f64, out: &Path) -> Result<Vec<LikelihoodRow>> {
    if seeds.is_empty() {
        return Err(Error::Invalid("at least one seed is required".into()));
    }
    std::fs::create_dir_all(out).map_err(crate::error::file_err(out))?;
    let mut rows = Vec::new();
    for path in inputs {
        if !path.exists() {
            return Err(Error::Missing { what: "input image", path: path.clone() });
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let img = load_png(path)?;
        let results = colorize_image(models, &img, seeds, temperature)?;
        for c in &results {
            save_png(&out.join(format!("{stem}_seed{}.png", c.seed)), &c.refined)?;
            save_png(&out.join("debug").join(&stem).join(format!("unrefined_seed{}.png", c.seed)), &c.unrefined)?;
        }
        let scores: Vec<(usize, f64)> = results.iter().map(|c| c.log_likelihood).enumerate().collect();
        for (rank, (i, ll)) in rank_by_likelihood(&scores).into_iter().enumerate() {
            rows.push(LikelihoodRow { image: stem.clone(), seed: results[i].seed, log_likelihood: ll, rank: rank + 1 });
        }
    }
    let mut w = csv::Writer::from_path(out.join("likelihoods.csv"))?;
    w.write_record(["image", "seed", "log_likelihood", "rank"])?;
    for r in &rows {
        w.write_record([r.image.clone(), r.seed.to_string(), format!("{:.6}", r.log_likelihood), r.rank.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}
