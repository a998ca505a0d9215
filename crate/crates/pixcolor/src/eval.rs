//! Evaluation artifacts: Lab histogram CSVs, pairwise MS-SSIM diversity
//! CSVs, the chroma bottleneck demo and the rating manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use pixcolor_core::color::{
    chroma_bottleneck, downsample_chroma, gray_replication, psnr, rgb_to_ycc, ycc_to_rgb, RgbImage, YccImage,
};
use pixcolor_core::metrics::{diversity_report, histogram_intersection, lab_channel_histogram, DiversityReport, Histogram, LabChannel, LAB_BINS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{file_err, Error, Result};
use crate::io::{list_pngs, load_png, save_png};

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn load_all(dir: &Path) -> Result<Vec<RgbImage>> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::Missing { what: "PNG images", path: dir.to_path_buf() });
    }
    paths.iter().map(|p| load_png(p)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelComparison {
    pub channel: LabChannel,
    pub reference: Histogram,
    pub generated: Histogram,
    pub intersection: f64,
}

pub fn compare_histograms(reference: &[RgbImage], generated: &[RgbImage]) -> Result<Vec<ChannelComparison>> {
    [LabChannel::A, LabChannel::B]
        .into_iter()
        .map(|channel| {
            let r = lab_channel_histogram(reference, channel, LAB_BINS)?;
            let g = lab_channel_histogram(generated, channel, LAB_BINS)?;
            let intersection = histogram_intersection(&r, &g)?;
            Ok(ChannelComparison { channel, reference: r, generated: g, intersection })
        })
        .collect()
}

fn channel_name(c: LabChannel) -> &'static str {
    match c {
        LabChannel::A => "a",
        LabChannel::B => "b",
    }
}

/// Writes `histograms.csv` (per-bin masses) and `intersection.csv`.
pub fn write_histogram_report(out: &Path, comparisons: &[ChannelComparison]) -> Result<()> {
    let mut w = csv_writer(&out.join("histograms.csv"))?;
    w.write_record(["channel", "bin_lo", "bin_hi", "reference", "generated"])?;
    for c in comparisons {
        let edges = c.reference.edges();
        for (i, (r, g)) in c.reference.mass().iter().zip(c.generated.mass()).enumerate() {
            w.write_record([
                channel_name(c.channel).to_string(),
                format!("{}", edges[i]),
                format!("{}", edges[i + 1]),
                format!("{r:.9}"),
                format!("{g:.9}"),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("intersection.csv"))?;
    w.write_record(["channel", "intersection"])?;
    for c in comparisons {
        w.write_record([channel_name(c.channel).to_string(), format!("{:.9}", c.intersection)])?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram comparison of two directories of PNGs.
pub fn eval_hist(reference_dir: &Path, generated_dir: &Path, out: &Path) -> Result<Vec<ChannelComparison>> {
    let reference = load_all(reference_dir)?;
    let generated = load_all(generated_dir)?;
    let comparisons = compare_histograms(&reference, &generated)?;
    write_histogram_report(out, &comparisons)?;
    Ok(comparisons)
}

/// Splits `<stem>_seed<k>` into `(stem, k)`.
pub fn parse_sample_name(name: &str) -> Option<(&str, u64)> {
    let (stem, seed) = name.rsplit_once("_seed")?;
    Some((stem, seed.parse().ok()?))
}

/// Groups `<stem>_seed<k>.png` files in `dir` by stem, samples ordered by seed.
pub fn group_samples(dir: &Path) -> Result<BTreeMap<String, Vec<(u64, PathBuf)>>> {
    let mut groups: BTreeMap<String, Vec<(u64, PathBuf)>> = BTreeMap::new();
    for path in list_pngs(dir)? {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some((stem, seed)) = parse_sample_name(&name) {
            groups.entry(stem.to_string()).or_default().push((seed, path));
        }
    }
    for samples in groups.values_mut() {
        samples.sort();
    }
    Ok(groups)
}

/// Writes `diversity.csv` (per-image pair statistics) and
/// `diversity_histogram.csv` (pooled pair scores).
pub fn write_diversity_report(out: &Path, ids: &[String], report: &DiversityReport) -> Result<()> {
    let mut w = csv_writer(&out.join("diversity.csv"))?;
    w.write_record(["image", "pairs", "min", "mean", "max"])?;
    for (id, stats) in ids.iter().zip(&report.per_image) {
        w.write_record([
            id.clone(),
            stats.scores.len().to_string(),
            format!("{:.9}", stats.min),
            format!("{:.9}", stats.mean),
            format!("{:.9}", stats.max),
        ])?;
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("diversity_histogram.csv"))?;
    w.write_record(["bin_lo", "bin_hi", "mass"])?;
    let edges = report.pooled.edges();
    for (i, m) in report.pooled.mass().iter().enumerate() {
        w.write_record([format!("{}", edges[i]), format!("{}", edges[i + 1]), format!("{m:.9}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval_diversity(samples_dir: &Path, out: &Path) -> Result<(Vec<String>, DiversityReport)> {
    let groups = group_samples(samples_dir)?;
    if groups.is_empty() {
        return Err(Error::Missing { what: "`<stem>_seed<k>.png` samples", path: samples_dir.to_path_buf() });
    }
    let ids: Vec<String> = groups.keys().cloned().collect();
    let images = groups
        .values()
        .map(|s| s.iter().map(|(_, p)| load_png(p)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let report = diversity_report(&images)?;
    write_diversity_report(out, &ids, &report)?;
    Ok((ids, report))
}

/// Original, low-resolution chroma (shown at mid luminance, nearest
/// neighbour upsampled) and the recombined bottleneck image, stacked.
pub fn bottleneck_triplet(img: &RgbImage, small_side: usize) -> Result<(RgbImage, RgbImage)> {
    let (w, h) = (img.width(), img.height());
    let ycc = rgb_to_ycc(img);
    let low = downsample_chroma(&ycc, small_side)?;
    let nearest = |plane: &[f64]| -> Vec<f64> {
        (0..w * h)
            .map(|i| plane[(i / w) * low.height / h * low.width + (i % w) * low.width / w])
            .collect()
    };
    let chroma = ycc_to_rgb(&YccImage::new(w, h, vec![128.0; w * h], nearest(&low.cb), nearest(&low.cr))?);
    let merged = chroma_bottleneck(img, small_side)?;
    let mut data = img.data().to_vec();
    data.extend_from_slice(chroma.data());
    data.extend_from_slice(merged.data());
    Ok((RgbImage::new(w, 3 * h, data)?, merged))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckRow {
    pub id: String,
    pub psnr_bottleneck: f64,
    pub psnr_gray: f64,
}

/// Writes `<stem>_triplet.png` and `<stem>_bottleneck.png` per input and
/// `bottleneck.csv` with both PSNRs.
pub fn bottleneck_demo(inputs: &[PathBuf], small_side: usize, out: &Path) -> Result<Vec<BottleneckRow>> {
    let mut rows = Vec::new();
    for path in inputs {
        let img = load_png(path)?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (triplet, merged) = bottleneck_triplet(&img, small_side)?;
        save_png(&out.join(format!("{id}_triplet.png")), &triplet)?;
        save_png(&out.join(format!("{id}_bottleneck.png")), &merged)?;
        rows.push(BottleneckRow {
            psnr_bottleneck: psnr(&img, &merged)?,
            psnr_gray: psnr(&img, &gray_replication(&img))?,
            id,
        });
    }
    let mut w = csv_writer(&out.join("bottleneck.csv"))?;
    w.write_record(["image", "psnr_bottleneck", "psnr_gray"])?;
    for r in &rows {
        w.write_record([r.id.clone(), format!("{:.6}", r.psnr_bottleneck), format!("{:.6}", r.psnr_gray)])?;
    }
    w.flush()?;
    Ok(rows)
}

pub const DISPLAY_SECONDS: u32 = 1;
pub const RATERS: u32 = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VttEntry {
    pub id: String,
    pub path_a: String,
    pub path_b: String,
    pub gt_is_a: bool,
    pub display_seconds: u32,
    pub raters: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VttManifest {
    /// In presentation order.
    pub entries: Vec<VttEntry>,
    pub unmatched: Vec<String>,
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Pairs each ground-truth image with a generated one: `<stem>.png` if
/// present, otherwise the lowest-seed `<stem>_seed<k>.png`. Paths are
/// written as the directory argument joined with the file name.
pub fn build_vtt_manifest(generated_dir: &Path, groundtruth_dir: &Path, seed: u64) -> Result<VttManifest> {
    let mut generated: BTreeMap<String, (u64, PathBuf)> = BTreeMap::new();
    for path in list_pngs(generated_dir)? {
        let name = stem_of(&path);
        let (stem, rank) = match parse_sample_name(&name) {
            Some((stem, k)) => (stem.to_string(), k.saturating_add(1)),
            None => (name, 0),
        };
        let slot = generated.entry(stem).or_insert((u64::MAX, PathBuf::new()));
        if rank < slot.0 {
            *slot = (rank, path);
        }
    }
    let mut manifest = VttManifest::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for gt in list_pngs(groundtruth_dir)? {
        let id = stem_of(&gt);
        let Some((_, gen)) = generated.get(&id) else {
            manifest.unmatched.push(id);
            continue;
        };
        let gt_is_a = rng.random_bool(0.5);
        let (gt, gen) = (gt.display().to_string(), gen.display().to_string());
        let (path_a, path_b) = if gt_is_a { (gt, gen) } else { (gen, gt) };
        manifest.entries.push(VttEntry { id, path_a, path_b, gt_is_a, display_seconds: DISPLAY_SECONDS, raters: RATERS });
    }
    if !manifest.unmatched.is_empty() {
        warn!("skipped {} ground-truth images without a generated match: {}", manifest.unmatched.len(), manifest.unmatched.join(", "));
    }
    manifest.entries.shuffle(&mut rng);
    Ok(manifest)
}

pub fn write_vtt_manifest(path: &Path, manifest: &VttManifest) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(file_err(path))?);
    for e in &manifest.entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_names() {
        assert_eq!(parse_sample_name("cat_seed12"), Some(("cat", 12)));
        assert_eq!(parse_sample_name("my_seedling_seed3"), Some(("my_seedling", 3)));
        assert_eq!(parse_sample_name("cat"), None);
        assert_eq!(parse_sample_name("cat_seedx"), None);
    }
}
