//! Command-line definition and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::checkpoint::Checkpoint;
use crate::colorize::{colorize_files, Models};
use crate::config::{ModelScale, TrainConfig};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::train::{train_pixelcnn, train_refine, ChromaStage, CheckpointPolicy, LossLog, RefineStage};
use crate::{corpus, eval};

#[derive(Debug, Parser)]
#[command(name = "pixcolor", version, about = "Two-stage autoregressive image colorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the conditioning network and PixelCNN jointly.
    TrainPixelcnn(TrainArgs),
    /// Train the refinement network on ground-truth low-resolution chroma.
    TrainRefine(TrainArgs),
    /// Colorize grayscale or color PNGs (color is discarded).
    Colorize(ColorizeArgs),
    /// Compare Lab a/b histograms of generated and reference images.
    EvalHist(EvalHistArgs),
    /// Pairwise MS-SSIM between samples of the same image.
    EvalDiversity(EvalDiversityArgs),
    /// Recombine low-resolution true chroma with full-resolution luminance.
    BottleneckDemo(BottleneckArgs),
    /// Write a JSON-lines manifest for a two-alternative rating study.
    ExportVtt(ExportVttArgs),
    /// Generate a synthetic PNG corpus.
    MakeCorpus(MakeCorpusArgs),
}

/// Training options. Flags override keys from `--config`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training PNGs.
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` config file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the checkpoint (also read when resuming).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from `--checkpoint` instead of starting fresh.
    #[arg(long)]
    pub resume: bool,
    /// CSV loss log with columns step,loss_nats,wall_ms.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Total optimizer steps (the step counter target, also when resuming).
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub colorness_threshold: Option<f64>,
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub chroma_side: Option<usize>,
    /// Network widths: `desk` or `paper`.
    #[arg(long)]
    pub model: Option<ModelScale>,
    /// Step from which the conditioning trunk is trained.
    #[arg(long)]
    pub gradient_multiplier_start: Option<u64>,
    /// Save a checkpoint every N steps (0: only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) if !p.exists() => return Err(Error::Missing { what: "config file", path: p.clone() }),
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::desk(),
        };
        macro_rules! apply {
            ($($field:ident),*) => { $(if let Some(v) = self.$field.clone() { cfg.$field = v; })* };
        }
        apply!(learning_rate, batch_size, iterations, seed, colorness_threshold, image_side, chroma_side, model, gradient_multiplier_start, checkpoint_every);
        if let Some(p) = &self.checkpoint {
            cfg.checkpoint_path = Some(p.clone());
        }
        if let Some(p) = &self.loss_log {
            cfg.loss_log_path = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    /// Input PNGs.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// PixelCNN checkpoint from train-pixelcnn.
    #[arg(long)]
    pub pixelcnn: PathBuf,
    /// Refinement checkpoint from train-refine.
    #[arg(long)]
    pub refine: PathBuf,
    /// Comma-separated sampling seeds; one output per seed.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    /// Softmax temperature; 0 decodes greedily.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value = "colorized")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalHistArgs {
    /// Ground-truth PNG directory.
    #[arg(long)]
    pub reference: PathBuf,
    /// Generated PNG directory.
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalDiversityArgs {
    /// Directory of `<stem>_seed<k>.png` samples.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BottleneckArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Smallest side of the downsampled chroma.
    #[arg(long, default_value_t = 28)]
    pub size: usize,
    #[arg(long, default_value = "bottleneck")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportVttArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub groundtruth: PathBuf,
    /// Seed for side assignment and presentation order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "vtt.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 240)]
    pub count: usize,
    /// How many of the images are achromatic.
    #[arg(long, default_value_t = 0)]
    pub gray: usize,
    #[arg(long, default_value_t = 80)]
    pub width: usize,
    #[arg(long, default_value_t = 72)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn require_dir(path: &std::path::Path, what: &'static str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Missing { what, path: path.to_path_buf() })
    }
}

fn prepare_training(args: &TrainArgs) -> Result<(TrainConfig, Option<Checkpoint>)> {
    let cfg = args.resolve()?;
    require_dir(&args.data, "training directory")?;
    let resume = if args.resume {
        let path = cfg
            .checkpoint_path
            .as_ref()
            .ok_or_else(|| Error::Invalid("--resume needs --checkpoint".into()))?;
        Some(Checkpoint::load(path)?)
    } else {
        None
    };
    Ok((cfg, resume))
}

fn load_data(args: &TrainArgs, cfg: &TrainConfig) -> Result<Dataset> {
    let data = Dataset::ingest(&args.data, cfg)?;
    info!(
        "{} training images ({} achromatic skipped, {} unreadable)",
        data.len(),
        data.achromatic.len(),
        data.unreadable.len()
    );
    Ok(data)
}

/// Adopts run-local settings from the command line on top of a resumed
/// checkpoint's hyperparameters.
fn resumed_config(mut saved: TrainConfig, cli: &TrainConfig) -> TrainConfig {
    saved.iterations = cli.iterations;
    saved.checkpoint_every = cli.checkpoint_every;
    saved.checkpoint_path = cli.checkpoint_path.clone();
    saved.loss_log_path = cli.loss_log_path.clone();
    saved
}

fn loss_log(cfg: &TrainConfig, resuming: bool) -> Result<LossLog> {
    match &cfg.loss_log_path {
        Some(p) => LossLog::open(p, resuming),
        None => Ok(LossLog::disabled()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainPixelcnn(args) => {
            let (cfg, resume) = prepare_training(&args)?;
            let mut stage = match &resume {
                Some(ck) => {
                    let mut s = ChromaStage::from_checkpoint(ck)?;
                    s.config = resumed_config(s.config.clone(), &cfg);
                    s
                }
                None => ChromaStage::new(cfg)?,
            };
            let data = load_data(&args, &stage.config)?;
            let mut log = loss_log(&stage.config, resume.is_some())?;
            let policy = CheckpointPolicy::from_config(&stage.config);
            let rows = train_pixelcnn(&mut stage, &data, &policy, &mut log)?;
            if let Some(last) = rows.last() {
                println!("step {} loss {:.6} nats", last.step, last.loss_nats);
            }
        }
        Command::TrainRefine(args) => {
            let (cfg, resume) = prepare_training(&args)?;
            let mut stage = match &resume {
                Some(ck) => {
                    let mut s = RefineStage::from_checkpoint(ck)?;
                    s.config = resumed_config(s.config.clone(), &cfg);
                    s
                }
                None => RefineStage::new(cfg)?,
            };
            let data = load_data(&args, &stage.config)?;
            let mut log = loss_log(&stage.config, resume.is_some())?;
            let policy = CheckpointPolicy::from_config(&stage.config);
            let rows = train_refine(&mut stage, &data, &policy, &mut log)?;
            if let Some(last) = rows.last() {
                println!("step {} loss {:.6}", last.step, last.loss_nats);
            }
        }
        Command::Colorize(args) => {
            if !(args.temperature >= 0.0 && args.temperature.is_finite()) {
                return Err(Error::Invalid("--temperature must be finite and >= 0".into()));
            }
            let models = Models::load(&args.pixelcnn, &args.refine)?;
            let rows = colorize_files(&models, &args.inputs, &args.seeds, args.temperature, &args.out)?;
            println!("wrote {} colorizations to {}", rows.len(), args.out.display());
        }
        Command::EvalHist(args) => {
            require_dir(&args.reference, "reference directory")?;
            require_dir(&args.generated, "generated directory")?;
            for c in eval::eval_hist(&args.reference, &args.generated, &args.out)? {
                println!("{:?} intersection {:.4}", c.channel, c.intersection);
            }
        }
        Command::EvalDiversity(args) => {
            require_dir(&args.samples, "samples directory")?;
            let (ids, report) = eval::eval_diversity(&args.samples, &args.out)?;
            let pairs: usize = report.per_image.iter().map(|p| p.scores.len()).sum();
            println!("{} images, {} pairs", ids.len(), pairs);
        }
        Command::BottleneckDemo(args) => {
            for r in eval::bottleneck_demo(&args.inputs, args.size, &args.out)? {
                println!("{} psnr bottleneck {:.2} dB, gray {:.2} dB", r.id, r.psnr_bottleneck, r.psnr_gray);
            }
        }
        Command::ExportVtt(args) => {
            require_dir(&args.generated, "generated directory")?;
            require_dir(&args.groundtruth, "ground-truth directory")?;
            let manifest = eval::build_vtt_manifest(&args.generated, &args.groundtruth, args.seed)?;
            eval::write_vtt_manifest(&args.out, &manifest)?;
            println!("{} pairs, {} unmatched", manifest.entries.len(), manifest.unmatched.len());
        }
        Command::MakeCorpus(args) => {
            if args.gray > args.count {
                return Err(Error::Invalid("--gray exceeds --count".into()));
            }
            let images = corpus::generate(args.count, args.gray, args.width, args.height, args.seed);
            corpus::write_corpus(&args.out, &images)?;
            println!("wrote {} images to {}", images.len(), args.out.display());
        }
    }
    Ok(())
}
