//! Training loops for the two trainable stages.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use pixcolor_core::model::{chroma_train_step, refine_train_step, ChromaExample, ChromaModel};
use pixcolor_core::refine::{RefineExample, RefinementNet};
use pixcolor_core::{AdamConfig, AdamState, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{file_err, Error, Result};
use crate::ingest::Dataset;

pub const CHROMA_STAGE: &str = "pixelcnn";
pub const REFINE_STAGE: &str = "refine";

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig { lr: config.learning_rate, ..AdamConfig::default() }
}

fn echo(stage: &str, config: &TrainConfig) -> String {
    format!("# stage = {stage}\n{}", config.echo())
}

fn parse_echo(ck: &Checkpoint, stage: &str) -> Result<TrainConfig> {
    let config = TrainConfig::parse(&ck.config)?;
    let found = ck.config.lines().next().and_then(|l| l.strip_prefix("# stage = "));
    if found != Some(stage) {
        return Err(Error::Invalid(format!(
            "checkpoint holds stage `{}`, expected `{stage}`",
            found.unwrap_or("unknown")
        )));
    }
    Ok(config)
}

/// Conditioning, adaptation and PixelCNN parameters with their optimizer.
pub struct ChromaStage {
    pub config: TrainConfig,
    pub store: ParamStore<f32>,
    pub model: ChromaModel<f32>,
    pub adam: AdamState<f32>,
}

impl ChromaStage {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = ChromaModel::new(&mut store, config.conditioning(), config.pixelcnn(), &mut init_rng(config.seed, 1))?;
        let adam = AdamState::new(adam_config(&config), &store);
        Ok(Self { config, store, model, adam })
    }

    /// Rebuilds the networks from the checkpoint's config echo. Parameter
    /// names are checked before anything is copied.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::parse(&ck.config)?;
        let mut stage = Self::new(config)?;
        ck.restore(&mut stage.store, &mut stage.adam)?;
        parse_echo(ck, CHROMA_STAGE)?;
        Ok(stage)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(echo(CHROMA_STAGE, &self.config), &self.store, &self.adam)
    }
}

/// Refinement network parameters with their optimizer.
pub struct RefineStage {
    pub config: TrainConfig,
    pub store: ParamStore<f32>,
    pub net: RefinementNet<f32>,
    pub adam: AdamState<f32>,
}

impl RefineStage {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let net = RefinementNet::new(&mut store, config.refinement(), &mut init_rng(config.seed, 2))?;
        let adam = AdamState::new(adam_config(&config), &store);
        Ok(Self { config, store, net, adam })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::parse(&ck.config)?;
        let mut stage = Self::new(config)?;
        ck.restore(&mut stage.store, &mut stage.adam)?;
        parse_echo(ck, REFINE_STAGE)?;
        Ok(stage)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(echo(REFINE_STAGE, &self.config), &self.store, &self.adam)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    /// Optimizer updates completed after this step.
    pub step: u64,
    pub loss_nats: f64,
    pub wall_ms: u128,
}

/// Incremental `step,loss_nats,wall_ms` CSV.
pub struct LossLog {
    writer: Option<csv::Writer<std::fs::File>>,
}

impl LossLog {
    pub fn disabled() -> Self {
        Self { writer: None }
    }

    /// Appends when resuming into an existing non-empty log.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(file_err(dir))?;
        }
        let existing = append && std::fs::metadata(path).is_ok_and(|m| m.len() > 0);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(existing)
            .truncate(!existing)
            .open(path)
            .map_err(file_err(path))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !existing {
            writer.write_record(["step", "loss_nats", "wall_ms"])?;
        }
        Ok(Self { writer: Some(writer) })
    }

    pub fn push(&mut self, row: LossRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.write_record([row.step.to_string(), format!("{:.6}", row.loss_nats), row.wall_ms.to_string()])?;
            w.flush()?;
        }
        Ok(())
    }
}

/// What to do with checkpoints during a run.
#[derive(Clone, Debug, Default)]
pub struct CheckpointPolicy {
    pub path: Option<PathBuf>,
    pub every: u64,
}

impl CheckpointPolicy {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self { path: config.checkpoint_path.clone(), every: config.checkpoint_every }
    }

    fn diagnostic_path(&self) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".diverged");
            PathBuf::from(s)
        })
    }
}

fn run_loop<F>(
    start: u64,
    until: u64,
    policy: &CheckpointPolicy,
    log: &mut LossLog,
    mut step: F,
    save: &dyn Fn(&Path) -> Result<()>,
) -> Result<Vec<LossRow>>
where
    F: FnMut(u64) -> Result<f64>,
{
    let clock = Instant::now();
    let mut rows = Vec::new();
    for s in start..until {
        let loss = match step(s) {
            Ok(v) => v,
            Err(e) => {
                if let Some(p) = policy.diagnostic_path() {
                    save(&p)?;
                }
                return Err(e);
            }
        };
        let row = LossRow { step: s + 1, loss_nats: loss, wall_ms: clock.elapsed().as_millis() };
        log.push(row)?;
        rows.push(row);
        if (s + 1) % 100 == 0 {
            info!("step {} loss {:.4}", s + 1, loss);
        }
        if let Some(p) = &policy.path {
            if policy.every > 0 && (s + 1) % policy.every == 0 && s + 1 < until {
                save(p)?;
            }
        }
    }
    if let Some(p) = &policy.path {
        save(p)?;
    }
    Ok(rows)
}

/// Joint optimization of conditioning, adaptation and PixelCNN until the
/// step counter reaches `config.iterations`.
pub fn train_pixelcnn(stage: &mut ChromaStage, data: &Dataset, policy: &CheckpointPolicy, log: &mut LossLog) -> Result<Vec<LossRow>> {
    let (seed, batch, until) = (stage.config.seed, stage.config.batch_size, stage.config.iterations);
    let start = stage.adam.step;
    let stage_cell = std::cell::RefCell::new(stage);
    let step = |s: u64| -> Result<f64> {
        let mut st = stage_cell.borrow_mut();
        let st = &mut **st;
        let examples: Vec<ChromaExample> = data.batch(seed, s, batch).into_iter().map(|t| t.chroma_example()).collect();
        Ok(chroma_train_step(&st.model, &mut st.store, &mut st.adam, &examples)?)
    };
    let save = |p: &Path| stage_cell.borrow().checkpoint().save(p);
    run_loop(start, until, policy, log, step, &save)
}

/// L1 training of the refinement network on ground-truth chroma hints.
pub fn train_refine(stage: &mut RefineStage, data: &Dataset, policy: &CheckpointPolicy, log: &mut LossLog) -> Result<Vec<LossRow>> {
    let (seed, batch, until, side) = (stage.config.seed, stage.config.batch_size, stage.config.iterations, stage.config.chroma_side);
    let start = stage.adam.step;
    let stage_cell = std::cell::RefCell::new(stage);
    let step = |s: u64| -> Result<f64> {
        let mut st = stage_cell.borrow_mut();
        let st = &mut **st;
        let examples = data
            .batch(seed, s, batch)
            .into_iter()
            .map(|t| t.refine_example(side))
            .collect::<Result<Vec<RefineExample>>>()?;
        Ok(refine_train_step(&st.net, &mut st.store, &mut st.adam, &examples)?)
    };
    let save = |p: &Path| stage_cell.borrow().checkpoint().save(p);
    run_loop(start, until, policy, log, step, &save)
}
