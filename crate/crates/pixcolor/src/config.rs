//! Run configuration: a line-oriented `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors. Command-line flags are applied after the file,
//! so a flag always wins over the same key in the file.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use pixcolor_core::conditioning::ConditioningConfig;
use pixcolor_core::pixelcnn::PixelCnnConfig;
use pixcolor_core::refine::RefinementConfig;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelScale {
    /// Quarter-width networks for 64-pixel single-core runs.
    Desk,
    /// Full-width networks as in the reference hyperparameter table.
    Paper,
}

impl FromStr for ModelScale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(format!("expected `desk` or `paper`, got `{s}`")),
        }
    }
}

impl ModelScale {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub colorness_threshold: f64,
    pub image_side: usize,
    pub chroma_side: usize,
    pub model: ModelScale,
    /// Step from which the conditioning trunk receives scaled gradients.
    pub gradient_multiplier_start: u64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub loss_log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 8,
            iterations: 2000,
            seed: 0,
            colorness_threshold: 0.05,
            image_side: 64,
            chroma_side: 8,
            model: ModelScale::Desk,
            gradient_multiplier_start: ConditioningConfig::desk().gradient_multiplier_start_step,
            checkpoint_every: 0,
            checkpoint_path: None,
            loss_log_path: None,
        }
    }

    pub fn paper() -> Self {
        Self {
            batch_size: 64,
            iterations: 360_000,
            image_side: 224,
            chroma_side: 28,
            model: ModelScale::Paper,
            gradient_multiplier_start: ConditioningConfig::paper().gradient_multiplier_start_step,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| Err(Error::Invalid(format!("config: {detail}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 || self.iterations == 0 || self.chroma_side == 0 {
            return bad("batch_size, iterations and chroma_side must be > 0");
        }
        if self.image_side != 8 * self.chroma_side {
            return bad("image_side must equal 8 x chroma_side");
        }
        if !(0.0..=1.0).contains(&self.colorness_threshold) {
            return bad("colorness_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<V: FromStr>(v: &str) -> std::result::Result<V, String> {
            v.parse().map_err(|_| format!("invalid value `{v}`"))
        }
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "learning_rate" => self.learning_rate = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "iterations" => self.iterations = num(value)?,
            "seed" => self.seed = num(value)?,
            "colorness_threshold" => self.colorness_threshold = num(value)?,
            "image_side" => self.image_side = num(value)?,
            "chroma_side" => self.chroma_side = num(value)?,
            "model" => self.model = value.parse()?,
            "gradient_multiplier_start" => self.gradient_multiplier_start = num(value)?,
            "checkpoint_every" => self.checkpoint_every = num(value)?,
            "checkpoint_path" => self.checkpoint_path = path(value),
            "loss_log_path" => self.loss_log_path = path(value),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses a config file on top of the desk defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Config { line: i + 1, detail };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::file_err(path))?;
        Self::parse(&text)
    }

    /// Every hyperparameter that affects the trained weights, in `parse`
    /// format. Paths are left out so that runs in different directories
    /// produce identical checkpoints.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "colorness_threshold = {}", self.colorness_threshold);
        let _ = writeln!(s, "image_side = {}", self.image_side);
        let _ = writeln!(s, "chroma_side = {}", self.chroma_side);
        let _ = writeln!(s, "model = {}", self.model.as_str());
        let _ = writeln!(s, "gradient_multiplier_start = {}", self.gradient_multiplier_start);
        s
    }

    pub fn conditioning(&self) -> ConditioningConfig {
        let base = match self.model {
            ModelScale::Desk => ConditioningConfig::desk(),
            ModelScale::Paper => ConditioningConfig::paper(),
        };
        ConditioningConfig { gradient_multiplier_start_step: self.gradient_multiplier_start, ..base }
    }

    pub fn pixelcnn(&self) -> PixelCnnConfig {
        match self.model {
            ModelScale::Desk => PixelCnnConfig::desk(),
            ModelScale::Paper => PixelCnnConfig::paper(),
        }
    }

    pub fn refinement(&self) -> RefinementConfig {
        match self.model {
            ModelScale::Desk => RefinementConfig::desk(),
            ModelScale::Paper => RefinementConfig::appendix(1.0),
        }
    }
}
