//! Luminance feature extractor feeding the PixelCNN: a residual bottleneck
//! trunk with overall stride 8, followed by three adaptation convolutions.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::ConvSpec;
use crate::error::{arg_err, Result};
use crate::graph::{Graph, Var};
use crate::layers::{scaled, ConvLayer, Init, INIT_STDDEV};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningConfig {
    /// Scales every channel count of the trunk.
    pub width_multiplier: f64,
    /// Residual blocks per stage; stage strides are 2, 2, 1.
    pub block_counts: [usize; 3],
    /// Channels of the emitted feature map.
    pub feature_channels: usize,
    pub gradient_multiplier_gamma: f64,
    pub gradient_multiplier_start_step: u64,
    pub init_stddev: f64,
}

impl ConditioningConfig {
    /// Full-size network (ResNet-101-like trunk).
    pub fn paper() -> Self {
        Self {
            width_multiplier: 1.0,
            block_counts: [3, 4, 23],
            feature_channels: 64,
            gradient_multiplier_gamma: 0.1,
            gradient_multiplier_start_step: 100_000,
            init_stddev: INIT_STDDEV,
        }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            width_multiplier: 0.25,
            block_counts: [1, 1, 2],
            gradient_multiplier_start_step: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier > 0.0) {
            return Err(arg_err("conditioning_config", "width_multiplier must be > 0"));
        }
        if self.block_counts.iter().any(|&b| b == 0) || self.feature_channels == 0 {
            return Err(arg_err("conditioning_config", "block counts and feature channels must be > 0"));
        }
        Ok(())
    }

    /// Factor applied to gradients entering the trunk at `step`.
    pub fn gradient_factor(&self, step: u64) -> f64 {
        if step >= self.gradient_multiplier_start_step {
            self.gradient_multiplier_gamma
        } else {
            0.0
        }
    }
}

/// 1x1 reduce, 3x3 (strided), 1x1 expand, plus a projection shortcut when
/// the stride or width changes.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck<T> {
    pub reduce: ConvLayer<T>,
    pub conv: ConvLayer<T>,
    pub expand: ConvLayer<T>,
    pub shortcut: Option<ConvLayer<T>>,
}

impl<T: Real> Bottleneck<T> {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        stride: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let reduce = ConvLayer::new(store, &format!("{name}.reduce"), ConvSpec::square(1, 1, cin, mid)?, true, init, rng)?;
        let conv = ConvLayer::new(store, &format!("{name}.conv"), ConvSpec::square(3, stride, mid, mid)?, true, init, rng)?;
        let expand = ConvLayer::new(store, &format!("{name}.expand"), ConvSpec::square(1, 1, mid, cout)?, true, init, rng)?;
        let shortcut = if stride != 1 || cin != cout {
            Some(ConvLayer::new(store, &format!("{name}.shortcut"), ConvSpec::square(1, stride, cin, cout)?, false, init, rng)?)
        } else {
            None
        };
        Ok(Self { reduce, conv, expand, shortcut })
    }

    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.reduce.forward(g, store, x)?;
        let h = g.relu(h);
        let h = self.conv.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.expand.forward(g, store, h)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(g, store, x)?,
            None => x,
        };
        let y = g.add(h, skip)?;
        Ok(g.relu(y))
    }

    /// Residual-branch parameters (everything except the shortcut).
    pub fn branch_params(&self) -> Vec<ParamId> {
        [&self.reduce, &self.conv, &self.expand].iter().flat_map(|l| l.params()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningNet<T> {
    pub config: ConditioningConfig,
    pub stem: ConvLayer<T>,
    pub stages: Vec<Vec<Bottleneck<T>>>,
    pub adapt: Vec<ConvLayer<T>>,
}

impl<T: Real> ConditioningNet<T> {
    /// Registers parameters under `cond.*` (trunk) and `adapt.*`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, config: ConditioningConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let init = Init::TruncatedNormal(config.init_stddev);
        let w = config.width_multiplier;
        let stem_ch = scaled(64, w);
        let stem = ConvLayer::new(store, "cond.stem", ConvSpec::square(7, 2, 3, stem_ch)?, true, init, rng)?;
        let plan = [(64, 256, 2), (128, 512, 2), (256, 1024, 1)];
        let mut cin = stem_ch;
        let mut stages = Vec::new();
        for (s, (&(mid, out, stride), &count)) in plan.iter().zip(&config.block_counts).enumerate() {
            let (mid, out) = (scaled(mid, w), scaled(out, w));
            let mut blocks = Vec::new();
            for b in 0..count {
                let st = if b == 0 { stride } else { 1 };
                blocks.push(Bottleneck::new(store, &format!("cond.stage{s}.block{b}"), cin, mid, out, st, init, rng)?);
                cin = out;
            }
            stages.push(blocks);
        }
        let f = config.feature_channels;
        let mut adapt = Vec::new();
        for i in 0..3 {
            let c = if i == 0 { cin } else { f };
            adapt.push(ConvLayer::new(store, &format!("adapt.conv{i}"), ConvSpec::square(3, 1, c, f)?, true, init, rng)?);
        }
        Ok(Self { config, stem, stages, adapt })
    }

    /// Trunk output, before the gradient multiplier and adaptation layers.
    pub fn trunk(&self, g: &mut Graph<T>, store: &ParamStore<T>, gray: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(gray).dims4("conditioning_forward")?;
        if c != 1 {
            return Err(arg_err("conditioning_forward", format!("expected 1 luminance channel, got {c}")));
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(arg_err("conditioning_forward", format!("input {h}x{w} is not divisible by 8")));
        }
        let rgb = g.concat_channels(&[gray, gray, gray])?;
        let x = self.stem.forward(g, store, rgb)?;
        let mut x = g.relu(x);
        for block in self.stages.iter().flatten() {
            x = block.forward(g, store, x)?;
        }
        Ok(x)
    }

    /// Luminance `[N,1,H,W]` (scaled to `[-1,1]`) to features
    /// `[N,F,H/8,W/8]`. `grad_factor` scales gradients entering the trunk.
    pub fn forward(&self, g: &mut Graph<T>, store: &ParamStore<T>, gray: Var, grad_factor: f64) -> Result<Var> {
        let trunk = self.trunk(g, store, gray)?;
        let mut x = g.grad_scale(trunk, T::of(grad_factor));
        for (i, layer) in self.adapt.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i + 1 < self.adapt.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Parameters governed by the gradient multiplier.
    pub fn trunk_params(&self) -> Vec<ParamId> {
        let mut ids = self.stem.params();
        for b in self.stages.iter().flatten() {
            ids.extend(b.branch_params());
            if let Some(s) = &b.shortcut {
                ids.extend(s.params());
            }
        }
        ids
    }
}
