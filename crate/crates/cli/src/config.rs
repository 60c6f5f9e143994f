//! Pipeline configuration: defaults, flat key=value files, the `HMPE_SEED`
//! environment override, and command-line flags. Precedence, lowest to
//! highest: defaults, config file, environment, flags.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use hmpe_core::decoder::SuppressMode;
use hmpe_core::heads::BoxTarget;
use hmpe_core::heatmap::BboxGradMode;
use hmpe_core::viz::UpscaleMode;

pub const SEED_ENV: &str = "HMPE_SEED";

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub depth: usize,
    pub heads: usize,
    pub layers: usize,
    pub points: usize,
    pub top_m: usize,
    pub lambda: f32,
    pub tau: f32,
    pub fusion_w: f32,
    pub huber_delta: f32,
    pub scale: usize,
    pub alpha: f32,
    pub target: [f32; 4],
    pub bbox_grad_order: BboxGradMode,
    pub suppress: SuppressMode,
    pub unit_shift: bool,
    pub taps: usize,
    pub upscale: UpscaleMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 16,
            width: 16,
            channels: 8,
            depth: 64,
            heads: 8,
            layers: 3,
            points: 4,
            top_m: 100,
            lambda: 0.5,
            tau: 0.35,
            fusion_w: 0.5,
            huber_delta: 1.0,
            scale: 6,
            alpha: 0.6,
            target: [0.5, 0.5, 0.25, 0.25],
            bbox_grad_order: BboxGradMode::Mixed,
            suppress: SuppressMode::Hard,
            unit_shift: true,
            taps: 3,
            upscale: UpscaleMode::Bilinear,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("config key '{key}': cannot parse `{value}`"))
}

pub fn parse_target(key: &str, value: &str) -> Result<[f32; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        bail!("config key '{key}': expected cx,cy,w,h, got `{value}`");
    }
    let mut out = [0f32; 4];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse(key, part)?;
    }
    Ok(out)
}

pub fn parse_bbox_grad_order(value: &str) -> Result<BboxGradMode> {
    match value {
        "mixed" => Ok(BboxGradMode::Mixed),
        "1" | "first" => Ok(BboxGradMode::FirstOrder),
        other => bail!("config key 'bbox_grad_order': expected 1|mixed, got `{other}`"),
    }
}

pub fn parse_suppress(value: &str) -> Result<SuppressMode> {
    match value {
        "hard" => Ok(SuppressMode::Hard),
        "soft" => Ok(SuppressMode::Soft),
        other => bail!("config key 'suppress': expected hard|soft, got `{other}`"),
    }
}

pub fn parse_upscale(value: &str) -> Result<UpscaleMode> {
    match value {
        "bilinear" => Ok(UpscaleMode::Bilinear),
        "nearest" => Ok(UpscaleMode::Nearest),
        other => bail!("config key 'upscale': expected bilinear|nearest, got `{other}`"),
    }
}

impl PipelineConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "points" => self.points = parse(key, value)?,
            "top_m" => self.top_m = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "fusion_w" => self.fusion_w = parse(key, value)?,
            "huber_delta" => self.huber_delta = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "target" => self.target = parse_target(key, value)?,
            "bbox_grad_order" => self.bbox_grad_order = parse_bbox_grad_order(value)?,
            "suppress" => self.suppress = parse_suppress(value)?,
            "unit_shift" => self.unit_shift = parse(key, value)?,
            "taps" => self.taps = parse(key, value)?,
            "upscale" => self.upscale = parse_upscale(value)?,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &PathBuf) -> Result<()> {
        let pairs = hmpe_core::io::read_kv(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (k, v) in pairs {
            self.apply_kv(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            self.seed = parse("HMPE_SEED", &value)?;
        }
        Ok(())
    }

    /// Fails fast with the offending key named.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |key: &str, v: f32| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                bail!("config key '{key}': must be in [0, 1], got {v}");
            }
            Ok(())
        };
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            bail!("config keys 'height'/'width'/'channels': must be positive");
        }
        if self.depth < 2 || self.depth % 2 != 0 {
            bail!("config key 'depth': must be even and >= 2, got {}", self.depth);
        }
        if self.heads == 0 || self.depth % self.heads != 0 {
            bail!(
                "config key 'heads': depth {} must be divisible by heads {}",
                self.depth,
                self.heads
            );
        }
        if !(1..=8).contains(&self.layers) {
            bail!("config key 'layers': must be in [1, 8], got {}", self.layers);
        }
        if self.points == 0 {
            bail!("config key 'points': must be >= 1");
        }
        if self.top_m == 0 {
            bail!("config key 'top_m': must be >= 1");
        }
        in_unit("lambda", self.lambda)?;
        in_unit("alpha", self.alpha)?;
        in_unit("fusion_w", self.fusion_w)?;
        if !(0.0..1.0).contains(&self.tau) {
            bail!("config key 'tau': must be in [0, 1), got {}", self.tau);
        }
        if self.huber_delta <= 0.0 {
            bail!("config key 'huber_delta': must be positive, got {}", self.huber_delta);
        }
        if self.scale == 0 {
            bail!("config key 'scale': must be >= 1");
        }
        if self.taps != 3 && self.taps != 9 {
            bail!("config key 'taps': must be 3 or 9, got {}", self.taps);
        }
        self.box_target()?;
        Ok(())
    }

    pub fn box_target(&self) -> Result<BoxTarget<f32>> {
        let [cx, cy, w, h] = self.target;
        BoxTarget::new(cx, cy, w, h).map_err(|e| anyhow!("config key 'target': {e}"))
    }
}

/// The config surface mirrored as flags; any flag given here wins over the
/// config file and the environment.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// RNG seed for every seeded stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid rows H.
    #[arg(long)]
    pub height: Option<usize>,
    /// Grid columns W.
    #[arg(long)]
    pub width: Option<usize>,
    /// Activation channels K.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Embedding depth D (even).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Decoder layers L in [1, 8].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Deformable sampling points P per query.
    #[arg(long)]
    pub points: Option<usize>,
    /// Maximum surviving queries after suppression.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Class/box heatmap gate in [0, 1].
    #[arg(long)]
    pub lambda: Option<f32>,
    /// Heat threshold on the normalized heatmap, in [0, 1).
    #[arg(long)]
    pub tau: Option<f32>,
    /// Snake/linear fusion weight in [0, 1].
    #[arg(long = "fusion")]
    pub fusion_w: Option<f32>,
    /// Huber loss threshold.
    #[arg(long)]
    pub huber_delta: Option<f32>,
    /// Render upscale factor.
    #[arg(long)]
    pub scale: Option<usize>,
    /// Overlay blend weight in [0, 1].
    #[arg(long)]
    pub alpha: Option<f32>,
    /// Ground-truth box as cx,cy,w,h in normalized units.
    #[arg(long)]
    pub target: Option<String>,
    /// Box heatmap derivative structure: mixed (2nd + 3rd order) or 1.
    #[arg(long)]
    pub bbox_grad_order: Option<String>,
    /// Query suppression: hard (threshold + top-m) or soft (score-scaled logits).
    #[arg(long)]
    pub suppress: Option<String>,
    /// Drop the +-1 constants from the snake path geometry.
    #[arg(long)]
    pub no_unit_shift: bool,
    /// Snake taps: 3 (centermost positions) or 9 (whole path).
    #[arg(long)]
    pub taps: Option<usize>,
    /// Render body upscale: bilinear or nearest.
    #[arg(long)]
    pub upscale: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_env()?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.height {
            cfg.height = v;
        }
        if let Some(v) = self.width {
            cfg.width = v;
        }
        if let Some(v) = self.channels {
            cfg.channels = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.points {
            cfg.points = v;
        }
        if let Some(v) = self.top_m {
            cfg.top_m = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.fusion_w {
            cfg.fusion_w = v;
        }
        if let Some(v) = self.huber_delta {
            cfg.huber_delta = v;
        }
        if let Some(v) = self.scale {
            cfg.scale = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = &self.target {
            cfg.target = parse_target("target", v)?;
        }
        if let Some(v) = &self.bbox_grad_order {
            cfg.bbox_grad_order = parse_bbox_grad_order(v)?;
        }
        if let Some(v) = &self.suppress {
            cfg.suppress = parse_suppress(v)?;
        }
        if self.no_unit_shift {
            cfg.unit_shift = false;
        }
        if let Some(v) = self.taps {
            cfg.taps = v;
        }
        if let Some(v) = &self.upscale {
            cfg.upscale = parse_upscale(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
