//! Flat key-value run configuration.
//!
//! Every tunable in the pipeline lives behind a dotted key (`train.lr`,
//! `model.alpha`, ...) with a documented default. Configuration sources are
//! layered: built-in defaults, then the `PIHOT_SEED` environment variable
//! (seed only), then a config file of `key = value` lines, then individual
//! overrides — later layers win. Unknown keys and malformed values are
//! rejected rather than ignored, so a typo fails loudly instead of silently
//! training with defaults.
//!
//! [`RunConfig::snapshot`] serialises the full configuration in a canonical
//! order; the same text embeds into checkpoints and dataset metadata so a
//! run can be reproduced from its artifacts alone.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Backbone architecture choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Small stack of stride-2 conv blocks; fast enough for CPU training.
    Tiny,
    /// ResNet-50-shaped stack (7×7 stem, four bottleneck stages), stride 32.
    Resnet50,
}

/// Inpainting backend choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InpainterKind {
    /// Built-in deterministic diffusion fill.
    DiffusionStub,
    /// Shell out to `plugins.inpainter_cmd`.
    External,
}

/// Depth-estimation backend choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthKind {
    /// Return the ground-truth depth attached to the image; errors if absent.
    OracleStub,
    /// Constant 0.5 m everywhere.
    ConstantStub,
    /// Shell out to `plugins.depth_cmd`.
    External,
}

/// How the loss is reduced over pixels and channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// How per-image metrics are combined across a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Pool confusion counts over all images, then compute each metric once.
    Micro,
    /// Compute metrics per image, then average the defined ones.
    Macro,
}

macro_rules! display_from_str {
    ($ty:ty, $( $variant:path => $text:literal ),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self {
                    $( $variant => $text, )+
                };
                f.write_str(s)
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $( $text => Ok($variant), )+
                    other => Err(format!(
                        concat!("expected one of ", $( $text, " " ),+ , ", got {}"),
                        other
                    )),
                }
            }
        }
    };
}

display_from_str!(Backbone, Backbone::Tiny => "tiny", Backbone::Resnet50 => "resnet50");
display_from_str!(
    InpainterKind,
    InpainterKind::DiffusionStub => "diffusion_stub",
    InpainterKind::External => "external",
);
display_from_str!(
    DepthKind,
    DepthKind::OracleStub => "oracle_stub",
    DepthKind::ConstantStub => "constant_stub",
    DepthKind::External => "external",
);
display_from_str!(Reduction, Reduction::Mean => "mean", Reduction::Sum => "sum");
display_from_str!(Aggregation, Aggregation::Micro => "micro", Aggregation::Macro => "macro");

/// Model architecture settings (`model.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub backbone: Backbone,
    /// Feature channels C produced by the backbone.
    pub out_channels: usize,
    /// Spatial stride f between input pixels and feature cells.
    pub downsample: usize,
    /// Inner dimension of the attention Q/K projections; 0 = `out_channels`.
    pub attn_dim: usize,
    /// Output channels, one per contact class including no-contact class 0.
    pub num_classes: usize,
    /// Weight of attended object features in fusion.
    pub alpha: f64,
    /// Weight of attended depth features in fusion.
    pub beta: f64,
}

/// Human-mask preprocessing settings (`mask.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSettings {
    /// Odd side length of the all-ones dilation window.
    pub dilation_kernel: usize,
    /// How many times the dilation is applied.
    pub dilation_iters: usize,
}

/// Backend plugin settings (`plugins.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct PluginSettings {
    pub inpainter: InpainterKind,
    /// Command template for the external inpainter.
    pub inpainter_cmd: String,
    pub depth: DepthKind,
    /// Command template for the external depth estimator.
    pub depth_cmd: String,
    /// Metres-to-integer factor for 16-bit depth PNGs.
    pub depth_scale: f64,
}

/// Loss settings (`loss.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossSettings {
    /// Weight applied to the no-contact class in the per-channel BCE.
    pub background_weight: f64,
    pub reduction: Reduction,
}

/// Metric settings (`metrics.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSettings {
    pub aggregation: Aggregation,
}

/// Training settings (`train.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Inpaint the human away; off reuses the original image as human-free.
    pub oi: bool,
    /// Cross-attend inpainted-object features into contact features.
    pub ipi: bool,
    /// Gate fusion with the relative-position map; off uses all-ones.
    pub spo: bool,
    /// Cross-attend depth features into object features; off contributes zeros.
    pub idsi: bool,
    /// Random horizontal flip augmentation.
    pub flip: bool,
    /// Random square crop augmentation.
    pub crop: bool,
    /// Side length of the random crop when `train.crop` is on.
    pub crop_size: usize,
}

/// Synthetic dataset settings (`synth.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub scenes: usize,
    /// Square canvas side length in pixels.
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Fraction of scenes posed with the human touching an object.
    pub contact_fraction: f64,
    /// Chebyshev radius of the labelled contact band.
    pub band_radius: usize,
    /// Maximum human/object depth gap (metres) still labelled as contact.
    pub depth_tolerance: f64,
    /// Amplitude of the per-surface texture noise.
    pub noise: f64,
    /// Number of object classes drawn from; labels use 1..=classes.
    pub classes: usize,
}

/// The full, validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub mask: MaskSettings,
    pub plugins: PluginSettings,
    pub loss: LossSettings,
    pub metrics: MetricsSettings,
    pub train: TrainSettings,
    pub synth: SynthSettings,
    /// Keys assigned through [`set`](Self::set); the seed fallback skips these.
    explicit: BTreeSet<String>,
}

/// Two configurations are equal when every setting agrees; which keys were
/// assigned explicitly is bookkeeping for the seed fallback, not a setting.
impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.model == other.model
            && self.mask == other.mask
            && self.plugins == other.plugins
            && self.loss == other.loss
            && self.metrics == other.metrics
            && self.train == other.train
            && self.synth == other.synth
    }
}

/// Every key, in the canonical order used by [`RunConfig::snapshot`].
pub const KEYS: &[&str] = &[
    "model.backbone",
    "model.out_channels",
    "model.downsample",
    "model.attn_dim",
    "model.num_classes",
    "model.alpha",
    "model.beta",
    "mask.dilation_kernel",
    "mask.dilation_iters",
    "plugins.inpainter",
    "plugins.inpainter_cmd",
    "plugins.depth",
    "plugins.depth_cmd",
    "plugins.depth_scale",
    "loss.background_weight",
    "loss.reduction",
    "metrics.aggregation",
    "train.seed",
    "train.steps",
    "train.batch_size",
    "train.lr",
    "train.oi",
    "train.ipi",
    "train.spo",
    "train.idsi",
    "train.flip",
    "train.crop",
    "train.crop_size",
    "synth.scenes",
    "synth.size",
    "synth.min_objects",
    "synth.max_objects",
    "synth.contact_fraction",
    "synth.band_radius",
    "synth.depth_tolerance",
    "synth.noise",
    "synth.classes",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSettings {
                backbone: Backbone::Tiny,
                out_channels: 32,
                downsample: 8,
                attn_dim: 0,
                num_classes: 18,
                alpha: 0.1,
                beta: 0.1,
            },
            mask: MaskSettings {
                dilation_kernel: 3,
                dilation_iters: 1,
            },
            plugins: PluginSettings {
                inpainter: InpainterKind::DiffusionStub,
                inpainter_cmd: String::new(),
                depth: DepthKind::OracleStub,
                depth_cmd: String::new(),
                depth_scale: 1000.0,
            },
            loss: LossSettings {
                background_weight: 0.2,
                reduction: Reduction::Mean,
            },
            metrics: MetricsSettings {
                aggregation: Aggregation::Micro,
            },
            train: TrainSettings {
                seed: 0,
                steps: 500,
                batch_size: 4,
                lr: 1e-5,
                oi: true,
                ipi: true,
                spo: true,
                idsi: true,
                flip: false,
                crop: false,
                crop_size: 48,
            },
            synth: SynthSettings {
                scenes: 64,
                size: 64,
                min_objects: 2,
                max_objects: 4,
                contact_fraction: 0.5,
                band_radius: 2,
                depth_tolerance: 0.1,
                noise: 0.05,
                classes: 17,
            },
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: expected {what}, got {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected true or false, got {other:?}"
        ))),
    }
}

fn parse_enum<T: FromStr<Err = String>>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Assigns one key from its textual value. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.backbone" => self.model.backbone = parse_enum(key, value)?,
            "model.out_channels" => self.model.out_channels = parse(key, value, "an integer")?,
            "model.downsample" => self.model.downsample = parse(key, value, "an integer")?,
            "model.attn_dim" => self.model.attn_dim = parse(key, value, "an integer")?,
            "model.num_classes" => self.model.num_classes = parse(key, value, "an integer")?,
            "model.alpha" => self.model.alpha = parse(key, value, "a number")?,
            "model.beta" => self.model.beta = parse(key, value, "a number")?,
            "mask.dilation_kernel" => {
                self.mask.dilation_kernel = parse(key, value, "an integer")?
            }
            "mask.dilation_iters" => self.mask.dilation_iters = parse(key, value, "an integer")?,
            "plugins.inpainter" => self.plugins.inpainter = parse_enum(key, value)?,
            "plugins.inpainter_cmd" => self.plugins.inpainter_cmd = value.to_string(),
            "plugins.depth" => self.plugins.depth = parse_enum(key, value)?,
            "plugins.depth_cmd" => self.plugins.depth_cmd = value.to_string(),
            "plugins.depth_scale" => self.plugins.depth_scale = parse(key, value, "a number")?,
            "loss.background_weight" => {
                self.loss.background_weight = parse(key, value, "a number")?
            }
            "loss.reduction" => self.loss.reduction = parse_enum(key, value)?,
            "metrics.aggregation" => self.metrics.aggregation = parse_enum(key, value)?,
            "train.seed" => self.train.seed = parse(key, value, "an integer")?,
            "train.steps" => self.train.steps = parse(key, value, "an integer")?,
            "train.batch_size" => self.train.batch_size = parse(key, value, "an integer")?,
            "train.lr" => self.train.lr = parse(key, value, "a number")?,
            "train.oi" => self.train.oi = parse_bool(key, value)?,
            "train.ipi" => self.train.ipi = parse_bool(key, value)?,
            "train.spo" => self.train.spo = parse_bool(key, value)?,
            "train.idsi" => self.train.idsi = parse_bool(key, value)?,
            "train.flip" => self.train.flip = parse_bool(key, value)?,
            "train.crop" => self.train.crop = parse_bool(key, value)?,
            "train.crop_size" => self.train.crop_size = parse(key, value, "an integer")?,
            "synth.scenes" => self.synth.scenes = parse(key, value, "an integer")?,
            "synth.size" => self.synth.size = parse(key, value, "an integer")?,
            "synth.min_objects" => self.synth.min_objects = parse(key, value, "an integer")?,
            "synth.max_objects" => self.synth.max_objects = parse(key, value, "an integer")?,
            "synth.contact_fraction" => {
                self.synth.contact_fraction = parse(key, value, "a number")?
            }
            "synth.band_radius" => self.synth.band_radius = parse(key, value, "an integer")?,
            "synth.depth_tolerance" => {
                self.synth.depth_tolerance = parse(key, value, "a number")?
            }
            "synth.noise" => self.synth.noise = parse(key, value, "a number")?,
            "synth.classes" => self.synth.classes = parse(key, value, "an integer")?,
            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")));
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Textual value of one key, as it would appear in a snapshot.
    pub fn get(&self, key: &str) -> Result<String> {
        let v = match key {
            "model.backbone" => self.model.backbone.to_string(),
            "model.out_channels" => self.model.out_channels.to_string(),
            "model.downsample" => self.model.downsample.to_string(),
            "model.attn_dim" => self.model.attn_dim.to_string(),
            "model.num_classes" => self.model.num_classes.to_string(),
            "model.alpha" => self.model.alpha.to_string(),
            "model.beta" => self.model.beta.to_string(),
            "mask.dilation_kernel" => self.mask.dilation_kernel.to_string(),
            "mask.dilation_iters" => self.mask.dilation_iters.to_string(),
            "plugins.inpainter" => self.plugins.inpainter.to_string(),
            "plugins.inpainter_cmd" => self.plugins.inpainter_cmd.clone(),
            "plugins.depth" => self.plugins.depth.to_string(),
            "plugins.depth_cmd" => self.plugins.depth_cmd.clone(),
            "plugins.depth_scale" => self.plugins.depth_scale.to_string(),
            "loss.background_weight" => self.loss.background_weight.to_string(),
            "loss.reduction" => self.loss.reduction.to_string(),
            "metrics.aggregation" => self.metrics.aggregation.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.steps" => self.train.steps.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.oi" => self.train.oi.to_string(),
            "train.ipi" => self.train.ipi.to_string(),
            "train.spo" => self.train.spo.to_string(),
            "train.idsi" => self.train.idsi.to_string(),
            "train.flip" => self.train.flip.to_string(),
            "train.crop" => self.train.crop.to_string(),
            "train.crop_size" => self.train.crop_size.to_string(),
            "synth.scenes" => self.synth.scenes.to_string(),
            "synth.size" => self.synth.size.to_string(),
            "synth.min_objects" => self.synth.min_objects.to_string(),
            "synth.max_objects" => self.synth.max_objects.to_string(),
            "synth.contact_fraction" => self.synth.contact_fraction.to_string(),
            "synth.band_radius" => self.synth.band_radius.to_string(),
            "synth.depth_tolerance" => self.synth.depth_tolerance.to_string(),
            "synth.noise" => self.synth.noise.to_string(),
            "synth.classes" => self.synth.classes.to_string(),
            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")));
            }
        };
        Ok(v)
    }

    /// Applies `key = value` lines from a config file on top of `self`.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::file(path, format!("cannot read config: {e}")))?;
        self.apply_text(&text)
            .map_err(|e| Error::file(path, e.to_string()))
    }

    fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override as passed on the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {pair:?}: expected key=value"))
        })?;
        self.set(key.trim(), value.trim())
    }

    /// Seed fallback: if `train.seed` was never set explicitly and
    /// `PIHOT_SEED` is defined, use it. An unparsable value is an error.
    pub fn apply_env(&mut self) -> Result<()> {
        let value = std::env::var("PIHOT_SEED").ok();
        self.apply_env_seed(value.as_deref())
    }

    fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        if self.explicit.contains("train.seed") {
            return Ok(());
        }
        if let Some(raw) = value {
            self.train.seed = raw.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("PIHOT_SEED: expected an integer, got {raw:?}"))
            })?;
        }
        Ok(())
    }

    /// All keys and values in canonical order, one `key = value` per line.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("every canonical key is readable");
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Rebuilds a configuration from [`snapshot`](Self::snapshot) output.
    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation. Call once after all sources are applied.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.out_channels == 0 {
            return Err(Error::Config("model.out_channels must be >= 1".into()));
        }
        if m.downsample == 0 || !m.downsample.is_power_of_two() {
            return Err(Error::Config(
                "model.downsample must be a power of two >= 1".into(),
            ));
        }
        if m.num_classes < 2 {
            return Err(Error::Config(
                "model.num_classes must be >= 2 (no-contact class plus at least one)".into(),
            ));
        }
        if !(m.alpha.is_finite() && m.alpha >= 0.0 && m.beta.is_finite() && m.beta >= 0.0) {
            return Err(Error::Config(
                "model.alpha and model.beta must be finite and non-negative".into(),
            ));
        }
        if self.mask.dilation_kernel == 0 || self.mask.dilation_kernel % 2 == 0 {
            return Err(Error::Config(
                "mask.dilation_kernel must be odd and >= 1".into(),
            ));
        }
        if self.plugins.inpainter == InpainterKind::External
            && self.plugins.inpainter_cmd.is_empty()
        {
            return Err(Error::Config(
                "plugins.inpainter = external requires plugins.inpainter_cmd".into(),
            ));
        }
        if self.plugins.depth == DepthKind::External && self.plugins.depth_cmd.is_empty() {
            return Err(Error::Config(
                "plugins.depth = external requires plugins.depth_cmd".into(),
            ));
        }
        if !(self.plugins.depth_scale.is_finite() && self.plugins.depth_scale > 0.0) {
            return Err(Error::Config("plugins.depth_scale must be positive".into()));
        }
        if !(self.loss.background_weight.is_finite() && self.loss.background_weight >= 0.0) {
            return Err(Error::Config(
                "loss.background_weight must be finite and non-negative".into(),
            ));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if t.crop && t.crop_size == 0 {
            return Err(Error::Config(
                "train.crop requires train.crop_size >= 1".into(),
            ));
        }
        let s = &self.synth;
        if s.size < 8 {
            return Err(Error::Config("synth.size must be >= 8".into()));
        }
        if s.min_objects == 0 || s.max_objects < s.min_objects {
            return Err(Error::Config(
                "synth object counts require 1 <= min_objects <= max_objects".into(),
            ));
        }
        if !(0.0..=1.0).contains(&s.contact_fraction) {
            return Err(Error::Config(
                "synth.contact_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(s.noise.is_finite() && (0.0..=0.5).contains(&s.noise)) {
            return Err(Error::Config("synth.noise must lie in [0, 0.5]".into()));
        }
        if !(s.depth_tolerance.is_finite() && s.depth_tolerance >= 0.0) {
            return Err(Error::Config(
                "synth.depth_tolerance must be finite and non-negative".into(),
            ));
        }
        if s.classes == 0 || s.classes > m.num_classes - 1 {
            return Err(Error::Config(format!(
                "synth.classes must lie in 1..={} (model.num_classes - 1)",
                m.num_classes - 1
            )));
        }
        Ok(())
    }

    /// `model.attn_dim` with 0 resolved to the feature channel count.
    pub fn resolved_attn_dim(&self) -> usize {
        if self.model.attn_dim == 0 {
            self.model.out_channels
        } else {
            self.model.attn_dim
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model.alpha, 0.1);
        assert_eq!(cfg.model.beta, 0.1);
        assert_eq!(cfg.model.num_classes, 18);
        assert_eq!(cfg.loss.background_weight, 0.2);
        assert_eq!(cfg.train.lr, 1e-5);
        assert_eq!(cfg.mask.dilation_kernel, 3);
        assert_eq!(cfg.plugins.depth_scale, 1000.0);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("model.backbone", "resnet50").unwrap();
        cfg.set("train.lr", "0.001").unwrap();
        cfg.set("train.oi", "false").unwrap();
        cfg.set("plugins.depth", "constant_stub").unwrap();
        let rebuilt = RunConfig::from_snapshot(&cfg.snapshot()).unwrap();
        assert_eq!(rebuilt.snapshot(), cfg.snapshot());
        assert_eq!(rebuilt.model.backbone, Backbone::Resnet50);
        assert!(!rebuilt.train.oi);
    }

    #[test]
    fn snapshot_covers_every_key() {
        let cfg = RunConfig::default();
        let snap = cfg.snapshot();
        for key in KEYS {
            assert!(
                snap.lines().any(|l| l.starts_with(&format!("{key} = "))),
                "missing {key}"
            );
        }
        assert_eq!(snap.lines().count(), KEYS.len());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("train.warmup", "10").unwrap_err();
        assert!(err.to_string().contains("train.warmup"));
    }

    #[test]
    fn malformed_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("train.steps", "many").is_err());
        assert!(cfg.set("train.oi", "yes").is_err());
        assert!(cfg.set("model.backbone", "resnet101").is_err());
    }

    #[test]
    fn file_text_supports_comments_and_reports_line_numbers() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\n\ntrain.steps = 9\n  model.alpha=0.25\n")
            .unwrap();
        assert_eq!(cfg.train.steps, 9);
        assert_eq!(cfg.model.alpha, 0.25);

        let err = cfg.apply_text("train.steps = 1\nnot a pair\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn override_requires_key_equals_value() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.batch_size=2").unwrap();
        assert_eq!(cfg.train.batch_size, 2);
        assert!(cfg.apply_override("train.batch_size").is_err());
    }

    #[test]
    fn env_seed_is_a_fallback_not_an_override() {
        let mut cfg = RunConfig::default();
        cfg.apply_env_seed(Some("77")).unwrap();
        assert_eq!(cfg.train.seed, 77);

        let mut cfg = RunConfig::default();
        cfg.set("train.seed", "5").unwrap();
        cfg.apply_env_seed(Some("77")).unwrap();
        assert_eq!(cfg.train.seed, 5);

        let mut cfg = RunConfig::default();
        assert!(cfg.apply_env_seed(Some("not-a-seed")).is_err());
    }

    #[test]
    fn validate_catches_cross_field_mistakes() {
        let mut cfg = RunConfig::default();
        cfg.set("mask.dilation_kernel", "4").unwrap();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.set("synth.min_objects", "5").unwrap();
        cfg.set("synth.max_objects", "2").unwrap();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.set("synth.classes", "18").unwrap();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.set("plugins.inpainter", "external").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("plugins.inpainter_cmd", "/usr/bin/inpaint").unwrap();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn resolved_attn_dim_defaults_to_channels() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.resolved_attn_dim(), cfg.model.out_channels);
        cfg.set("model.attn_dim", "12").unwrap();
        assert_eq!(cfg.resolved_attn_dim(), 12);
    }
}
