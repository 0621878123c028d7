//! Run configuration: a plain `key = value` file, CLI overrides and ablation presets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gres_core::encoders::EncoderConfig;
use gres_core::model::ModelConfig;
use gres_core::objective::LossWeights;
use gres_core::rela::{AggregationMode, NoTargetMode, PredictConfig, RelaConfig};
use gres_core::GresError;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub canvas: usize,
    pub patch: usize,
    pub channels: usize,
    pub regions_p: usize,
    pub max_tokens: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_weight_mask: f64,
    pub loss_weight_minimap: f64,
    pub loss_weight_no_target: f64,
    pub aggregation: AggregationMode,
    pub no_target_mode: NoTargetMode,
    pub hard_split_pooling: bool,
    pub disable_minimap: bool,
    pub disable_region_att: bool,
    pub disable_language_att: bool,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Keys set by a config file or override, as opposed to defaults.
    explicit: BTreeSet<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            canvas: 48,
            patch: 4,
            channels: 32,
            regions_p: 4,
            max_tokens: 16,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 8,
            loss_weight_mask: 1.0,
            loss_weight_minimap: 1.0,
            loss_weight_no_target: 1.0,
            aggregation: AggregationMode::Normalized,
            no_target_mode: NoTargetMode::Classifier,
            hard_split_pooling: false,
            disable_minimap: false,
            disable_region_att: false,
            disable_language_att: false,
            seed: 0,
            data_dir: None,
            out_dir: None,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value {value:?} for {key}")))
}

impl Config {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "canvas" => self.canvas = parse(key, v)?,
            "patch" => self.patch = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "regions_p" => self.regions_p = parse(key, v)?,
            "max_tokens" => self.max_tokens = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "loss_weight_mask" => self.loss_weight_mask = parse(key, v)?,
            "loss_weight_minimap" => self.loss_weight_minimap = parse(key, v)?,
            "loss_weight_no_target" => self.loss_weight_no_target = parse(key, v)?,
            "aggregation" => {
                self.aggregation = v
                    .parse()
                    .map_err(|e: GresError| HarnessError::Config(e.to_string()))?
            }
            "no_target_mode" => {
                self.no_target_mode = v
                    .parse()
                    .map_err(|e: GresError| HarnessError::Config(e.to_string()))?
            }
            "hard_split_pooling" => self.hard_split_pooling = parse(key, v)?,
            "disable_minimap" => self.disable_minimap = parse(key, v)?,
            "disable_region_att" => self.disable_region_att = parse(key, v)?,
            "disable_language_att" => self.disable_language_att = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            _ => return Err(HarnessError::Config(format!("unknown config key {key:?}"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown or repeated keys are errors.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(HarnessError::Config(format!(
                    "line {}: duplicate key {k:?}",
                    i + 1
                )));
            }
            cfg.set(k, v).map_err(|e| {
                HarnessError::Config(format!(
                    "line {}: {}",
                    i + 1,
                    e.to_string().trim_start_matches("config error: ")
                ))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GresError::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.regions_p < 1 {
            return bad("regions_p must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size < 1 || self.channels < 1 || self.max_tokens < 1 || self.patch < 1 {
            return bad("batch_size, channels, max_tokens and patch must be positive".into());
        }
        if !self.canvas.is_multiple_of(self.patch) {
            return bad(format!(
                "canvas {} is not divisible by patch {}",
                self.canvas, self.patch
            ));
        }
        if self.regions_p > self.canvas / self.patch {
            return bad(format!(
                "regions_p {} exceeds the {} feature grid",
                self.regions_p,
                self.canvas / self.patch
            ));
        }
        for (k, w) in [
            ("loss_weight_mask", self.loss_weight_mask),
            ("loss_weight_minimap", self.loss_weight_minimap),
            ("loss_weight_no_target", self.loss_weight_no_target),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{k} must be a non-negative number"));
            }
        }
        if self.disable_minimap
            && self.is_explicit("loss_weight_minimap")
            && self.loss_weight_minimap > 0.0
        {
            return bad("disable_minimap contradicts a positive loss_weight_minimap".into());
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                channels: self.channels,
                patch: self.patch,
                image_h: self.canvas,
                image_w: self.canvas,
                max_tokens: self.max_tokens,
                vocab_size,
            },
            rela: RelaConfig {
                p: self.regions_p,
                channels: self.channels,
                aggregation: self.aggregation,
                hard_split_pooling: self.hard_split_pooling,
                region_att: !self.disable_region_att,
                language_att: !self.disable_language_att,
            },
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            mask: self.loss_weight_mask,
            minimap: if self.disable_minimap {
                0.0
            } else {
                self.loss_weight_minimap
            },
            no_target: self.loss_weight_no_target,
        }
    }

    pub fn predict_config(&self) -> PredictConfig {
        PredictConfig {
            mode: self.no_target_mode,
            ..PredictConfig::default()
        }
    }

    fn entries(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::from([
            ("aggregation", self.aggregation.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("canvas", self.canvas.to_string()),
            ("channels", self.channels.to_string()),
            (
                "disable_language_att",
                self.disable_language_att.to_string(),
            ),
            ("disable_minimap", self.disable_minimap.to_string()),
            ("disable_region_att", self.disable_region_att.to_string()),
            ("epochs", self.epochs.to_string()),
            ("hard_split_pooling", self.hard_split_pooling.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("loss_weight_mask", format!("{:?}", self.loss_weight_mask)),
            (
                "loss_weight_minimap",
                format!("{:?}", self.loss_weight_minimap),
            ),
            (
                "loss_weight_no_target",
                format!("{:?}", self.loss_weight_no_target),
            ),
            ("max_tokens", self.max_tokens.to_string()),
            ("no_target_mode", self.no_target_mode.to_string()),
            ("patch", self.patch.to_string()),
            ("regions_p", self.regions_p.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        if let Some(d) = &self.data_dir {
            m.insert("data_dir", d.display().to_string());
        }
        if let Some(d) = &self.out_dir {
            m.insert("out_dir", d.display().to_string());
        }
        m
    }
}

impl fmt::Display for Config {
    /// The same `key = value` format [`Config::parse_str`] reads.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Named ablations, each switching off or substituting one path of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// Fixed average pooling over a P×P split instead of region-image attention.
    HardSplit,
    /// No minimap supervision.
    NoMinimap,
    NoRegionAtt,
    NoLanguageAtt,
    /// Both attentions off: regions multiplied point-wise with averaged word features.
    BaselineFusion,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::HardSplit,
        Preset::NoMinimap,
        Preset::NoRegionAtt,
        Preset::NoLanguageAtt,
        Preset::BaselineFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::HardSplit => "hard_split",
            Preset::NoMinimap => "no_minimap",
            Preset::NoRegionAtt => "no_region_att",
            Preset::NoLanguageAtt => "no_language_att",
            Preset::BaselineFusion => "baseline_fusion",
        }
    }

    fn flags(self) -> &'static [&'static str] {
        match self {
            Preset::HardSplit => &["hard_split_pooling"],
            Preset::NoMinimap => &["disable_minimap"],
            Preset::NoRegionAtt => &["disable_region_att"],
            Preset::NoLanguageAtt => &["disable_language_att"],
            Preset::BaselineFusion => &["disable_region_att", "disable_language_att"],
        }
    }

    /// Sets the preset's flags. A flag explicitly configured to `false` contradicts
    /// the preset and is a config error.
    pub fn apply(self, cfg: &mut Config) -> Result<()> {
        for &flag in self.flags() {
            let current = match flag {
                "hard_split_pooling" => cfg.hard_split_pooling,
                "disable_minimap" => cfg.disable_minimap,
                "disable_region_att" => cfg.disable_region_att,
                _ => cfg.disable_language_att,
            };
            if cfg.is_explicit(flag) && !current {
                return Err(HarnessError::Config(format!(
                    "preset {} contradicts `{flag} = false`",
                    self.name()
                )));
            }
            cfg.set(flag, "true")?;
        }
        cfg.validate()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}
