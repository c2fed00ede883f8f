//! Experiment configuration: named presets plus flat `key = value` overrides.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mams::selection::SelectionConfig;
use mams::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticVideoSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    None,
    FixedLearnable,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    Mams,
    AlwaysLarge,
    AlwaysSmall,
    SwappedRule,
    InvertedScore,
    ThreeModule,
}

impl RoutingMode {
    /// Whether the mode runs the scoring pass and frame selection.
    pub fn uses_selector(self) -> bool {
        !matches!(self, RoutingMode::AlwaysLarge)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    /// Seeds for multi-seed commands (`sweep`, `ablate`).
    pub seeds: Vec<u64>,

    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    /// Frames fed to the large module; clips are uniformly subsampled to it.
    pub t_large: usize,
    pub t_small: usize,
    pub t_mid: Option<usize>,
    pub patch_rows: usize,
    pub patch_cols: usize,

    pub tau: f64,
    pub max_while_iters: Option<usize>,
    /// Noise-free selection at evaluation.
    pub deterministic_eval: bool,
    pub mask: MaskMode,
    pub routing: RoutingMode,

    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Evaluate every this many epochs (0: final epoch only).
    pub eval_every: usize,

    pub train_videos: usize,
    pub eval_videos: usize,
    pub high_fraction: f64,
    /// Seed of the synthetic data; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub source_frames: usize,
    pub frame_size: usize,
    /// Intensity of a full-brightness pixel.
    pub pixel_scale: f64,
    pub low_window: usize,
    pub event_min: usize,
    pub event_max: usize,
    /// Largest background pixel value.
    pub noise: u8,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: "mams".into(),
            seed: 0,
            seeds: vec![0, 1, 2],
            d: 32,
            heads: 2,
            layers: 2,
            mlp_hidden: 64,
            t_large: 16,
            t_small: 6,
            t_mid: None,
            patch_rows: 2,
            patch_cols: 2,
            tau: 1.0,
            max_while_iters: None,
            deterministic_eval: false,
            mask: MaskMode::Adaptive,
            routing: RoutingMode::Mams,
            epochs: 40,
            lr: 0.2,
            batch_size: 8,
            eval_every: 0,
            train_videos: 400,
            eval_videos: 200,
            high_fraction: 0.5,
            data_seed: None,
            source_frames: 16,
            frame_size: 16,
            pixel_scale: 24.0,
            low_window: 4,
            event_min: 5,
            event_max: 10,
            noise: 0,
        }
    }
}

pub const PRESETS: [&str; 10] = [
    "mams",
    "mams-no-mask",
    "mams-fixed-mask",
    "baseline",
    "baseline-fixed-mask",
    "always-small",
    "swapped-rule",
    "inverted-score",
    "three-module",
    "overfit8",
];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            preset: name.into(),
            ..Self::default()
        };
        let cfg = match name {
            "mams" => base,
            "mams-no-mask" => Self {
                mask: MaskMode::None,
                ..base
            },
            "mams-fixed-mask" => Self {
                mask: MaskMode::FixedLearnable,
                ..base
            },
            "baseline" => Self {
                mask: MaskMode::None,
                routing: RoutingMode::AlwaysLarge,
                ..base
            },
            "baseline-fixed-mask" => Self {
                mask: MaskMode::FixedLearnable,
                routing: RoutingMode::AlwaysLarge,
                ..base
            },
            "always-small" => Self {
                routing: RoutingMode::AlwaysSmall,
                ..base
            },
            "swapped-rule" => Self {
                routing: RoutingMode::SwappedRule,
                ..base
            },
            "inverted-score" => Self {
                routing: RoutingMode::InvertedScore,
                ..base
            },
            "three-module" => Self {
                routing: RoutingMode::ThreeModule,
                t_mid: Some(8),
                ..base
            },
            "overfit8" => Self {
                mask: MaskMode::None,
                routing: RoutingMode::AlwaysLarge,
                train_videos: 8,
                eval_videos: 8,
                batch_size: 8,
                epochs: 2000,
                lr: 0.2,
                ..base
            },
            other => bail!("unknown preset {other:?}; known: {}", PRESETS.join(", ")),
        };
        Ok(cfg)
    }

    /// Preset `preset` (or the file's own `preset` key, or `mams`) with the
    /// file's keys layered on top.
    pub fn from_toml_str(text: &str, preset: Option<&str>) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid key = value text")?;
        let name = match (preset, table.get("preset")) {
            (Some(p), _) => p.to_string(),
            (None, Some(v)) => v.as_str().context("preset must be a string")?.to_string(),
            (None, None) => "mams".into(),
        };
        let base = Self::preset(&name)?;
        let mut merged = toml::Table::try_from(&base)?;
        merged.extend(table);
        merged.insert("preset".into(), toml::Value::String(name));
        let cfg: Self = merged.try_into().context("invalid config value")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text, preset)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn video_spec(&self) -> SyntheticVideoSpec {
        SyntheticVideoSpec {
            frames: self.source_frames,
            height: self.frame_size,
            width: self.frame_size,
            low_window: self.low_window,
            event_range: (self.event_min, self.event_max),
            noise: self.noise,
        }
    }

    pub fn model_config(&self, vocab_size: usize, max_len: usize) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            layers: self.layers,
            mlp_hidden: self.mlp_hidden,
            vocab_size,
            max_len,
            t_large: self.t_large,
            t_small: self.t_small,
            t_mid: self.t_mid,
            per_frame: self.patch_rows * self.patch_cols,
            frame_height: self.frame_size,
            frame_width: self.frame_size,
            patch_rows: self.patch_rows,
            patch_cols: self.patch_cols,
            learnable_mask: self.mask == MaskMode::FixedLearnable,
        }
    }

    pub fn selection_config(&self, deterministic: bool) -> Result<SelectionConfig> {
        let mut s = SelectionConfig::new(self.t_small, self.t_large)?.deterministic(deterministic);
        s.tau = self.tau;
        if let Some(m) = self.max_while_iters {
            s.max_while_iters = m;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1 && self.batch_size >= 1, "epochs and batch_size must be positive");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        ensure!(self.pixel_scale > 0.0 && self.pixel_scale.is_finite(), "pixel_scale must be positive");
        ensure!(self.train_videos >= 1 && self.eval_videos >= 1, "datasets must be non-empty");
        ensure!(
            self.t_large <= self.source_frames,
            "t_large {} exceeds the {} source frames",
            self.t_large,
            self.source_frames
        );
        ensure!(
            (self.routing == RoutingMode::ThreeModule) == self.t_mid.is_some(),
            "t_mid is set exactly for the three-module routing"
        );
        self.video_spec().validate()?;
        self.model_config(8, 4).validate()?;
        self.selection_config(false)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_consistent() {
        for p in PRESETS {
            ExperimentConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn swapped_rule_differs_from_mams_only_in_routing() {
        let a = ExperimentConfig::preset("mams").unwrap();
        let b = ExperimentConfig::preset("swapped-rule").unwrap();
        assert_eq!(
            ExperimentConfig {
                routing: RoutingMode::Mams,
                preset: "mams".into(),
                ..b
            },
            a
        );
    }

    #[test]
    fn overrides_layer_on_presets() {
        let c = ExperimentConfig::from_toml_str("epochs = 3\nmask = \"none\"\nseed = 9\n", Some("inverted-score")).unwrap();
        assert_eq!(c.routing, RoutingMode::InvertedScore);
        assert_eq!((c.epochs, c.mask, c.seed), (3, MaskMode::None, 9));
        let c = ExperimentConfig::from_toml_str("preset = \"three-module\"\nt_mid = 10\n", None).unwrap();
        assert_eq!(c.t_mid, Some(10));
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n", None).is_err());
        assert!(ExperimentConfig::from_toml_str("t_mid = 6\n", Some("mams")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::preset("three-module").unwrap();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string(), None).unwrap();
        assert_eq!(back, c);
    }
}
