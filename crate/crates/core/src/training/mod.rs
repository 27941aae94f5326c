//! Pair sampling, supervision modes, fold construction and the optimization loop.

mod folds;
mod labels;
mod pairs;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cues::CueKind;
use crate::diffusion::{DiffusionMargins, LossTerms};
use crate::error::{Error, Result};
use crate::nn::UNetDescriptor;

pub use folds::{folds_from_table, make_folds, FoldSplit};
pub use labels::{CountingLabels, LabelSource, MemoryLabels};
pub use pairs::{make_pairs, make_pairs_for_lengths, select_supervised_frames, FramePair, FrameRef};
pub use trainer::{
    prepare_anchors, prepare_video, run_training, train_step, PreparedFrame, PreparedVideo, StepRecord,
    TrainOutcome, TrainingVideo,
};

/// Share of frames whose anchors come from ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SupervisionMode {
    #[default]
    None,
    Half,
    Full,
}

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 3] = [SupervisionMode::None, SupervisionMode::Half, SupervisionMode::Full];

    pub fn percent(self) -> u8 {
        match self {
            SupervisionMode::None => 0,
            SupervisionMode::Half => 50,
            SupervisionMode::Full => 100,
        }
    }

    pub fn fraction(self) -> f64 {
        f64::from(self.percent()) / 100.0
    }

    pub fn from_fraction(fraction: f64) -> Result<Self> {
        match fraction {
            f if f == 0.0 => Ok(SupervisionMode::None),
            f if f == 0.5 => Ok(SupervisionMode::Half),
            f if f == 1.0 => Ok(SupervisionMode::Full),
            f => Err(Error::InvalidArgument(format!(
                "supervision fraction must be 0, 0.5 or 1, got {f}"
            ))),
        }
    }
}

impl TryFrom<u8> for SupervisionMode {
    type Error = Error;

    fn try_from(percent: u8) -> Result<Self> {
        match percent {
            0 => Ok(SupervisionMode::None),
            50 => Ok(SupervisionMode::Half),
            100 => Ok(SupervisionMode::Full),
            p => Err(Error::InvalidArgument(format!("supervision must be 0, 50 or 100, got {p}"))),
        }
    }
}

impl From<SupervisionMode> for u8 {
    fn from(mode: SupervisionMode) -> u8 {
        mode.percent()
    }
}

impl FromStr for SupervisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p: u8 = s
            .trim_end_matches('%')
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("supervision must be 0, 50 or 100, got {s:?}")))?;
        p.try_into()
    }
}

impl fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.percent())
    }
}

/// Whether inference runs on held-out videos (TT) or on the training videos (SS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentSetting {
    #[serde(rename = "tt")]
    TrainTest,
    #[default]
    #[serde(rename = "ss")]
    SingleStage,
}

impl FromStr for ExperimentSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tt" => Ok(ExperimentSetting::TrainTest),
            "ss" => Ok(ExperimentSetting::SingleStage),
            _ => Err(Error::InvalidArgument(format!("setting must be tt or ss, got {s:?}"))),
        }
    }
}

impl fmt::Display for ExperimentSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentSetting::TrainTest => "TT",
            ExperimentSetting::SingleStage => "SS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// `(t, t + stride)` within each video.
    #[default]
    Adjacent,
    /// Uniformly drawn unordered pairs across the whole dataset.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margins: DiffusionMargins,
    pub stride: usize,
    pub pairing: PairingMode,
    /// Pairs per optimizer step; the loss is averaged over the batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub supervision: SupervisionMode,
    pub setting: ExperimentSetting,
    pub terms: LossTerms,
    /// Cues fused into anchors on unlabeled frames.
    pub cues: Vec<CueKind>,
    pub network: UNetDescriptor,
    pub folds: usize,
    /// Explicit test-video lists per fold; overrides seeded fold construction.
    pub split_table: Option<Vec<Vec<String>>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margins: DiffusionMargins::default(),
            stride: 1,
            pairing: PairingMode::Adjacent,
            batch_size: 4,
            epochs: 30,
            learning_rate: 1e-4,
            seed: 0,
            supervision: SupervisionMode::None,
            setting: ExperimentSetting::SingleStage,
            terms: LossTerms::FULL,
            cues: CueKind::ALL.to_vec(),
            network: UNetDescriptor::default(),
            folds: 4,
            split_table: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.margins.validate()?;
        self.network.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.cues.is_empty() {
            return bad("at least one cue must be fused");
        }
        if !(self.terms.anchor || self.terms.diffusion_fg || self.terms.diffusion_bg) {
            return bad("at least one loss term must be enabled");
        }
        if self.folds == 0 {
            return bad("folds must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supervision_parses_and_round_trips() {
        assert_eq!("50".parse::<SupervisionMode>().unwrap(), SupervisionMode::Half);
        assert_eq!("100%".parse::<SupervisionMode>().unwrap(), SupervisionMode::Full);
        assert!("25".parse::<SupervisionMode>().is_err());
        assert!(SupervisionMode::from_fraction(0.3).is_err());
        assert_eq!(SupervisionMode::from_fraction(0.5).unwrap(), SupervisionMode::Half);
        let json = serde_json::to_string(&SupervisionMode::Full).unwrap();
        assert_eq!(json, "100");
        assert_eq!(serde_json::from_str::<SupervisionMode>("0").unwrap(), SupervisionMode::None);
    }

    #[test]
    fn setting_parses() {
        assert_eq!("SS".parse::<ExperimentSetting>().unwrap(), ExperimentSetting::SingleStage);
        assert_eq!("tt".parse::<ExperimentSetting>().unwrap(), ExperimentSetting::TrainTest);
        assert!("xx".parse::<ExperimentSetting>().is_err());
        assert_eq!(serde_json::to_string(&ExperimentSetting::TrainTest).unwrap(), "\"tt\"");
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.batch_size, c.epochs, c.learning_rate), (4, 30, 1e-4));
        let text = toml::to_string(&c).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let bad = TrainConfig { stride: 0, ..c };
        assert!(bad.validate().is_err());
    }
}
