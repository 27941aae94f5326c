//! Run configuration persisted as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cues::{EdgeDensityObjectness, LocationPrior, ObjectnessProvider, PrecomputedLocation, PrecomputedObjectness};
use crate::error::{Error, Result};
use crate::map::ImageShape;
use crate::nn::BackboneConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectnessConfig {
    EdgeDensity(EdgeDensityObjectness),
    Precomputed { location: PrecomputedLocation },
}

impl Default for ObjectnessConfig {
    fn default() -> Self {
        ObjectnessConfig::EdgeDensity(EdgeDensityObjectness::default())
    }
}

impl ObjectnessConfig {
    pub fn build(&self) -> Box<dyn ObjectnessProvider> {
        match self {
            ObjectnessConfig::EdgeDensity(d) => Box::new(d.clone()),
            ObjectnessConfig::Precomputed { location } => Box::new(PrecomputedObjectness::new(location.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CueConfig {
    pub objectness: ObjectnessConfig,
    pub location: LocationPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Also score `a_pos` and `1 - a_neg` directly.
    pub score_anchors: bool,
    /// Write prediction overlays next to the report.
    pub overlays: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score_anchors: true,
            overlays: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    /// Working resolution applied to frames, cues, anchors and predictions.
    pub resolution: ImageShape,
    pub output: PathBuf,
    /// Cue cache directory; defaults to `<output>/cue_cache`.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub cues: CueConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            resolution: ImageShape {
                height: 256,
                width: 320,
            },
            output: PathBuf::from("runs/default"),
            cache_dir: None,
            seed: 0,
            cues: CueConfig::default(),
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        ImageShape::new(self.resolution.height, self.resolution.width)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.train
            .network
            .check_resolution(self.resolution)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Training configuration with the top-level seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output.join("cue_cache"))
    }
}
