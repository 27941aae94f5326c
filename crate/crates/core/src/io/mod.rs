//! Dataset ingestion, persistence, cue caching, configuration, and the
//! synthetic benchmark generator.

pub mod cache;
pub mod config;
pub mod dataset;
pub mod png;
pub mod synthetic;

pub use cache::{cache_cues, CacheManifest, CacheStats};
pub use config::{CueConfig, EvalConfig, ObjectnessConfig, PipelineConfig};
pub use dataset::{load_dataset, write_video, DatasetLayout, MaskFiles};
pub use synthetic::{generate_benchmark, generate_synthetic, SyntheticSceneSpec};
