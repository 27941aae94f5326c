//! Handcrafted per-frame cue maps: color, objectness, and location.

pub mod color;
pub mod location;
pub mod objectness;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frame::VideoSequence;
use crate::map::ProbMap;

pub use color::color_cue;
pub use location::{location_cue_gaussian, location_cue_video};
pub use objectness::{
    EdgeDensityObjectness, ObjectnessProvider, PrecomputedLocation, PrecomputedObjectness,
};

/// The three cue maps of one frame. All share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CueSet {
    pub color: ProbMap,
    pub objectness: ProbMap,
    pub location: ProbMap,
}

impl CueSet {
    pub fn new(color: ProbMap, objectness: ProbMap, location: ProbMap) -> Result<Self> {
        color.shape().ensure_same(&objectness.shape())?;
        color.shape().ensure_same(&location.shape())?;
        Ok(Self {
            color,
            objectness,
            location,
        })
    }

    pub fn get(&self, kind: CueKind) -> &ProbMap {
        match kind {
            CueKind::Color => &self.color,
            CueKind::Objectness => &self.objectness,
            CueKind::Location => &self.location,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Color,
    Objectness,
    Location,
}

impl CueKind {
    pub const ALL: [CueKind; 3] = [CueKind::Color, CueKind::Objectness, CueKind::Location];

    pub fn short(self) -> &'static str {
        match self {
            CueKind::Color => "color",
            CueKind::Objectness => "obj",
            CueKind::Location => "loc",
        }
    }
}

/// How the location cue is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationPrior {
    /// Mean color cue over the whole video.
    VideoMean,
    /// Fixed center Gaussian; sigma as a fraction of the image diagonal.
    Gaussian { sigma_frac: f64 },
}

impl Default for LocationPrior {
    fn default() -> Self {
        LocationPrior::VideoMean
    }
}

/// Computes the cue sets of every frame in a video.
pub fn video_cues(
    video: &VideoSequence,
    objectness: &dyn ObjectnessProvider,
    location: LocationPrior,
) -> Result<Vec<CueSet>> {
    let colors: Vec<ProbMap> = video.frames().iter().map(color_cue).collect();
    let loc = match location {
        LocationPrior::VideoMean => location_cue_video(video, &colors)?,
        LocationPrior::Gaussian { sigma_frac } => location_cue_gaussian(video.shape(), sigma_frac)?,
    };
    video
        .frames()
        .iter()
        .zip(colors)
        .map(|(frame, color)| CueSet::new(color, objectness.objectness(frame)?, loc.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{FrameSample, RgbImage};
    use crate::map::ImageShape;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn all_cues_stay_in_unit_interval(
            h in 1usize..12, w in 1usize..12, seed in any::<u64>(), frames in 1usize..4,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let shape = ImageShape::new(h, w).unwrap();
            let video = VideoSequence::new("v", (0..frames).map(|t| {
                let data = (0..shape.len() * 3).map(|_| rng.gen::<f32>()).collect();
                FrameSample::new("v", t, RgbImage::new(shape, data).unwrap())
            }).collect()).unwrap();
            for prior in [LocationPrior::VideoMean, LocationPrior::Gaussian { sigma_frac: 0.25 }] {
                for set in video_cues(&video, &EdgeDensityObjectness::default(), prior).unwrap() {
                    for kind in CueKind::ALL {
                        let m = set.get(kind);
                        prop_assert!(m.min() >= 0.0 && m.max() <= 1.0);
                    }
                }
            }
        }
    }
}
