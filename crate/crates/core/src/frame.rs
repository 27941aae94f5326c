//! Video frames and time-ordered sequences.

use crate::error::{Error, Result};
use crate::map::ImageShape;

/// Interleaved RGB raster with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    shape: ImageShape,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(shape: ImageShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} channel values supplied for a {shape} RGB image",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "RGB channel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, rgb: [f32; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(shape.len() * 3).collect();
        Self::new(shape, data)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let shape = ImageShape::new(img.height() as usize, img.width() as usize)?;
        let data = img.as_raw().iter().map(|v| f32::from(*v) / 255.0).collect();
        Ok(Self { shape, data })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.shape.width as u32, self.shape.height as u32, raw)
            .expect("buffer length matches shape")
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> [f32; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// One frame of a video: its identity, time index, and color raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSample {
    pub video_id: String,
    pub t: usize,
    /// File stem the frame was loaded from (or would be written to).
    pub stem: String,
    pub rgb: RgbImage,
}

impl FrameSample {
    pub fn new(video_id: impl Into<String>, t: usize, rgb: RgbImage) -> Self {
        Self {
            video_id: video_id.into(),
            t,
            stem: format!("{t:06}"),
            rgb,
        }
    }

    pub fn with_stem(mut self, stem: impl Into<String>) -> Self {
        self.stem = stem.into();
        self
    }

    pub fn shape(&self) -> ImageShape {
        self.rgb.shape()
    }

    /// `video/stem`, used in diagnostics.
    pub fn label(&self) -> String {
        format!("{}/{}", self.video_id, self.stem)
    }
}

/// A non-empty, time-ordered list of frames from one video sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    video_id: String,
    frames: Vec<FrameSample>,
}

impl VideoSequence {
    pub fn new(video_id: impl Into<String>, mut frames: Vec<FrameSample>) -> Result<Self> {
        let video_id = video_id.into();
        if frames.is_empty() {
            return Err(Error::Empty(format!("video {video_id} has no frames")));
        }
        frames.sort_by_key(|f| f.t);
        for w in frames.windows(2) {
            if w[0].t == w[1].t {
                return Err(Error::InvalidArgument(format!(
                    "duplicate frame index {} in video {video_id}",
                    w[0].t
                )));
            }
        }
        let shape = frames[0].shape();
        for f in &frames {
            if f.video_id != video_id {
                return Err(Error::InvalidArgument(format!(
                    "frame {} does not belong to video {video_id}",
                    f.label()
                )));
            }
            shape.ensure_same(&f.shape())?;
        }
        Ok(Self { video_id, frames })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[FrameSample] {
        &self.frames
    }

    /// Video length T.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.frames[0].shape()
    }
}
