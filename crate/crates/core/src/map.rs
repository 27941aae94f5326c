//! Per-pixel rasters shared by every stage: probability maps and binary masks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image shape must be at least 1x1, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ensure_same(&self, other: &ImageShape) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch {
                expected: *self,
                found: *other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// A per-pixel probability field with every value in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    shape: ImageShape,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(shape: ImageShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values supplied for a {shape} map",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "probability {v} at pixel {i} is outside [0, 1]"
            )));
        }
        Ok(Self { shape, values })
    }

    /// Builds a map, clamping every value into `[0, 1]`. NaN becomes 0.
    pub fn from_clamped(shape: ImageShape, mut values: Vec<f64>) -> Result<Self> {
        for v in &mut values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(shape, values)
    }

    pub fn filled(shape: ImageShape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn from_fn(shape: ImageShape, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                values.push(f(y, x));
            }
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.shape.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `1 - p` at every pixel.
    pub fn complement(&self) -> ProbMap {
        ProbMap {
            shape: self.shape,
            values: self.values.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Pixelwise product; the result stays in `[0, 1]`.
    pub fn product(&self, other: &ProbMap) -> Result<ProbMap> {
        self.shape.ensure_same(&other.shape)?;
        Ok(ProbMap {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }
}

/// Strictly binary `{0, 1}` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: ImageShape,
    values: Vec<u8>,
}

/// Manual annotation of instrument pixels.
pub type GroundTruthMask = BinaryMask;

impl BinaryMask {
    pub fn new(shape: ImageShape, values: Vec<u8>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values supplied for a {shape} mask",
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::NonBinary(format!("value {v} at pixel {i}")));
        }
        Ok(Self { shape, values })
    }

    pub fn from_bools(shape: ImageShape, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        Self::new(shape, bits.into_iter().map(u8::from).collect())
    }

    pub fn empty(shape: ImageShape) -> Self {
        Self {
            shape,
            values: vec![0; shape.len()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.shape.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|v| **v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.values.len() as f64
    }

    pub fn to_prob_map(&self) -> ProbMap {
        ProbMap {
            shape: self.shape,
            values: self.values.iter().map(|v| f64::from(*v)).collect(),
        }
    }
}
