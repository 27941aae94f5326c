//! Objectness cue: how object-like each image region is.
//!
//! The built-in detector scores sliding windows at several scales by their
//! normalized gradient-edge density, splats every window score back onto the
//! pixels it covers, and min-max normalizes the result per frame. Externally
//! computed maps can be supplied instead through [`PrecomputedObjectness`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameSample;
use crate::io::png;
use crate::map::{ImageShape, ProbMap};

pub trait ObjectnessProvider: Send + Sync {
    fn objectness(&self, frame: &FrameSample) -> Result<ProbMap>;

    /// Stable description used to key cached cue maps.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDensityObjectness {
    /// Window sides as fractions of `min(H, W)`.
    pub scales: Vec<f64>,
    /// Window step as a fraction of the window side.
    pub stride_frac: f64,
}

impl Default for EdgeDensityObjectness {
    fn default() -> Self {
        Self {
            scales: vec![0.125, 0.25, 0.5],
            stride_frac: 0.25,
        }
    }
}

/// Per-pixel gradient magnitude (Sobel, max over color channels).
pub(crate) fn gradient_magnitude(frame: &FrameSample) -> Vec<f64> {
    let ImageShape { height: h, width: w } = frame.shape();
    let data = frame.rgb.data();
    let at = |y: isize, x: isize, c: usize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        f64::from(data[(y * w + x) * 3 + c])
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut best = 0.0f64;
            for c in 0..3 {
                let gx = (at(y - 1, x + 1, c) + 2.0 * at(y, x + 1, c) + at(y + 1, x + 1, c)
                    - at(y - 1, x - 1, c)
                    - 2.0 * at(y, x - 1, c)
                    - at(y + 1, x - 1, c))
                    / 8.0;
                let gy = (at(y + 1, x - 1, c) + 2.0 * at(y + 1, x, c) + at(y + 1, x + 1, c)
                    - at(y - 1, x - 1, c)
                    - 2.0 * at(y - 1, x, c)
                    - at(y - 1, x + 1, c))
                    / 8.0;
                best = best.max((gx * gx + gy * gy).sqrt());
            }
            out[y as usize * w + x as usize] = best;
        }
    }
    out
}

/// Window origins along one axis, always including the last aligned window.
fn window_starts(extent: usize, side: usize, step: usize) -> Vec<usize> {
    let last = extent - side;
    let mut starts: Vec<usize> = (0..=last).step_by(step).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    starts
}

impl EdgeDensityObjectness {
    pub fn map(&self, frame: &FrameSample) -> Result<ProbMap> {
        let shape = frame.shape();
        let (h, w) = (shape.height, shape.width);
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(Error::InvalidArgument(
                "objectness scales must be fractions in (0, 1]".into(),
            ));
        }
        if !(self.stride_frac > 0.0 && self.stride_frac <= 1.0) {
            return Err(Error::InvalidArgument(
                "objectness stride fraction must lie in (0, 1]".into(),
            ));
        }
        let grad = gradient_magnitude(frame);

        // Summed-area table with a zero border row and column.
        let iw = w + 1;
        let mut integral = vec![0.0f64; (h + 1) * iw];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += grad[y * w + x];
                integral[(y + 1) * iw + x + 1] = integral[y * iw + x + 1] + row;
            }
        }
        let window_sum = |y0: usize, x0: usize, y1: usize, x1: usize| {
            integral[y1 * iw + x1] - integral[y0 * iw + x1] - integral[y1 * iw + x0]
                + integral[y0 * iw + x0]
        };

        let min_side = h.min(w);
        let mut combined = vec![0.0f64; h * w];
        for &scale in &self.scales {
            let side = ((scale * min_side as f64).round() as usize).clamp(1, min_side);
            let step = ((side as f64 * self.stride_frac).round() as usize).max(1);
            // Difference arrays for score mass and coverage count.
            let mut score_acc = vec![0.0f64; (h + 1) * iw];
            let mut cover_acc = vec![0.0f64; (h + 1) * iw];
            for &y0 in &window_starts(h, side, step) {
                for &x0 in &window_starts(w, side, step) {
                    let (y1, x1) = (y0 + side, x0 + side);
                    let density = window_sum(y0, x0, y1, x1) / (side * side) as f64;
                    for (acc, v) in [(&mut score_acc, density), (&mut cover_acc, 1.0)] {
                        acc[y0 * iw + x0] += v;
                        acc[y0 * iw + x1] -= v;
                        acc[y1 * iw + x0] -= v;
                        acc[y1 * iw + x1] += v;
                    }
                }
            }
            for acc in [&mut score_acc, &mut cover_acc] {
                for y in 0..=h {
                    for x in 1..=w {
                        acc[y * iw + x] += acc[y * iw + x - 1];
                    }
                }
                for y in 1..=h {
                    for x in 0..=w {
                        acc[y * iw + x] += acc[(y - 1) * iw + x];
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let cover = cover_acc[y * iw + x];
                    if cover > 0.5 {
                        combined[y * w + x] += score_acc[y * iw + x] / cover;
                    }
                }
            }
        }

        let lo = combined.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = combined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        // Flat frames have no edges anywhere: emit all zeros.
        if !(range > 1e-12) {
            return ProbMap::filled(shape, 0.0);
        }
        ProbMap::from_clamped(shape, combined.iter().map(|v| (v - lo) / range).collect())
    }
}

impl ObjectnessProvider for EdgeDensityObjectness {
    fn objectness(&self, frame: &FrameSample) -> Result<ProbMap> {
        self.map(frame)
    }

    fn fingerprint(&self) -> String {
        format!(
            "edge-density:scales={:?}:stride={}",
            self.scales, self.stride_frac
        )
    }
}

/// Where precomputed `<stem>.obj.png` files live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecomputedLocation {
    /// `<dataset root>/<video>/frames/<stem>.obj.png`
    AlongsideFrames(PathBuf),
    /// `<dir>/<video>/<stem>.obj.png`
    Directory(PathBuf),
}

/// Loads externally computed objectness maps, one 16-bit grayscale file per frame.
#[derive(Debug, Clone)]
pub struct PrecomputedObjectness {
    location: PrecomputedLocation,
}

impl PrecomputedObjectness {
    pub fn new(location: PrecomputedLocation) -> Self {
        Self { location }
    }

    pub fn path_for(&self, frame: &FrameSample) -> PathBuf {
        let name = format!("{}.obj.png", frame.stem);
        match &self.location {
            PrecomputedLocation::AlongsideFrames(root) => {
                root.join(&frame.video_id).join("frames").join(name)
            }
            PrecomputedLocation::Directory(dir) => dir.join(&frame.video_id).join(name),
        }
    }

    fn root(&self) -> &Path {
        match &self.location {
            PrecomputedLocation::AlongsideFrames(p) | PrecomputedLocation::Directory(p) => p,
        }
    }
}

impl ObjectnessProvider for PrecomputedObjectness {
    fn objectness(&self, frame: &FrameSample) -> Result<ProbMap> {
        let path = self.path_for(frame);
        if !path.is_file() {
            return Err(Error::Objectness {
                frame: frame.label(),
                reason: format!("precomputed map {} is missing", path.display()),
            });
        }
        let map = png::load_prob_map(&path).map_err(|e| Error::Objectness {
            frame: frame.label(),
            reason: e.to_string(),
        })?;
        if map.shape() != frame.shape() {
            return Err(Error::Objectness {
                frame: frame.label(),
                reason: format!(
                    "precomputed map is {} but the frame is {}",
                    map.shape(),
                    frame.shape()
                ),
            });
        }
        Ok(map)
    }

    fn fingerprint(&self) -> String {
        format!("precomputed:{}", self.root().display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::RgbImage;

    fn polygon_frame() -> (FrameSample, Vec<bool>) {
        let shape = ImageShape::new(48, 64).unwrap();
        let mut data = Vec::with_capacity(shape.len() * 3);
        let mut inside = Vec::with_capacity(shape.len());
        for y in 0..48 {
            for x in 0..64 {
                // A quadrilateral well inside the frame.
                let xf = x as f64;
                let yf = y as f64;
                let hit = yf > 14.0 && yf < 34.0 && xf > 18.0 + 0.3 * (yf - 14.0) && xf < 44.0;
                inside.push(hit);
                let c = if hit { [0.85, 0.85, 0.85] } else { [0.6, 0.15, 0.1] };
                data.extend_from_slice(&c);
            }
        }
        let rgb = RgbImage::new(shape, data).unwrap();
        (FrameSample::new("v", 0, rgb), inside)
    }

    #[test]
    fn polygon_scores_higher_inside() {
        let (frame, inside) = polygon_frame();
        let map = EdgeDensityObjectness::default().map(&frame).unwrap();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for (v, hit) in map.values().iter().zip(&inside) {
            if *hit {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        assert!(si / ni as f64 > so / no as f64);
        assert!(map.min() >= 0.0 && map.max() <= 1.0);
        assert!((map.max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_frame_is_all_zero() {
        let shape = ImageShape::new(20, 30).unwrap();
        let frame = FrameSample::new("v", 0, RgbImage::filled(shape, [0.3, 0.4, 0.5]).unwrap());
        let map = EdgeDensityObjectness::default().map(&frame).unwrap();
        assert!(map.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic() {
        let (frame, _) = polygon_frame();
        let d = EdgeDensityObjectness::default();
        assert_eq!(d.map(&frame).unwrap(), d.map(&frame.clone()).unwrap());
    }

    #[test]
    fn tiny_frames_work() {
        let shape = ImageShape::new(1, 1).unwrap();
        let frame = FrameSample::new("v", 0, RgbImage::filled(shape, [0.1, 0.2, 0.3]).unwrap());
        let map = EdgeDensityObjectness::default().map(&frame).unwrap();
        assert_eq!(map.values(), &[0.0]);
    }

    #[test]
    fn bad_scales_are_rejected() {
        let (frame, _) = polygon_frame();
        let d = EdgeDensityObjectness {
            scales: vec![0.0],
            stride_frac: 0.25,
        };
        assert!(d.map(&frame).is_err());
    }

    #[test]
    fn precomputed_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (frame, _) = polygon_frame();
        let provider =
            PrecomputedObjectness::new(PrecomputedLocation::Directory(dir.path().to_path_buf()));

        let missing = provider.objectness(&frame).unwrap_err();
        assert!(matches!(missing, Error::Objectness { ref frame, .. } if frame == "v/000000"));

        let shape = frame.shape();
        let map = ProbMap::from_fn(shape, |y, x| ((y * 64 + x) % 65536) as f64 / 65535.0).unwrap();
        let path = provider.path_for(&frame);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        png::save_prob_map(&path, &map).unwrap();
        assert_eq!(provider.objectness(&frame).unwrap(), map);

        let small = ProbMap::filled(ImageShape::new(4, 4).unwrap(), 0.5).unwrap();
        png::save_prob_map(&path, &small).unwrap();
        let err = provider.objectness(&frame).unwrap_err();
        assert!(err.to_string().contains("v/000000"));
    }
}
