//! Location cue: where instruments tend to appear on screen.

use crate::error::{Error, Result};
use crate::frame::VideoSequence;
use crate::map::{ImageShape, ProbMap};

/// Video-specific location prior: the mean of the per-frame color cues.
pub fn location_cue_video(video: &VideoSequence, color_maps: &[ProbMap]) -> Result<ProbMap> {
    if video.is_empty() || color_maps.is_empty() {
        return Err(Error::Empty(format!(
            "video {} has no color maps to average",
            video.video_id()
        )));
    }
    if color_maps.len() != video.len() {
        return Err(Error::InvalidArgument(format!(
            "video {} has {} frames but {} color maps",
            video.video_id(),
            video.len(),
            color_maps.len()
        )));
    }
    mean_map(color_maps)
}

/// Pixelwise arithmetic mean of equally shaped maps.
pub fn mean_map(maps: &[ProbMap]) -> Result<ProbMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Empty("no maps to average".into()))?;
    let shape = first.shape();
    let mut acc = vec![0.0f64; shape.len()];
    for m in maps {
        shape.ensure_same(&m.shape())?;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    ProbMap::from_clamped(shape, acc.into_iter().map(|a| a / n).collect())
}

/// Fixed isotropic Gaussian centered on the image, peak 1.
///
/// `sigma_frac` is the standard deviation as a fraction of the image diagonal.
pub fn location_cue_gaussian(shape: ImageShape, sigma_frac: f64) -> Result<ProbMap> {
    if !(sigma_frac > 0.0) || !sigma_frac.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma fraction must be positive, got {sigma_frac}"
        )));
    }
    let (h, w) = (shape.height as f64, shape.width as f64);
    let sigma = sigma_frac * (h * h + w * w).sqrt();
    let (cy, cx) = ((h - 1.0) / 2.0, (w - 1.0) / 2.0);
    ProbMap::from_fn(shape, |y, x| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
    })
}

pub const DEFAULT_GAUSSIAN_SIGMA_FRAC: f64 = 0.25;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{FrameSample, RgbImage};

    fn video(n: usize, shape: ImageShape) -> VideoSequence {
        let frames = (0..n)
            .map(|t| FrameSample::new("v", t, RgbImage::filled(shape, [0.2, 0.2, 0.2]).unwrap()))
            .collect();
        VideoSequence::new("v", frames).unwrap()
    }

    #[test]
    fn identical_maps_average_to_themselves() {
        let s = ImageShape::new(3, 4).unwrap();
        let c = ProbMap::from_fn(s, |y, x| (y * 4 + x) as f64 / 11.0).unwrap();
        let out = location_cue_video(&video(5, s), &vec![c.clone(); 5]).unwrap();
        for (a, b) in out.values().iter().zip(c.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeros_and_ones_average_to_half() {
        let s = ImageShape::new(2, 2).unwrap();
        let maps = vec![ProbMap::filled(s, 0.0).unwrap(), ProbMap::filled(s, 1.0).unwrap()];
        let out = location_cue_video(&video(2, s), &maps).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn single_frame_is_identity() {
        let s = ImageShape::new(2, 3).unwrap();
        let c = ProbMap::from_fn(s, |y, x| (y + x) as f64 / 3.0).unwrap();
        let out = location_cue_video(&video(1, s), std::slice::from_ref(&c)).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn errors_on_mismatch() {
        let s = ImageShape::new(2, 2).unwrap();
        let other = ImageShape::new(2, 3).unwrap();
        assert!(location_cue_video(&video(2, s), &[]).is_err());
        let maps = vec![ProbMap::filled(s, 0.0).unwrap(), ProbMap::filled(other, 0.0).unwrap()];
        assert!(location_cue_video(&video(2, s), &maps).is_err());
        assert!(location_cue_video(&video(3, s), &maps[..1]).is_err());
    }

    #[test]
    fn gaussian_center_and_corner() {
        let s = ImageShape::new(5, 5).unwrap();
        let diag = (50.0f64).sqrt();
        let g = location_cue_gaussian(s, 1.0 / diag).unwrap();
        assert!((g.get(2, 2) - 1.0).abs() < 1e-12);
        let expected = (-(4.0f64 + 4.0) / 2.0).exp();
        assert!((g.get(0, 0) - expected).abs() < 1e-12);
        assert!((g.get(0, 0) - 0.0183).abs() < 1e-4);
    }

    #[test]
    fn gaussian_is_flip_symmetric() {
        for (h, w) in [(7, 9), (6, 8)] {
            let s = ImageShape::new(h, w).unwrap();
            let g = location_cue_gaussian(s, DEFAULT_GAUSSIAN_SIGMA_FRAC).unwrap();
            for y in 0..h {
                for x in 0..w {
                    assert!((g.get(y, x) - g.get(h - 1 - y, x)).abs() < 1e-12);
                    assert!((g.get(y, x) - g.get(y, w - 1 - x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        let s = ImageShape::new(5, 5).unwrap();
        assert!(location_cue_gaussian(s, 0.0).is_err());
        assert!(location_cue_gaussian(s, -1.0).is_err());
        assert!(location_cue_gaussian(s, f64::NAN).is_err());
    }
}
