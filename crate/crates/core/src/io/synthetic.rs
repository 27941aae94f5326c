//! Procedural endoscopy-like scenes with exact instrument masks.
//!
//! Instruments are low-saturation gray shafts with two-pronged jaws that
//! enter from the frame border and pivot around their entry point. The
//! background is a saturated red tissue texture with vessels, instrument
//! shadows, slow camera drift, vignetting and global lighting drift.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameSample, RgbImage, VideoSequence};
use crate::map::{BinaryMask, GroundTruthMask, ImageShape};

/// Spacing of the shaft grooves in pixels.
const GROOVE_PERIOD: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub video_id: String,
    pub height: usize,
    pub width: usize,
    /// Video length T.
    pub frames: usize,
    pub instruments: usize,
    /// Shaft width range as a fraction of the shorter image side.
    pub shaft_width: [f64; 2],
    /// Jaw length as a fraction of the shorter image side.
    pub tip_length: f64,
    /// Upper bound on instrument HSV saturation.
    pub max_saturation: f64,
    /// HSV saturation range of the tissue.
    pub background_saturation: [f64; 2],
    pub vessels: usize,
    /// Bound on per-frame tip displacement, in pixels.
    pub motion: f64,
    /// Relative amplitude of the global brightness oscillation.
    pub lighting_drift: f64,
    /// Background translation per frame, in pixels.
    pub camera_drift: f64,
    /// Allowed fraction of instrument pixels per frame.
    pub foreground_range: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            video_id: "synth_01".into(),
            height: 128,
            width: 160,
            frames: 60,
            instruments: 2,
            shaft_width: [0.16, 0.24],
            tip_length: 0.18,
            max_saturation: 0.12,
            background_saturation: [0.55, 0.9],
            vessels: 6,
            motion: 2.5,
            lighting_drift: 0.15,
            camera_drift: 0.4,
            foreground_range: [0.03, 0.5],
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn shape(&self) -> Result<ImageShape> {
        ImageShape::new(self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.shape()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frames == 0 {
            return bad("a synthetic video needs at least one frame".into());
        }
        let side = shape.height.min(shape.width) as f64;
        let [w_lo, w_hi] = self.shaft_width;
        if !(w_lo > 0.0 && w_lo <= w_hi) || self.tip_length <= 0.0 {
            return bad(format!("invalid instrument size {:?} / {}", self.shaft_width, self.tip_length));
        }
        // Jaws open to roughly twice the shaft width.
        if (2.0 * w_hi + self.tip_length) * side > side {
            return bad(format!(
                "instrument ({:.1} px wide, {:.1} px jaws) does not fit a {shape} frame",
                w_hi * side,
                self.tip_length * side
            ));
        }
        if !(0.0..=0.15).contains(&self.max_saturation) {
            return bad(format!("instrument saturation bound {} is outside [0, 0.15]", self.max_saturation));
        }
        let [s_lo, s_hi] = self.background_saturation;
        if !(0.5 <= s_lo && s_lo <= s_hi && s_hi <= 1.0) {
            return bad(format!("background saturation range {:?} is outside [0.5, 1]", self.background_saturation));
        }
        let [f_lo, f_hi] = self.foreground_range;
        if !(0.0 <= f_lo && f_lo < f_hi && f_hi <= 1.0) {
            return bad(format!("invalid foreground range {:?}", self.foreground_range));
        }
        if !(self.motion >= 0.0 && self.lighting_drift >= 0.0 && self.lighting_drift < 1.0 && self.camera_drift >= 0.0) {
            return bad("motion and drift amplitudes must be non-negative (lighting below 1)".into());
        }
        Ok(())
    }
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Squared distance from `p` to the segment `a..b`, and the position along it in `[0, 1]`.
fn segment_distance2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1], t)
}

#[derive(Debug, Clone)]
struct Instrument {
    entry: [f64; 2],
    base_angle: f64,
    angle_amp: f64,
    angle_freq: f64,
    angle_phase: f64,
    base_length: f64,
    length_amp: f64,
    length_freq: f64,
    length_phase: f64,
    jaw_freq: f64,
    width: f64,
    hue: f64,
    saturation: f64,
    value: f64,
}

/// Pose of an instrument in one frame: shaft segment and the two jaw segments.
struct Pose {
    shaft: ([f64; 2], [f64; 2]),
    jaws: [([f64; 2], [f64; 2]); 2],
    half_width: f64,
    jaw_half_width: f64,
}

impl Instrument {
    fn pose(&self, t: f64, length_scale: f64, tip: f64) -> Pose {
        let angle = self.base_angle + self.angle_amp * (self.angle_freq * t + self.angle_phase).sin();
        let length = length_scale * (self.base_length + self.length_amp * (self.length_freq * t + self.length_phase).sin());
        let dir = [angle.cos(), angle.sin()];
        let end = [self.entry[0] + length * dir[0], self.entry[1] + length * dir[1]];
        let open = 0.15 + 0.3 * (0.5 + 0.5 * (self.jaw_freq * t).sin());
        let jaw = |sign: f64| {
            let a = angle + sign * open;
            (end, [end[0] + tip * a.cos(), end[1] + tip * a.sin()])
        };
        Pose {
            shaft: (self.entry, end),
            jaws: [jaw(1.0), jaw(-1.0)],
            half_width: self.width / 2.0,
            jaw_half_width: self.width * 0.28,
        }
    }
}

impl Pose {
    /// Shading weight in `[0, 1]` if `p` lies on the instrument.
    fn hit(&self, p: [f64; 2]) -> Option<f64> {
        let (d2, t) = segment_distance2(p, self.shaft.0, self.shaft.1);
        if d2 <= self.half_width * self.half_width {
            let r = d2.sqrt() / self.half_width;
            // Dark grooves ring the shaft at regular intervals.
            let (a, b) = self.shaft;
            let along = t * ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let groove = (along / GROOVE_PERIOD).fract() < 0.3;
            return Some((1.0 - r * r) * if groove { 0.6 } else { 1.0 });
        }
        for (a, b) in &self.jaws {
            let (d2, _) = segment_distance2(p, *a, *b);
            if d2 <= self.jaw_half_width * self.jaw_half_width {
                return Some(0.5);
            }
        }
        None
    }

    fn shadow(&self, p: [f64; 2], offset: [f64; 2]) -> bool {
        let q = [p[0] - offset[0], p[1] - offset[1]];
        let (d2, _) = segment_distance2(q, self.shaft.0, self.shaft.1);
        let r = self.half_width * 1.5;
        d2 <= r * r
    }
}

#[derive(Debug, Clone)]
struct Blob {
    center: [f64; 2],
    radius: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
struct Vessel {
    points: [[f64; 2]; 3],
    half_width: f64,
}

struct Tissue {
    hue: f64,
    hue_blobs: Vec<Blob>,
    value_blobs: Vec<Blob>,
    sat_blobs: Vec<Blob>,
    vessels: Vec<Vessel>,
    sat_range: [f64; 2],
    folds: [f64; 4],
}

fn blob_field(blobs: &[Blob], p: [f64; 2]) -> f64 {
    blobs
        .iter()
        .map(|b| {
            let dx = p[0] - b.center[0];
            let dy = p[1] - b.center[1];
            b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius)).exp()
        })
        .sum()
}

impl Tissue {
    fn new(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec) -> Self {
        let (h, w) = (spec.height as f64, spec.width as f64);
        let side = h.min(w);
        let mut blobs = |n: usize, amp: f64| -> Vec<Blob> {
            (0..n)
                .map(|_| Blob {
                    center: [rng.gen_range(-0.2 * w..1.2 * w), rng.gen_range(-0.2 * h..1.2 * h)],
                    radius: rng.gen_range(0.08..0.3) * side,
                    amplitude: rng.gen_range(-amp..amp),
                })
                .collect()
        };
        let hue_blobs = blobs(8, 8.0);
        let value_blobs = blobs(24, 0.25);
        let sat_blobs = blobs(12, 0.6);
        let vessels = (0..spec.vessels)
            .map(|_| {
                let p = |rng: &mut ChaCha8Rng| [rng.gen_range(-0.1 * w..1.1 * w), rng.gen_range(-0.1 * h..1.1 * h)];
                Vessel {
                    points: [p(rng), p(rng), p(rng)],
                    half_width: rng.gen_range(0.6..1.6),
                }
            })
            .collect();
        Self {
            hue: rng.gen_range(-6.0..8.0),
            hue_blobs,
            value_blobs,
            sat_blobs,
            vessels,
            sat_range: spec.background_saturation,
            folds: [
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.05..0.15),
                rng.gen_range(0.0..TAU),
            ],
        }
    }

    /// HSV of the tissue at texture coordinate `p`.
    fn hsv(&self, p: [f64; 2]) -> (f64, f64, f64) {
        let hue = (self.hue + blob_field(&self.hue_blobs, p)).clamp(-20.0, 20.0);
        let [lo, hi] = self.sat_range;
        let s_unit = 0.5 + 0.5 * blob_field(&self.sat_blobs, p).tanh();
        let mut s = lo + (hi - lo) * s_unit;
        let folds = 0.06 * ((self.folds[0] * p[0] + self.folds[1]).sin() + (self.folds[2] * p[1] + self.folds[3]).sin());
        let mut v = 0.62 + blob_field(&self.value_blobs, p) + folds;
        for vessel in &self.vessels {
            let [a, b, c] = vessel.points;
            let d = segment_distance2(p, a, b).0.min(segment_distance2(p, b, c).0);
            if d <= vessel.half_width * vessel.half_width {
                v *= 0.8;
                s = (s + 0.1).min(hi);
            }
        }
        (hue, s, v.clamp(0.12, 0.95))
    }
}

fn new_instrument(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec, index: usize) -> Instrument {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let side = h.min(w);
    // Sides cycle so that two instruments enter from different borders.
    let border = (index + rng.gen_range(0..4)) % 4;
    let along = rng.gen_range(0.2..0.8);
    let margin = 0.05 * side;
    let (entry, inward) = match border {
        0 => ([along * w, h + margin], -PI / 2.0),
        1 => ([-margin, along * h], 0.0),
        2 => ([w + margin, along * h], PI),
        _ => ([along * w, -margin], PI / 2.0),
    };
    let base_length = rng.gen_range(0.35..0.6) * side;
    let length_amp = rng.gen_range(0.08..0.18) * side;
    let angle_amp = rng.gen_range(0.15..0.4);
    let half = spec.motion / 2.0;
    let angle_freq = half / (angle_amp * (base_length + length_amp)).max(1e-9);
    let length_freq = half / length_amp.max(1e-9);
    let [w_lo, w_hi] = spec.shaft_width;
    Instrument {
        entry,
        base_angle: inward + rng.gen_range(-0.5..0.5),
        angle_amp,
        angle_freq,
        angle_phase: rng.gen_range(0.0..TAU),
        base_length,
        length_amp,
        length_freq,
        length_phase: rng.gen_range(0.0..TAU),
        jaw_freq: rng.gen_range(0.1..0.3),
        width: rng.gen_range(w_lo..=w_hi) * side,
        hue: rng.gen_range(0.0..360.0),
        saturation: rng.gen_range(0.3..1.0) * spec.max_saturation,
        value: rng.gen_range(0.55..0.8),
    }
}

fn render_mask(shape: ImageShape, poses: &[Pose]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(shape.len());
    for y in 0..shape.height {
        for x in 0..shape.width {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            mask.push(poses.iter().any(|pose| pose.hit(p).is_some()));
        }
    }
    mask
}

/// Renders one video and its exact instrument masks.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<(VideoSequence, Vec<GroundTruthMask>)> {
    spec.validate()?;
    let shape = spec.shape()?;
    let (h, w) = (spec.height as f64, spec.width as f64);
    let side = h.min(w);
    let tip = spec.tip_length * side;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tissue = Tissue::new(&mut rng, spec);
    let instruments: Vec<Instrument> = (0..spec.instruments).map(|i| new_instrument(&mut rng, spec, i)).collect();
    let light_phase = rng.gen_range(0.0..TAU);
    let drift_angle = rng.gen_range(0.0..TAU);
    let shadow_offset = [rng.gen_range(3.0..7.0), rng.gen_range(2.0..6.0)];
    let [f_lo, f_hi] = spec.foreground_range;

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let tf = t as f64;
        let poses_at = |scale: f64| -> Vec<Pose> { instruments.iter().map(|i| i.pose(tf, scale, tip)).collect() };
        let fraction = |poses: &[Pose]| {
            render_mask(shape, poses).iter().filter(|b| **b).count() as f64 / shape.len() as f64
        };
        // Insertion depth is rescaled only when the frame leaves the foreground range.
        let mut scale = 1.0;
        let f = fraction(&poses_at(scale));
        if f > f_hi {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if fraction(&poses_at(mid)) > f_hi {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            scale = lo;
        } else if f < f_lo {
            let (mut lo, mut hi) = (1.0, 3.0);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if fraction(&poses_at(mid)) < f_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            scale = hi;
        }
        let f = fraction(&poses_at(scale));
        if !(f_lo..=f_hi).contains(&f) {
            return Err(Error::InvalidArgument(format!(
                "frame {t}: cannot keep the instrument fraction within {:?} (got {f:.3})",
                spec.foreground_range
            )));
        }
        let poses = poses_at(scale);

        let light = 1.0 + spec.lighting_drift * (TAU * tf / spec.frames.max(2) as f64 + light_phase).sin();
        let shift = [
            spec.camera_drift * tf * drift_angle.cos(),
            spec.camera_drift * tf * drift_angle.sin(),
        ];
        let mut data = Vec::with_capacity(shape.len() * 3);
        let mut bits = Vec::with_capacity(shape.len());
        for y in 0..spec.height {
            for x in 0..spec.width {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let r2 = ((p[0] / w - 0.5).powi(2) + (p[1] / h - 0.5).powi(2)) * 2.0;
                let vignette = 1.0 - 0.35 * r2;
                let hit = poses.iter().zip(&instruments).find_map(|(pose, ins)| pose.hit(p).map(|s| (s, ins)));
                let rgb = match hit {
                    Some((shade, ins)) => {
                        let v = (ins.value * (0.75 + 0.35 * shade) * light * vignette).clamp(0.05, 1.0);
                        hsv_to_rgb(ins.hue, ins.saturation * (0.6 + 0.4 * shade), v)
                    }
                    None => {
                        let (hue, s, mut v) = tissue.hsv([p[0] + shift[0], p[1] + shift[1]]);
                        if poses.iter().any(|pose| pose.shadow(p, shadow_offset)) {
                            v *= 0.6;
                        }
                        hsv_to_rgb(hue, s, (v * light * vignette).clamp(0.05, 1.0))
                    }
                };
                data.extend(rgb);
                bits.push(hit.is_some());
            }
        }
        frames.push(FrameSample::new(spec.video_id.clone(), t, RgbImage::new(shape, data)?));
        masks.push(BinaryMask::from_bools(shape, bits)?);
    }
    Ok((VideoSequence::new(spec.video_id.clone(), frames)?, masks))
}

/// `count` videos named `synth_01`, `synth_02`, ... with seeds derived from `base.seed`.
pub fn generate_benchmark(base: &SyntheticSceneSpec, count: usize) -> Result<Vec<(VideoSequence, Vec<GroundTruthMask>)>> {
    (0..count)
        .map(|i| {
            let spec = SyntheticSceneSpec {
                video_id: format!("synth_{:02}", i + 1),
                seed: base.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..base.clone()
            };
            generate_synthetic(&spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::color::hsv_saturation;
    use crate::cues::color_cue;

    fn small() -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            height: 48,
            width: 64,
            frames: 6,
            ..SyntheticSceneSpec::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_frames() {
        let (a, ma) = generate_synthetic(&small()).unwrap();
        let (b, mb) = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = generate_synthetic(&SyntheticSceneSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn colors_follow_the_priors_and_masks_are_exact() {
        let spec = small();
        let (video, masks) = generate_synthetic(&spec).unwrap();
        for (frame, mask) in video.frames().iter().zip(&masks) {
            let f = mask.foreground_fraction();
            assert!(f >= spec.foreground_range[0] && f <= spec.foreground_range[1], "fraction {f}");
            for (i, px) in frame.rgb.pixels().enumerate() {
                let s = hsv_saturation(px);
                if mask.values()[i] == 1 {
                    assert!(s <= spec.max_saturation + 1e-5, "instrument saturation {s}");
                } else {
                    assert!(s >= spec.background_saturation[0] - 1e-5, "tissue saturation {s}");
                    assert!(px[0] > px[1] && px[0] >= px[2], "tissue must be red-dominant: {px:?}");
                }
            }
            let cue = color_cue(frame);
            let (mut fg, mut bg) = ((0.0, 0), (0.0, 0));
            for (v, m) in cue.values().iter().zip(mask.values()) {
                let slot = if *m == 1 { &mut fg } else { &mut bg };
                slot.0 += v;
                slot.1 += 1;
            }
            assert!(fg.0 / fg.1 as f64 > bg.0 / bg.1 as f64);
        }
    }

    #[test]
    fn oversized_instruments_are_rejected() {
        let spec = SyntheticSceneSpec {
            shaft_width: [0.5, 0.6],
            ..small()
        };
        assert!(generate_synthetic(&spec).is_err());
        assert!(generate_synthetic(&SyntheticSceneSpec { max_saturation: 0.3, ..small() }).is_err());
    }

    #[test]
    fn benchmark_videos_are_distinct() {
        let videos = generate_benchmark(&small(), 2).unwrap();
        assert_eq!(videos[0].0.video_id(), "synth_01");
        assert_ne!(videos[0].0.frames()[0].rgb, videos[1].0.frames()[0].rgb);
    }

    #[test]
    fn hsv_round_trip() {
        let rgb = hsv_to_rgb(10.0, 0.7, 0.8);
        assert!((hsv_saturation(rgb) - 0.7).abs() < 1e-6);
        assert!((rgb[0] - 0.8).abs() < 1e-6);
    }
}
