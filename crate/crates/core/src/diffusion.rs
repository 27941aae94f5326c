//! Region feature aggregation and the quadruplet semantic-diffusion losses.
//!
//! Deep features are pooled into a foreground and a background descriptor
//! using the prediction map as soft weights. For two related frames the
//! losses require the inter-frame same-region similarity to exceed the two
//! intra-frame foreground/background similarities by a margin:
//!
//! ```text
//! L_fg = max(cos(fg_a, bg_a) + cos(fg_b, bg_b) - 2 cos(fg_a, fg_b) + m_fg, 0)
//! L_bg = max(cos(fg_a, bg_a) + cos(fg_b, bg_b) - 2 cos(bg_a, bg_b) + m_bg, 0)
//! ```
//!
//! Features are frozen: gradients flow only into the predictions.

use serde::{Deserialize, Serialize};

use crate::anchors::{anchor_loss_values, AnchorPair};
use crate::error::{Error, Result};
use crate::map::{ImageShape, ProbMap};
use crate::resample::{bilinear_taps, resize_channels_last, Tap};

/// Dense per-pixel features at prediction resolution, pixel-major (`HW x D`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: ImageShape,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: ImageShape, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("feature maps need at least one channel".into()));
        }
        if values.len() != shape.len() * channels {
            return Err(Error::InvalidArgument(format!(
                "{} feature values supplied for {shape} x {channels}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self {
            shape,
            channels,
            values,
        })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn scaled(&self, factor: f64) -> FeatureMap {
        FeatureMap {
            shape: self.shape,
            channels: self.channels,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Features kept at backbone resolution and bilinearly upsampled on the fly.
///
/// Aggregation and its gradient are computed through the adjoint of the
/// upsampling operator, which gives exactly the sums over the upsampled map
/// without materializing it.
#[derive(Debug, Clone)]
pub struct CoarseFeatureMap {
    coarse: ImageShape,
    channels: usize,
    values: Vec<f64>,
    out: ImageShape,
    taps_y: Vec<Tap>,
    taps_x: Vec<Tap>,
    // Adjoint of upsampling applied to the all-ones map.
    total_weight: Vec<f64>,
}

impl CoarseFeatureMap {
    pub fn new(coarse: ImageShape, channels: usize, values: Vec<f64>, out: ImageShape) -> Result<Self> {
        FeatureMap::new(coarse, channels, values.clone())?;
        let taps_y = bilinear_taps(coarse.height, out.height);
        let taps_x = bilinear_taps(coarse.width, out.width);
        let mut map = Self {
            coarse,
            channels,
            values,
            out,
            taps_y,
            taps_x,
            total_weight: Vec::new(),
        };
        map.total_weight = map.adjoint(&vec![1.0; out.len()]);
        Ok(map)
    }

    pub fn coarse_shape(&self) -> ImageShape {
        self.coarse
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coarse_values(&self) -> &[f64] {
        &self.values
    }

    /// The dense map at prediction resolution.
    pub fn upsample(&self) -> FeatureMap {
        let values = resize_channels_last(
            &self.values,
            (self.coarse.height, self.coarse.width),
            self.channels,
            (self.out.height, self.out.width),
        );
        FeatureMap::new(self.out, self.channels, values).expect("upsampled features are finite")
    }

    // Transpose of bilinear upsampling: scatters a full-resolution field onto the coarse grid.
    fn adjoint(&self, field: &[f64]) -> Vec<f64> {
        let cw = self.coarse.width;
        let mut q = vec![0.0; self.coarse.len()];
        for (y, &(y0, y1, wy0, wy1)) in self.taps_y.iter().enumerate() {
            let row = &field[y * self.out.width..(y + 1) * self.out.width];
            for (&v, &(x0, x1, wx0, wx1)) in row.iter().zip(&self.taps_x) {
                q[y0 * cw + x0] += v * wy0 * wx0;
                q[y0 * cw + x1] += v * wy0 * wx1;
                q[y1 * cw + x0] += v * wy1 * wx0;
                q[y1 * cw + x1] += v * wy1 * wx1;
            }
        }
        q
    }
}

/// Pools frozen features under soft region weights and maps region-feature
/// gradients back to per-pixel prediction gradients.
pub trait RegionAggregator {
    fn out_shape(&self) -> ImageShape;
    fn feature_channels(&self) -> usize;
    /// `(sum_i p_i F_i, sum_i (1 - p_i) F_i)`.
    fn aggregate(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>);
    /// `dL/dp_i = F_i . (d_fg - d_bg)`.
    fn pullback(&self, d_fg: &[f64], d_bg: &[f64]) -> Vec<f64>;
}

impl RegionAggregator for FeatureMap {
    fn out_shape(&self) -> ImageShape {
        self.shape
    }

    fn feature_channels(&self) -> usize {
        self.channels
    }

    fn aggregate(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut fg = vec![0.0; self.channels];
        let mut bg = vec![0.0; self.channels];
        for (i, &w) in p.iter().enumerate() {
            for ((f, b), v) in fg.iter_mut().zip(bg.iter_mut()).zip(self.pixel(i)) {
                *f += w * v;
                *b += (1.0 - w) * v;
            }
        }
        (fg, bg)
    }

    fn pullback(&self, d_fg: &[f64], d_bg: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = d_fg.iter().zip(d_bg).map(|(a, b)| a - b).collect();
        (0..self.shape.len())
            .map(|i| self.pixel(i).iter().zip(&diff).map(|(f, d)| f * d).sum())
            .collect()
    }
}

impl RegionAggregator for CoarseFeatureMap {
    fn out_shape(&self) -> ImageShape {
        self.out
    }

    fn feature_channels(&self) -> usize {
        self.channels
    }

    fn aggregate(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.adjoint(p);
        let d = self.channels;
        let mut fg = vec![0.0; d];
        let mut bg = vec![0.0; d];
        for (j, (&qj, &tj)) in q.iter().zip(&self.total_weight).enumerate() {
            let feat = &self.values[j * d..(j + 1) * d];
            for ((f, b), v) in fg.iter_mut().zip(bg.iter_mut()).zip(feat) {
                *f += qj * v;
                *b += (tj - qj) * v;
            }
        }
        (fg, bg)
    }

    fn pullback(&self, d_fg: &[f64], d_bg: &[f64]) -> Vec<f64> {
        let d = self.channels;
        let diff: Vec<f64> = d_fg.iter().zip(d_bg).map(|(a, b)| a - b).collect();
        let s: Vec<f64> = self
            .values
            .chunks_exact(d)
            .map(|f| f.iter().zip(&diff).map(|(a, b)| a * b).sum())
            .collect();
        resize_channels_last(
            &s,
            (self.coarse.height, self.coarse.width),
            1,
            (self.out.height, self.out.width),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Foreground,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeature {
    pub region: Region,
    pub vector: Vec<f64>,
}

impl RegionFeature {
    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|v| *v == 0.0)
    }
}

/// Foreground and background descriptors of one frame.
pub fn aggregate_features(
    prediction: &ProbMap,
    features: &FeatureMap,
) -> Result<(RegionFeature, RegionFeature)> {
    features.shape().ensure_same(&prediction.shape())?;
    let (fg, bg) = features.aggregate(prediction.values());
    Ok((
        RegionFeature {
            region: Region::Foreground,
            vector: fg,
        },
        RegionFeature {
            region: Region::Background,
            vector: bg,
        },
    ))
}

/// Cosine similarity; `degenerate` marks a zero-vector argument, in which
/// case the value is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_similarity(u: &RegionFeature, v: &RegionFeature) -> Similarity {
    cosine(&u.vector, &v.vector).0
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// Cosine and its gradients with respect to both arguments.
fn cosine(u: &[f64], v: &[f64]) -> (Similarity, Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        let zeros = vec![0.0; u.len()];
        return (
            Similarity {
                value: 0.0,
                degenerate: true,
            },
            zeros.clone(),
            zeros,
        );
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let value = (dot / (nu * nv)).clamp(-1.0, 1.0);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - value * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - value * b / (nv * nv))
        .collect();
    (
        Similarity {
            value,
            degenerate: false,
        },
        du,
        dv,
    )
}

/// Margins of the two diffusion losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionMargins {
    pub foreground: f64,
    pub background: f64,
}

impl Default for DiffusionMargins {
    fn default() -> Self {
        Self {
            foreground: 0.2,
            background: 0.8,
        }
    }
}

impl DiffusionMargins {
    pub fn new(foreground: f64, background: f64) -> Result<Self> {
        let m = Self {
            foreground,
            background,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.foreground >= 0.0 && self.background >= 0.0)
            || !self.foreground.is_finite()
            || !self.background.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "diffusion margins must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// The four region descriptors entering the quadruplet losses.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionQuad {
    pub fg_a: Vec<f64>,
    pub bg_a: Vec<f64>,
    pub fg_b: Vec<f64>,
    pub bg_b: Vec<f64>,
}

/// Values of both diffusion losses plus their gradients with respect to the
/// four descriptors, in `RegionQuad` order.
#[derive(Debug, Clone)]
pub struct QuadrupletOutput {
    pub fg_loss: f64,
    pub bg_loss: f64,
    pub degenerate: bool,
    pub fg_grads: [Vec<f64>; 4],
    pub bg_grads: [Vec<f64>; 4],
}

pub fn quadruplet_losses(q: &RegionQuad, margins: DiffusionMargins) -> QuadrupletOutput {
    let (s_intra_a, d_fa_intra, d_ba_intra) = cosine(&q.fg_a, &q.bg_a);
    let (s_intra_b, d_fb_intra, d_bb_intra) = cosine(&q.fg_b, &q.bg_b);
    let (s_fg, d_fa_fg, d_fb_fg) = cosine(&q.fg_a, &q.fg_b);
    let (s_bg, d_ba_bg, d_bb_bg) = cosine(&q.bg_a, &q.bg_b);
    let intra = s_intra_a.value + s_intra_b.value;
    let fg_arg = intra - 2.0 * s_fg.value + margins.foreground;
    let bg_arg = intra - 2.0 * s_bg.value + margins.background;
    let d = q.fg_a.len();
    let zero = || [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];

    let intra_grads = |inter: (&[f64], &[f64]), slots: (usize, usize)| {
        let mut g = zero();
        for i in 0..d {
            g[0][i] += d_fa_intra[i];
            g[1][i] += d_ba_intra[i];
            g[2][i] += d_fb_intra[i];
            g[3][i] += d_bb_intra[i];
            g[slots.0][i] -= 2.0 * inter.0[i];
            g[slots.1][i] -= 2.0 * inter.1[i];
        }
        g
    };
    let fg_grads = if fg_arg > 0.0 {
        intra_grads((&d_fa_fg, &d_fb_fg), (0, 2))
    } else {
        zero()
    };
    let bg_grads = if bg_arg > 0.0 {
        intra_grads((&d_ba_bg, &d_bb_bg), (1, 3))
    } else {
        zero()
    };
    QuadrupletOutput {
        fg_loss: fg_arg.max(0.0),
        bg_loss: bg_arg.max(0.0),
        degenerate: s_intra_a.degenerate
            || s_intra_b.degenerate
            || s_fg.degenerate
            || s_bg.degenerate,
        fg_grads,
        bg_grads,
    }
}

/// Everything the objective needs about one frame of a pair.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a, F: RegionAggregator + ?Sized = FeatureMap> {
    pub prediction: &'a ProbMap,
    pub features: &'a F,
    pub anchors: &'a AnchorPair,
}

impl<F: RegionAggregator + ?Sized> FrameInputs<'_, F> {
    fn check(&self) -> Result<()> {
        let shape = self.prediction.shape();
        shape.ensure_same(&self.features.out_shape())?;
        shape.ensure_same(&self.anchors.shape())
    }
}

/// Which terms of the objective are active; the default is all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub anchor: bool,
    pub diffusion_fg: bool,
    pub diffusion_bg: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::FULL
    }
}

impl LossTerms {
    pub const FULL: LossTerms = LossTerms {
        anchor: true,
        diffusion_fg: true,
        diffusion_bg: true,
    };
    pub const ANCHOR_ONLY: LossTerms = LossTerms {
        anchor: true,
        diffusion_fg: false,
        diffusion_bg: false,
    };
    pub const ANCHOR_FG: LossTerms = LossTerms {
        anchor: true,
        diffusion_fg: true,
        diffusion_bg: false,
    };
    pub const ANCHOR_BG: LossTerms = LossTerms {
        anchor: true,
        diffusion_fg: false,
        diffusion_bg: true,
    };

    /// The loss-combination rows of the ablation table, in order.
    pub const ABLATION_GRID: [LossTerms; 4] = [
        LossTerms::ANCHOR_ONLY,
        LossTerms::ANCHOR_FG,
        LossTerms::ANCHOR_BG,
        LossTerms::FULL,
    ];

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.anchor {
            parts.push("anc");
        }
        if self.diffusion_fg {
            parts.push("dif_fg");
        }
        if self.diffusion_bg {
            parts.push("dif_bg");
        }
        parts.join("+")
    }
}

/// Component values of the objective for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub anchor_a: f64,
    pub anchor_b: f64,
    pub diffusion_fg: f64,
    pub diffusion_bg: f64,
    pub total: f64,
    pub degenerate: bool,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.anchor_a,
            self.anchor_b,
            self.diffusion_fg,
            self.diffusion_bg,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Objective value and its gradients with respect to both prediction maps.
#[derive(Debug, Clone)]
pub struct PairGradient {
    pub loss: LossBreakdown,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// Evaluates the selected objective terms and their gradients for a frame pair.
pub fn pair_objective<F: RegionAggregator + ?Sized>(
    a: &FrameInputs<'_, F>,
    b: &FrameInputs<'_, F>,
    margins: DiffusionMargins,
    terms: LossTerms,
) -> Result<PairGradient> {
    a.check()?;
    b.check()?;
    if a.features.feature_channels() != b.features.feature_channels() {
        return Err(Error::InvalidArgument(format!(
            "feature channel counts differ: {} vs {}",
            a.features.feature_channels(),
            b.features.feature_channels()
        )));
    }
    let (pa, pb) = (a.prediction.values(), b.prediction.values());
    let anchor_a = anchor_loss_values(pa, a.anchors.positive().values(), a.anchors.negative().values());
    let anchor_b = anchor_loss_values(pb, b.anchors.positive().values(), b.anchors.negative().values());

    let (fg_a, bg_a) = a.features.aggregate(pa);
    let (fg_b, bg_b) = b.features.aggregate(pb);
    let quad = quadruplet_losses(
        &RegionQuad {
            fg_a,
            bg_a,
            fg_b,
            bg_b,
        },
        margins,
    );

    let d = a.features.feature_channels();
    let mut region_grads = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for (enabled, grads) in [
        (terms.diffusion_fg, &quad.fg_grads),
        (terms.diffusion_bg, &quad.bg_grads),
    ] {
        if enabled {
            for (acc, g) in region_grads.iter_mut().zip(grads) {
                for (x, y) in acc.iter_mut().zip(g) {
                    *x += y;
                }
            }
        }
    }
    let mut grad_a = a.features.pullback(&region_grads[0], &region_grads[1]);
    let mut grad_b = b.features.pullback(&region_grads[2], &region_grads[3]);
    if terms.anchor {
        for (grad, anchors) in [(&mut grad_a, a.anchors), (&mut grad_b, b.anchors)] {
            let n = grad.len() as f64;
            for ((g, p), q) in grad
                .iter_mut()
                .zip(anchors.positive().values())
                .zip(anchors.negative().values())
            {
                *g += (q - p) / n;
            }
        }
    }

    let mut total = 0.0;
    if terms.anchor {
        total += anchor_a + anchor_b;
    }
    if terms.diffusion_fg {
        total += quad.fg_loss;
    }
    if terms.diffusion_bg {
        total += quad.bg_loss;
    }
    Ok(PairGradient {
        loss: LossBreakdown {
            anchor_a,
            anchor_b,
            diffusion_fg: quad.fg_loss,
            diffusion_bg: quad.bg_loss,
            total,
            degenerate: quad.degenerate,
        },
        grad_a,
        grad_b,
    })
}

pub fn diffusion_loss_fg<F: RegionAggregator + ?Sized>(
    a: &FrameInputs<'_, F>,
    b: &FrameInputs<'_, F>,
    margins: DiffusionMargins,
) -> Result<f64> {
    Ok(pair_objective(a, b, margins, LossTerms::FULL)?.loss.diffusion_fg)
}

pub fn diffusion_loss_bg<F: RegionAggregator + ?Sized>(
    a: &FrameInputs<'_, F>,
    b: &FrameInputs<'_, F>,
    margins: DiffusionMargins,
) -> Result<f64> {
    Ok(pair_objective(a, b, margins, LossTerms::FULL)?.loss.diffusion_bg)
}

/// `L_anc(a) + L_anc(b) + L_dif_fg + L_dif_bg`.
pub fn full_loss<F: RegionAggregator + ?Sized>(
    a: &FrameInputs<'_, F>,
    b: &FrameInputs<'_, F>,
    margins: DiffusionMargins,
) -> Result<LossBreakdown> {
    Ok(pair_objective(a, b, margins, LossTerms::FULL)?.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorSource;

    fn rf(region: Region, v: &[f64]) -> RegionFeature {
        RegionFeature {
            region,
            vector: v.to_vec(),
        }
    }

    fn quad(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> RegionQuad {
        RegionQuad {
            fg_a: a.to_vec(),
            bg_a: b.to_vec(),
            fg_b: c.to_vec(),
            bg_b: d.to_vec(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let s = ImageShape::new(1, 2).unwrap();
        let f = FeatureMap::new(s, 1, vec![3.0, 5.0]).unwrap();
        let p = ProbMap::new(s, vec![1.0, 0.5]).unwrap();
        let (fg, bg) = aggregate_features(&p, &f).unwrap();
        assert_eq!(fg.vector, vec![5.5]);
        assert_eq!(bg.vector, vec![2.5]);

        let ones = ProbMap::filled(s, 1.0).unwrap();
        let (fg, bg) = aggregate_features(&ones, &f).unwrap();
        assert_eq!(fg.vector, vec![8.0]);
        assert!(bg.is_zero());

        let half = ProbMap::filled(s, 0.5).unwrap();
        let (fg, bg) = aggregate_features(&half, &f).unwrap();
        assert_eq!(fg.vector, bg.vector);
        assert_eq!(fg.vector, vec![4.0]);

        let other = ProbMap::filled(ImageShape::new(2, 1).unwrap(), 0.5).unwrap();
        assert!(aggregate_features(&other, &f).is_err());
    }

    #[test]
    fn cosine_examples() {
        let fg = Region::Foreground;
        let s = cosine_similarity(&rf(fg, &[1.0, 0.0]), &rf(fg, &[1.0, 0.0]));
        assert_eq!(s.value, 1.0);
        assert!(!s.degenerate);
        assert_eq!(cosine_similarity(&rf(fg, &[1.0, 0.0]), &rf(fg, &[0.0, 1.0])).value, 0.0);
        let v = cosine_similarity(&rf(fg, &[1.0, 1.0]), &rf(fg, &[1.0, 0.0])).value;
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let z = cosine_similarity(&rf(fg, &[0.0, 0.0]), &rf(fg, &[1.0, 0.0]));
        assert_eq!(z.value, 0.0);
        assert!(z.degenerate);
    }

    #[test]
    fn foreground_loss_examples() {
        let m = DiffusionMargins::default();
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let out = quadruplet_losses(&quad(&e1, &e2, &e1, &e2), m);
        assert_eq!(out.fg_loss, 0.0);
        let same = [0.3, 0.7];
        let out = quadruplet_losses(&quad(&same, &same, &same, &same), m);
        assert!((out.fg_loss - 0.2).abs() < 1e-12);
        assert!((out.bg_loss - 0.8).abs() < 1e-12);
        let out = quadruplet_losses(&quad(&e1, &e2, &e2, &e1), m);
        assert!((out.fg_loss - 0.2).abs() < 1e-12);
    }

    #[test]
    fn background_loss_examples() {
        let m = DiffusionMargins::default();
        // Backgrounds identical and orthogonal to both foregrounds.
        let bg = [0.0, 0.0, 1.0];
        let out = quadruplet_losses(&quad(&[1.0, 0.0, 0.0], &bg, &[0.0, 1.0, 0.0], &bg), m);
        assert_eq!(out.bg_loss, 0.0);
        let q = quad(&[1.0, 2.0], &[0.5, -1.0], &[2.0, 0.1], &[1.0, 1.0]);
        let swapped = quad(&q.fg_b, &q.bg_b, &q.fg_a, &q.bg_a);
        let (x, y) = (quadruplet_losses(&q, m), quadruplet_losses(&swapped, m));
        assert_eq!(x.bg_loss, y.bg_loss);
        assert_eq!(x.fg_loss, y.fg_loss);
    }

    #[test]
    fn margins_validation() {
        assert!(DiffusionMargins::new(-0.1, 0.8).is_err());
        assert!(DiffusionMargins::new(0.2, f64::NAN).is_err());
        assert_eq!(DiffusionMargins::new(0.2, 0.8).unwrap(), DiffusionMargins::default());
    }

    fn zero_anchors(s: ImageShape) -> AnchorPair {
        AnchorPair::new(
            ProbMap::filled(s, 0.0).unwrap(),
            ProbMap::filled(s, 0.0).unwrap(),
            AnchorSource::FusedCues,
        )
        .unwrap()
    }

    #[test]
    fn full_loss_with_zero_anchors_and_identical_features() {
        let s = ImageShape::new(2, 2).unwrap();
        let f = FeatureMap::new(s, 2, vec![1.0, 2.0].repeat(4)).unwrap();
        let p = ProbMap::new(s, vec![0.1, 0.6, 0.3, 0.9]).unwrap();
        let anchors = zero_anchors(s);
        let frame = FrameInputs {
            prediction: &p,
            features: &f,
            anchors: &anchors,
        };
        let l = full_loss(&frame, &frame, DiffusionMargins::default()).unwrap();
        assert!((l.total - 1.0).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn full_loss_lower_extreme() {
        let s = ImageShape::new(1, 2).unwrap();
        // Perfect confident predictions: anchors all certain and matched.
        let anchors = AnchorPair::new(
            ProbMap::new(s, vec![1.0, 0.0]).unwrap(),
            ProbMap::new(s, vec![0.0, 1.0]).unwrap(),
            AnchorSource::GroundTruth,
        )
        .unwrap();
        let p = ProbMap::new(s, vec![1.0, 0.0]).unwrap();
        // Foreground and background features orthogonal, equal across frames.
        let f = FeatureMap::new(s, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let frame = FrameInputs {
            prediction: &p,
            features: &f,
            anchors: &anchors,
        };
        let l = full_loss(&frame, &frame, DiffusionMargins::default()).unwrap();
        assert_eq!(l.diffusion_fg, 0.0);
        assert_eq!(l.diffusion_bg, 0.0);
        assert!((l.total + 2.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_aggregation_matches_dense_upsampled_map() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let coarse = ImageShape::new(3, 4).unwrap();
        let out = ImageShape::new(12, 16).unwrap();
        let values: Vec<f64> = (0..coarse.len() * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cm = CoarseFeatureMap::new(coarse, 5, values, out).unwrap();
        let dense = cm.upsample();
        let p: Vec<f64> = (0..out.len()).map(|_| rng.gen()).collect();
        let (f1, b1) = cm.aggregate(&p);
        let (f2, b2) = dense.aggregate(&p);
        for (x, y) in f1.iter().zip(&f2).chain(b1.iter().zip(&b2)) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        let dfg: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dbg: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g1 = cm.pullback(&dfg, &dbg);
        let g2 = dense.pullback(&dfg, &dbg);
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn deep_negative_hinge_has_zero_gradient() {
        let m = DiffusionMargins::default();
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let out = quadruplet_losses(&quad(&e1, &e2, &e1, &e2), m);
        assert_eq!(out.fg_loss, 0.0);
        assert_eq!(out.bg_loss, 0.0);
        for g in out.fg_grads.iter().chain(out.bg_grads.iter()) {
            assert!(g.iter().all(|v| *v == 0.0));
        }
    }
}
