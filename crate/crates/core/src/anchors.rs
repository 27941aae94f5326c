//! Anchor pseudo labels and the anchor loss.
//!
//! The positive anchor is the pixelwise product of the cues, the negative
//! anchor the product of the inverted cues. The anchor loss rewards
//! activation on positive anchors and penalizes it on negative ones; pixels
//! covered by neither contribute nothing.

use serde::{Deserialize, Serialize};

use crate::cues::{CueKind, CueSet};
use crate::error::{Error, Result};
use crate::map::{GroundTruthMask, ImageShape, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    FusedCues,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPair {
    positive: ProbMap,
    negative: ProbMap,
    source: AnchorSource,
}

impl AnchorPair {
    /// Checks shapes and the pointwise bound `a_pos + a_neg <= 1`.
    pub fn new(positive: ProbMap, negative: ProbMap, source: AnchorSource) -> Result<Self> {
        positive.shape().ensure_same(&negative.shape())?;
        if let Some(i) = positive
            .values()
            .iter()
            .zip(negative.values())
            .position(|(p, n)| p + n > 1.0 + 1e-12)
        {
            return Err(Error::InvalidArgument(format!(
                "anchors overlap at pixel {i}: positive + negative exceeds 1"
            )));
        }
        Ok(Self {
            positive,
            negative,
            source,
        })
    }

    pub fn positive(&self) -> &ProbMap {
        &self.positive
    }

    pub fn negative(&self) -> &ProbMap {
        &self.negative
    }

    pub fn source(&self) -> AnchorSource {
        self.source
    }

    pub fn shape(&self) -> ImageShape {
        self.positive.shape()
    }
}

/// Fuses all three cues into anchors.
pub fn fuse_anchors(cues: &CueSet) -> Result<AnchorPair> {
    fuse_anchors_from(cues, &CueKind::ALL)
}

/// Fuses a subset of cues, as used by the cue-combination ablation.
pub fn fuse_anchors_from(cues: &CueSet, kinds: &[CueKind]) -> Result<AnchorPair> {
    let shape = cues.color.shape();
    cues.objectness.shape().ensure_same(&shape)?;
    cues.location.shape().ensure_same(&shape)?;
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("at least one cue is required".into()));
    }
    let mut pos = vec![1.0f64; shape.len()];
    let mut neg = vec![1.0f64; shape.len()];
    for &kind in kinds {
        for ((p, n), c) in pos.iter_mut().zip(neg.iter_mut()).zip(cues.get(kind).values()) {
            *p *= c;
            *n *= 1.0 - c;
        }
    }
    AnchorPair::new(
        ProbMap::new(shape, pos)?,
        ProbMap::new(shape, neg)?,
        AnchorSource::FusedCues,
    )
}

/// Replaces the fused anchors with ground truth: `a_pos = gt`, `a_neg = 1 - gt`.
pub fn anchors_from_labels(gt: &GroundTruthMask) -> Result<AnchorPair> {
    let pos = gt.to_prob_map();
    let neg = pos.complement();
    AnchorPair::new(pos, neg, AnchorSource::GroundTruth)
}

/// `(1/HW) * sum_i (-a_pos_i * p_i - a_neg_i * (1 - p_i))`, in `[-1, 0]`.
pub fn anchor_loss(prediction: &ProbMap, anchors: &AnchorPair) -> Result<f64> {
    anchors.shape().ensure_same(&prediction.shape())?;
    Ok(anchor_loss_values(
        prediction.values(),
        anchors.positive.values(),
        anchors.negative.values(),
    ))
}

pub(crate) fn anchor_loss_values(p: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
    let sum: f64 = p
        .iter()
        .zip(pos)
        .zip(neg)
        .map(|((p, a), b)| -a * p - b * (1.0 - p))
        .sum();
    sum / p.len() as f64
}

/// Gradient of [`anchor_loss`] with respect to the prediction: `(a_neg - a_pos) / HW`.
pub fn anchor_loss_grad(anchors: &AnchorPair) -> Vec<f64> {
    let n = anchors.shape().len() as f64;
    anchors
        .positive
        .values()
        .iter()
        .zip(anchors.negative.values())
        .map(|(a, b)| (b - a) / n)
        .collect()
}
