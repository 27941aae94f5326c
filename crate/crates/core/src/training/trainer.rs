use std::io::Write;

use serde::{Deserialize, Serialize};

use super::labels::LabelSource;
use super::pairs::{make_pairs_for_lengths, shuffled, supervised_indices, FramePair};
use super::{SupervisionMode, TrainConfig};
use crate::anchors::{anchors_from_labels, fuse_anchors_from, AnchorPair};
use crate::cues::{CueKind, CueSet};
use crate::diffusion::{pair_objective, CoarseFeatureMap, DiffusionMargins, FrameInputs, LossBreakdown, LossTerms};
use crate::error::{Error, Result};
use crate::frame::VideoSequence;
use crate::nn::{input_tensor, Adam, FeatureExtractor, Tensor, UNet};

/// Network input and frozen features of one frame, computed once per run.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub label: String,
    pub input: Tensor,
    pub features: CoarseFeatureMap,
}

#[derive(Debug, Clone)]
pub struct PreparedVideo {
    pub video_id: String,
    pub frames: Vec<PreparedFrame>,
}

pub fn prepare_video(video: &VideoSequence, extractor: &dyn FeatureExtractor) -> Result<PreparedVideo> {
    let frames = video
        .frames()
        .iter()
        .map(|f| {
            Ok(PreparedFrame {
                label: f.label(),
                input: input_tensor(&f.rgb),
                features: extractor.extract_for(f, f.shape())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PreparedVideo {
        video_id: video.video_id().to_string(),
        frames,
    })
}

/// Anchors per frame: ground truth on supervised frames, fused cues elsewhere.
///
/// `labels` is only consulted for supervised frames, so it is never touched
/// when `mode` is [`SupervisionMode::None`].
pub fn prepare_anchors(
    video: &VideoSequence,
    cues: &[CueSet],
    kinds: &[CueKind],
    mode: SupervisionMode,
    labels: Option<&dyn LabelSource>,
) -> Result<Vec<AnchorPair>> {
    if cues.len() != video.len() {
        return Err(Error::InvalidArgument(format!(
            "{} cue sets for {} frames of {}",
            cues.len(),
            video.len(),
            video.video_id()
        )));
    }
    let supervised = supervised_indices(video.len(), mode);
    let mut missing = Vec::new();
    let mut anchors = Vec::with_capacity(video.len());
    for (i, (frame, cue)) in video.frames().iter().zip(cues).enumerate() {
        if supervised.contains(&i) {
            let labels = labels.ok_or_else(|| {
                Error::InvalidArgument(format!("{mode} supervision requires ground-truth masks"))
            })?;
            match labels.mask(frame)? {
                Some(gt) => {
                    frame.shape().ensure_same(&gt.shape())?;
                    anchors.push(anchors_from_labels(&gt)?);
                }
                None => missing.push(format!("no ground-truth mask for supervised frame {}", frame.label())),
            }
        } else {
            anchors.push(fuse_anchors_from(cue, kinds)?);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Dataset(missing));
    }
    Ok(anchors)
}

/// A prepared video together with the anchors chosen for this run.
#[derive(Debug, Clone, Copy)]
pub struct TrainingVideo<'a> {
    pub prepared: &'a PreparedVideo,
    pub anchors: &'a [AnchorPair],
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(rename = "L_anc_a")]
    pub anchor_a: f64,
    #[serde(rename = "L_anc_b")]
    pub anchor_b: f64,
    #[serde(rename = "L_dif_fg")]
    pub diffusion_fg: f64,
    #[serde(rename = "L_dif_bg")]
    pub diffusion_bg: f64,
    #[serde(rename = "L_full")]
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: UNet,
    pub records: Vec<StepRecord>,
    /// Pair-averaged components per epoch.
    pub epoch_means: Vec<LossBreakdown>,
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown, w: f64) {
    acc.anchor_a += w * l.anchor_a;
    acc.anchor_b += w * l.anchor_b;
    acc.diffusion_fg += w * l.diffusion_fg;
    acc.diffusion_bg += w * l.diffusion_bg;
    acc.total += w * l.total;
    acc.degenerate |= l.degenerate;
}

/// One optimizer update on the batch-mean objective; returns the pre-update mean loss.
pub fn train_step(
    net: &mut UNet,
    adam: &mut Adam,
    videos: &[TrainingVideo<'_>],
    batch: &[FramePair],
    margins: DiffusionMargins,
    terms: LossTerms,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let lookup = |r: super::FrameRef| -> Result<(&PreparedFrame, &AnchorPair)> {
        let v = videos
            .get(r.video)
            .ok_or_else(|| Error::InvalidArgument(format!("pair references video {}", r.video)))?;
        match (v.prepared.frames.get(r.frame), v.anchors.get(r.frame)) {
            (Some(f), Some(a)) => Ok((f, a)),
            _ => Err(Error::InvalidArgument(format!(
                "pair references frame {} of {}",
                r.frame, v.prepared.video_id
            ))),
        }
    };
    let weight = 1.0 / batch.len() as f64;
    let mut grads = net.zero_gradients();
    let mut mean = LossBreakdown::default();
    for pair in batch {
        let (fa, aa) = lookup(pair.a)?;
        let (fb, ab) = lookup(pair.b)?;
        let ta = net.forward_train(&fa.input)?;
        let tb = net.forward_train(&fb.input)?;
        let (pa, pb) = (ta.prob_map(), tb.prob_map());
        let inputs = |p, f, a| FrameInputs::<CoarseFeatureMap> {
            prediction: p,
            features: f,
            anchors: a,
        };
        let out = pair_objective(
            &inputs(&pa, &fa.features, aa),
            &inputs(&pb, &fb.features, ab),
            margins,
            terms,
        )?;
        if !out.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss on pair ({}, {}): L_anc_a={} L_anc_b={} L_dif_fg={} L_dif_bg={} L_full={}",
                fa.label,
                fb.label,
                out.loss.anchor_a,
                out.loss.anchor_b,
                out.loss.diffusion_fg,
                out.loss.diffusion_bg,
                out.loss.total
            )));
        }
        accumulate(&mut mean, &out.loss, weight);
        let scale = |g: Vec<f64>| -> Vec<f64> { g.into_iter().map(|v| v * weight).collect() };
        net.backward(&ta, &scale(out.grad_a), &mut grads);
        net.backward(&tb, &scale(out.grad_b), &mut grads);
    }
    adam.update(net, &grads);
    Ok(mean)
}

/// Trains a fresh network; every stochastic choice derives from `config.seed`.
///
/// When `log` is given, one JSON record per step is appended to it.
pub fn run_training(
    config: &TrainConfig,
    videos: &[TrainingVideo<'_>],
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    for v in videos {
        if v.prepared.frames.len() != v.anchors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} has {} frames but {} anchor pairs",
                v.prepared.video_id,
                v.prepared.frames.len(),
                v.anchors.len()
            )));
        }
    }
    let lengths: Vec<usize> = videos.iter().map(|v| v.prepared.frames.len()).collect();
    let pairs = make_pairs_for_lengths(&lengths, config.pairing, config.stride, config.seed)?;
    let mut net = UNet::new(config.network, config.seed)?;
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut records = Vec::new();
    let mut epoch_means = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = shuffled(&pairs, config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1)));
        let mut epoch_mean = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let l = train_step(&mut net, &mut adam, videos, batch, config.margins, config.terms)?;
            accumulate(&mut epoch_mean, &l, batch.len() as f64 / order.len() as f64);
            let record = StepRecord {
                epoch,
                step,
                anchor_a: l.anchor_a,
                anchor_b: l.anchor_b,
                diffusion_fg: l.diffusion_fg,
                diffusion_bg: l.diffusion_bg,
                total: l.total,
            };
            if let Some(out) = log.as_mut() {
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(out, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            records.push(record);
            step += 1;
        }
        log::info!(
            "epoch {}/{}: L_full={:.5} L_anc={:.5} L_dif_fg={:.5} L_dif_bg={:.5}",
            epoch + 1,
            config.epochs,
            epoch_mean.total,
            0.5 * (epoch_mean.anchor_a + epoch_mean.anchor_b),
            epoch_mean.diffusion_fg,
            epoch_mean.diffusion_bg
        );
        epoch_means.push(epoch_mean);
    }
    Ok(TrainOutcome {
        network: net,
        records,
        epoch_means,
    })
}
