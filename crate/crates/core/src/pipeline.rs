//! End-to-end runs: anchor preparation, per-fold training, evaluation and
//! the two ablation grids.

use std::collections::BTreeMap;
use std::io::Write;

use crate::anchors::AnchorPair;
use crate::cues::{CueKind, CueSet};
use crate::diffusion::LossTerms;
use crate::error::{Error, Result};
use crate::eval::{evaluate_maps, MetricsReport, RunLabels, ScoreSource};
use crate::frame::VideoSequence;
use crate::map::{GroundTruthMask, ProbMap};
use crate::nn::{FeatureExtractor, UNet};
use crate::training::{
    folds_from_table, make_folds, prepare_anchors, prepare_video, run_training, ExperimentSetting, LabelSource,
    PreparedVideo, StepRecord, TrainConfig, TrainingVideo,
};

/// The cue-combination rows of the cue ablation, in order.
pub const CUE_GRID: [&[CueKind]; 7] = [
    &[CueKind::Color],
    &[CueKind::Objectness],
    &[CueKind::Location],
    &[CueKind::Objectness, CueKind::Location],
    &[CueKind::Color, CueKind::Location],
    &[CueKind::Color, CueKind::Objectness],
    &[CueKind::Color, CueKind::Objectness, CueKind::Location],
];

pub fn cue_label(kinds: &[CueKind]) -> String {
    kinds.iter().map(|k| k.short()).collect::<Vec<_>>().join("+")
}

/// Videos with their cues and frozen features, shared by every run on them.
pub struct Workspace<'a> {
    pub videos: &'a [VideoSequence],
    pub cues: &'a [Vec<CueSet>],
    pub prepared: Vec<PreparedVideo>,
}

impl<'a> Workspace<'a> {
    pub fn new(videos: &'a [VideoSequence], cues: &'a [Vec<CueSet>], extractor: &dyn FeatureExtractor) -> Result<Self> {
        if videos.len() != cues.len() {
            return Err(Error::InvalidArgument(format!(
                "{} videos but cues for {}",
                videos.len(),
                cues.len()
            )));
        }
        let prepared = videos
            .iter()
            .map(|v| prepare_video(v, extractor))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { videos, cues, prepared })
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.video_id().to_string()).collect()
    }

    pub fn anchors(
        &self,
        config: &TrainConfig,
        labels: Option<&dyn LabelSource>,
    ) -> Result<Vec<Vec<AnchorPair>>> {
        self.videos
            .iter()
            .zip(self.cues)
            .map(|(v, c)| prepare_anchors(v, c, &config.cues, config.supervision, labels))
            .collect()
    }

    /// Probability maps of every frame of the given videos.
    pub fn predict(&self, net: &UNet, videos: &[usize]) -> Result<Vec<(String, ProbMap)>> {
        let mut out = Vec::new();
        for &v in videos {
            for f in &self.prepared[v].frames {
                out.push((f.label.clone(), net.forward(&f.input)?));
            }
        }
        Ok(out)
    }
}

/// A trained network and the videos it is evaluated on.
#[derive(Debug, Clone)]
pub struct FoldModel {
    pub fold: Option<usize>,
    pub network: UNet,
    pub train_videos: Vec<usize>,
    pub test_videos: Vec<usize>,
    pub records: Vec<StepRecord>,
}

/// Train/test video index sets per fold; SS uses a single split over everything.
pub fn splits(config: &TrainConfig, ids: &[String]) -> Result<Vec<(Option<usize>, Vec<usize>, Vec<usize>)>> {
    let all: Vec<usize> = (0..ids.len()).collect();
    match config.setting {
        ExperimentSetting::SingleStage => Ok(vec![(None, all.clone(), all)]),
        ExperimentSetting::TrainTest => {
            let folds = match &config.split_table {
                Some(table) => folds_from_table(ids, table)?,
                None => make_folds(ids, config.folds, config.seed)?,
            };
            let index = |names: &[String]| -> Vec<usize> {
                names.iter().map(|n| ids.iter().position(|i| i == n).expect("fold ids come from ids")).collect()
            };
            Ok(folds
                .iter()
                .map(|f| (Some(f.fold_id), index(&f.train_videos), index(&f.test_videos)))
                .collect())
        }
    }
}

/// Trains one network per split.
pub fn train_models(
    config: &TrainConfig,
    ws: &Workspace<'_>,
    anchors: &[Vec<AnchorPair>],
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<FoldModel>> {
    let mut models = Vec::new();
    for (fold, train, test) in splits(config, &ws.video_ids())? {
        if let Some(f) = fold {
            log::info!("fold {f}: training on {} videos", train.len());
        }
        let videos: Vec<TrainingVideo<'_>> = train
            .iter()
            .map(|&v| TrainingVideo {
                prepared: &ws.prepared[v],
                anchors: &anchors[v],
            })
            .collect();
        let outcome = run_training(config, &videos, log.as_mut().map(|w| &mut **w as &mut dyn Write))?;
        models.push(FoldModel {
            fold,
            network: outcome.network,
            train_videos: train,
            test_videos: test,
            records: outcome.records,
        });
    }
    Ok(models)
}

fn labels_for(config: &TrainConfig, source: ScoreSource, fold: Option<usize>, ws: &Workspace<'_>) -> RunLabels {
    RunLabels {
        setting: config.setting.to_string(),
        supervision: config.supervision.to_string(),
        fold,
        source,
        resolution: ws.videos.first().map(|v| v.shape().to_string()).unwrap_or_default(),
    }
}

/// Scores every model on its test videos and pools the folds.
pub fn evaluate_models(
    config: &TrainConfig,
    ws: &Workspace<'_>,
    models: &[FoldModel],
    gts: &BTreeMap<String, GroundTruthMask>,
) -> Result<(MetricsReport, Vec<MetricsReport>)> {
    let mut per_fold = Vec::new();
    for m in models {
        let maps = ws.predict(&m.network, &m.test_videos)?;
        per_fold.push(evaluate_maps(labels_for(config, ScoreSource::Network, m.fold, ws), maps, gts)?);
    }
    let pooled = MetricsReport::merge(labels_for(config, ScoreSource::Network, None, ws), &per_fold);
    Ok((pooled, per_fold))
}

/// Otsu-scores `a_pos` or `1 - a_neg` directly over all frames.
pub fn score_anchors(
    config: &TrainConfig,
    ws: &Workspace<'_>,
    anchors: &[Vec<AnchorPair>],
    source: ScoreSource,
    gts: &BTreeMap<String, GroundTruthMask>,
) -> Result<MetricsReport> {
    let maps = ws.prepared.iter().zip(anchors).flat_map(|(v, a)| {
        v.frames.iter().zip(a).map(move |(f, a)| {
            let map = match source {
                ScoreSource::PositiveAnchor => a.positive().clone(),
                ScoreSource::NegativeAnchorComplement => a.negative().complement(),
                ScoreSource::Network => unreachable!("network maps come from predictions"),
            };
            (f.label.clone(), map)
        })
    });
    if source == ScoreSource::Network {
        return Err(Error::InvalidArgument("anchor scoring needs an anchor source".into()));
    }
    evaluate_maps(labels_for(config, source, None, ws), maps, gts)
}

/// Train-and-evaluate for one configuration.
pub fn run_experiment(
    config: &TrainConfig,
    ws: &Workspace<'_>,
    labels: Option<&dyn LabelSource>,
    gts: &BTreeMap<String, GroundTruthMask>,
    log: Option<&mut dyn Write>,
) -> Result<(MetricsReport, Vec<FoldModel>)> {
    let anchors = ws.anchors(config, labels)?;
    let models = train_models(config, ws, &anchors, log)?;
    let (report, _) = evaluate_models(config, ws, &models, gts)?;
    Ok((report, models))
}

#[derive(Debug, Clone)]
pub struct LossAblationRow {
    pub terms: LossTerms,
    pub report: MetricsReport,
}

/// One experiment per loss combination of `grid`.
pub fn loss_ablation(
    config: &TrainConfig,
    ws: &Workspace<'_>,
    labels: Option<&dyn LabelSource>,
    gts: &BTreeMap<String, GroundTruthMask>,
    grid: &[LossTerms],
) -> Result<Vec<LossAblationRow>> {
    grid.iter()
        .map(|&terms| {
            let c = TrainConfig { terms, ..config.clone() };
            log::info!("loss ablation row {}", terms.label());
            Ok(LossAblationRow {
                terms,
                report: run_experiment(&c, ws, labels, gts, None)?.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CueAblationRow {
    pub cues: Vec<CueKind>,
    pub positive: MetricsReport,
    pub negative_complement: MetricsReport,
    pub network: MetricsReport,
}

/// Anchor and network scores per cue combination of `grid`.
pub fn cue_ablation(
    config: &TrainConfig,
    ws: &Workspace<'_>,
    labels: Option<&dyn LabelSource>,
    gts: &BTreeMap<String, GroundTruthMask>,
    grid: &[&[CueKind]],
) -> Result<Vec<CueAblationRow>> {
    grid.iter()
        .map(|kinds| {
            let c = TrainConfig {
                cues: kinds.to_vec(),
                ..config.clone()
            };
            log::info!("cue ablation row {}", cue_label(kinds));
            let anchors = ws.anchors(&c, labels)?;
            let positive = score_anchors(&c, ws, &anchors, ScoreSource::PositiveAnchor, gts)?;
            let negative_complement = score_anchors(&c, ws, &anchors, ScoreSource::NegativeAnchorComplement, gts)?;
            let models = train_models(&c, ws, &anchors, None)?;
            let (network, _) = evaluate_models(&c, ws, &models, gts)?;
            Ok(CueAblationRow {
                cues: kinds.to_vec(),
                positive,
                negative_complement,
                network,
            })
        })
        .collect()
}

fn pct(mean: f64) -> String {
    format!("{:.2}", 100.0 * mean)
}

pub fn loss_table(rows: &[LossAblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { " " };
    let mut s = String::from("| L_anc | L_dif_fg | L_dif_bg | IoU (%) | Dice (%) |\n|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            mark(r.terms.anchor),
            mark(r.terms.diffusion_fg),
            mark(r.terms.diffusion_bg),
            pct(r.report.mean_iou),
            pct(r.report.mean_dice)
        ));
    }
    s
}

pub fn cue_table(rows: &[CueAblationRow]) -> String {
    let mark = |r: &CueAblationRow, k: CueKind| if r.cues.contains(&k) { "x" } else { " " };
    let mut s = String::from(
        "| color | obj | loc | IoU a_pos | IoU 1-a_neg | IoU p | Dice a_pos | Dice 1-a_neg | Dice p |\n|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            mark(r, CueKind::Color),
            mark(r, CueKind::Objectness),
            mark(r, CueKind::Location),
            pct(r.positive.mean_iou),
            pct(r.negative_complement.mean_iou),
            pct(r.network.mean_iou),
            pct(r.positive.mean_dice),
            pct(r.negative_complement.mean_dice),
            pct(r.network.mean_dice)
        ));
    }
    s
}
