//! Otsu binarization, overlap metrics and run-level reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RgbImage;
use crate::map::{BinaryMask, GroundTruthMask, ProbMap};

pub const DEFAULT_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuThreshold {
    pub threshold: f64,
    /// Index of the last bin assigned to the background class.
    pub bin: usize,
    /// Set when no split separates two non-empty classes.
    pub degenerate: bool,
}

/// Bin holding `v`: bin `k` covers `((k)/bins, (k+1)/bins]`, with 0 folded into bin 0.
pub fn bin_index(v: f64, bins: usize) -> usize {
    let k = (v * bins as f64).ceil() as i64 - 1;
    k.clamp(0, bins as i64 - 1) as usize
}

pub fn histogram(map: &ProbMap, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for v in map.values() {
        counts[bin_index(*v, bins)] += 1;
    }
    counts
}

/// Full 256-bit product of two `u128`s as `(high, low)`.
fn wide_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & MASK);
    let (b1, b0) = (b >> 64, b & MASK);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 & MASK) + (p10 & MASK);
    let low = (p00 & MASK) | (mid << 64);
    let high = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (high, low)
}

/// Between-class score `(S0·N − S·n0)² / (n0·n1)` kept as an exact fraction.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn greater_than(&self, other: &Score) -> bool {
        wide_mul(self.num, other.den) > wide_mul(other.num, self.den)
    }
}

/// Otsu's threshold over `bins` equal-width bins on `[0, 1]`.
///
/// Class scores are compared exactly in integer arithmetic; ties go to the
/// lowest threshold. Pixels are foreground iff strictly above the threshold.
pub fn otsu_threshold_bins(map: &ProbMap, bins: usize) -> Result<OtsuThreshold> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("otsu needs at least 2 bins, got {bins}")));
    }
    if map.values().is_empty() {
        return Err(Error::Empty("probability map".into()));
    }
    let counts = histogram(map, bins);
    let n: u128 = counts.iter().map(|c| u128::from(*c)).sum();
    let s: u128 = counts.iter().enumerate().map(|(k, c)| k as u128 * u128::from(*c)).sum();
    let mut best: Option<(usize, Score)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for (k, c) in counts.iter().enumerate().take(bins - 1) {
        n0 += u128::from(*c);
        s0 += k as u128 * u128::from(*c);
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 * n).abs_diff(s * n0);
        let score = Score {
            num: diff * diff,
            den: n0 * n1,
        };
        if score.num == 0 {
            continue;
        }
        if best.map_or(true, |(_, b)| score.greater_than(&b)) {
            best = Some((k, score));
        }
    }
    Ok(match best {
        Some((k, _)) => OtsuThreshold {
            threshold: (k + 1) as f64 / bins as f64,
            bin: k,
            degenerate: false,
        },
        None => {
            let top = counts.iter().rposition(|c| *c > 0).unwrap_or(0);
            OtsuThreshold {
                threshold: (top + 1) as f64 / bins as f64,
                bin: top,
                degenerate: true,
            }
        }
    })
}

pub fn otsu_threshold(map: &ProbMap) -> Result<OtsuThreshold> {
    otsu_threshold_bins(map, DEFAULT_BINS)
}

/// Foreground iff value is strictly above `threshold`.
pub fn binarize(map: &ProbMap, threshold: f64) -> BinaryMask {
    BinaryMask::from_bools(map.shape(), map.values().iter().map(|v| *v > threshold))
        .expect("shape preserved")
}

pub fn otsu_binarize(map: &ProbMap) -> Result<(BinaryMask, OtsuThreshold)> {
    let t = otsu_threshold(map)?;
    Ok((binarize(map, t.threshold), t))
}

/// Pixel counts behind both overlap metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub intersection: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl Overlap {
    pub fn between(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        pred.shape().ensure_same(&gt.shape())?;
        let mut o = Overlap {
            intersection: 0,
            predicted: 0,
            truth: 0,
        };
        for (p, g) in pred.values().iter().zip(gt.values()) {
            o.intersection += usize::from(*p & *g);
            o.predicted += usize::from(*p);
            o.truth += usize::from(*g);
        }
        Ok(o)
    }

    pub fn union(&self) -> usize {
        self.predicted + self.truth - self.intersection
    }

    /// Both-empty pairs score 1.
    pub fn iou(&self) -> f64 {
        match self.union() {
            0 => 1.0,
            u => self.intersection as f64 / u as f64,
        }
    }

    pub fn dice(&self) -> f64 {
        match self.predicted + self.truth {
            0 => 1.0,
            s => (2 * self.intersection) as f64 / s as f64,
        }
    }
}

pub fn iou(pred: &BinaryMask, gt: &GroundTruthMask) -> Result<f64> {
    Ok(Overlap::between(pred, gt)?.iou())
}

pub fn dice(pred: &BinaryMask, gt: &GroundTruthMask) -> Result<f64> {
    Ok(Overlap::between(pred, gt)?.dice())
}

/// What produced the scored probability maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Network,
    PositiveAnchor,
    /// `1 - a_neg`.
    NegativeAnchorComplement,
}

impl ScoreSource {
    pub fn name(self) -> &'static str {
        match self {
            ScoreSource::Network => "network",
            ScoreSource::PositiveAnchor => "a_pos",
            ScoreSource::NegativeAnchorComplement => "1-a_neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: String,
    pub iou: f64,
    pub dice: f64,
    pub threshold: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabels {
    pub setting: String,
    pub supervision: String,
    pub fold: Option<usize>,
    pub source: ScoreSource,
    /// Working resolution as `HxW`.
    pub resolution: String,
}

/// Per-frame scores with mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub labels: RunLabels,
    pub per_frame: Vec<FrameScore>,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub mean_dice: f64,
    pub std_dice: f64,
    /// Frames skipped for lack of ground truth.
    pub skipped: Vec<String>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_rows(labels: RunLabels, per_frame: Vec<FrameScore>, skipped: Vec<String>) -> Self {
        let (mean_iou, std_iou) = mean_std(per_frame.iter().map(|r| r.iou));
        let (mean_dice, std_dice) = mean_std(per_frame.iter().map(|r| r.dice));
        Self {
            labels,
            per_frame,
            mean_iou,
            std_iou,
            mean_dice,
            std_dice,
            skipped,
        }
    }

    /// Pools several reports (e.g. folds) into one over all their frames.
    pub fn merge(labels: RunLabels, reports: &[MetricsReport]) -> Self {
        let rows = reports.iter().flat_map(|r| r.per_frame.iter().cloned()).collect();
        let skipped = reports.iter().flat_map(|r| r.skipped.iter().cloned()).collect();
        Self::from_rows(labels, rows, skipped)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for row in &self.per_frame {
            let line = serde_json::to_string(row).expect("row serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn table_row(&self, first_column: &str) -> String {
        format!(
            "| {first_column} | {} | {} | {:.2} ± {:.2} | {:.2} ± {:.2} | {} |",
            self.labels.setting,
            self.labels.supervision,
            100.0 * self.mean_iou,
            100.0 * self.std_iou,
            100.0 * self.mean_dice,
            100.0 * self.std_dice,
            self.per_frame.len(),
        )
    }

    pub fn table_header(first_column: &str) -> String {
        format!(
            "| {first_column} | Setting | Supervision | IoU (%) | Dice (%) | Frames |\n|---|---|---|---|---|---|"
        )
    }

    /// Markdown table; means are per frame.
    pub fn to_table(&self) -> String {
        let mut s = Self::table_header("Scored");
        let _ = write!(s, "\n{}", self.table_row(self.labels.source.name()));
        if !self.skipped.is_empty() {
            let _ = write!(s, "\n\n{} frame(s) skipped without ground truth", self.skipped.len());
        }
        s
    }
}

/// Otsu-binarizes each map and scores it against its ground truth.
///
/// Frames whose label is absent from `gts` are skipped with a warning.
pub fn evaluate_maps(
    labels: RunLabels,
    maps: impl IntoIterator<Item = (String, ProbMap)>,
    gts: &BTreeMap<String, GroundTruthMask>,
) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (frame, map) in maps {
        let Some(gt) = gts.get(&frame) else {
            log::warn!("no ground truth for {frame}; skipped");
            skipped.push(frame);
            continue;
        };
        let (mask, t) = otsu_binarize(&map)?;
        let o = Overlap::between(&mask, gt)?;
        rows.push(FrameScore {
            frame,
            iou: o.iou(),
            dice: o.dice(),
            threshold: t.threshold,
            degenerate: t.degenerate,
        });
    }
    Ok(MetricsReport::from_rows(labels, rows, skipped))
}

/// Frame with the predicted mask tinted green and ground-truth-only pixels tinted blue.
pub fn overlay(rgb: &RgbImage, pred: &BinaryMask, gt: Option<&GroundTruthMask>) -> Result<RgbImage> {
    rgb.shape().ensure_same(&pred.shape())?;
    if let Some(gt) = gt {
        rgb.shape().ensure_same(&gt.shape())?;
    }
    let mut data = Vec::with_capacity(rgb.data().len());
    for (i, px) in rgb.pixels().enumerate() {
        let p = pred.values()[i] == 1;
        let g = gt.is_some_and(|g| g.values()[i] == 1);
        let tint = match (p, g) {
            (true, _) => Some([0.1, 0.9, 0.2]),
            (false, true) => Some([0.1, 0.3, 0.95]),
            _ => None,
        };
        match tint {
            Some(t) => data.extend((0..3).map(|c| 0.5 * px[c] + 0.5 * t[c])),
            None => data.extend(px),
        }
    }
    RgbImage::new(rgb.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::ImageShape;
    use proptest::prelude::*;

    fn map(values: &[f64]) -> ProbMap {
        ProbMap::new(ImageShape::new(1, values.len()).unwrap(), values.to_vec()).unwrap()
    }

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(ImageShape::new(1, bits.len()).unwrap(), bits.to_vec()).unwrap()
    }

    #[test]
    fn two_clusters_split_evenly() {
        let m = map(&[0.1, 0.1, 0.9, 0.9]);
        let t = otsu_threshold(&m).unwrap();
        assert!(!t.degenerate);
        assert!(t.threshold > 0.1 && t.threshold <= 0.9);
        assert_eq!(binarize(&m, t.threshold).values(), &[0, 0, 1, 1]);
        // Every split between the clusters ties; the lowest wins.
        assert_eq!(t.bin, bin_index(0.1, 256));
    }

    #[test]
    fn constant_map_is_degenerate_and_empty() {
        for v in [0.0, 0.5, 1.0] {
            let m = map(&[v; 6]);
            let (mask, t) = otsu_binarize(&m).unwrap();
            assert!(t.degenerate);
            assert_eq!(mask.count_ones(), 0);
        }
    }

    #[test]
    fn binarize_edges() {
        let m = map(&[0.2, 0.7, 1.0]);
        assert_eq!(binarize(&m, 0.0).count_ones(), 3);
        assert_eq!(binarize(&m, 1.0).count_ones(), 0);
        assert_eq!(binarize(&map(&[0.2, 0.7]), 0.5).values(), &[0, 1]);
    }

    #[test]
    fn bins_edges_match_the_strict_rule() {
        assert_eq!(bin_index(0.0, 256), 0);
        assert_eq!(bin_index(1.0 / 256.0, 256), 0);
        assert_eq!(bin_index(1.0 / 256.0 + 1e-12, 256), 1);
        assert_eq!(bin_index(1.0, 256), 255);
    }

    #[test]
    fn overlap_examples() {
        let a = mask(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1, 0, 0]);
        assert!((iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = mask(&[0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        let e = mask(&[0; 8]);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(iou(&a, &mask(&[0; 3])).is_err());
    }

    #[test]
    fn wide_mul_matches_small_products() {
        assert_eq!(wide_mul(3, 5), (0, 15));
        assert_eq!(wide_mul(u128::MAX, 2), (1, u128::MAX - 1));
        assert_eq!(wide_mul(u128::MAX, u128::MAX), (u128::MAX - 1, 1));
    }

    #[test]
    fn report_aggregates_and_missing_frames() {
        let shape = ImageShape::new(2, 2).unwrap();
        let gt = BinaryMask::new(shape, vec![1, 0, 0, 1]).unwrap();
        let mut gts = BTreeMap::new();
        gts.insert("v/0".to_string(), gt.clone());
        gts.insert("v/1".to_string(), gt.clone());
        let perfect = gt.to_prob_map();
        let half = ProbMap::new(shape, vec![0.9, 0.8, 0.1, 0.1]).unwrap();
        let labels = RunLabels {
            setting: "SS".into(),
            supervision: "0%".into(),
            fold: None,
            source: ScoreSource::Network,
            resolution: shape.to_string(),
        };
        let report = evaluate_maps(
            labels,
            vec![
                ("v/0".to_string(), perfect.clone()),
                ("v/1".to_string(), half),
                ("v/2".to_string(), perfect),
            ],
            &gts,
        )
        .unwrap();
        assert_eq!(report.per_frame.len(), 2);
        assert_eq!(report.skipped, vec!["v/2".to_string()]);
        assert_eq!(report.per_frame[0].iou, 1.0);
        assert!((report.per_frame[1].iou - 1.0 / 3.0).abs() < 1e-12);
        let mean = (1.0 + 1.0 / 3.0) / 2.0;
        assert!((report.mean_iou - mean).abs() < 1e-9);
        assert!((report.std_iou - (1.0 - mean)).abs() < 1e-9);
        let table = report.to_table();
        assert!(table.contains("IoU (%)") && table.contains("skipped"));

        let dir = tempfile::tempdir().unwrap();
        report.write_jsonl(&dir.path().join("frames.jsonl")).unwrap();
        report.write_json(&dir.path().join("report.json")).unwrap();
        let back: MetricsReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, report);
        let lines = std::fs::read_to_string(dir.path().join("frames.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    #[test]
    fn overlay_tints_only_masked_pixels() {
        let shape = ImageShape::new(1, 3).unwrap();
        let rgb = RgbImage::filled(shape, [0.4, 0.4, 0.4]).unwrap();
        let pred = BinaryMask::new(shape, vec![1, 0, 0]).unwrap();
        let gt = BinaryMask::new(shape, vec![0, 1, 0]).unwrap();
        let out = overlay(&rgb, &pred, Some(&gt)).unwrap();
        assert!(out.pixel(0)[1] > 0.6);
        assert!(out.pixel(1)[2] > 0.6);
        assert_eq!(out.pixel(2), [0.4, 0.4, 0.4]);
    }

    proptest! {
        #[test]
        fn metrics_identities(bits in prop::collection::vec((0u8..2, 0u8..2), 1..64)) {
            let p = mask(&bits.iter().map(|b| b.0).collect::<Vec<_>>());
            let g = mask(&bits.iter().map(|b| b.1).collect::<Vec<_>>());
            let o = Overlap::between(&p, &g).unwrap();
            prop_assert!(o.iou() <= o.dice());
            // Dice·(1 + IoU) = 2·IoU holds as the rational identity 2I·(U + I) = 2I·(P + G).
            prop_assert_eq!(o.union() + o.intersection, o.predicted + o.truth);
            let from_iou = 2.0 * o.iou() / (1.0 + o.iou());
            prop_assert!((from_iou - o.dice()).abs() <= 4.0 * f64::EPSILON);
            let o2 = Overlap::between(&g, &p).unwrap();
            prop_assert_eq!(o.iou(), o2.iou());
        }

        #[test]
        fn otsu_threshold_separates_classes(values in prop::collection::vec(0.0f64..=1.0, 2..40)) {
            let m = map(&values);
            let t = otsu_threshold(&m).unwrap();
            let ones = binarize(&m, t.threshold).count_ones();
            if t.degenerate {
                prop_assert_eq!(ones, 0);
            } else {
                prop_assert!(ones > 0 && ones < values.len());
            }
        }
    }
}
