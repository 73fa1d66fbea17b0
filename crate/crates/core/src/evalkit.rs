//! Detection accuracy: greedy matching, precision/recall, all-point AP, mAP
//! sweeps over IoU thresholds and the average vertex error (AVE).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{detection_order, Detection};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::templates::{GroundTruthSign, ShapeClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Ground truths whose bbox short side (at the reference width) is below
    /// this are excluded. 0 disables the filter.
    pub min_side_px: f64,
    /// Image width at which `min_side_px` is measured.
    pub reference_width: f64,
    /// IoU threshold for precision/recall and AVE pairs.
    pub ave_match_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: default_iou_thresholds(),
            min_side_px: 0.0,
            reference_width: 1280.0,
            ave_match_iou: 0.5,
        }
    }
}

/// 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidConfig("IoU thresholds must lie in (0, 1)".into()));
        }
        if !(self.ave_match_iou > 0.0 && self.ave_match_iou < 1.0) {
            return Err(Error::InvalidConfig("ave_match_iou must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "label", content = "gt")]
pub enum DetLabel {
    TruePositive(usize),
    FalsePositive,
    /// Matched only an excluded ground truth; counts as neither TP nor FP.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "label", content = "det")]
pub enum GtLabel {
    Matched(usize),
    Missed,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatch {
    pub det_labels: Vec<DetLabel>,
    pub gt_labels: Vec<GtLabel>,
}

impl ImageMatch {
    pub fn tp(&self) -> usize {
        self.det_labels
            .iter()
            .filter(|l| matches!(l, DetLabel::TruePositive(_)))
            .count()
    }

    pub fn fp(&self) -> usize {
        self.det_labels
            .iter()
            .filter(|l| matches!(l, DetLabel::FalsePositive))
            .count()
    }

    pub fn fn_count(&self) -> usize {
        self.gt_labels
            .iter()
            .filter(|l| matches!(l, GtLabel::Missed))
            .count()
    }
}

/// Ground truths to leave out of the evaluation: difficult signs and signs
/// below the minimum side.
pub fn excluded_ground_truths(gts: &[GroundTruthSign], cfg: &EvalConfig, image_width: f64) -> Vec<bool> {
    let scale = if image_width > 0.0 {
        cfg.reference_width / image_width
    } else {
        1.0
    };
    gts.iter()
        .map(|g| g.difficult || (cfg.min_side_px > 0.0 && g.bbox().min_side() * scale < cfg.min_side_px))
        .collect()
}

/// Greedy matching in descending score order. Each detection takes the
/// unmatched, non-excluded ground truth of its shape with the highest IoU
/// (lowest index on ties) when that IoU reaches `iou_t`.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthSign],
    excluded: &[bool],
    iou_t: f64,
) -> ImageMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| detection_order(&dets[a], &dets[b]).then(a.cmp(&b)));
    let gt_boxes: Vec<_> = gts.iter().map(|g| g.bbox()).collect();
    let is_excluded = |g: usize| excluded.get(g).copied().unwrap_or(false);
    let mut gt_labels: Vec<GtLabel> = (0..gts.len())
        .map(|g| if is_excluded(g) { GtLabel::Excluded } else { GtLabel::Missed })
        .collect();
    let mut det_labels = vec![DetLabel::FalsePositive; dets.len()];
    for di in order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        let mut hits_excluded = false;
        for (gi, g) in gts.iter().enumerate() {
            if g.shape != d.shape {
                continue;
            }
            let v = iou(&d.bbox, &gt_boxes[gi]);
            if v < iou_t {
                continue;
            }
            if is_excluded(gi) {
                hits_excluded = true;
                continue;
            }
            if gt_labels[gi] != GtLabel::Missed {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        det_labels[di] = match best {
            Some((gi, _)) => {
                gt_labels[gi] = GtLabel::Matched(di);
                DetLabel::TruePositive(gi)
            }
            None if hits_excluded => DetLabel::Ignored,
            None => DetLabel::FalsePositive,
        };
    }
    ImageMatch {
        det_labels,
        gt_labels,
    }
}

/// All-point interpolated average precision of a ranked list of
/// `(score, is_true_positive)`. Ties in score keep their input order.
/// Returns `None` when there is neither a ground truth nor a detection.
pub fn average_precision(ranked: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if ranked.is_empty() { None } else { Some(0.0) };
    }
    let mut sorted: Vec<&(f64, bool)> = ranked.iter().collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut precision = Vec::with_capacity(sorted.len());
    let mut recall = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, is_tp) in sorted {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexErrorMode {
    /// Estimated vs. ground-truth boundary corners.
    Boundary,
    /// Ground-truth template vertices vs. the corresponding corners of the
    /// detection's circumscribed rectangle.
    BboxCorners,
}

/// Mean corner distance of one matched pair.
pub fn pair_vertex_error(det: &Detection, gt: &GroundTruthSign, mode: VertexErrorMode) -> Result<f64> {
    match mode {
        VertexErrorMode::Boundary => {
            if det.boundary.len() != gt.boundary.len() || gt.boundary.is_empty() {
                return Err(Error::InconsistentShapes(format!(
                    "boundary with {} corners matched to one with {}",
                    det.boundary.len(),
                    gt.boundary.len()
                )));
            }
            let sum: f64 = det
                .boundary
                .iter()
                .zip(&gt.boundary)
                .map(|(a, b)| a.distance(b))
                .sum();
            Ok(sum / gt.boundary.len() as f64)
        }
        VertexErrorMode::BboxCorners => {
            let corners = det.bbox.corners();
            let sum: f64 = corners
                .0
                .iter()
                .zip(&gt.template_vertices.0)
                .map(|(a, b)| a.distance(b))
                .sum();
            Ok(sum / 4.0)
        }
    }
}

/// Mean of the per-pair vertex errors; `None` for an empty pair set.
pub fn average_vertex_error(pairs: &[(&Detection, &GroundTruthSign)], mode: VertexErrorMode) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for (d, g) in pairs {
        sum += pair_vertex_error(d, g, mode)?;
    }
    Ok(Some(sum / pairs.len() as f64))
}

/// Detections and annotations of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<GroundTruthSign>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApAtIou {
    pub iou: f64,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub shape: ShapeClass,
    pub ground_truths: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub ap: Vec<ApAtIou>,
    pub ave: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapAtIou {
    pub iou: f64,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub image: usize,
    pub detection: usize,
    pub ground_truth: usize,
    pub shape: ShapeClass,
    pub vertex_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_shape: Vec<ShapeReport>,
    pub map: Vec<MapAtIou>,
    pub ave: Option<f64>,
    pub ave_bbox_corners: Option<f64>,
    pub pairs: Vec<MatchedPair>,
}

impl EvalReport {
    pub fn map_at(&self, iou_t: f64) -> Option<f64> {
        self.map
            .iter()
            .find(|m| (m.iou - iou_t).abs() < 1e-12)
            .and_then(|m| m.map)
    }
}

struct ThresholdResult {
    matches: Vec<ImageMatch>,
    excluded: Vec<Vec<bool>>,
}

fn match_all(images: &[EvalImage], cfg: &EvalConfig, iou_t: f64) -> ThresholdResult {
    let excluded: Vec<Vec<bool>> = images
        .iter()
        .map(|im| excluded_ground_truths(&im.ground_truths, cfg, im.width as f64))
        .collect();
    let matches = images
        .iter()
        .zip(&excluded)
        .map(|(im, ex)| match_detections(&im.detections, &im.ground_truths, ex, iou_t))
        .collect();
    ThresholdResult { matches, excluded }
}

fn shape_ap(images: &[EvalImage], r: &ThresholdResult, shape: ShapeClass) -> (Option<f64>, usize) {
    let mut ranked = Vec::new();
    let mut n_gt = 0;
    for (ii, im) in images.iter().enumerate() {
        let m = &r.matches[ii];
        n_gt += im
            .ground_truths
            .iter()
            .zip(&r.excluded[ii])
            .filter(|(g, ex)| g.shape == shape && !**ex)
            .count();
        let mut order: Vec<usize> = (0..im.detections.len()).collect();
        order.sort_by(|&a, &b| detection_order(&im.detections[a], &im.detections[b]).then(a.cmp(&b)));
        for di in order {
            let d = &im.detections[di];
            if d.shape != shape {
                continue;
            }
            match m.det_labels[di] {
                DetLabel::TruePositive(_) => ranked.push((d.score, true)),
                DetLabel::FalsePositive => ranked.push((d.score, false)),
                DetLabel::Ignored => {}
            }
        }
    }
    (average_precision(&ranked, n_gt), n_gt)
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-shape AP at each threshold and the mAP over shapes that have ground truth.
pub fn map_vs_iou_sweep(images: &[EvalImage], cfg: &EvalConfig) -> Vec<SweepRow> {
    cfg.iou_thresholds
        .iter()
        .map(|&t| {
            let r = match_all(images, cfg, t);
            let per_shape: Vec<(ShapeClass, Option<f64>, usize)> = ShapeClass::SIGNS
                .iter()
                .map(|&s| {
                    let (ap, n) = shape_ap(images, &r, s);
                    (s, ap, n)
                })
                .collect();
            let map = mean_present(per_shape.iter().filter(|(_, _, n)| *n > 0).map(|(_, ap, _)| *ap));
            SweepRow {
                iou: t,
                map,
                per_shape: per_shape.into_iter().map(|(s, ap, _)| (s, ap)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub iou: f64,
    pub map: Option<f64>,
    pub per_shape: Vec<(ShapeClass, Option<f64>)>,
}

pub const SWEEP_CSV_HEADER: &str = "iou,mAP,rectangle_AP,diamond_AP,octagon_AP";

/// CSV with columns [`SWEEP_CSV_HEADER`]; absent values are empty fields.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let get = |s: ShapeClass| row.per_shape.iter().find(|(k, _)| *k == s).and_then(|(_, v)| *v);
        let _ = writeln!(
            out,
            "{:.2},{},{},{},{}",
            row.iou,
            fmt(row.map),
            fmt(get(ShapeClass::Rectangle)),
            fmt(get(ShapeClass::Diamond)),
            fmt(get(ShapeClass::Octagon)),
        );
    }
    out
}

/// Full report: AP/mAP at every configured threshold, precision, recall and
/// AVE at `ave_match_iou`.
pub fn evaluate(images: &[EvalImage], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let sweep = map_vs_iou_sweep(images, cfg);
    let r = match_all(images, cfg, cfg.ave_match_iou);

    let mut pairs = Vec::new();
    let mut bbox_errors = Vec::new();
    for (ii, im) in images.iter().enumerate() {
        for (di, label) in r.matches[ii].det_labels.iter().enumerate() {
            if let DetLabel::TruePositive(gi) = *label {
                let (d, g) = (&im.detections[di], &im.ground_truths[gi]);
                pairs.push(MatchedPair {
                    image: ii,
                    detection: di,
                    ground_truth: gi,
                    shape: d.shape,
                    vertex_error: pair_vertex_error(d, g, VertexErrorMode::Boundary)?,
                });
                bbox_errors.push(pair_vertex_error(d, g, VertexErrorMode::BboxCorners)?);
            }
        }
    }

    let mut per_shape = Vec::new();
    for shape in ShapeClass::SIGNS {
        let mut n_gt = 0;
        let mut n_det = 0;
        let (mut tp, mut fp, mut fneg) = (0, 0, 0);
        for (ii, im) in images.iter().enumerate() {
            let m = &r.matches[ii];
            for (gi, g) in im.ground_truths.iter().enumerate() {
                if g.shape == shape {
                    match m.gt_labels[gi] {
                        GtLabel::Matched(_) => n_gt += 1,
                        GtLabel::Missed => {
                            n_gt += 1;
                            fneg += 1;
                        }
                        GtLabel::Excluded => {}
                    }
                }
            }
            for (di, d) in im.detections.iter().enumerate() {
                if d.shape == shape {
                    match m.det_labels[di] {
                        DetLabel::TruePositive(_) => {
                            n_det += 1;
                            tp += 1;
                        }
                        DetLabel::FalsePositive => {
                            n_det += 1;
                            fp += 1;
                        }
                        DetLabel::Ignored => {}
                    }
                }
            }
        }
        let errors = pairs.iter().filter(|p| p.shape == shape).map(|p| p.vertex_error);
        let (count, sum) = errors.fold((0usize, 0.0), |(c, s), e| (c + 1, s + e));
        per_shape.push(ShapeReport {
            shape,
            ground_truths: n_gt,
            detections: n_det,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fneg,
            precision: (n_det > 0).then(|| tp as f64 / n_det as f64),
            recall: (n_gt > 0).then(|| tp as f64 / n_gt as f64),
            ap: sweep
                .iter()
                .map(|row| ApAtIou {
                    iou: row.iou,
                    ap: row.per_shape.iter().find(|(s, _)| *s == shape).and_then(|(_, v)| *v),
                })
                .collect(),
            ave: (count > 0).then(|| sum / count as f64),
        });
    }

    let ave = mean_present(pairs.iter().map(|p| Some(p.vertex_error)));
    let ave_bbox_corners = mean_present(bbox_errors.into_iter().map(Some));
    Ok(EvalReport {
        per_shape,
        map: sweep
            .iter()
            .map(|row| MapAtIou {
                iou: row.iou,
                map: row.map,
            })
            .collect(),
        ave,
        ave_bbox_corners,
        pairs,
    })
}
