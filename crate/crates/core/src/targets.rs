//! Training-target construction: anchor matching, hard negative mining and
//! the shape/vertex loss with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::anchors::{DefaultBox, RegressionCodec, RegressionVector};
use crate::detector::BoxPrediction;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::templates::{GroundTruthSign, ShapeClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "gt")]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignored,
}

/// Per-default-box assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub assignments: Vec<Assignment>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn k_p(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Positive(_)))
            .count()
    }

    pub fn k_n(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Negative))
            .count()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignments.iter().enumerate().filter_map(|(i, a)| match a {
            Assignment::Positive(g) => Some((i, *g)),
            _ => None,
        })
    }
}

/// IoU matching of default boxes to ground truth.
///
/// A box is positive for its highest-IoU ground truth (lowest index on ties)
/// when that IoU exceeds `iou_threshold`. Each ground truth additionally
/// claims its single best box (lowest box index on ties) even below the
/// threshold; ground truths are processed in order, so a later one wins a box
/// two of them both claim.
pub fn match_boxes(
    boxes: &[DefaultBox],
    ground_truths: &[GroundTruthSign],
    iou_threshold: f64,
) -> MatchResult {
    let mut assignments = vec![Assignment::Negative; boxes.len()];
    if ground_truths.is_empty() || boxes.is_empty() {
        return MatchResult { assignments };
    }
    let gt_boxes: Vec<_> = ground_truths.iter().map(|g| g.bbox()).collect();
    let mut best_box_for_gt = vec![(0usize, f64::NEG_INFINITY); gt_boxes.len()];
    for (bi, b) in boxes.iter().enumerate() {
        let ab = b.aabox();
        let mut best: Option<(usize, f64)> = None;
        for (gi, gb) in gt_boxes.iter().enumerate() {
            let v = iou(&ab, gb);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
            if v > best_box_for_gt[gi].1 {
                best_box_for_gt[gi] = (bi, v);
            }
        }
        if let Some((gi, v)) = best {
            if v > iou_threshold {
                assignments[bi] = Assignment::Positive(gi);
            }
        }
    }
    for (gi, &(bi, _)) in best_box_for_gt.iter().enumerate() {
        assignments[bi] = Assignment::Positive(gi);
    }
    MatchResult { assignments }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Negatives kept per positive.
    pub neg_pos_ratio: usize,
    /// With no positives, keep `neg_pos_ratio * min_positive_base` negatives.
    pub min_positive_base: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            neg_pos_ratio: 3,
            min_positive_base: 8,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Confidence that a box holds some sign: one minus the background probability.
pub fn foreground_score(logits: &[f64]) -> f64 {
    1.0 - softmax(logits)[ShapeClass::Background.index()]
}

/// Keep only the highest-scoring negatives (ties broken by box index); the
/// rest become [`Assignment::Ignored`]. Positives are never touched.
pub fn mine_hard_negatives<L: AsRef<[f64]>>(
    m: &MatchResult,
    class_logits: &[L],
    cfg: &MiningConfig,
) -> Result<MatchResult> {
    if class_logits.len() != m.len() {
        return Err(Error::InconsistentShapes(format!(
            "{} logit vectors for {} boxes",
            class_logits.len(),
            m.len()
        )));
    }
    let k_p = m.k_p();
    let budget = if k_p > 0 {
        cfg.neg_pos_ratio * k_p
    } else {
        cfg.neg_pos_ratio * cfg.min_positive_base
    };
    let mut negatives: Vec<(usize, f64)> = m
        .assignments
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, Assignment::Negative))
        .map(|(i, _)| (i, foreground_score(class_logits[i].as_ref())))
        .collect();
    negatives.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = m.clone();
    for &(i, _) in negatives.iter().skip(budget) {
        out.assignments[i] = Assignment::Ignored;
    }
    Ok(out)
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Softmax cross-entropy `-log softmax(logits)[label]` and its gradient
/// with respect to the logits.
pub fn shape_softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}

/// Vertex regression loss of one 2-vector residual.
pub fn vertex_loss(residual: [f64; 2]) -> f64 {
    smooth_l1(residual[0]) + smooth_l1(residual[1])
}

/// Classification label and (for positives) encoded vertex target of one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTarget {
    pub class: usize,
    pub dp: Option<RegressionVector>,
}

/// Class labels for every box and encoded template vertices for positives.
pub fn build_targets(
    m: &MatchResult,
    boxes: &[DefaultBox],
    ground_truths: &[GroundTruthSign],
    codec: &RegressionCodec,
) -> Result<Vec<BoxTarget>> {
    if boxes.len() != m.len() {
        return Err(Error::InconsistentShapes(format!(
            "{} boxes for {} assignments",
            boxes.len(),
            m.len()
        )));
    }
    m.assignments
        .iter()
        .zip(boxes)
        .map(|(a, b)| match a {
            Assignment::Positive(g) => {
                let gt = ground_truths.get(*g).ok_or_else(|| {
                    Error::InconsistentShapes(format!("ground truth {g} does not exist"))
                })?;
                Ok(BoxTarget {
                    class: gt.shape.index(),
                    dp: Some(codec.encode_vertices(&gt.template_vertices, b)),
                })
            }
            _ => Ok(BoxTarget {
                class: ShapeClass::Background.index(),
                dp: None,
            }),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub shape: f64,
    pub vertex: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            shape: 1.0,
            vertex: 1.0,
        }
    }
}

/// The two normalized loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean softmax loss over positives and kept negatives.
    pub shape: f64,
    /// Summed smooth-L1 vertex loss over positives, divided by the positive count.
    pub vertex: f64,
    pub overall: f64,
    pub lambda_shape: f64,
    pub lambda_vertex: f64,
}

/// Image loss over the positive and kept negative boxes of `m`.
///
/// Ignored boxes contribute nothing; negatives contribute only to the shape
/// term. With no positives the vertex term is zero.
pub fn overall_loss(
    m: &MatchResult,
    predictions: &[BoxPrediction],
    targets: &[BoxTarget],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if predictions.len() != m.len() || targets.len() != m.len() {
        return Err(Error::InconsistentShapes(format!(
            "{} assignments, {} predictions, {} targets",
            m.len(),
            predictions.len(),
            targets.len()
        )));
    }
    let mut shape_sum = 0.0;
    let mut vertex_sum = 0.0;
    let (mut k_p, mut k_n) = (0usize, 0usize);
    for (i, a) in m.assignments.iter().enumerate() {
        let (pred, target) = (&predictions[i], &targets[i]);
        if matches!(a, Assignment::Ignored) {
            continue;
        }
        if target.class >= pred.logits.len() || pred.logits.len() < 2 {
            return Err(Error::InconsistentShapes(format!(
                "box {i}: label {} with {} logits",
                target.class,
                pred.logits.len()
            )));
        }
        shape_sum += shape_softmax_ce(&pred.logits, target.class).0;
        match a {
            Assignment::Positive(_) => {
                k_p += 1;
                let t = target.dp.ok_or_else(|| {
                    Error::InconsistentShapes(format!("positive box {i} has no vertex target"))
                })?;
                for v in 0..4 {
                    let p = pred.dp.vertex(v);
                    let q = t.vertex(v);
                    vertex_sum += vertex_loss([p[0] - q[0], p[1] - q[1]]);
                }
            }
            _ => k_n += 1,
        }
    }
    let shape = if k_p + k_n > 0 {
        shape_sum / (k_p + k_n) as f64
    } else {
        0.0
    };
    let vertex = if k_p > 0 { vertex_sum / k_p as f64 } else { 0.0 };
    Ok(LossBreakdown {
        shape,
        vertex,
        overall: weights.shape * shape + weights.vertex * vertex,
        lambda_shape: weights.shape,
        lambda_vertex: weights.vertex,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AABox, Quad};

    fn dbox(l: f64, t: f64, w: f64, h: f64) -> DefaultBox {
        DefaultBox {
            cx: l + w / 2.0,
            cy: t + h / 2.0,
            w,
            h,
            layer_index: 0,
            cell_row: 0,
            cell_col: 0,
            ratio_index: 0,
        }
    }

    fn rect_gt(b: AABox) -> GroundTruthSign {
        GroundTruthSign::from_vertices(ShapeClass::Rectangle, b.corners(), false).unwrap()
    }

    #[test]
    fn identical_box_is_positive() {
        let boxes = [dbox(0.0, 0.0, 10.0, 10.0), dbox(50.0, 50.0, 10.0, 10.0)];
        let gts = [rect_gt(AABox::new(0.0, 0.0, 10.0, 10.0))];
        let m = match_boxes(&boxes, &gts, 0.5);
        assert_eq!(m.assignments, vec![Assignment::Positive(0), Assignment::Negative]);
    }

    #[test]
    fn forced_match_without_overlap() {
        let boxes = [dbox(0.0, 0.0, 10.0, 10.0), dbox(20.0, 0.0, 10.0, 10.0)];
        let gts = [rect_gt(AABox::new(100.0, 100.0, 110.0, 110.0))];
        let m = match_boxes(&boxes, &gts, 0.5);
        assert_eq!(m.k_p(), 1);
        assert_eq!(m.assignments[0], Assignment::Positive(0));
        assert_eq!(match_boxes(&boxes, &[], 0.5).k_p(), 0);
    }

    #[test]
    fn two_disjoint_ground_truths() {
        let boxes = [
            dbox(0.0, 0.0, 10.0, 10.0),
            dbox(2.0, 0.0, 10.0, 10.0),
            dbox(100.0, 0.0, 10.0, 10.0),
        ];
        let gts = [
            rect_gt(AABox::new(1.0, 0.0, 11.0, 10.0)),
            rect_gt(AABox::new(95.0, 0.0, 105.0, 10.0)),
        ];
        let m = match_boxes(&boxes, &gts, 0.5);
        assert_eq!(
            m.assignments,
            vec![Assignment::Positive(0), Assignment::Positive(0), Assignment::Positive(1)]
        );
    }

    fn logits_with_score(fg: f64) -> Vec<f64> {
        // background logit 0, one sign logit chosen to give the wanted score
        vec![0.0, (fg / (1.0 - fg)).ln(), f64::NEG_INFINITY, f64::NEG_INFINITY]
    }

    #[test]
    fn mining_keeps_top_three() {
        let mut a = vec![Assignment::Positive(0)];
        a.extend(std::iter::repeat_n(Assignment::Negative, 10));
        let m = MatchResult { assignments: a };
        let scores = [0.9, 0.1, 0.5, 0.7, 0.2, 0.95, 0.3, 0.4, 0.6, 0.8, 0.05];
        let logits: Vec<Vec<f64>> = scores.iter().map(|&s| logits_with_score(s)).collect();
        let mined = mine_hard_negatives(&m, &logits, &MiningConfig::default()).unwrap();
        let kept: Vec<usize> = mined
            .assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Assignment::Negative)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(kept, vec![3, 5, 9]);
        assert_eq!(mined.assignments[0], Assignment::Positive(0));
        assert_eq!(mined.k_n(), 3);
    }

    #[test]
    fn mining_ties_use_box_index() {
        let mut a = vec![Assignment::Negative; 6];
        a[4] = Assignment::Positive(0);
        let m = MatchResult { assignments: a };
        let logits = vec![vec![0.0, 0.0]; 6];
        let mined = mine_hard_negatives(&m, &logits, &MiningConfig::default()).unwrap();
        let kept: Vec<usize> = (0..6).filter(|&i| mined.assignments[i] == Assignment::Negative).collect();
        assert_eq!(kept, vec![0, 1, 2]);
    }

    #[test]
    fn mining_without_positives_uses_floor() {
        let m = MatchResult { assignments: vec![Assignment::Negative; 40] };
        let logits = vec![vec![0.0, 0.0]; 40];
        let mined = mine_hard_negatives(&m, &logits, &MiningConfig::default()).unwrap();
        assert_eq!(mined.k_n(), 24);
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1_grad(-3.0), -1.0);
        assert_eq!(smooth_l1_grad(0.25), 0.25);
    }

    #[test]
    fn softmax_ce_values() {
        let (l, g) = shape_softmax_ce(&[0.0; 4], 2);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        let (l, _) = shape_softmax_ce(&[0.0, 50.0, 0.0, 0.0], 1);
        assert!(l < 1e-20);
        let (l, _) = shape_softmax_ce(&[1000.0, -1000.0], 1);
        assert!((l - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.5, 0.7];
        for label in 0..4 {
            let (_, g) = shape_softmax_ce(&logits, label);
            for k in 0..4 {
                let h = 1e-5;
                let mut up = logits;
                let mut dn = logits;
                up[k] += h;
                dn[k] -= h;
                let fd = (shape_softmax_ce(&up, label).0 - shape_softmax_ce(&dn, label).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn loss_examples() {
        let b = dbox(0.0, 0.0, 100.0, 100.0);
        let quad = Quad::UNIT.scale(90.0).translate(5.0, 5.0);
        let gt = GroundTruthSign::from_vertices(ShapeClass::Octagon, quad, false).unwrap();
        let m = MatchResult {
            assignments: vec![Assignment::Positive(0), Assignment::Negative],
        };
        let boxes = [b, dbox(300.0, 0.0, 10.0, 10.0)];
        let targets = build_targets(&m, &boxes, &[gt], &RegressionCodec::default()).unwrap();
        let perfect = [
            BoxPrediction {
                logits: vec![0.0, 0.0, 0.0, 60.0],
                dp: targets[0].dp.unwrap(),
            },
            BoxPrediction {
                logits: vec![60.0, 0.0, 0.0, 0.0],
                dp: RegressionVector::default(),
            },
        ];
        let l = overall_loss(&m, &perfect, &targets, &LossWeights::default()).unwrap();
        assert_eq!(l.vertex, 0.0);
        assert!(l.shape < 1e-20);

        let m = MatchResult {
            assignments: vec![
                Assignment::Positive(0),
                Assignment::Negative,
                Assignment::Negative,
                Assignment::Negative,
                Assignment::Ignored,
            ],
        };
        let boxes = [b; 5];
        let targets = build_targets(&m, &boxes, &[gt_for(&b)], &RegressionCodec::default()).unwrap();
        let preds: Vec<BoxPrediction> = targets
            .iter()
            .map(|t| BoxPrediction {
                logits: vec![0.0; 4],
                dp: t.dp.unwrap_or_default(),
            })
            .collect();
        let l = overall_loss(&m, &preds, &targets, &LossWeights::default()).unwrap();
        assert!((l.overall - 4f64.ln()).abs() < 1e-12);

        assert!(matches!(
            overall_loss(&m, &preds[..3], &targets, &LossWeights::default()),
            Err(Error::InconsistentShapes(_))
        ));
    }

    fn gt_for(b: &DefaultBox) -> GroundTruthSign {
        rect_gt(b.aabox())
    }
}
