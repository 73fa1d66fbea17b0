//! Property tests for invariants that should hold on any input.

mod common;

use common::*;
use proptest::prelude::*;
use signpose_core::anchors::DefaultBox;
use signpose_core::detector::{nms, Detection};
use signpose_core::evalkit::{average_precision, match_detections, DetLabel, GtLabel};
use signpose_core::geometry::{homography_from_correspondences, iou, AABox, Point2, Quad};
use signpose_core::targets::{match_boxes, mine_hard_negatives, softmax, Assignment, MiningConfig};
use signpose_core::templates::{
    boundary_to_template_vertices, template_vertices_to_boundary, GroundTruthSign, ShapeClass,
};

fn arb_box() -> impl Strategy<Value = [f64; 4]> {
    (0.0..200.0f64, 0.0..200.0f64, 2.0..80.0f64, 2.0..80.0f64).prop_map(|(l, t, w, h)| [l, t, l + w, t + h])
}

fn arb_shape() -> impl Strategy<Value = ShapeClass> {
    prop::sample::select(ShapeClass::SIGNS.to_vec())
}

fn to_aabox(b: &[f64; 4]) -> AABox {
    AABox::new(b[0], b[1], b[2], b[3])
}

fn default_box(b: &[f64; 4]) -> DefaultBox {
    DefaultBox {
        cx: (b[0] + b[2]) / 2.0,
        cy: (b[1] + b[3]) / 2.0,
        w: b[2] - b[0],
        h: b[3] - b[1],
        layer_index: 0,
        cell_row: 0,
        cell_col: 0,
        ratio_index: 0,
    }
}

fn arb_quad() -> impl Strategy<Value = Quad> {
    (arb_box(), prop::array::uniform8(-0.15..0.15f64)).prop_map(|(b, j)| {
        let s = (b[2] - b[0]).min(b[3] - b[1]);
        let mut q = to_aabox(&b).corners();
        for (k, p) in q.0.iter_mut().enumerate() {
            *p = Point2::new(p.x + j[2 * k] * s, p.y + j[2 * k + 1] * s);
        }
        q
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (x, y) = (to_aabox(&a), to_aabox(&b));
        let v = iou(&x, &y);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - iou(&y, &x)).abs() < 1e-15);
        prop_assert!((v - oracle_iou(&a, &b)).abs() < 1e-12);
        prop_assert!((iou(&x, &x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn homography_inverse_round_trip(src in arb_quad(), dst in arb_quad()) {
        prop_assume!(is_convex_clockwise(&src.0) && is_convex_clockwise(&dst.0));
        let h = homography_from_correspondences(&src.0, &dst.0).unwrap();
        let inv = h.inverse().unwrap();
        for (s, d) in src.0.iter().zip(&dst.0) {
            prop_assert!(apply(&h, s).distance(d) < 1e-8);
            prop_assert!(apply(&inv, d).distance(s) < 1e-8);
        }
    }

    #[test]
    fn template_round_trip(q in arb_quad(), shape in arb_shape()) {
        prop_assume!(is_convex_clockwise(&q.0));
        let boundary = template_vertices_to_boundary(&q, shape).unwrap();
        prop_assert_eq!(Some(boundary.len()), shape.corner_count());
        prop_assert!(is_convex_clockwise(&boundary));
        let back = boundary_to_template_vertices(&boundary, shape).unwrap();
        prop_assert!(back.max_corner_distance(&q) < 1e-7);
    }

    #[test]
    fn every_ground_truth_gets_a_box(
        boxes in prop::collection::vec(arb_box(), 1..20),
        gts in prop::collection::vec(arb_box(), 0..5),
    ) {
        let dboxes: Vec<DefaultBox> = boxes.iter().map(default_box).collect();
        let signs: Vec<GroundTruthSign> = gts
            .iter()
            .map(|b| GroundTruthSign::from_vertices(ShapeClass::Rectangle, to_aabox(b).corners(), false).unwrap())
            .collect();
        let m = match_boxes(&dboxes, &signs, 0.5);
        prop_assert_eq!(m.len(), boxes.len());
        // a ground truth can only lose its forced box to a later ground truth
        let best_box = |g: &[f64; 4]| {
            let ious: Vec<f64> = boxes.iter().map(|b| oracle_iou(b, g)).collect();
            let best = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ious.iter().position(|&v| v == best).unwrap()
        };
        let forced: Vec<usize> = gts.iter().map(best_box).collect();
        for g in 0..gts.len() {
            let has_box = m.positives().any(|(_, gi)| gi == g);
            let stolen = forced[g + 1..].contains(&forced[g]);
            prop_assert!(has_box || stolen);
        }
        for (i, a) in m.assignments.iter().enumerate() {
            prop_assert!(matches!(a, Assignment::Positive(_) | Assignment::Negative), "box {}", i);
        }
    }

    #[test]
    fn mining_keeps_highest_scores(
        boxes in prop::collection::vec(arb_box(), 1..20),
        gts in prop::collection::vec(arb_box(), 0..4),
        logits in prop::collection::vec(prop::array::uniform4(-3.0..3.0f64), 20),
    ) {
        let dboxes: Vec<DefaultBox> = boxes.iter().map(default_box).collect();
        let signs: Vec<GroundTruthSign> = gts
            .iter()
            .map(|b| GroundTruthSign::from_vertices(ShapeClass::Diamond, to_aabox(b).corners(), false).unwrap())
            .collect();
        let m = match_boxes(&dboxes, &signs, 0.5);
        let logits = &logits[..boxes.len()];
        let mined = mine_hard_negatives(&m, logits, &MiningConfig::default()).unwrap();
        prop_assert_eq!(mined.k_p(), m.k_p());
        let budget = if m.k_p() > 0 { 3 * m.k_p() } else { 24 };
        prop_assert_eq!(mined.k_n(), budget.min(m.k_n()));
        let score = |i: usize| 1.0 - softmax(&logits[i])[0];
        let kept_min = (0..boxes.len())
            .filter(|&i| mined.assignments[i] == Assignment::Negative)
            .map(score)
            .fold(f64::INFINITY, f64::min);
        for i in 0..boxes.len() {
            if mined.assignments[i] == Assignment::Ignored {
                prop_assert!(score(i) <= kept_min);
            }
        }
    }

    #[test]
    fn nms_output_is_non_overlapping_subset(
        raw in prop::collection::vec((arb_box(), arb_shape(), 0.0..1.0f64), 0..25),
        thr in 0.1..0.9f64,
    ) {
        let dets: Vec<Detection> = raw
            .iter()
            .map(|(b, s, p)| Detection::from_quad(*s, *p, to_aabox(b).corners()).unwrap())
            .collect();
        let kept = nms(&dets, thr);
        prop_assert!(kept.len() <= dets.len());
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(dets.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(a.shape != b.shape || iou(&a.bbox, &b.bbox) <= thr);
                prop_assert!(a.score >= b.score);
            }
        }
        // idempotent
        prop_assert_eq!(nms(&kept, thr), kept.clone());
        // input order does not matter
        let mut reversed = dets.clone();
        reversed.reverse();
        prop_assert_eq!(nms(&reversed, thr), kept);
    }

    #[test]
    fn evaluation_matching_is_one_to_one(
        dets in prop::collection::vec((arb_box(), arb_shape(), 0.0..1.0f64), 0..15),
        gts in prop::collection::vec((arb_box(), arb_shape()), 0..6),
        iou_t in 0.3..0.95f64,
    ) {
        let dets: Vec<Detection> = dets
            .iter()
            .map(|(b, s, p)| Detection::from_quad(*s, *p, to_aabox(b).corners()).unwrap())
            .collect();
        let gts: Vec<GroundTruthSign> = gts
            .iter()
            .map(|(b, s)| GroundTruthSign::from_vertices(*s, to_aabox(b).corners(), false).unwrap())
            .collect();
        let m = match_detections(&dets, &gts, &vec![false; gts.len()], iou_t);
        let mut used = vec![false; gts.len()];
        for (di, l) in m.det_labels.iter().enumerate() {
            if let DetLabel::TruePositive(g) = l {
                prop_assert!(!used[*g]);
                used[*g] = true;
                prop_assert_eq!(m.gt_labels[*g], GtLabel::Matched(di));
                prop_assert_eq!(dets[di].shape, gts[*g].shape);
                prop_assert!(iou(&dets[di].bbox, &gts[*g].bbox()) >= iou_t);
            }
        }
        prop_assert_eq!(m.tp() + m.fn_count(), gts.len());
    }

    #[test]
    fn ap_matches_oracle_and_is_bounded(
        ranked in prop::collection::vec((0.0..1.0f64, any::<bool>()), 0..30),
        extra_gt in 0usize..5,
    ) {
        let n_gt = ranked.iter().filter(|r| r.1).count() + extra_gt;
        prop_assume!(n_gt > 0);
        let ap = average_precision(&ranked, n_gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert!((ap - oracle_ap(&ranked, n_gt)).abs() < 1e-10);
    }
}
