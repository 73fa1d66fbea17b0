//! Independent reference implementations used as test oracles, plus random
//! scene generators. Nothing here calls into the library's algorithms except
//! where noted; every oracle is a direct, brute-force restatement.

#![allow(dead_code)]

use rand::Rng;
use signpose_core::geometry::{AABox, Homography, Point2, Quad};
use signpose_core::rng::{rng_from_seed, SimRng};

pub fn rng(seed: u64) -> SimRng {
    rng_from_seed(seed)
}

/// Convex quad: a random box with each corner jittered by at most
/// `jitter * min(w, h)` per axis.
pub fn random_quad<R: Rng>(rng: &mut R, extent: f64, min_size: f64, max_size: f64, jitter: f64) -> Quad {
    loop {
        let w = rng.random_range(min_size..max_size);
        let h = rng.random_range(min_size..max_size);
        let l = rng.random_range(0.0..extent - w);
        let t = rng.random_range(0.0..extent - h);
        let j = jitter * w.min(h);
        let mut q = AABox::new(l, t, l + w, t + h).corners();
        for p in q.0.iter_mut() {
            *p = Point2::new(p.x + rng.random_range(-j..=j), p.y + rng.random_range(-j..=j));
        }
        if is_convex_clockwise(&q.0) {
            return q;
        }
    }
}

pub fn is_convex_clockwise(pts: &[Point2]) -> bool {
    let n = pts.len();
    (0..n).all(|i| {
        let (a, b, c) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
        (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x) > 0.0
    })
}

/// Apply a 3×3 matrix (row-major) to a point by hand.
pub fn apply_rows(h: &[[f64; 3]; 3], p: &Point2) -> Point2 {
    let x = h[0][0] * p.x + h[0][1] * p.y + h[0][2];
    let y = h[1][0] * p.x + h[1][1] * p.y + h[1][2];
    let w = h[2][0] * p.x + h[2][1] * p.y + h[2][2];
    Point2::new(x / w, y / w)
}

pub fn apply(h: &Homography, p: &Point2) -> Point2 {
    apply_rows(&h.rows(), p)
}

pub fn ltrb(b: &AABox) -> [f64; 4] {
    [b.left, b.top, b.right, b.bottom]
}

/// Box IoU from scratch on `[l, t, r, b]` arrays.
pub fn oracle_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |x: &[f64; 4]| (x[2] - x[0]) * (x[3] - x[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Anchor matching: each box takes its best GT (lowest index on ties) if the
/// IoU exceeds `thr`; then, in GT order, each GT claims its best box (lowest
/// index on ties), overwriting earlier claims.
pub fn oracle_match(boxes: &[[f64; 4]], gts: &[[f64; 4]], thr: f64) -> Vec<Option<usize>> {
    let mut out = vec![None; boxes.len()];
    for (i, b) in boxes.iter().enumerate() {
        let ious: Vec<f64> = gts.iter().map(|g| oracle_iou(b, g)).collect();
        let best = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best > thr {
            out[i] = ious.iter().position(|&v| v == best);
        }
    }
    for (g, gt) in gts.iter().enumerate() {
        let ious: Vec<f64> = boxes.iter().map(|b| oracle_iou(b, gt)).collect();
        let best = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if let Some(i) = ious.iter().position(|&v| v == best) {
            out[i] = Some(g);
        }
    }
    out
}

pub fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let sum: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / sum).collect()
}

/// Which negatives survive mining: negative `i` is kept iff fewer than
/// `budget` negatives outrank it (higher score, or equal score and smaller
/// index).
pub fn oracle_mine(is_negative: &[bool], logits: &[Vec<f64>], budget: usize) -> Vec<bool> {
    let score: Vec<f64> = logits.iter().map(|l| 1.0 - naive_softmax(l)[0]).collect();
    (0..is_negative.len())
        .map(|i| {
            if !is_negative[i] {
                return false;
            }
            let ahead = (0..is_negative.len())
                .filter(|&j| is_negative[j] && (score[j] > score[i] || (score[j] == score[i] && j < i)))
                .count();
            ahead < budget
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SimpleDet {
    pub class: usize,
    pub score: f64,
    pub bbox: [f64; 4],
}

/// Greedy per-class NMS: rank by score desc, then l, t, r, b asc, then
/// class; returns indices of the kept detections in rank order.
pub fn oracle_nms(dets: &[SimpleDet], thr: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&dets[a], &dets[b]);
        y.score
            .partial_cmp(&x.score)
            .unwrap()
            .then(x.bbox[0].partial_cmp(&y.bbox[0]).unwrap())
            .then(x.bbox[1].partial_cmp(&y.bbox[1]).unwrap())
            .then(x.bbox[2].partial_cmp(&y.bbox[2]).unwrap())
            .then(x.bbox[3].partial_cmp(&y.bbox[3]).unwrap())
            .then(x.class.cmp(&y.class))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in idx {
        if kept
            .iter()
            .all(|&k| dets[k].class != dets[i].class || oracle_iou(&dets[k].bbox, &dets[i].bbox) <= thr)
        {
            kept.push(i);
        }
    }
    kept
}

/// All-point AP: each true positive contributes `1/n_gt` times the best
/// precision reached at its rank or any later rank.
pub fn oracle_ap(ranked: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut r: Vec<(f64, bool)> = ranked.to_vec();
    r.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let precision_at = |k: usize| {
        let tp = r[..=k].iter().filter(|x| x.1).count();
        tp as f64 / (k + 1) as f64
    };
    let mut ap = 0.0;
    for k in 0..r.len() {
        if r[k].1 {
            let best = (k..r.len()).map(precision_at).fold(0.0, f64::max);
            ap += best / n_gt as f64;
        }
    }
    ap
}

pub fn smooth_l1_ref(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x * x / 2.0
    } else {
        x.abs() - 0.5
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Spearman rank correlation (no ties expected).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
