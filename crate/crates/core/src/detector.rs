//! Inference post-processing: prediction grid → scored template-vertex quads
//! → NMS → projected sign boundaries, plus the crop/half-resolution merge.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::anchors::{generate_default_boxes, DefaultBox, GridSpec, RegressionCodec, RegressionVector};
use crate::error::{Error, Result};
use crate::geometry::{iou, AABox, Point2, Quad};
use crate::targets::softmax;
use crate::templates::{template_vertices_to_boundary, ShapeClass};

/// Raw network output for one default box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrediction {
    pub logits: Vec<f64>,
    pub dp: RegressionVector,
}

/// Predictions for every default box, in [`generate_default_boxes`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub class_count: usize,
    pub records: Vec<BoxPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub shape: ShapeClass,
    pub score: f64,
    /// Template vertices, TL, TR, BR, BL.
    pub quad: Quad,
    pub boundary: Vec<Point2>,
    /// Circumscribed rectangle of `quad`.
    pub bbox: AABox,
}

impl Detection {
    pub fn from_quad(shape: ShapeClass, score: f64, quad: Quad) -> Result<Detection> {
        let boundary = estimate_boundary(&quad, shape)?;
        Ok(Detection {
            shape,
            score,
            quad,
            boundary,
            bbox: quad.bbox(),
        })
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Detection {
        Detection {
            shape: self.shape,
            score: self.score,
            quad: self.quad.translate(dx, dy),
            boundary: self.boundary.iter().map(|p| p.translate(dx, dy)).collect(),
            bbox: self.bbox.translate(dx, dy),
        }
    }

    pub fn scale(&self, s: f64) -> Detection {
        Detection {
            shape: self.shape,
            score: self.score,
            quad: self.quad.scale(s),
            boundary: self.boundary.iter().map(|p| p.scale(s)).collect(),
            bbox: self.bbox.scale(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub codec: RegressionCodec,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            score_threshold: 0.5,
            nms_iou: 0.45,
            codec: RegressionCodec::default(),
        }
    }
}

/// Boundary corners for a predicted quad; alias of
/// [`template_vertices_to_boundary`].
pub fn estimate_boundary(quad: &Quad, shape: ShapeClass) -> Result<Vec<Point2>> {
    template_vertices_to_boundary(quad, shape)
}

/// Decode every box whose best non-background class probability exceeds
/// `score_threshold`. Boxes whose decoded quad is degenerate are skipped.
pub fn decode_predictions(
    grid: &PredictionGrid,
    spec: &GridSpec,
    codec: &RegressionCodec,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    let boxes = generate_default_boxes(spec)?;
    decode_with_boxes(grid, &boxes, codec, score_threshold)
}

pub fn decode_with_boxes(
    grid: &PredictionGrid,
    boxes: &[DefaultBox],
    codec: &RegressionCodec,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    if grid.records.len() != boxes.len() {
        return Err(Error::MisalignedGrid {
            expected: boxes.len(),
            found: grid.records.len(),
        });
    }
    let mut out = Vec::new();
    for (rec, b) in grid.records.iter().zip(boxes) {
        if rec.logits.len() != grid.class_count || grid.class_count < 2 {
            return Err(Error::InconsistentShapes(format!(
                "record has {} logits, header says {}",
                rec.logits.len(),
                grid.class_count
            )));
        }
        let probs = softmax(&rec.logits);
        let Some((cls, &p)) = probs
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        else {
            continue;
        };
        if p <= score_threshold {
            continue;
        }
        let Some(shape) = ShapeClass::from_index(cls) else {
            continue;
        };
        let quad = codec.decode_vertices(&rec.dp, b);
        match Detection::from_quad(shape, p, quad) {
            Ok(d) => out.push(d),
            Err(Error::DegenerateConfiguration(_)) | Err(Error::PointAtInfinity(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Total order used by NMS: score descending, then bbox left, top, right,
/// bottom ascending, then shape.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.left.total_cmp(&b.bbox.left))
        .then(a.bbox.top.total_cmp(&b.bbox.top))
        .then(a.bbox.right.total_cmp(&b.bbox.right))
        .then(a.bbox.bottom.total_cmp(&b.bbox.bottom))
        .then(a.shape.cmp(&b.shape))
}

/// Greedy per-class NMS on circumscribed boxes. A detection survives iff its
/// IoU with every already kept detection of the same shape is at most
/// `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| detection_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.shape == d.shape && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

/// Decode then suppress.
pub fn detect(grid: &PredictionGrid, spec: &GridSpec, cfg: &DetectorConfig) -> Result<Vec<Detection>> {
    let dets = decode_predictions(grid, spec, &cfg.codec, cfg.score_threshold)?;
    Ok(nms(&dets, cfg.nms_iou))
}

/// Geometry of the two-branch detector: a centered half-size crop at native
/// resolution and the full frame downscaled by two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropResizePlan {
    pub image_width: u32,
    pub image_height: u32,
}

impl CropResizePlan {
    pub fn new(image_width: u32, image_height: u32) -> Self {
        CropResizePlan {
            image_width,
            image_height,
        }
    }

    /// Crop window in full-image pixels, snapped to whole pixels.
    pub fn crop_window(&self) -> AABox {
        let (left, top) = ((self.image_width / 4) as f64, (self.image_height / 4) as f64);
        let (cw, ch) = self.crop_dims();
        AABox::new(left, top, left + cw as f64, top + ch as f64)
    }

    pub fn crop_dims(&self) -> (u32, u32) {
        (self.image_width / 2, self.image_height / 2)
    }

    pub fn half_dims(&self) -> (u32, u32) {
        (self.image_width / 2, self.image_height / 2)
    }

    /// Pixels fed to the two detectors together.
    pub fn processed_pixels(&self) -> u64 {
        let (cw, ch) = self.crop_dims();
        let (hw, hh) = self.half_dims();
        cw as u64 * ch as u64 + hw as u64 * hh as u64
    }

    pub fn crop_to_global(&self, d: &Detection) -> Detection {
        let win = self.crop_window();
        d.translate(win.left, win.top)
    }

    pub fn half_to_global(&self, d: &Detection) -> Detection {
        d.scale(2.0)
    }
}

/// Map crop detections (+W/4, +H/4) and half-resolution detections (×2) into
/// full-image coordinates and suppress duplicates with NMS.
pub fn crop_resize_merge(
    dets_from_crop: &[Detection],
    dets_from_halfres: &[Detection],
    image_width: u32,
    image_height: u32,
    nms_iou: f64,
) -> Vec<Detection> {
    let plan = CropResizePlan::new(image_width, image_height);
    let merged: Vec<Detection> = dets_from_crop
        .iter()
        .map(|d| plan.crop_to_global(d))
        .chain(dets_from_halfres.iter().map(|d| plan.half_to_global(d)))
        .collect();
    nms(&merged, nms_iou)
}
