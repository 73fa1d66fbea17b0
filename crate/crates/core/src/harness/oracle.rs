use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::formats::{ImagePredictions, PredictionFile, View};
use super::synth::OracleConfig;
use crate::anchors::{generate_default_boxes, DefaultBox, GridSpec, RegressionCodec, RegressionVector};
use crate::augment::{crop_augment, scale_sign, AnnotatedImage};
use crate::detector::{BoxPrediction, CropResizePlan};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Quad};
use crate::rng::{child_seed, rng_from_seed};
use crate::targets::{match_boxes, Assignment};
use crate::templates::ShapeClass;

const ORACLE_MATCH_IOU: f64 = 0.5;

fn one_hot(class: usize, margin: f64) -> Vec<f64> {
    let mut v = vec![0.0; ShapeClass::COUNT];
    v[class] = margin;
    v
}

/// Fabricate the network output for one image.
///
/// Boxes matched to a ground truth get a confident logit for its shape and
/// the encoding of its template vertices. Noise is drawn once per ground
/// truth corner, so every box of one sign predicts the same noisy quad.
pub fn oracle_predict_image<R: Rng + ?Sized>(
    img: &AnnotatedImage,
    boxes: &[DefaultBox],
    codec: &RegressionCodec,
    cfg: &OracleConfig,
    rng: &mut R,
) -> Result<Vec<BoxPrediction>> {
    let noise = Normal::new(0.0, cfg.sigma_pred).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noisy: Vec<Quad> = img
        .signs
        .iter()
        .map(|s| {
            let mut q = s.template_vertices;
            if cfg.sigma_pred > 0.0 {
                for p in q.0.iter_mut() {
                    *p = Point2::new(p.x + noise.sample(rng), p.y + noise.sample(rng));
                }
            }
            q
        })
        .collect();
    let m = match_boxes(boxes, &img.signs, ORACLE_MATCH_IOU);
    Ok(m
        .assignments
        .iter()
        .zip(boxes)
        .map(|(a, b)| match a {
            Assignment::Positive(g) => BoxPrediction {
                logits: one_hot(img.signs[*g].shape.index(), cfg.logit_margin),
                dp: codec.encode_vertices(&noisy[*g], b),
            },
            _ => BoxPrediction {
                logits: one_hot(ShapeClass::Background.index(), cfg.logit_margin),
                dp: RegressionVector([0.0; 8]),
            },
        })
        .collect())
}

fn check_input(spec: &GridSpec, w: u32, h: u32, what: &str) -> Result<()> {
    if (spec.input_width, spec.input_height) != (w, h) {
        return Err(Error::InvalidSpec(format!(
            "grid input {}x{} does not match {what} {w}x{h}",
            spec.input_width, spec.input_height
        )));
    }
    Ok(())
}

const STREAM_FULL: u64 = 1;
const STREAM_CROP: u64 = 2;
const STREAM_HALF: u64 = 3;

/// Oracle predictions on full frames. Every image must have the grid's
/// input size.
pub fn oracle_predict(
    images: &[AnnotatedImage],
    spec: &GridSpec,
    codec: &RegressionCodec,
    cfg: &OracleConfig,
) -> Result<PredictionFile> {
    cfg.validate()?;
    let boxes = generate_default_boxes(spec)?;
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        check_input(spec, img.width, img.height, &format!("image {:?}", img.id))?;
        let mut rng = rng_from_seed(child_seed(cfg.rng_seed, STREAM_FULL, i as u64));
        out.push(ImagePredictions {
            id: img.id.clone(),
            view: View::Full,
            width: img.width,
            height: img.height,
            records: oracle_predict_image(img, &boxes, codec, cfg, &mut rng)?,
        });
    }
    Ok(PredictionFile {
        grid_spec: spec.clone(),
        class_count: ShapeClass::COUNT,
        codec: *codec,
        images: out,
        sidecar: None,
    })
}

/// The annotations as seen by the crop branch and the half-resolution branch.
pub fn crop_resize_views(img: &AnnotatedImage) -> Result<(AnnotatedImage, AnnotatedImage)> {
    let plan = CropResizePlan::new(img.width, img.height);
    let crop = crop_augment(img, &plan.crop_window())?;
    let (hw, hh) = plan.half_dims();
    let half = AnnotatedImage {
        id: img.id.clone(),
        width: hw,
        height: hh,
        signs: img.signs.iter().map(|s| scale_sign(s, 0.5)).collect(),
    };
    Ok((crop, half))
}

/// Oracle predictions for the crop/resize detector: two entries per image,
/// one per branch. The grid input must be half the image size.
pub fn oracle_predict_crop_resize(
    images: &[AnnotatedImage],
    spec: &GridSpec,
    codec: &RegressionCodec,
    cfg: &OracleConfig,
) -> Result<PredictionFile> {
    cfg.validate()?;
    let boxes = generate_default_boxes(spec)?;
    let mut out = Vec::with_capacity(2 * images.len());
    for (i, img) in images.iter().enumerate() {
        let (crop, half) = crop_resize_views(img)?;
        for (view, stream, v) in [(View::Crop, STREAM_CROP, &crop), (View::Half, STREAM_HALF, &half)] {
            check_input(spec, v.width, v.height, &format!("{view:?} view of {:?}", img.id))?;
            let mut rng = rng_from_seed(child_seed(cfg.rng_seed, stream, i as u64));
            out.push(ImagePredictions {
                id: img.id.clone(),
                view,
                width: img.width,
                height: img.height,
                records: oracle_predict_image(v, &boxes, codec, cfg, &mut rng)?,
            });
        }
    }
    Ok(PredictionFile {
        grid_spec: spec.clone(),
        class_count: ShapeClass::COUNT,
        codec: *codec,
        images: out,
        sidecar: None,
    })
}
