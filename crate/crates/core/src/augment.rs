//! Annotation-level dataset augmentation and pruning.
//!
//! Perspective augmentation picks one random point near each image corner,
//! outside the union of the half-size center rectangle and the largest sign,
//! and warps the quadrilateral they span onto the full frame. This enlarges
//! and distorts signs without cutting them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{homography_from_correspondences, AABox, Homography, Point2, Quad, W_EPS};
use crate::rng::{image_seed, rng_from_seed, RNG_ALGORITHM};
use crate::templates::GroundTruthSign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub duplicates_per_image: usize,
    /// Minimum bbox short side (px) of a sign that triggers augmentation.
    pub large_sign_min_side: f64,
    pub border_margin: f64,
    pub max_regenerate_attempts: usize,
    pub rng_seed: u64,
    pub rng_algorithm: String,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            duplicates_per_image: 10,
            large_sign_min_side: 80.0,
            border_margin: 1.0,
            max_regenerate_attempts: 50,
            rng_seed: 0,
            rng_algorithm: RNG_ALGORITHM.to_string(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duplicates_per_image == 0 || self.max_regenerate_attempts == 0 {
            return Err(Error::InvalidConfig("augmentation counts must be positive".into()));
        }
        if !(self.large_sign_min_side > 0.0) || !(self.border_margin >= 0.0) {
            return Err(Error::InvalidConfig("augmentation sizes must be positive".into()));
        }
        if self.rng_algorithm != RNG_ALGORITHM {
            return Err(Error::InvalidConfig(format!(
                "unsupported rng algorithm {:?}, expected {RNG_ALGORITHM:?}",
                self.rng_algorithm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub signs: Vec<GroundTruthSign>,
}

impl AnnotatedImage {
    pub fn frame(&self) -> AABox {
        AABox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReason {
    Difficult,
    BorderTouching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneVerdict {
    pub usable: bool,
    pub reason: Option<PruneReason>,
    /// Index of the first offending sign.
    pub sign: Option<usize>,
}

/// True when `p` lies closer than `margin` to the frame border (or outside it).
pub fn touches_border(p: &Point2, width: f64, height: f64, margin: f64) -> bool {
    p.x < margin || p.y < margin || p.x > width - margin || p.y > height - margin
}

/// An image is unusable for training when any sign is flagged difficult
/// (occluded, partially visible) or touches the image border.
pub fn prune_unusable(img: &AnnotatedImage, border_margin: f64) -> PruneVerdict {
    let (w, h) = (img.width as f64, img.height as f64);
    for (i, s) in img.signs.iter().enumerate() {
        if s.difficult {
            return PruneVerdict {
                usable: false,
                reason: Some(PruneReason::Difficult),
                sign: Some(i),
            };
        }
        if s.boundary.iter().any(|p| touches_border(p, w, h, border_margin)) {
            return PruneVerdict {
                usable: false,
                reason: Some(PruneReason::BorderTouching),
                sign: Some(i),
            };
        }
    }
    PruneVerdict {
        usable: true,
        reason: None,
        sign: None,
    }
}

/// Crop to `window`: keep signs whose boundary lies fully inside it and
/// translate them by `(-left, -top)`.
pub fn crop_augment(img: &AnnotatedImage, window: &AABox) -> Result<AnnotatedImage> {
    let frame = img.frame();
    let integral = [window.left, window.top, window.right, window.bottom]
        .iter()
        .all(|v| v.fract() == 0.0);
    if !window.is_valid() || window.area() <= 0.0 || !frame.contains_box(window) || !integral {
        return Err(Error::InvalidWindow(format!(
            "{window:?} is not an integral, non-empty window inside {}x{}",
            img.width, img.height
        )));
    }
    let signs = img
        .signs
        .iter()
        .filter(|s| s.boundary.iter().all(|p| window.contains_point(p)))
        .map(|s| translate_sign(s, -window.left, -window.top))
        .collect();
    Ok(AnnotatedImage {
        id: img.id.clone(),
        width: window.width() as u32,
        height: window.height() as u32,
        signs,
    })
}

pub fn translate_sign(s: &GroundTruthSign, dx: f64, dy: f64) -> GroundTruthSign {
    GroundTruthSign {
        shape: s.shape,
        boundary: s.boundary.iter().map(|p| p.translate(dx, dy)).collect(),
        template_vertices: s.template_vertices.translate(dx, dy),
        difficult: s.difficult,
    }
}

pub fn scale_sign(s: &GroundTruthSign, factor: f64) -> GroundTruthSign {
    GroundTruthSign {
        shape: s.shape,
        boundary: s.boundary.iter().map(|p| p.scale(factor)).collect(),
        template_vertices: s.template_vertices.scale(factor),
        difficult: s.difficult,
    }
}

/// The four corner sampling regions, in TL, TR, BR, BL order.
///
/// `U` is the union of the centered half-size rectangle and the bbox of the
/// largest qualifying sign; region k spans image corner k and corner k of `U`.
pub fn sampling_regions(img: &AnnotatedImage, cfg: &AugmentConfig) -> Result<[AABox; 4]> {
    let (w, h) = (img.width as f64, img.height as f64);
    let largest = img
        .signs
        .iter()
        .map(|s| s.template_vertices.bbox())
        .filter(|b| b.min_side() >= cfg.large_sign_min_side)
        .max_by(|a, b| a.area().total_cmp(&b.area()))
        .ok_or(Error::NoLargeSign(cfg.large_sign_min_side))?;
    let center = AABox::new(w / 4.0, h / 4.0, 3.0 * w / 4.0, 3.0 * h / 4.0);
    let u = center.union(&largest.intersection_with(&img.frame()));
    Ok([
        AABox::new(0.0, 0.0, u.left, u.top),
        AABox::new(u.right, 0.0, w, u.top),
        AABox::new(u.right, u.bottom, w, h),
        AABox::new(0.0, u.bottom, u.left, h),
    ])
}

trait Clip {
    fn intersection_with(&self, other: &AABox) -> AABox;
}

impl Clip for AABox {
    fn intersection_with(&self, other: &AABox) -> AABox {
        AABox::new(
            self.left.max(other.left),
            self.top.max(other.top),
            self.right.min(other.right),
            self.bottom.min(other.bottom),
        )
    }
}

/// Homography taking the sampled quad onto the full image rectangle.
pub fn homography_for_quad(sampled: &Quad, width: u32, height: u32) -> Result<Homography> {
    let frame = AABox::new(0.0, 0.0, width as f64, height as f64).corners();
    homography_from_correspondences(&sampled.0, &frame.0)
}

/// One augmented copy of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSample {
    pub homography: Homography,
    pub sampled_corners: Quad,
    pub image: AnnotatedImage,
    /// Draws rejected before this one was accepted.
    pub rejected_draws: usize,
}

enum Warped {
    Inside(GroundTruthSign),
    Outside,
    Straddles,
}

fn warp_sign(h: &Homography, s: &GroundTruthSign, w: f64, hgt: f64, margin: f64) -> Warped {
    let mut inside = 0;
    let mut boundary = Vec::with_capacity(s.boundary.len());
    for p in &s.boundary {
        let v = h.apply_homogeneous(p);
        if v.z <= W_EPS {
            boundary.push(None);
            continue;
        }
        let q = Point2::new(v.x / v.z, v.y / v.z);
        if !touches_border(&q, w, hgt, margin) {
            inside += 1;
        }
        boundary.push(Some(q));
    }
    if inside == 0 {
        // every corner is off-frame; a sign that still overlaps the frame
        // would be cut by the border
        let visible = boundary
            .iter()
            .flatten()
            .copied()
            .collect::<Vec<_>>();
        if visible.len() == boundary.len() {
            let b = AABox::enclosing(&visible).expect("non-empty boundary");
            let frame = AABox::new(0.0, 0.0, w, hgt);
            if crate::geometry::iou(&b, &frame) > 0.0 {
                return Warped::Straddles;
            }
        }
        return Warped::Outside;
    }
    if inside < boundary.len() {
        return Warped::Straddles;
    }
    let Ok(quad) = h.project_quad(&s.template_vertices) else {
        return Warped::Straddles;
    };
    Warped::Inside(GroundTruthSign {
        shape: s.shape,
        boundary: boundary.into_iter().map(|p| p.expect("checked")).collect(),
        template_vertices: quad,
        difficult: s.difficult,
    })
}

/// Draw `cfg.duplicates_per_image` perspective augmentations of `img`.
///
/// A draw is regenerated (at most `max_regenerate_attempts` times) when any
/// warped sign would touch the image border. Signs mapped entirely off the
/// frame are dropped.
pub fn sample_perspective_augment<R: Rng + ?Sized>(
    img: &AnnotatedImage,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<AugmentSample>> {
    cfg.validate()?;
    let regions = sampling_regions(img, cfg)?;
    let (w, h) = (img.width as f64, img.height as f64);
    let mut out = Vec::with_capacity(cfg.duplicates_per_image);
    for _ in 0..cfg.duplicates_per_image {
        let mut accepted = None;
        for attempt in 0..cfg.max_regenerate_attempts {
            let mut pts = [Point2::default(); 4];
            for (k, r) in regions.iter().enumerate() {
                pts[k] = Point2::new(
                    sample_between(rng, r.left, r.right),
                    sample_between(rng, r.top, r.bottom),
                );
            }
            let sampled = Quad(pts);
            let Ok(hom) = homography_for_quad(&sampled, img.width, img.height) else {
                continue;
            };
            let mut signs = Vec::with_capacity(img.signs.len());
            let mut ok = true;
            for s in &img.signs {
                match warp_sign(&hom, s, w, h, cfg.border_margin) {
                    Warped::Inside(t) => signs.push(t),
                    Warped::Outside => {}
                    Warped::Straddles => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                accepted = Some(AugmentSample {
                    homography: hom,
                    sampled_corners: sampled,
                    image: AnnotatedImage {
                        id: img.id.clone(),
                        width: img.width,
                        height: img.height,
                        signs,
                    },
                    rejected_draws: attempt,
                });
                break;
            }
        }
        out.push(accepted.ok_or(Error::RegenerationExhausted(cfg.max_regenerate_attempts))?);
    }
    Ok(out)
}

fn sample_between<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Output of [`augment_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDataset {
    /// Source image index and its augmented copies.
    pub samples: Vec<(usize, Vec<AugmentSample>)>,
    /// Source images left out, with the error kind that excluded them.
    pub skipped: Vec<(usize, String)>,
}

/// Augment every image that has a large sign; image `i` draws from the
/// child seed `rng_seed XOR i`. Images without a large sign, or for which no
/// border-safe warp was found, are skipped and reported.
pub fn augment_dataset(images: &[AnnotatedImage], cfg: &AugmentConfig) -> Result<AugmentedDataset> {
    cfg.validate()?;
    let mut out = AugmentedDataset {
        samples: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, img) in images.iter().enumerate() {
        let mut rng = rng_from_seed(image_seed(cfg.rng_seed, i as u64));
        match sample_perspective_augment(img, cfg, &mut rng) {
            Ok(samples) => out.samples.push((i, samples)),
            Err(e @ (Error::NoLargeSign(_) | Error::RegenerationExhausted(_))) => out.skipped.push((i, e.kind().to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
