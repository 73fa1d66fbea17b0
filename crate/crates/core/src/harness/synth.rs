use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{touches_border, AnnotatedImage};
use crate::error::{Error, Result};
use crate::geometry::{AABox, Point2, Quad};
use crate::refine::{rasterize_polygon, GrayPatch};
use crate::rng::{image_seed, rng_from_seed};
use crate::templates::{GroundTruthSign, ShapeClass};

/// Synthetic scene and oracle predictor settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub scene_count: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// Inclusive range of signs placed per image.
    pub signs_per_image: [usize; 2],
    /// Inclusive range of the sign's shorter side before jitter, pixels.
    pub size_range: [f64; 2],
    /// Width/height range for rectangles; other shapes are square.
    pub rectangle_aspect: [f64; 2],
    /// Each template vertex moves by up to this fraction of the sign size
    /// along each axis, producing a mild perspective warp.
    pub perspective_jitter: f64,
    pub shapes: Vec<ShapeClass>,
    /// Keep-out distance from the image border, pixels.
    pub border_margin: f64,
    /// Minimum gap between sign bounding boxes, pixels.
    pub min_gap: f64,
    pub max_placement_attempts: usize,
    /// Std. dev. of Gaussian noise added to each predicted template vertex
    /// coordinate, pixels.
    pub sigma_pred: f64,
    pub logit_margin: f64,
    pub rng_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            scene_count: 200,
            image_width: 800,
            image_height: 450,
            signs_per_image: [1, 4],
            size_range: [24.0, 160.0],
            rectangle_aspect: [0.6, 1.8],
            perspective_jitter: 0.08,
            shapes: ShapeClass::SIGNS.to_vec(),
            border_margin: 4.0,
            min_gap: 8.0,
            max_placement_attempts: 200,
            sigma_pred: 0.0,
            logit_margin: 10.0,
            rng_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive");
        }
        if self.signs_per_image[0] > self.signs_per_image[1] {
            return bad("signs_per_image must be an ordered [min, max] pair");
        }
        if !(self.size_range[0] > 0.0 && self.size_range[0] <= self.size_range[1]) {
            return bad("size_range must be a positive ordered pair");
        }
        if !(self.rectangle_aspect[0] > 0.0 && self.rectangle_aspect[0] <= self.rectangle_aspect[1]) {
            return bad("rectangle_aspect must be a positive ordered pair");
        }
        if !(0.0..0.25).contains(&self.perspective_jitter) {
            return bad("perspective_jitter must lie in [0, 0.25)");
        }
        if self.shapes.is_empty() || self.shapes.contains(&ShapeClass::Background) {
            return bad("shapes must list sign shapes only");
        }
        if !(self.border_margin >= 0.0 && self.min_gap >= 0.0) || self.max_placement_attempts == 0 {
            return bad("placement limits must be non-negative");
        }
        if !(self.sigma_pred >= 0.0 && self.sigma_pred.is_finite()) {
            return bad("sigma_pred must be non-negative");
        }
        if !(self.logit_margin > 0.0) {
            return bad("logit_margin must be positive");
        }
        Ok(())
    }
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

fn draw_sign<R: Rng + ?Sized>(cfg: &OracleConfig, rng: &mut R) -> Result<Option<GroundTruthSign>> {
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let shape = *cfg.shapes.choose(rng).expect("validated non-empty");
    let side = sample_range(rng, cfg.size_range);
    let (bw, bh) = match shape {
        ShapeClass::Rectangle => {
            let aspect = sample_range(rng, cfg.rectangle_aspect);
            if aspect >= 1.0 {
                (side * aspect, side)
            } else {
                (side, side / aspect)
            }
        }
        _ => (side, side),
    };
    let slack = cfg.perspective_jitter * side;
    let lo_x = cfg.border_margin + slack;
    let lo_y = cfg.border_margin + slack;
    let hi_x = w - cfg.border_margin - slack - bw;
    let hi_y = h - cfg.border_margin - slack - bh;
    if hi_x <= lo_x || hi_y <= lo_y {
        return Ok(None);
    }
    let left = rng.random_range(lo_x..hi_x);
    let top = rng.random_range(lo_y..hi_y);
    let mut quad = AABox::new(left, top, left + bw, top + bh).corners();
    if slack > 0.0 {
        for p in quad.0.iter_mut() {
            *p = p.translate(rng.random_range(-slack..=slack), rng.random_range(-slack..=slack));
        }
    }
    if !quad_is_convex(&quad) {
        return Ok(None);
    }
    match GroundTruthSign::from_vertices(shape, quad, false) {
        Ok(s) => Ok(Some(s)),
        Err(Error::DegenerateConfiguration(_)) | Err(Error::PointAtInfinity(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn expanded(b: &AABox, by: f64) -> AABox {
    AABox::new(b.left - by, b.top - by, b.right + by, b.bottom + by)
}

fn overlaps(a: &AABox, b: &AABox) -> bool {
    a.left < b.right && b.left < a.right && a.top < b.bottom && b.top < a.bottom
}

/// One synthetic image with non-overlapping, fully visible signs.
pub fn generate_synthetic_image<R: Rng + ?Sized>(cfg: &OracleConfig, id: String, rng: &mut R) -> Result<AnnotatedImage> {
    cfg.validate()?;
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let count = rng.random_range(cfg.signs_per_image[0]..=cfg.signs_per_image[1]);
    let mut signs: Vec<GroundTruthSign> = Vec::with_capacity(count);
    let mut extents: Vec<AABox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..cfg.max_placement_attempts {
            let Some(s) = draw_sign(cfg, rng)? else {
                continue;
            };
            let pts: Vec<Point2> = s.boundary.iter().chain(s.template_vertices.0.iter()).copied().collect();
            let extent = AABox::enclosing(&pts).expect("non-empty");
            if pts.iter().any(|p| touches_border(p, w, h, cfg.border_margin)) {
                continue;
            }
            if extents.iter().any(|e| overlaps(&expanded(e, cfg.min_gap), &extent)) {
                continue;
            }
            extents.push(extent);
            signs.push(s);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementExhausted(cfg.max_placement_attempts));
        }
    }
    Ok(AnnotatedImage {
        id,
        width: cfg.image_width,
        height: cfg.image_height,
        signs,
    })
}

/// `cfg.scene_count` images; image `i` is drawn from the seed
/// `rng_seed XOR i`, so any single scene can be regenerated on its own.
pub fn generate_synthetic_dataset(cfg: &OracleConfig) -> Result<Vec<AnnotatedImage>> {
    cfg.validate()?;
    (0..cfg.scene_count)
        .map(|i| {
            let mut rng = rng_from_seed(image_seed(cfg.rng_seed, i as u64));
            generate_synthetic_image(cfg, format!("synth-{i:05}"), &mut rng)
        })
        .collect()
}

const BACKGROUND_LEVEL: f64 = 0.2;
const SIGN_LEVEL: f64 = 0.85;

/// Grayscale rendering of an annotated image: flat bright sign polygons on a
/// dark background, anti-aliased with 4×4 supersampling.
pub fn render_image(img: &AnnotatedImage) -> Result<GrayPatch> {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut data = vec![BACKGROUND_LEVEL; w * h];
    for s in &img.signs {
        let b = AABox::enclosing(&s.boundary).expect("non-empty boundary");
        let x0 = (b.left.floor() as i64 - 1).max(0) as usize;
        let y0 = (b.top.floor() as i64 - 1).max(0) as usize;
        let x1 = ((b.right.ceil() as i64 + 2).max(0) as usize).min(w);
        let y1 = ((b.bottom.ceil() as i64 + 2).max(0) as usize).min(h);
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let local: Vec<Point2> = s.boundary.iter().map(|p| p.translate(-(x0 as f64), -(y0 as f64))).collect();
        let cover = rasterize_polygon((x1 - x0).max(8), (y1 - y0).max(8), &local, 4)?;
        for y in y0..y1 {
            for x in x0..x1 {
                let c = cover.get(x - x0, y - y0);
                let v = &mut data[y * w + x];
                *v = *v * (1.0 - c) + SIGN_LEVEL * c;
            }
        }
    }
    GrayPatch::new(w, h, data)
}

/// Template vertices stay a simple clockwise quad after jitter.
pub(crate) fn quad_is_convex(q: &Quad) -> bool {
    (0..4).all(|i| {
        let a = q.0[i];
        let b = q.0[(i + 1) % 4];
        let c = q.0[(i + 2) % 4];
        (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x) > 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::prune_unusable;
    use crate::templates::boundary_to_template_vertices;

    #[test]
    fn single_rectangle_without_jitter() {
        let cfg = OracleConfig {
            scene_count: 1,
            signs_per_image: [1, 1],
            shapes: vec![ShapeClass::Rectangle],
            perspective_jitter: 0.0,
            ..OracleConfig::default()
        };
        let img = &generate_synthetic_dataset(&cfg).unwrap()[0];
        let s = &img.signs[0];
        assert_eq!(s.boundary, s.template_vertices.0.to_vec());
        let q = s.template_vertices.0;
        assert_eq!((q[0].y, q[1].x, q[2].y, q[3].x), (q[1].y, q[2].x, q[3].y, q[0].x));
    }

    #[test]
    fn scenes_are_consistent_and_usable() {
        let cfg = OracleConfig {
            scene_count: 50,
            ..OracleConfig::default()
        };
        for img in generate_synthetic_dataset(&cfg).unwrap() {
            assert!(prune_unusable(&img, cfg.border_margin).usable);
            for s in &img.signs {
                assert!(quad_is_convex(&s.template_vertices));
                let back = boundary_to_template_vertices(&s.boundary, s.shape).unwrap();
                assert!(back.max_corner_distance(&s.template_vertices) < 1e-6);
            }
            for (i, a) in img.signs.iter().enumerate() {
                for b in &img.signs[i + 1..] {
                    assert!(!overlaps(&a.bbox(), &b.bbox()));
                }
            }
        }
    }

    #[test]
    fn crowded_image_exhausts_placement() {
        let cfg = OracleConfig {
            image_width: 100,
            image_height: 100,
            signs_per_image: [5, 5],
            size_range: [40.0, 40.0],
            max_placement_attempts: 20,
            ..OracleConfig::default()
        };
        let mut rng = rng_from_seed(3);
        assert!(matches!(
            generate_synthetic_image(&cfg, "x".into(), &mut rng),
            Err(Error::PlacementExhausted(20))
        ));
    }

    #[test]
    fn render_marks_sign_pixels() {
        let cfg = OracleConfig {
            scene_count: 1,
            signs_per_image: [1, 1],
            ..OracleConfig::default()
        };
        let img = &generate_synthetic_dataset(&cfg).unwrap()[0];
        let patch = render_image(img).unwrap();
        let c = img.signs[0].bbox();
        let (cx, cy) = ((c.left + c.right) / 2.0, (c.top + c.bottom) / 2.0);
        assert!((patch.get(cx as usize, cy as usize) - SIGN_LEVEL).abs() < 1e-12);
        assert!((patch.get(0, 0) - BACKGROUND_LEVEL).abs() < 1e-12);
    }
}
