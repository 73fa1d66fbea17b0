//! Local boundary refinement: fit an affine correction that moves a
//! predicted boundary onto strong image gradients.
//!
//! The energy is the summed (bilinearly sampled) gradient magnitude at
//! points spread evenly along each boundary edge. It is maximized over six
//! affine parameters, expressed about the boundary centroid, by cyclic
//! coordinate search: a coarse scan along each axis followed by a
//! golden-section polish. A step is only taken when it raises the energy.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPatch {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayPatch {
    pub const MIN_SIDE: usize = 8;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE {
            return Err(Error::InvalidPatch(format!(
                "{width}x{height} is smaller than {0}x{0}",
                Self::MIN_SIDE
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidPatch(format!(
                "{} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(GrayPatch { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear read at pixel-center coordinates; clamps to the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let x = x.clamp(0.0, xmax);
        let y = y.clamp(0.0, ymax);
        let x0 = x.floor().min(xmax - 1.0);
        let y0 = y.floor().min(ymax - 1.0);
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as usize, y0 as usize);
        let a = self.get(ix, iy);
        let b = self.get(ix + 1, iy);
        let c = self.get(ix, iy + 1);
        let d = self.get(ix + 1, iy + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    /// Separable Gaussian blur with the given standard deviation.
    pub fn blurred(&self, sigma: f64) -> GrayPatch {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let (w, h) = (self.width as isize, self.height as isize);
        let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, kv) in kernel.iter().enumerate() {
                        let o = k as isize - radius;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += kv * src[(sy * w + sx) as usize];
                    }
                    out[(y * w + x) as usize] = acc / norm;
                }
            }
            out
        };
        let tmp = pass(&self.data, true);
        GrayPatch {
            width: self.width,
            height: self.height,
            data: pass(&tmp, false),
        }
    }

    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<GrayPatch> {
        let mut reader = BufReader::new(r);
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P5" || tokens.len() > 4 {
            return Err(Error::Format("expected a binary P5 PGM header".into()));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; w * h];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| Error::Format("truncated PGM pixel data".into()))?;
        GrayPatch::new(w, h, bytes.into_iter().map(|b| b as f64 / 255.0).collect())
    }
}

/// Gradient magnitude by central differences, one-sided at the border.
pub fn gradient_magnitude(patch: &GrayPatch) -> GrayPatch {
    let (w, h) = (patch.width, patch.height);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = if x == 0 {
                patch.get(1, y) - patch.get(0, y)
            } else if x == w - 1 {
                patch.get(w - 1, y) - patch.get(w - 2, y)
            } else {
                0.5 * (patch.get(x + 1, y) - patch.get(x - 1, y))
            };
            let gy = if y == 0 {
                patch.get(x, 1) - patch.get(x, 0)
            } else if y == h - 1 {
                patch.get(x, h - 1) - patch.get(x, h - 2)
            } else {
                0.5 * (patch.get(x, y + 1) - patch.get(x, y - 1))
            };
            data.push(gx.hypot(gy));
        }
    }
    GrayPatch {
        width: w,
        height: h,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub samples_per_edge: usize,
    pub max_iterations: usize,
    /// Stop once a full sweep moves no corner by more than this, pixels.
    pub step_tolerance: f64,
    /// Reject the result if any corner moved farther than this, pixels.
    pub discard_threshold: f64,
    /// Gaussian smoothing applied before taking the gradient, pixels.
    pub smoothing_sigma: f64,
    /// Translation search half-range as a multiple of `discard_threshold`.
    pub search_range_factor: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            samples_per_edge: 16,
            max_iterations: 30,
            step_tolerance: 1e-4,
            discard_threshold: 5.0,
            smoothing_sigma: 1.5,
            search_range_factor: 5.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_edge == 0
            || self.max_iterations == 0
            || !(self.step_tolerance > 0.0)
            || !(self.discard_threshold > 0.0)
            || !(self.search_range_factor > 0.0)
            || !(self.smoothing_sigma >= 0.0)
        {
            return Err(Error::InvalidConfig("refine parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub boundary: Vec<Point2>,
    pub accepted: bool,
    pub energy_before: f64,
    pub energy_after: f64,
    /// Largest corner displacement of the optimized boundary, pixels.
    pub max_movement: f64,
}

/// Affine map about a center: `p' = c + M (p - c) + t`, with
/// parameters `[m11 - 1, m12, m21, m22 - 1, tx, ty]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CenteredAffine {
    center: Point2,
    params: [f64; 6],
}

impl CenteredAffine {
    fn apply(&self, p: &Point2) -> Point2 {
        let [a, b, c, d, tx, ty] = self.params;
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        Point2::new(
            self.center.x + (1.0 + a) * dx + b * dy + tx,
            self.center.y + c * dx + (1.0 + d) * dy + ty,
        )
    }
}

/// Points at the middle of `samples_per_edge` equal segments of each edge.
fn edge_samples(boundary: &[Point2], per_edge: usize) -> Vec<Point2> {
    let m = boundary.len();
    let mut out = Vec::with_capacity(m * per_edge);
    for i in 0..m {
        let (a, b) = (boundary[i], boundary[(i + 1) % m]);
        for k in 0..per_edge {
            let t = (k as f64 + 0.5) / per_edge as f64;
            out.push(Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
    }
    out
}

fn energy(grad: &GrayPatch, samples: &[Point2], xf: &CenteredAffine) -> f64 {
    samples
        .iter()
        .map(|p| {
            let q = xf.apply(p);
            grad.sample(q.x, q.y)
        })
        .sum()
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximize `f` on `[lo, hi]` by golden-section search.
fn golden_max(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Energy of `boundary` against an already computed gradient image.
pub fn boundary_energy(grad: &GrayPatch, boundary: &[Point2], samples_per_edge: usize) -> f64 {
    let samples = edge_samples(boundary, samples_per_edge);
    let id = CenteredAffine {
        center: Point2::default(),
        params: [0.0; 6],
    };
    energy(grad, &samples, &id)
}

/// Refine `boundary` (patch coordinates) against the gradient of `patch`.
///
/// Returns the input unchanged with `accepted = false` when the optimized
/// boundary moves any corner farther than `discard_threshold`.
pub fn refine_boundary(patch: &GrayPatch, boundary: &[Point2], cfg: &RefineConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    if boundary.len() < 3 {
        return Err(Error::InconsistentShapes(format!(
            "boundary needs at least 3 corners, got {}",
            boundary.len()
        )));
    }
    const MARGIN: f64 = 2.0;
    let (w, h) = (patch.width as f64, patch.height as f64);
    if let Some(p) = boundary
        .iter()
        .find(|p| !(p.x >= MARGIN && p.y >= MARGIN && p.x <= w - 1.0 - MARGIN && p.y <= h - 1.0 - MARGIN))
    {
        return Err(Error::OutOfPatch(format!(
            "corner ({}, {}) is within {MARGIN} px of the {}x{} patch border",
            p.x, p.y, patch.width, patch.height
        )));
    }

    let grad = gradient_magnitude(&patch.blurred(cfg.smoothing_sigma));
    let samples = edge_samples(boundary, cfg.samples_per_edge);
    let n = boundary.len() as f64;
    let center = Point2::new(
        boundary.iter().map(|p| p.x).sum::<f64>() / n,
        boundary.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let radius = boundary
        .iter()
        .map(|p| p.distance(&center))
        .fold(0.0, f64::max)
        .max(1.0);

    let mut xf = CenteredAffine {
        center,
        params: [0.0; 6],
    };
    let energy_before = energy(&grad, &samples, &xf);
    let mut best = energy_before;

    let t_range = cfg.search_range_factor * cfg.discard_threshold;
    // a unit change of a linear parameter moves the farthest corner by `radius` px
    let ranges = [
        t_range / radius,
        t_range / radius,
        t_range / radius,
        t_range / radius,
        t_range,
        t_range,
    ];
    // linear terms first would fight the translation; search translation first
    let axes = [4usize, 5, 0, 3, 1, 2];
    const SCAN_STEPS: usize = 40;

    for _ in 0..cfg.max_iterations {
        let before = xf;
        for &axis in &axes {
            let base = xf.params[axis];
            let step_px = 2.0 * ranges[axis] / SCAN_STEPS as f64;
            let eval = |v: f64| {
                let mut t = xf;
                t.params[axis] = v;
                energy(&grad, &samples, &t)
            };
            // coarse scan, then golden section in the best cell
            let (mut arg, mut val) = (base, best);
            for k in 0..=SCAN_STEPS {
                let v = base - ranges[axis] + k as f64 * step_px;
                let e = eval(v);
                if e > val {
                    arg = v;
                    val = e;
                }
            }
            let tol = if axis >= 4 {
                cfg.step_tolerance
            } else {
                cfg.step_tolerance / radius
            };
            let (g_arg, g_val) = golden_max(&eval, arg - step_px, arg + step_px, tol);
            if g_val > val {
                arg = g_arg;
                val = g_val;
            }
            if val > best {
                xf.params[axis] = arg;
                best = val;
            }
        }
        let moved = boundary
            .iter()
            .map(|p| xf.apply(p).distance(&before.apply(p)))
            .fold(0.0, f64::max);
        if moved <= cfg.step_tolerance {
            break;
        }
    }

    let refined: Vec<Point2> = boundary.iter().map(|p| xf.apply(p)).collect();
    let max_movement = refined
        .iter()
        .zip(boundary)
        .map(|(a, b)| a.distance(b))
        .fold(0.0, f64::max);
    if max_movement > cfg.discard_threshold {
        return Ok(RefineOutcome {
            boundary: boundary.to_vec(),
            accepted: false,
            energy_before,
            energy_after: energy_before,
            max_movement,
        });
    }
    Ok(RefineOutcome {
        boundary: refined,
        accepted: true,
        energy_before,
        energy_after: best,
        max_movement,
    })
}

/// Anti-aliased rasterization of a filled convex polygon: 1 inside, 0
/// outside, averaged over `supersample²` sub-pixel points.
pub fn rasterize_polygon(width: usize, height: usize, polygon: &[Point2], supersample: usize) -> Result<GrayPatch> {
    let m = polygon.len();
    let inside = |x: f64, y: f64| {
        // clockwise (y down): point is inside if it is right of no edge
        (0..m).all(|i| {
            let a = polygon[i];
            let b = polygon[(i + 1) % m];
            (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) >= 0.0
        })
    };
    let s = supersample.max(1);
    GrayPatch::from_fn(width, height, |x, y| {
        let mut hits = 0;
        for j in 0..s {
            for i in 0..s {
                let sx = x as f64 - 0.5 + (i as f64 + 0.5) / s as f64;
                let sy = y as f64 - 0.5 + (j as f64 + 0.5) / s as f64;
                if inside(sx, sy) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (s * s) as f64
    })
}
