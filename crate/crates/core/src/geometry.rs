//! Planar projective geometry: points, quads, homographies, box IoU and
//! two-view DLT triangulation.

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapsim::CameraView;

/// Homogeneous coordinates with |w| at or below this are points at infinity.
pub const W_EPS: f64 = 1e-12;
/// Triangle area (in Hartley-normalized coordinates) below which three points
/// count as collinear.
pub const COLLINEAR_AREA_EPS: f64 = 1e-9;

/// A 2D point. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Point2 {
        Point2::new(self.x + dx, self.y + dy)
    }

    pub fn scale(&self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// A 3D point in meters. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// Four ordered points giving the 2D pose of a planar target.
///
/// The order is always top-left, top-right, bottom-right, bottom-left, the
/// images of the unit template corners (0,0), (1,0), (1,1), (0,1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quad(pub [Point2; 4]);

impl Quad {
    /// The unit template square.
    pub const UNIT: Quad = Quad([
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ]);

    pub fn points(&self) -> &[Point2; 4] {
        &self.0
    }

    /// Circumscribed axis-aligned rectangle.
    pub fn bbox(&self) -> AABox {
        AABox::enclosing(&self.0).expect("quad has four points")
    }

    pub fn map(&self, f: impl Fn(&Point2) -> Point2) -> Quad {
        Quad([f(&self.0[0]), f(&self.0[1]), f(&self.0[2]), f(&self.0[3])])
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Quad {
        self.map(|p| p.translate(dx, dy))
    }

    pub fn scale(&self, s: f64) -> Quad {
        self.map(|p| p.scale(s))
    }

    /// Largest corner-to-corner distance between two quads.
    pub fn max_corner_distance(&self, other: &Quad) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }
}

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AABox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl AABox {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    /// Smallest box containing every point; `None` for an empty slice.
    pub fn enclosing(points: &[Point2]) -> Option<AABox> {
        let first = points.first()?;
        let mut b = AABox::new(first.x, first.y, first.x, first.y);
        for p in &points[1..] {
            b.left = b.left.min(p.x);
            b.top = b.top.min(p.y);
            b.right = b.right.max(p.x);
            b.bottom = b.bottom.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn min_side(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn is_valid(&self) -> bool {
        self.left <= self.right && self.top <= self.bottom
    }

    /// Corners in TL, TR, BR, BL order.
    pub fn corners(&self) -> Quad {
        Quad([
            Point2::new(self.left, self.top),
            Point2::new(self.right, self.top),
            Point2::new(self.right, self.bottom),
            Point2::new(self.left, self.bottom),
        ])
    }

    pub fn contains_point(&self, p: &Point2) -> bool {
        p.x >= self.left && p.x <= self.right && p.y >= self.top && p.y <= self.bottom
    }

    pub fn contains_box(&self, other: &AABox) -> bool {
        other.left >= self.left
            && other.right <= self.right
            && other.top >= self.top
            && other.bottom <= self.bottom
    }

    pub fn union(&self, other: &AABox) -> AABox {
        AABox::new(
            self.left.min(other.left),
            self.top.min(other.top),
            self.right.max(other.right),
            self.bottom.max(other.bottom),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> AABox {
        AABox::new(self.left + dx, self.top + dy, self.right + dx, self.bottom + dy)
    }

    pub fn scale(&self, s: f64) -> AABox {
        AABox::new(self.left * s, self.top * s, self.right * s, self.bottom * s)
    }
}

/// Intersection over union of two boxes. Disjoint boxes and a zero-area
/// union both give 0.
pub fn iou(a: &AABox, b: &AABox) -> f64 {
    let iw = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// A planar projective transform acting on homogeneous column vectors.
///
/// Stored normalized so that `h33 = 1` whenever `h33` is not (near) zero.
/// Serialized as three row arrays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let h33 = m[(2, 2)];
        if h33.abs() > W_EPS {
            Homography(m / h33)
        } else {
            Homography(m)
        }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self::from_rows([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_rows([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Homography) -> Homography {
        Homography::from_matrix(self.0 * first.0)
    }

    pub fn inverse(&self) -> Result<Homography> {
        self.0
            .try_inverse()
            .map(Homography::from_matrix)
            .ok_or_else(|| Error::DegenerateConfiguration("homography is singular".into()))
    }

    pub fn is_affine(&self) -> bool {
        self.0[(2, 0)] == 0.0 && self.0[(2, 1)] == 0.0
    }

    /// Homogeneous image of `p` before division.
    pub fn apply_homogeneous(&self, p: &Point2) -> Vector3<f64> {
        self.0 * Vector3::new(p.x, p.y, 1.0)
    }

    pub fn project_point(&self, p: &Point2) -> Result<Point2> {
        let v = self.apply_homogeneous(p);
        if v.z.abs() <= W_EPS {
            return Err(Error::PointAtInfinity(v.z));
        }
        Ok(Point2::new(v.x / v.z, v.y / v.z))
    }

    pub fn project_quad(&self, q: &Quad) -> Result<Quad> {
        Ok(Quad([
            self.project_point(&q.0[0])?,
            self.project_point(&q.0[1])?,
            self.project_point(&q.0[2])?,
            self.project_point(&q.0[3])?,
        ]))
    }
}

impl From<[[f64; 3]; 3]> for Homography {
    fn from(rows: [[f64; 3]; 3]) -> Self {
        Homography::from_rows(rows)
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        h.rows()
    }
}

/// Apply `h` to every point, dividing by the homogeneous coordinate.
pub fn project(h: &Homography, pts: &[Point2]) -> Result<Vec<Point2>> {
    pts.iter().map(|p| h.project_point(p)).collect()
}

/// Hartley isotropic normalization: centroid to the origin, mean distance √2.
fn normalizing_transform(pts: &[Point2]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply_affine(t: &Matrix3<f64>, p: &Point2) -> Point2 {
    Point2::new(
        t[(0, 0)] * p.x + t[(0, 1)] * p.y + t[(0, 2)],
        t[(1, 0)] * p.x + t[(1, 1)] * p.y + t[(1, 2)],
    )
}

fn triangle_area(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs()
}

fn check_finite(pts: &[Point2], what: &str) -> Result<()> {
    if pts.iter().all(Point2::is_finite) {
        Ok(())
    } else {
        Err(Error::DegenerateConfiguration(format!(
            "{what} contains non-finite coordinates"
        )))
    }
}

/// Reject any collinear triple (areas measured in normalized coordinates).
fn check_no_collinear_triple(normalized: &[Point2], what: &str) -> Result<()> {
    let n = normalized.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if triangle_area(&normalized[i], &normalized[j], &normalized[k])
                    < COLLINEAR_AREA_EPS
                {
                    return Err(Error::DegenerateConfiguration(format!(
                        "{what} points {i}, {j}, {k} are collinear"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Estimate `H` with `dst ~ H · src`.
///
/// Four correspondences are solved exactly through the 8×8 system with the
/// `h33 = 1` gauge; more correspondences use the SVD of the 2n×9 DLT matrix.
/// Both point sets are Hartley-normalized first.
pub fn homography_from_correspondences(src: &[Point2], dst: &[Point2]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::DegenerateConfiguration(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            src.len()
        )));
    }
    check_finite(src, "source")?;
    check_finite(dst, "destination")?;

    let t_src = normalizing_transform(src);
    let t_dst = normalizing_transform(dst);
    let ns: Vec<Point2> = src.iter().map(|p| apply_affine(&t_src, p)).collect();
    let nd: Vec<Point2> = dst.iter().map(|p| apply_affine(&t_dst, p)).collect();

    let h_norm = if src.len() == 4 {
        check_no_collinear_triple(&ns, "source")?;
        check_no_collinear_triple(&nd, "destination")?;
        match solve_four_point(&ns, &nd) {
            Some(h) => h,
            None => solve_dlt_svd(&ns, &nd)?,
        }
    } else {
        solve_dlt_svd(&ns, &nd)?
    };

    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("destination normalization".into()))?;
    let h = Homography::from_matrix(t_dst_inv * h_norm * t_src);
    if h.determinant().abs() <= W_EPS || !h.matrix().iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateConfiguration(
            "estimated homography is singular".into(),
        ));
    }
    Ok(h)
}

fn solve_four_point(src: &[Point2], dst: &[Point2]) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = 2 * i;
        a[(r, 0)] = s.x;
        a[(r, 1)] = s.y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -d.x * s.x;
        a[(r, 7)] = -d.x * s.y;
        b[r] = d.x;
        a[(r + 1, 3)] = s.x;
        a[(r + 1, 4)] = s.y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -d.y * s.x;
        a[(r + 1, 7)] = -d.y * s.y;
        b[r + 1] = d.y;
    }
    let h = a.lu().solve(&b)?;
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

fn solve_dlt_svd(src: &[Point2], dst: &[Point2]) -> Result<Matrix3<f64>> {
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = 2 * i;
        a[(r, 0)] = -s.x;
        a[(r, 1)] = -s.y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = d.x * s.x;
        a[(r, 7)] = d.x * s.y;
        a[(r, 8)] = d.x;
        a[(r + 1, 3)] = -s.x;
        a[(r + 1, 4)] = -s.y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = d.y * s.x;
        a[(r + 1, 7)] = d.y * s.y;
        a[(r + 1, 8)] = d.y;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::DegenerateConfiguration("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if largest <= 0.0 || second_smallest / largest < 1e-10 {
        return Err(Error::DegenerateConfiguration(
            "DLT design matrix is rank deficient".into(),
        ));
    }
    let null = v_t.row(order[8]);
    Ok(Matrix3::new(
        null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8],
    ))
}

/// Exact affine map taking three source points onto three destination points.
pub fn affine_from_correspondences(src: &[Point2; 3], dst: &[Point2; 3]) -> Result<Homography> {
    check_finite(src, "source")?;
    check_finite(dst, "destination")?;
    let t = normalizing_transform(src);
    let ns: Vec<Point2> = src.iter().map(|p| apply_affine(&t, p)).collect();
    if triangle_area(&ns[0], &ns[1], &ns[2]) < COLLINEAR_AREA_EPS {
        return Err(Error::DegenerateConfiguration(
            "affine source points are collinear".into(),
        ));
    }
    // Rows [x y 1] of the source; solve M·a = u and M·b = v for the two rows.
    let m = Matrix3::new(
        src[0].x, src[0].y, 1.0, src[1].x, src[1].y, 1.0, src[2].x, src[2].y, 1.0,
    );
    let lu = m.lu();
    let u = Vector3::new(dst[0].x, dst[1].x, dst[2].x);
    let v = Vector3::new(dst[0].y, dst[1].y, dst[2].y);
    let (a, b) = match (lu.solve(&u), lu.solve(&v)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::DegenerateConfiguration(
                "affine system is singular".into(),
            ))
        }
    };
    Ok(Homography(Matrix3::new(
        a[0], a[1], a[2], b[0], b[1], b[2], 0.0, 0.0, 1.0,
    )))
}

/// Linear two-view triangulation.
///
/// Observations are first mapped to normalized camera coordinates through
/// each camera's intrinsics; the point is the right singular vector of the
/// stacked 4×4 DLT system with the smallest singular value.
pub fn triangulate_dlt(
    obs1: &Point2,
    obs2: &Point2,
    cam1: &CameraView,
    cam2: &CameraView,
) -> Result<Point3> {
    if cam1.position.distance(&cam2.position) < 1e-9 {
        return Err(Error::DegenerateBaseline);
    }
    let mut a = Matrix4::<f64>::zeros();
    for (k, (obs, cam)) in [(obs1, cam1), (obs2, cam2)].into_iter().enumerate() {
        let p = cam.normalized_projection_matrix();
        let x = (obs.x - cam.principal.x) / cam.focal;
        let y = (obs.y - cam.principal.y) / cam.focal;
        for c in 0..4 {
            a[(2 * k, c)] = x * p[(2, c)] - p[(0, c)];
            a[(2 * k + 1, c)] = y * p[(2, c)] - p[(1, c)];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NoFiniteSolution)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("four singular values");
    let hvec = v_t.row(min_idx);
    let w = hvec[3];
    if w.abs() <= W_EPS || !w.is_finite() {
        return Err(Error::NoFiniteSolution);
    }
    Ok(Point3::new(hvec[0] / w, hvec[1] / w, hvec[2] / w))
}
