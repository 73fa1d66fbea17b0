//! Two-view sign mapping simulation.
//!
//! A 3 × 2 m rectangular sign faces a forward-moving pinhole camera. The
//! second frame is rolled about the optical axis by `θ_z`. Each corner is
//! triangulated from noisy observations taken either as the projected
//! vertices or as the corners of their circumscribed rectangle, and the
//! error of the reconstructed sign center is recorded.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{triangulate_dlt, AABox, Point2, Point3};
use crate::rng::{child_seed, rng_from_seed};

/// Pinhole camera with extrinsics `x_c = R (X - T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub focal: f64,
    pub principal: Point2,
    pub position: Point3,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
}

impl CameraView {
    /// Camera rolled by `theta_deg` about its optical axis. Image content
    /// rotates by `-theta_deg` about the principal point.
    pub fn rolled(focal: f64, principal: Point2, position: Point3, theta_deg: f64) -> Self {
        let t = theta_deg.to_radians();
        let (s, c) = t.sin_cos();
        // transpose of the camera's orientation Rz(θ)
        CameraView {
            focal,
            principal,
            position,
            rotation: [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::InvalidConfig("focal length must be positive".into()));
        }
        let r = self.rotation_matrix();
        if (r.transpose() * r - Matrix3::identity()).norm() >= 1e-10 {
            return Err(Error::InvalidConfig("rotation is not orthonormal".into()));
        }
        Ok(())
    }

    /// `[R | -R T]`, the projection onto normalized image coordinates.
    pub fn normalized_projection_matrix(&self) -> Matrix3x4<f64> {
        let r = self.rotation_matrix();
        let t = -(r * self.position.to_vector());
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        p.set_column(3, &t);
        p
    }

    pub fn to_camera(&self, x: &Point3) -> Vector3<f64> {
        self.rotation_matrix() * (x.to_vector() - self.position.to_vector())
    }
}

/// Pinhole projection; fails for points at or behind the camera plane.
pub fn project_camera(view: &CameraView, x: &Point3) -> Result<Point2> {
    let c = view.to_camera(x);
    if c.z <= 1e-6 {
        return Err(Error::BehindCamera(c.z));
    }
    Ok(Point2::new(
        view.focal * c.x / c.z + view.principal.x,
        view.focal * c.y / c.z + view.principal.y,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMethod {
    Vertex,
    Bbox,
}

impl ObservationMethod {
    pub const BOTH: [ObservationMethod; 2] = [ObservationMethod::Vertex, ObservationMethod::Bbox];

    pub fn name(self) -> &'static str {
        match self {
            ObservationMethod::Vertex => "vertex",
            ObservationMethod::Bbox => "bbox",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScene {
    pub sign_center: Point3,
    /// Width and height in meters.
    pub sign_size: [f64; 2],
    pub cam1_position: Point3,
    /// Forward motion between the frames, along +z.
    pub forward_delta: f64,
    pub focal: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Standard deviation of the per-coordinate Gaussian pixel noise.
    pub noise_std: f64,
    pub trials: usize,
    /// Roll angles of the second frame, degrees.
    pub theta_grid_deg: Vec<f64>,
    pub seed: u64,
}

impl Default for SimScene {
    fn default() -> Self {
        SimScene {
            sign_center: Point3::new(-7.0, 7.0, 25.0),
            sign_size: [3.0, 2.0],
            cam1_position: Point3::new(0.0, 1.0, 15.0),
            forward_delta: 5.0,
            focal: 2000.0,
            image_width: 1280,
            image_height: 720,
            noise_std: 1.0,
            trials: 100,
            theta_grid_deg: (0..21).map(|i| i as f64 / 10.0).collect(),
            seed: 0,
        }
    }
}

impl SimScene {
    pub fn principal(&self) -> Point2 {
        Point2::new(self.image_width as f64 / 2.0, self.image_height as f64 / 2.0)
    }

    /// Sign corners TL, TR, BR, BL in the plane `z = center.z`.
    pub fn sign_corners(&self) -> [Point3; 4] {
        let c = self.sign_center;
        let (hw, hh) = (self.sign_size[0] / 2.0, self.sign_size[1] / 2.0);
        [
            Point3::new(c.x - hw, c.y - hh, c.z),
            Point3::new(c.x + hw, c.y - hh, c.z),
            Point3::new(c.x + hw, c.y + hh, c.z),
            Point3::new(c.x - hw, c.y + hh, c.z),
        ]
    }

    pub fn camera1(&self) -> CameraView {
        CameraView::rolled(self.focal, self.principal(), self.cam1_position, 0.0)
    }

    pub fn camera2(&self, theta_deg: f64) -> CameraView {
        let p = self.cam1_position;
        CameraView::rolled(
            self.focal,
            self.principal(),
            Point3::new(p.x, p.y, p.z + self.forward_delta),
            theta_deg,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise_std must be non-negative".into()));
        }
        if self.sign_size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("sign size must be positive".into()));
        }
        if self.theta_grid_deg.is_empty() {
            return Err(Error::InvalidConfig("empty theta grid".into()));
        }
        self.camera1().validate()
    }
}

/// Noise-free projections of the sign corners.
pub fn true_projections(scene: &SimScene, view: &CameraView) -> Result<[Point2; 4]> {
    let c = scene.sign_corners();
    Ok([
        project_camera(view, &c[0])?,
        project_camera(view, &c[1])?,
        project_camera(view, &c[2])?,
        project_camera(view, &c[3])?,
    ])
}

/// Noisy observation of the four corners in one view.
pub fn observe_view<R: Rng + ?Sized>(
    scene: &SimScene,
    view: &CameraView,
    method: ObservationMethod,
    rng: &mut R,
) -> Result<[Point2; 4]> {
    let truth = true_projections(scene, view)?;
    let mut noisy = truth;
    if scene.noise_std > 0.0 {
        let normal = Normal::new(0.0, scene.noise_std)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for p in noisy.iter_mut() {
            p.x += normal.sample(rng);
            p.y += normal.sample(rng);
        }
    }
    Ok(match method {
        ObservationMethod::Vertex => noisy,
        ObservationMethod::Bbox => {
            let b = AABox::enclosing(&noisy).expect("four points");
            b.corners().0
        }
    })
}

/// Observations of both frames: the first unrotated, the second rolled by `theta_deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePair {
    pub first: [Point2; 4],
    pub second: [Point2; 4],
}

pub fn observe<R: Rng + ?Sized>(
    scene: &SimScene,
    theta_deg: f64,
    method: ObservationMethod,
    rng: &mut R,
) -> Result<FramePair> {
    Ok(FramePair {
        first: observe_view(scene, &scene.camera1(), method, rng)?,
        second: observe_view(scene, &scene.camera2(theta_deg), method, rng)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: ObservationMethod,
    pub theta_deg: f64,
    /// Distance between the centers of the triangulated and true corners, meters.
    pub err_3d: f64,
    /// Mean distance of the second frame's observed corners to the true vertices, pixels.
    pub ave_2d: f64,
}

/// Triangulate one observation pair and score it.
pub fn evaluate_pair(scene: &SimScene, theta_deg: f64, method: ObservationMethod, obs: &FramePair) -> Result<TrialResult> {
    let (cam1, cam2) = (scene.camera1(), scene.camera2(theta_deg));
    let truth3 = scene.sign_corners();
    let truth2 = true_projections(scene, &cam2)?;
    let mut est_center = Vector3::zeros();
    let mut true_center = Vector3::zeros();
    let mut ave = 0.0;
    for k in 0..4 {
        let x = triangulate_dlt(&obs.first[k], &obs.second[k], &cam1, &cam2)?;
        est_center += x.to_vector();
        true_center += truth3[k].to_vector();
        ave += obs.second[k].distance(&truth2[k]);
    }
    Ok(TrialResult {
        method,
        theta_deg,
        err_3d: ((est_center - true_center) / 4.0).norm(),
        ave_2d: ave / 4.0,
    })
}

/// Seed of trial `trial`. It does not depend on θ or the method: trial `k`
/// replays the same pixel noise at every grid point for both methods, so
/// differences along the curve come from the geometry rather than from
/// Monte-Carlo scatter.
pub fn trial_seed(scene: &SimScene, trial: usize) -> u64 {
    child_seed(scene.seed, 0, trial as u64)
}

/// Every trial, grouped by θ then method then trial index.
pub fn run_trials(scene: &SimScene) -> Result<Vec<TrialResult>> {
    scene.validate()?;
    let mut out = Vec::with_capacity(scene.theta_grid_deg.len() * 2 * scene.trials);
    for &theta in &scene.theta_grid_deg {
        for method in ObservationMethod::BOTH {
            for trial in 0..scene.trials {
                let mut rng = rng_from_seed(trial_seed(scene, trial));
                let obs = observe(scene, theta, method, &mut rng)?;
                out.push(evaluate_pair(scene, theta, method, &obs)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub theta_deg: f64,
    pub method: ObservationMethod,
    pub mean_err3d_m: f64,
    /// Sample standard deviation (n - 1).
    pub std_err3d_m: f64,
    pub mean_ave_px: f64,
    pub trials: usize,
}

pub fn aggregate(trials: &[TrialResult], scene: &SimScene) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &theta in &scene.theta_grid_deg {
        for method in ObservationMethod::BOTH {
            let sel: Vec<&TrialResult> = trials
                .iter()
                .filter(|t| t.method == method && t.theta_deg == theta)
                .collect();
            let n = sel.len();
            if n == 0 {
                continue;
            }
            let mean = sel.iter().map(|t| t.err_3d).sum::<f64>() / n as f64;
            let var = if n > 1 {
                sel.iter().map(|t| (t.err_3d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            rows.push(AggregateRow {
                theta_deg: theta,
                method,
                mean_err3d_m: mean,
                std_err3d_m: var.sqrt(),
                mean_ave_px: sel.iter().map(|t| t.ave_2d).sum::<f64>() / n as f64,
                trials: n,
            });
        }
    }
    rows
}

/// Aggregated mean/std of the 3D error and mean 2D AVE per (θ, method).
pub fn run_experiment(scene: &SimScene) -> Result<Vec<AggregateRow>> {
    let trials = run_trials(scene)?;
    Ok(aggregate(&trials, scene))
}

pub const CSV_HEADER: &str = "theta_deg,method,mean_err3d_m,std_err3d_m,mean_ave_px";

pub fn rows_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.3},{},{:.9},{:.9},{:.6}",
            r.theta_deg,
            r.method.name(),
            r.mean_err3d_m,
            r.std_err3d_m,
            r.mean_ave_px
        );
    }
    out
}
