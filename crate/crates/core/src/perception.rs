//! Synthetic marker tracking: camera extrinsics, geometric visibility and a
//! seeded measurement-noise model.

use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::Transform;

/// Mean absolute per-axis tracking error (camera x, y, z) the default noise
/// model is calibrated to, metres.
pub const DEFAULT_MEAN_ABS_ERROR: [f64; 3] = [0.008, 0.007, 0.011];

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("marker is not visible")]
    NotVisible,
    #[error("noise target must be finite and non-negative, got {0}")]
    InvalidTarget(f64),
    #[error("noise calibration did not converge: axis {axis} off by {rel_error:.4} after {iterations} iterations")]
    NoConvergence {
        axis: usize,
        rel_error: f64,
        iterations: usize,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Pinhole camera with OpenCV axes: +z along the optical axis, +x right, +y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Camera pose in the robot base frame.
    pub pose_in_base: Transform,
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub max_range: f64,
    /// Largest angle between marker normal and marker→camera ray that still
    /// detects.
    pub max_incidence: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            pose_in_base: Transform::look_at(
                &Vector3::new(1.5, 0.0, 1.1),
                &Vector3::new(0.6, 0.0, 0.1),
                &Vector3::z(),
            ),
            horizontal_fov: 80f64.to_radians(),
            vertical_fov: 55f64.to_radians(),
            max_range: 2.5,
            max_incidence: 60f64.to_radians(),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let pi = std::f64::consts::PI;
        let in_open = |v: f64| v > 0.0 && v < pi;
        if !in_open(self.horizontal_fov) || !in_open(self.vertical_fov) {
            return Err(PerceptionError::InvalidCamera("fields of view must lie in (0, pi)".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(PerceptionError::InvalidCamera("max_range must be positive".into()));
        }
        if !(self.max_incidence > 0.0) {
            return Err(PerceptionError::InvalidCamera("max_incidence must be positive".into()));
        }
        if !self.pose_in_base.is_valid(1e-9) {
            return Err(PerceptionError::InvalidCamera("pose is not a rigid transform".into()));
        }
        Ok(())
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose_in_base.translation
    }

    /// Point in camera coordinates.
    pub fn to_camera(&self, p_base: &Vector3<f64>) -> Vector3<f64> {
        self.pose_in_base.inverse().transform_point(p_base)
    }
}

/// Camera pose in the robot base frame from a reference marker seen by the
/// camera: `T_B^C = T_B^M · (T_C^M)⁻¹`.
pub fn calibrate_extrinsics(marker_in_base: &Transform, marker_in_camera: &Transform) -> Transform {
    marker_in_base.compose(&marker_in_camera.inverse())
}

/// Shapes that can block the line of sight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Occluder {
    Sphere { center: Vector3<f64>, radius: f64 },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
}

impl Occluder {
    /// True if the closed segment `p`–`q` passes within the occluder.
    pub fn blocks_segment(&self, p: &Vector3<f64>, q: &Vector3<f64>) -> bool {
        match self {
            Occluder::Sphere { center, radius } => point_segment_distance(center, p, q) <= *radius,
            Occluder::Capsule { a, b, radius } => segment_segment_distance(p, q, a, b) <= *radius,
        }
    }
}

fn point_segment_distance(c: &Vector3<f64>, p: &Vector3<f64>, q: &Vector3<f64>) -> f64 {
    let d = q - p;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((c - p).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p + d * t - c).norm()
}

/// Closest distance between segments `p1`–`q1` and `p2`–`q2`.
fn segment_segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-15;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub visible: bool,
    /// Angle between marker normal (+z of the marker frame) and the
    /// marker→camera ray.
    pub incidence: f64,
    pub in_fov: bool,
    pub in_range: bool,
    pub occluded: bool,
}

/// Geometric detectability of a marker: inside the view frustum and range,
/// facing the camera within `max_incidence`, with a clear line of sight.
pub fn check_visibility(camera: &CameraModel, marker_pose: &Transform, occluders: &[Occluder]) -> Visibility {
    let cam = camera.position();
    let marker = marker_pose.translation;
    let p_cam = camera.to_camera(&marker);
    let in_fov = p_cam.z > 0.0
        && p_cam.x.atan2(p_cam.z).abs() <= camera.horizontal_fov / 2.0
        && p_cam.y.atan2(p_cam.z).abs() <= camera.vertical_fov / 2.0;
    let ray = cam - marker;
    let range = ray.norm();
    let in_range = range <= camera.max_range;
    let normal = marker_pose.rotation * Vector3::z();
    let incidence = if range > 0.0 {
        (normal.dot(&ray) / range).clamp(-1.0, 1.0).acos()
    } else {
        std::f64::consts::PI
    };
    let occluded = occluders.iter().any(|o| o.blocks_segment(&cam, &marker));
    Visibility {
        visible: in_fov && in_range && incidence <= camera.max_incidence && !occluded,
        incidence,
        in_fov,
        in_range,
        occluded,
    }
}

/// Gaussian position noise defined per camera axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma_axes: Vector3<f64>,
    pub bias_axes: Vector3<f64>,
    pub seed: u64,
    /// Optional relative sigma growth per metre of depth beyond `depth_ref`;
    /// 0 keeps the noise depth-independent.
    pub depth_gain: f64,
    pub depth_ref: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::calibrated(Vector3::from(DEFAULT_MEAN_ABS_ERROR), 0)
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_axes: Vector3::zeros(),
            bias_axes: Vector3::zeros(),
            seed: 0,
            depth_gain: 0.0,
            depth_ref: 1.0,
        }
    }

    /// Zero-mean model whose per-axis mean absolute error equals `mean_abs`
    /// (half-normal mean: `E|e| = σ·√(2/π)`).
    pub fn calibrated(mean_abs: Vector3<f64>, seed: u64) -> Self {
        Self {
            sigma_axes: mean_abs * half_normal_sigma_factor(),
            seed,
            ..Self::noiseless()
        }
    }

    fn sigma_at_depth(&self, depth: f64) -> Vector3<f64> {
        if self.depth_gain == 0.0 {
            return self.sigma_axes;
        }
        self.sigma_axes * (1.0 + self.depth_gain * (depth - self.depth_ref)).max(0.0)
    }
}

/// `σ / E|e|` for a zero-mean Gaussian, i.e. `√(π/2)`.
pub fn half_normal_sigma_factor() -> f64 {
    (std::f64::consts::PI / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub visible: bool,
    /// Noisy marker position in the base frame; `None` when not visible.
    pub position_base: Option<Vector3<f64>>,
    pub orientation_base: Option<Rotation3<f64>>,
    pub incidence: f64,
    pub timestamp: f64,
}

/// One camera's observation stream. Owns the seeded generator, so two trackers
/// built from the same model produce identical streams.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub camera: CameraModel,
    pub noise: NoiseModel,
    rng: ChaCha8Rng,
}

impl Tracker {
    pub fn new(camera: CameraModel, noise: NoiseModel) -> Self {
        Self {
            camera,
            noise,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
        }
    }

    /// Camera-frame noise sample (bias plus Gaussian draw).
    pub fn sample_camera_error(&mut self, depth: f64) -> Vector3<f64> {
        let sigma = self.noise.sigma_at_depth(depth);
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut self.rng));
        self.noise.bias_axes + Vector3::new(sigma.x * z[0], sigma.y * z[1], sigma.z * z[2])
    }

    /// Observes the marker. Three normal draws are consumed per call whether or
    /// not the marker is visible, so visibility never shifts later noise.
    pub fn observe(&mut self, marker_pose: &Transform, occluders: &[Occluder], t: f64) -> MarkerObservation {
        let vis = check_visibility(&self.camera, marker_pose, occluders);
        let depth = self.camera.to_camera(&marker_pose.translation).z;
        let err_cam = self.sample_camera_error(depth);
        if !vis.visible {
            return MarkerObservation {
                visible: false,
                position_base: None,
                orientation_base: None,
                incidence: vis.incidence,
                timestamp: t,
            };
        }
        let err_base = self.camera.pose_in_base.rotation * err_cam;
        MarkerObservation {
            visible: true,
            position_base: Some(marker_pose.translation + err_base),
            orientation_base: Some(marker_pose.rotation),
            incidence: vis.incidence,
            timestamp: t,
        }
    }
}

/// Hand point from a marker observation: marker position plus `offset`
/// expressed in the marker frame.
pub fn hand_position(obs: &MarkerObservation, offset: &Vector3<f64>) -> Result<Vector3<f64>, PerceptionError> {
    match (obs.visible, obs.position_base, obs.orientation_base) {
        (true, Some(p), Some(r)) => Ok(p + r * offset),
        _ => Err(PerceptionError::NotVisible),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma_axes: Vector3<f64>,
    pub achieved_mean_abs: Vector3<f64>,
    pub achieved_mean_radial: f64,
    pub iterations: usize,
    pub samples: usize,
}

/// Finds per-axis sigmas whose Monte-Carlo mean absolute error is within 1% of
/// `targets`. Starts from the half-normal closed form and rescales on fresh
/// draws until every axis is within tolerance.
pub fn calibrate_noise(
    targets: Vector3<f64>,
    samples: usize,
    seed: u64,
) -> Result<NoiseCalibration, PerceptionError> {
    const MAX_ITERATIONS: usize = 8;
    const TOLERANCE: f64 = 0.01;
    for &t in targets.iter() {
        if !(t.is_finite() && t >= 0.0) {
            return Err(PerceptionError::InvalidTarget(t));
        }
    }
    let mut sigma = targets * half_normal_sigma_factor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0, 0.0);
    for iteration in 1..=MAX_ITERATIONS {
        let (mean_abs, radial) = monte_carlo_errors(&sigma, samples, &mut rng);
        worst = (0, 0.0);
        for axis in 0..3 {
            if targets[axis] == 0.0 {
                continue;
            }
            let rel = (mean_abs[axis] - targets[axis]).abs() / targets[axis];
            if rel > worst.1 {
                worst = (axis, rel);
            }
        }
        if worst.1 <= TOLERANCE {
            return Ok(NoiseCalibration {
                sigma_axes: sigma,
                achieved_mean_abs: mean_abs,
                achieved_mean_radial: radial,
                iterations: iteration,
                samples,
            });
        }
        for axis in 0..3 {
            if mean_abs[axis] > 0.0 {
                sigma[axis] *= targets[axis] / mean_abs[axis];
            }
        }
    }
    Err(PerceptionError::NoConvergence {
        axis: worst.0,
        rel_error: worst.1,
        iterations: MAX_ITERATIONS,
    })
}

/// Mean absolute per-axis error and mean radial error of zero-mean Gaussian
/// noise with the given sigmas.
pub fn monte_carlo_errors(sigma: &Vector3<f64>, samples: usize, rng: &mut ChaCha8Rng) -> (Vector3<f64>, f64) {
    let mut abs_sum = Vector3::zeros();
    let mut radial_sum = 0.0;
    for _ in 0..samples {
        let e = Vector3::from_fn(|i, _| { let z: f64 = StandardNormal.sample(rng); sigma[i] * z });
        abs_sum += e.abs();
        radial_sum += e.norm();
    }
    let n = samples.max(1) as f64;
    (abs_sum / n, radial_sum / n)
}
