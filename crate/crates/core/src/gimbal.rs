//! Two-axis wearable that keeps the forearm marker inclined toward the camera.
//!
//! The lower motor turns about the forearm axis (mainly moving the inclination
//! about the camera y-axis); the upper motor tilts in elevation (mainly moving
//! the inclination about the camera x-axis). A per-axis dead band holds the
//! motors still once the measured inclination is close enough to its target.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::perception::CameraModel;
use crate::transform::Transform;

/// Index of the lower (forearm-roll) motor, driven by the camera-y inclination.
pub const LOWER: usize = 0;
/// Index of the upper (elevation) motor, driven by the camera-x inclination.
pub const UPPER: usize = 1;

/// Mechanical layout and regulation targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GimbalParams {
    /// Target inclination about the camera y-axis, rad.
    pub target_y: f64,
    /// Target inclination about the camera x-axis, rad.
    pub target_x: f64,
    /// Full dead-band width, rad (the motors hold within ±band/2).
    pub band: f64,
    pub max_rate: f64,
    /// `[lower, upper]` motor limits as `[lo, hi]`, rad.
    pub limits: [[f64; 2]; 2],
    /// Lower-motor housing pose in the forearm frame (x along the forearm,
    /// z out of the back of the wrist).
    pub mount: Transform,
    /// Lower-motor axis to upper-motor axis, m.
    pub link1: f64,
    /// Upper-motor axis to the marker face, m.
    pub link2: f64,
}

impl Default for GimbalParams {
    fn default() -> Self {
        let servo = [-90f64.to_radians(), 90f64.to_radians()];
        Self {
            target_y: 40f64.to_radians(),
            target_x: 20f64.to_radians(),
            band: 10f64.to_radians(),
            max_rate: 3.5,
            limits: [servo, servo],
            mount: Transform::from_translation(0.0, 0.0, 0.03),
            link1: 0.02,
            link2: 0.015,
        }
    }
}

impl GimbalParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.band > 0.0) {
            return Err("gimbal band must be positive".into());
        }
        if !(self.max_rate > 0.0) {
            return Err("gimbal max_rate must be positive".into());
        }
        for (i, [lo, hi]) in self.limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(format!("gimbal motor {i} limits must satisfy lo < hi"));
            }
        }
        if ![self.target_x, self.target_y, self.link1, self.link2].iter().all(|v| v.is_finite()) {
            return Err("gimbal targets and links must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimbalState {
    /// `[lower, upper]`, rad.
    pub motor_angles: [f64; 2],
    pub limits: [[f64; 2]; 2],
    pub max_rate: f64,
    /// Sign of d(inclination)/d(motor) for each axis pair.
    pub axis_signs: [f64; 2],
    /// Set on the step a command was clipped at a limit.
    pub saturated: [bool; 2],
}

impl GimbalState {
    pub fn new(params: &GimbalParams) -> Self {
        Self {
            motor_angles: [0.0; 2],
            limits: params.limits,
            max_rate: params.max_rate,
            axis_signs: [1.0, 1.0],
            saturated: [false; 2],
        }
    }

    pub fn within_limits(&self) -> bool {
        (0..2).all(|i| {
            let [lo, hi] = self.limits[i];
            (lo..=hi).contains(&self.motor_angles[i])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationError {
    pub err_y: f64,
    pub err_x: f64,
}

impl OrientationError {
    pub fn new(angles: &MarkerAngles, params: &GimbalParams) -> Self {
        Self {
            err_y: angles.angle_y - params.target_y,
            err_x: angles.angle_x - params.target_x,
        }
    }

    fn for_axis(&self, axis: usize) -> f64 {
        if axis == LOWER {
            self.err_y
        } else {
            self.err_x
        }
    }

    pub fn within_band(&self, band: f64) -> bool {
        self.err_y.abs() <= band / 2.0 && self.err_x.abs() <= band / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerAngles {
    pub angle_y: f64,
    pub angle_x: f64,
    /// Normal (anti)parallel to the camera y-axis: `angle_y` is undefined and
    /// the previous values were returned.
    pub gimbal_lock: bool,
}

/// Marker inclination in the camera frame.
///
/// With the marker normal `n` expressed in camera axes, the decomposition is
/// `n = Ry(angle_y) · Rx(angle_x) · (0, 0, −1)`, so a marker squarely facing
/// the camera reads `(0, 0)`: `angle_x = asin(n_y)`, `angle_y = atan2(−n_x, −n_z)`.
pub fn marker_angles(
    marker_orientation: &Rotation3<f64>,
    camera: &CameraModel,
    previous: (f64, f64),
) -> MarkerAngles {
    let n = camera.pose_in_base.rotation.inverse() * (marker_orientation * Vector3::z());
    if n.x.hypot(n.z) < 1e-9 {
        return MarkerAngles {
            angle_y: previous.0,
            angle_x: previous.1,
            gimbal_lock: true,
        };
    }
    MarkerAngles {
        angle_y: (-n.x).atan2(-n.z),
        angle_x: n.y.clamp(-1.0, 1.0).asin(),
        gimbal_lock: false,
    }
}

/// Marker normal in camera axes for the given inclinations; inverse of
/// [`marker_angles`].
pub fn normal_from_angles(angle_y: f64, angle_x: f64) -> Vector3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle_y)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), angle_x)
        * -Vector3::z()
}

/// Dead-band step. Each axis holds inside `±band/2`; outside it moves against
/// the error by `min(max_rate·dt, |err|)`, then clamps to its limits.
pub fn hysteresis_step(state: &GimbalState, error: &OrientationError, band: f64, dt: f64) -> GimbalState {
    let mut next = *state;
    for axis in [LOWER, UPPER] {
        next.saturated[axis] = false;
        let err = error.for_axis(axis);
        if err.abs() <= band / 2.0 {
            continue;
        }
        let delta = -state.axis_signs[axis] * err.signum() * (state.max_rate * dt).min(err.abs());
        let [lo, hi] = state.limits[axis];
        let target = state.motor_angles[axis] + delta;
        let clamped = target.clamp(lo, hi);
        next.saturated[axis] = clamped != target;
        next.motor_angles[axis] = clamped;
    }
    next
}

/// Marker pose: forearm, mount, lower motor about x, first link, upper motor
/// about y, second link. The marker normal is its +z axis.
pub fn marker_pose(forearm: &Transform, params: &GimbalParams, state: &GimbalState) -> Transform {
    let lower = Transform::from_axis_angle(&Vector3::x(), state.motor_angles[LOWER]);
    let upper = Transform::from_axis_angle(&Vector3::y(), state.motor_angles[UPPER]);
    forearm
        .compose(&params.mount)
        .compose(&lower)
        .compose(&Transform::from_translation(0.0, 0.0, params.link1))
        .compose(&upper)
        .compose(&Transform::from_translation(0.0, 0.0, params.link2))
}

/// Signs of the diagonal sensitivities d(angle_y)/d(lower) and
/// d(angle_x)/d(upper) at a reference forearm pose, by central differences.
pub fn estimate_axis_signs(
    forearm: &Transform,
    params: &GimbalParams,
    state: &GimbalState,
    camera: &CameraModel,
) -> [f64; 2] {
    let h = 1e-4;
    let mut signs = state.axis_signs;
    for axis in [LOWER, UPPER] {
        let mut plus = *state;
        let mut minus = *state;
        plus.motor_angles[axis] += h;
        minus.motor_angles[axis] -= h;
        let read = |s: &GimbalState| {
            let a = marker_angles(&marker_pose(forearm, params, s).rotation, camera, (0.0, 0.0));
            if axis == LOWER {
                a.angle_y
            } else {
                a.angle_x
            }
        };
        let slope = (read(&plus) - read(&minus)) / (2.0 * h);
        if slope.abs() > 1e-6 {
            signs[axis] = slope.signum();
        }
    }
    signs
}

/// Gimbal plus its last measured inclination; stepped once per control tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimbalController {
    pub params: GimbalParams,
    pub state: GimbalState,
    pub last_angles: MarkerAngles,
}

impl GimbalController {
    pub fn new(params: GimbalParams) -> Self {
        Self {
            params,
            state: GimbalState::new(&params),
            last_angles: MarkerAngles {
                angle_y: 0.0,
                angle_x: 0.0,
                gimbal_lock: false,
            },
        }
    }

    pub fn marker_pose(&self, forearm: &Transform) -> Transform {
        marker_pose(forearm, &self.params, &self.state)
    }

    /// Measures the current inclination and, when the marker is visible,
    /// applies one dead-band step. Returns the measured error.
    pub fn update(&mut self, forearm: &Transform, camera: &CameraModel, visible: bool, dt: f64) -> OrientationError {
        let pose = self.marker_pose(forearm);
        let prev = (self.last_angles.angle_y, self.last_angles.angle_x);
        self.last_angles = marker_angles(&pose.rotation, camera, prev);
        let err = OrientationError::new(&self.last_angles, &self.params);
        if visible {
            self.state = hysteresis_step(&self.state, &err, self.params.band, dt);
        } else {
            self.state.saturated = [false; 2];
        }
        err
    }
}
