//! Scenario configuration files.
//!
//! A scenario is a TOML document. A top-level `extends = "other.toml"` key
//! (resolved relative to the including file) loads a base document first and
//! deep-merges the current one over it, so trial variants only list what
//! differs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apf::ControllerParams;
use crate::gimbal::GimbalParams;
use crate::kinematics::{ArmModel, JointVector, KinematicsError};
use crate::perception::{calibrate_extrinsics, CameraModel, NoiseModel, Occluder, DEFAULT_MEAN_ABS_ERROR};
use crate::safety::SafetyParams;
use crate::transform::Transform;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: `extends` cycle through this file", path.display())]
    ExtendsCycle { path: PathBuf },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Arm(#[from] KinematicsError),
}

/// Where the camera sits in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraPose {
    /// From a reference marker seen by both: `T_B^C = T_B^M · (T_C^M)⁻¹`.
    Calibrated {
        marker_in_base: Transform,
        marker_in_camera: Transform,
    },
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
    },
    Pose(Transform),
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl CameraPose {
    pub fn resolve(&self) -> Transform {
        match self {
            CameraPose::Calibrated {
                marker_in_base,
                marker_in_camera,
            } => calibrate_extrinsics(marker_in_base, marker_in_camera),
            CameraPose::LookAt { eye, target, up } => {
                Transform::look_at(&Vector3::from(*eye), &Vector3::from(*target), &Vector3::from(*up))
            }
            CameraPose::Pose(t) => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub pose: CameraPose,
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub max_range: f64,
    pub max_incidence: f64,
    /// Frame rate, Hz. Observations are held between frames.
    pub rate: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let d = CameraModel::default();
        Self {
            pose: CameraPose::LookAt {
                eye: [1.5, 0.0, 1.1],
                target: [0.6, 0.0, 0.1],
                up: default_up(),
            },
            horizontal_fov: d.horizontal_fov,
            vertical_fov: d.vertical_fov,
            max_range: d.max_range,
            max_incidence: d.max_incidence,
            rate: 30.0,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            pose_in_base: self.pose.resolve(),
            horizontal_fov: self.horizontal_fov,
            vertical_fov: self.vertical_fov,
            max_range: self.max_range,
            max_incidence: self.max_incidence,
        }
    }
}

/// Measurement noise. Either explicit `sigma` or per-axis mean absolute
/// errors (`mean_abs_error`) the sigmas are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mean_abs_error: [f64; 3],
    pub sigma: Option<[f64; 3]>,
    pub bias: [f64; 3],
    pub depth_gain: f64,
    pub depth_ref: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mean_abs_error: DEFAULT_MEAN_ABS_ERROR,
            sigma: None,
            bias: [0.0; 3],
            depth_gain: 0.0,
            depth_ref: 1.0,
        }
    }
}

impl NoiseConfig {
    pub fn model(&self, seed: u64) -> NoiseModel {
        let mut m = NoiseModel::calibrated(Vector3::from(self.mean_abs_error), seed);
        if let Some(s) = self.sigma {
            m.sigma_axes = Vector3::from(s);
        }
        m.bias_axes = Vector3::from(self.bias);
        m.depth_gain = self.depth_gain;
        m.depth_ref = self.depth_ref;
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GimbalConfig {
    /// With the gimbal disabled the motors stay at `static_angles`.
    pub enabled: bool,
    pub static_angles: [f64; 2],
    /// Overrides the sensitivity signs estimated at the initial forearm pose.
    pub axis_signs: Option<[f64; 2]>,
    pub params: GimbalParams,
}

impl Default for GimbalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            static_angles: [0.0; 2],
            axis_signs: None,
            params: GimbalParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandKind {
    /// Follows its waypoints regardless of feedback.
    #[default]
    Scripted,
    /// Scripted, but backs away from the TCP while a motor vibrates.
    HapticReactive,
    /// Steered by external position commands.
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandWaypoint {
    pub t: f64,
    pub position: [f64; 3],
    /// Forearm roll about its own axis added to `forearm_rpy[0]`, rad.
    #[serde(default)]
    pub roll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModelSpec {
    #[serde(default)]
    pub kind: HandKind,
    /// Forearm-origin path. Interactive hands start at the first entry.
    pub waypoints: Vec<HandWaypoint>,
    /// Forearm orientation (x along the forearm toward the fingers, z out of
    /// the back of the wrist).
    #[serde(default)]
    pub forearm_rpy: [f64; 3],
    /// Tracked hand point relative to the marker, in the marker frame.
    #[serde(default)]
    pub marker_offset: [f64; 3],
    /// Speed bound for scripted segments and interactive motion, m/s.
    #[serde(default = "default_hand_speed")]
    pub max_speed: f64,
    #[serde(default = "default_retreat_speed")]
    pub retreat_speed: f64,
    #[serde(default = "default_reaction_delay")]
    pub reaction_delay: f64,
    /// Rate at which a retreated hand drifts back to its script once the
    /// vibration stops, m/s.
    #[serde(default = "default_return_speed")]
    pub return_speed: f64,
    #[serde(default = "default_channel")]
    pub channel: String,
}

fn default_hand_speed() -> f64 {
    0.3
}
fn default_retreat_speed() -> f64 {
    0.15
}
fn default_reaction_delay() -> f64 {
    0.3
}
fn default_return_speed() -> f64 {
    0.05
}
fn default_channel() -> String {
    "console".into()
}

impl HandModelSpec {
    pub fn scripted(waypoints: Vec<HandWaypoint>) -> Self {
        Self {
            kind: HandKind::Scripted,
            waypoints,
            forearm_rpy: [0.0; 3],
            marker_offset: [0.0; 3],
            max_speed: default_hand_speed(),
            retreat_speed: default_retreat_speed(),
            reaction_delay: default_reaction_delay(),
            return_speed: default_return_speed(),
            channel: default_channel(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.waypoints.is_empty() {
            return bad("hand needs at least one waypoint".into());
        }
        for (name, v) in [
            ("max_speed", self.max_speed),
            ("retreat_speed", self.retreat_speed),
            ("reaction_delay", self.reaction_delay),
            ("return_speed", self.return_speed),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("hand {name} must be finite and non-negative"));
            }
        }
        for w in self.waypoints.windows(2) {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) {
                return bad(format!("hand waypoint times must increase (t = {})", w[1].t));
            }
            let dist = (Vector3::from(w[1].position) - Vector3::from(w[0].position)).norm();
            if dist / dt > self.max_speed + 1e-9 {
                return bad(format!(
                    "hand segment ending at t = {} moves at {:.3} m/s, above max_speed {}",
                    w[1].t,
                    dist / dt,
                    self.max_speed
                ));
            }
        }
        if self.waypoints.iter().any(|w| !w.position.iter().chain([&w.t, &w.roll]).all(|v| v.is_finite())) {
            return bad("hand waypoints must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: [f64; 3],
    /// Hold time after reaching the waypoint, s.
    #[serde(default)]
    pub dwell: f64,
}

impl Waypoint {
    pub fn at(position: [f64; 3]) -> Self {
        Self { position, dwell: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Arm description file; the built-in UR10 table when absent.
    #[serde(default)]
    pub arm: Option<PathBuf>,
    #[serde(default = "default_initial_q")]
    pub initial_q: [f64; 6],
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub gimbal: GimbalConfig,
    #[serde(default)]
    pub safety: SafetyParams,
    #[serde(default)]
    pub hand: Option<HandModelSpec>,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    pub waypoints: Vec<Waypoint>,
    #[serde(default = "default_control_dt")]
    pub control_dt: f64,
    #[serde(default = "default_log_dt")]
    pub log_dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Distance to a waypoint at which it counts as reached, m.
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
}

/// Elbow-up pose with the tool pointing down, in front of the base at +x.
pub fn default_initial_q() -> [f64; 6] {
    use std::f64::consts::{FRAC_PI_2, PI};
    [PI, -FRAC_PI_2, FRAC_PI_2, -FRAC_PI_2, -FRAC_PI_2, 0.0]
}
fn default_control_dt() -> f64 {
    0.01
}
fn default_log_dt() -> f64 {
    0.1
}
fn default_goal_tolerance() -> f64 {
    0.005
}

impl ScenarioConfig {
    /// Minimal scenario: the given program, no hand, default everything.
    pub fn new(name: &str, waypoints: Vec<Waypoint>, duration: f64) -> Self {
        Self {
            name: name.into(),
            arm: None,
            initial_q: default_initial_q(),
            controller: ControllerParams::default(),
            camera: CameraConfig::default(),
            noise: NoiseConfig::default(),
            gimbal: GimbalConfig::default(),
            safety: SafetyParams::default(),
            hand: None,
            occluders: Vec::new(),
            waypoints,
            control_dt: default_control_dt(),
            log_dt: default_log_dt(),
            duration,
            seed: 0,
            goal_tolerance: default_goal_tolerance(),
        }
    }

    /// Reads a scenario file, following `extends` chains. A relative `arm`
    /// path is resolved against the file that names it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut seen = HashSet::new();
        let value = load_merged(path, &mut seen)?;
        let cfg: ScenarioConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.controller
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.camera
            .model()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.camera.rate > 0.0) {
            return bad("camera rate must be positive");
        }
        self.gimbal.params.validate().map_err(ConfigError::Invalid)?;
        if self.noise.mean_abs_error.iter().chain(self.noise.sigma.iter().flatten()).any(|v| !(*v >= 0.0)) {
            return bad("noise magnitudes must be non-negative");
        }
        if !(self.control_dt > 0.0) || !(self.log_dt >= self.control_dt) {
            return bad("need 0 < control_dt <= log_dt");
        }
        let ratio = self.log_dt / self.control_dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("log_dt must be an integer multiple of control_dt");
        }
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(self.goal_tolerance > 0.0) {
            return bad("goal_tolerance must be positive");
        }
        if self.waypoints.is_empty() {
            return bad("at least one waypoint is required");
        }
        if self
            .waypoints
            .iter()
            .any(|w| !w.position.iter().all(|v| v.is_finite()) || !(w.dwell >= 0.0))
        {
            return bad("waypoints must be finite with non-negative dwell");
        }
        if !(self.safety.dwell >= 0.0) {
            return bad("safety dwell must be non-negative");
        }
        if let Some(h) = &self.hand {
            h.validate()?;
        }
        Ok(())
    }

    pub fn arm_model(&self) -> Result<ArmModel, ConfigError> {
        match &self.arm {
            Some(p) => Ok(ArmModel::load(p)?),
            None => Ok(ArmModel::ur10()),
        }
    }

    pub fn initial_q(&self) -> JointVector {
        JointVector::from(self.initial_q)
    }

    pub fn steps_per_log(&self) -> usize {
        (self.log_dt / self.control_dt).round() as usize
    }
}

fn load_merged(path: &Path, seen: &mut HashSet<PathBuf>) -> Result<toml::Value, ConfigError> {
    let canonical = path.canonicalize().map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if !seen.insert(canonical.clone()) {
        return Err(ConfigError::ExtendsCycle { path: path.to_path_buf() });
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // toml's error display carries the line and column
    let mut value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| {
        ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    let dir = canonical.parent().map(Path::to_path_buf).unwrap_or_default();
    let table = value.as_table_mut().expect("parsed as a table");
    if let Some(toml::Value::String(arm)) = table.get("arm") {
        let resolved = dir.join(arm);
        table.insert("arm".into(), toml::Value::String(resolved.to_string_lossy().into_owned()));
    }
    let base = match table.remove("extends") {
        None => None,
        Some(toml::Value::String(parent)) => Some(load_merged(&dir.join(parent), seen)?),
        Some(_) => {
            return Err(ConfigError::Parse {
                path: path.to_path_buf(),
                message: "`extends` must be a file path string".into(),
            })
        }
    };
    Ok(match base {
        Some(mut b) => {
            merge(&mut b, value);
            b
        }
        None => value,
    })
}

/// Tables merge key by key; every other value (arrays included) replaces.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_parses_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(
            r#"
            duration = 10.0
            [[waypoints]]
            position = [0.6, 0.0, 0.3]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.control_dt, 0.01);
        assert_eq!(cfg.log_dt, 0.1);
        assert!(cfg.hand.is_none());
        assert_eq!(cfg.steps_per_log(), 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::from_toml_str("duration = 1.0\nwaypoints = []\nbogus = 3").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let err = ScenarioConfig::from_toml_str("duration = 1.0\n\nwaypoints = [\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = ScenarioConfig::new("x", vec![Waypoint::at([0.6, 0.0, 0.3])], 1.0);
        cfg.log_dt = 0.015;
        assert!(cfg.validate().is_err());
        cfg.log_dt = 0.1;
        cfg.controller.d_dct = 0.05;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ScenarioConfig::new("x", vec![Waypoint::at([0.6, 0.0, 0.3])], 5.0);
        cfg.hand = Some(HandModelSpec::scripted(vec![HandWaypoint {
            t: 0.0,
            position: [0.8, 0.0, 0.1],
            roll: 0.0,
        }]));
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn camera_pose_variants() {
        let look: CameraPose = toml::from_str("eye = [1.0, 0.0, 1.0]\ntarget = [0.0, 0.0, 0.0]").unwrap();
        assert!(matches!(look, CameraPose::LookAt { .. }));
        let pose: CameraPose = toml::from_str("xyz = [1.0, 0.0, 1.0]\nrpy = [0.0, 0.0, 0.0]").unwrap();
        assert!(matches!(pose, CameraPose::Pose(_)));
        let cal: CameraPose = toml::from_str(
            "[marker_in_base]\nxyz = [1.0, 0.0, 0.0]\n[marker_in_camera]\nxyz = [0.0, 1.0, 0.0]",
        )
        .unwrap();
        let t = cal.resolve();
        assert!((t.translation - Vector3::new(1.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn scripted_hand_speed_is_bounded() {
        let mut h = HandModelSpec::scripted(vec![
            HandWaypoint {
                t: 0.0,
                position: [0.0; 3],
                roll: 0.0,
            },
            HandWaypoint {
                t: 1.0,
                position: [1.0, 0.0, 0.0],
                roll: 0.0,
            },
        ]);
        assert!(h.validate().is_err());
        h.max_speed = 1.0;
        assert!(h.validate().is_ok());
    }
}
