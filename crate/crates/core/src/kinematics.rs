//! Forward kinematics, geometric Jacobian and damped velocity-level inversion
//! for a 6-DOF serial arm described by standard Denavit-Hartenberg rows.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{PoseRepr, Transform};

pub type JointVector = Vector6<f64>;

pub const NUM_JOINTS: usize = 6;

/// Damping used by the controller when none is configured.
pub const DEFAULT_DAMPING: f64 = 1e-3;

const UR10_FILE: &str = include_str!("../../../config/ur10.toml");

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("joint {joint} at {value} rad is outside its limits [{lower}, {upper}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("damping must be non-negative, got {0}")]
    NegativeDamping(f64),
    #[error("invalid arm description: {0}")]
    InvalidModel(String),
    #[error("cannot read arm file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse arm file {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

/// One standard DH row: `Rz(theta + theta_offset) Tz(d) Tx(a) Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub fn new(a: f64, d: f64, alpha: f64, theta_offset: f64) -> Self {
        Self {
            a,
            d,
            alpha,
            theta_offset,
        }
    }

    /// Transform from the previous link frame to this one at joint angle `q`.
    pub fn transform(&self, q: f64) -> Transform {
        let theta = q + self.theta_offset;
        let (st, ct) = theta.sin_cos();
        let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), theta)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.alpha);
        Transform::new(rotation, Vector3::new(self.a * ct, self.a * st, self.d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimit {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.lower && q <= self.upper
    }
}

/// Kinematic description of a 6-DOF revolute arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub name: String,
    pub dh_rows: [DhRow; NUM_JOINTS],
    pub base_pose: Transform,
    pub joint_limits: [JointLimit; NUM_JOINTS],
    pub rate_caps: [f64; NUM_JOINTS],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArmFile {
    #[serde(default)]
    name: String,
    #[serde(default = "identity_pose")]
    base: PoseRepr,
    joint: Vec<JointEntry>,
}

fn identity_pose() -> PoseRepr {
    PoseRepr {
        xyz: [0.0; 3],
        rpy: [0.0; 3],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointEntry {
    #[serde(default)]
    name: String,
    #[serde(flatten)]
    dh: DhRow,
    lower: f64,
    upper: f64,
    max_rate: f64,
}

impl ArmModel {
    /// The bundled UR10 description.
    pub fn ur10() -> Self {
        Self::from_toml_str(UR10_FILE).expect("bundled UR10 description is valid")
    }

    pub fn new(
        name: impl Into<String>,
        dh_rows: [DhRow; NUM_JOINTS],
        base_pose: Transform,
        joint_limits: [JointLimit; NUM_JOINTS],
        rate_caps: [f64; NUM_JOINTS],
    ) -> Result<Self, KinematicsError> {
        let model = Self {
            name: name.into(),
            dh_rows,
            base_pose,
            joint_limits,
            rate_caps,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| KinematicsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ArmFile = toml::from_str(&text).map_err(|source| KinematicsError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_file(file)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let file: ArmFile =
            toml::from_str(text).map_err(|e| KinematicsError::InvalidModel(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: ArmFile) -> Result<Self, KinematicsError> {
        if file.joint.len() != NUM_JOINTS {
            return Err(KinematicsError::InvalidModel(format!(
                "expected {NUM_JOINTS} joints, found {}",
                file.joint.len()
            )));
        }
        let dh_rows = std::array::from_fn(|i| file.joint[i].dh);
        let joint_limits = std::array::from_fn(|i| JointLimit {
            lower: file.joint[i].lower,
            upper: file.joint[i].upper,
        });
        let rate_caps = std::array::from_fn(|i| file.joint[i].max_rate);
        Self::new(file.name, dh_rows, file.base.into(), joint_limits, rate_caps)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ArmFile {
            name: self.name.clone(),
            base: self.base_pose.into(),
            joint: (0..NUM_JOINTS)
                .map(|i| JointEntry {
                    name: format!("joint{}", i + 1),
                    dh: self.dh_rows[i],
                    lower: self.joint_limits[i].lower,
                    upper: self.joint_limits[i].upper,
                    max_rate: self.rate_caps[i],
                })
                .collect(),
        };
        toml::to_string(&file).expect("arm description serializes")
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (i, row) in self.dh_rows.iter().enumerate() {
            if ![row.a, row.d, row.alpha, row.theta_offset]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {} has a non-finite DH parameter",
                    i + 1
                )));
            }
        }
        for (i, lim) in self.joint_limits.iter().enumerate() {
            if !(lim.lower < lim.upper) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {} limits must satisfy lower < upper",
                    i + 1
                )));
            }
        }
        for (i, cap) in self.rate_caps.iter().enumerate() {
            if !(*cap > 0.0 && cap.is_finite()) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {} rate cap must be positive",
                    i + 1
                )));
            }
        }
        if !self.base_pose.is_valid(1e-9) {
            return Err(KinematicsError::InvalidModel("base pose is not a rigid transform".into()));
        }
        Ok(())
    }

    pub fn check_limits(&self, q: &JointVector) -> Result<(), KinematicsError> {
        for (i, lim) in self.joint_limits.iter().enumerate() {
            if !q[i].is_finite() {
                return Err(KinematicsError::NonFinite("joint angles"));
            }
            if !lim.contains(q[i]) {
                return Err(KinematicsError::JointLimit {
                    joint: i + 1,
                    value: q[i],
                    lower: lim.lower,
                    upper: lim.upper,
                });
            }
        }
        Ok(())
    }

    /// Base frame followed by each link frame: `frames[i]` is the pose of frame
    /// `i` in the world (`frames[6]` is the TCP).
    pub fn link_frames(&self, q: &JointVector) -> Result<[Transform; NUM_JOINTS + 1], KinematicsError> {
        self.check_limits(q)?;
        let mut frames = [self.base_pose; NUM_JOINTS + 1];
        for i in 0..NUM_JOINTS {
            frames[i + 1] = frames[i].compose(&self.dh_rows[i].transform(q[i]));
        }
        Ok(frames)
    }
}

/// TCP pose in the world frame.
pub fn forward_kinematics(model: &ArmModel, q: &JointVector) -> Result<Transform, KinematicsError> {
    Ok(model.link_frames(q)?[NUM_JOINTS])
}

/// Geometric Jacobian mapping joint rates to the TCP twist `[v; ω]`, both
/// expressed in the world frame.
pub fn jacobian(model: &ArmModel, q: &JointVector) -> Result<Matrix6<f64>, KinematicsError> {
    let frames = model.link_frames(q)?;
    let p_tcp = frames[NUM_JOINTS].translation;
    let mut j = Matrix6::zeros();
    for i in 0..NUM_JOINTS {
        let z = frames[i].rotation * Vector3::z();
        let lin = z.cross(&(p_tcp - frames[i].translation));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    Ok(j)
}

/// Which rows of the twist the inversion tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpace {
    /// Linear and angular velocity (angular commanded as given, usually zero).
    #[default]
    Full,
    /// Linear velocity only; orientation is left free.
    Position,
}

impl TaskSpace {
    fn rows(self) -> usize {
        match self {
            TaskSpace::Full => 6,
            TaskSpace::Position => 3,
        }
    }
}

/// Minimizer of `‖J·qdot − v‖² + λ²‖qdot‖²`.
///
/// With `damping == 0` and a square Jacobian this is an exact LU solve. For
/// positive damping the normal form `Jᵀ(JJᵀ + λ²I)⁻¹v` is solved by Cholesky.
/// Rank-deficient undamped systems fall back to the pseudo-inverse.
pub fn damped_least_squares(j: &DMatrix<f64>, v: &DVector<f64>, damping: f64) -> DVector<f64> {
    if damping == 0.0 && j.is_square() {
        if let Some(x) = j.clone().lu().solve(v) {
            if x.iter().all(|c| c.is_finite()) {
                return x;
            }
        }
    } else {
        let m = j.nrows();
        let a = j * j.transpose() + DMatrix::identity(m, m) * (damping * damping);
        if let Some(chol) = a.cholesky() {
            return j.transpose() * chol.solve(v);
        }
    }
    j.clone()
        .svd(true, true)
        .solve(v, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(j.ncols()))
}

/// Uniformly scales `qdot` so that no joint exceeds its cap. Returns the scaled
/// vector and the factor applied (1 when already within caps).
pub fn clamp_to_rate_caps(qdot: &JointVector, caps: &[f64; NUM_JOINTS]) -> (JointVector, f64) {
    let mut scale: f64 = 1.0;
    for i in 0..NUM_JOINTS {
        let mag = qdot[i].abs();
        if mag > caps[i] {
            scale = scale.min(caps[i] / mag);
        }
    }
    (qdot * scale, scale)
}

/// Joint rates for a TCP twist given an already evaluated Jacobian.
pub fn solve_with_jacobian(
    jac: &Matrix6<f64>,
    rate_caps: &[f64; NUM_JOINTS],
    tcp_velocity: &Vector6<f64>,
    damping: f64,
    task: TaskSpace,
) -> Result<JointVector, KinematicsError> {
    if !(damping >= 0.0) {
        return Err(KinematicsError::NegativeDamping(damping));
    }
    if !tcp_velocity.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::NonFinite("tcp velocity"));
    }
    if !jac.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::NonFinite("jacobian"));
    }
    if tcp_velocity.iter().all(|v| *v == 0.0) {
        return Ok(JointVector::zeros());
    }
    let rows = task.rows();
    let j = DMatrix::from_fn(rows, NUM_JOINTS, |r, c| jac[(r, c)]);
    let v = DVector::from_fn(rows, |r, _| tcp_velocity[r]);
    let x = damped_least_squares(&j, &v, damping);
    let qdot = JointVector::from_iterator(x.iter().copied());
    Ok(clamp_to_rate_caps(&qdot, rate_caps).0)
}

/// Damped least-squares joint rates realizing `tcp_velocity` (`[v; ω]`) at `q`,
/// uniformly scaled to respect the model's rate caps.
pub fn solve_joint_rates(
    model: &ArmModel,
    q: &JointVector,
    tcp_velocity: &Vector6<f64>,
    damping: f64,
) -> Result<JointVector, KinematicsError> {
    solve_joint_rates_in(model, q, tcp_velocity, damping, TaskSpace::Full)
}

pub fn solve_joint_rates_in(
    model: &ArmModel,
    q: &JointVector,
    tcp_velocity: &Vector6<f64>,
    damping: f64,
    task: TaskSpace,
) -> Result<JointVector, KinematicsError> {
    if !q.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::NonFinite("joint angles"));
    }
    let j = jacobian(model, q)?;
    solve_with_jacobian(&j, &model.rate_caps, tcp_velocity, damping, task)
}

/// Joint positions and rates at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: JointVector,
    pub qdot: JointVector,
    pub timestamp: f64,
    /// Joints pinned at a limit by the most recent integration step.
    pub at_limit: [bool; NUM_JOINTS],
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            q,
            qdot: JointVector::zeros(),
            timestamp: 0.0,
            at_limit: [false; NUM_JOINTS],
        }
    }
}

/// Explicit Euler step `q' = q + qdot·dt`, clamped to the joint limits.
pub fn integrate(model: &ArmModel, state: &JointState, qdot: &JointVector, dt: f64) -> JointState {
    debug_assert!(dt > 0.0);
    let mut q = state.q + qdot * dt;
    let mut at_limit = [false; NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        let lim = model.joint_limits[i];
        if q[i] > lim.upper {
            q[i] = lim.upper;
            at_limit[i] = true;
        } else if q[i] < lim.lower {
            q[i] = lim.lower;
            at_limit[i] = true;
        }
    }
    JointState {
        q,
        qdot: *qdot,
        timestamp: state.timestamp + dt,
        at_limit,
    }
}

/// Joint state plus the derived TCP pose and linear velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub joints: JointState,
    pub tcp: Transform,
    pub tcp_velocity: Vector3<f64>,
}

impl RobotState {
    pub fn from_joints(model: &ArmModel, joints: JointState) -> Result<Self, KinematicsError> {
        let j = jacobian(model, &joints.q)?;
        let tcp = forward_kinematics(model, &joints.q)?;
        let twist = j * joints.qdot;
        Ok(Self {
            joints,
            tcp,
            tcp_velocity: twist.fixed_rows::<3>(0).into_owned(),
        })
    }

    pub fn position(&self) -> Vector3<f64> {
        self.tcp.translation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn single_link() -> ArmModel {
        let mut rows = [DhRow::new(0.0, 0.0, 0.0, 0.0); 6];
        rows[0].a = 1.0;
        ArmModel::new(
            "single",
            rows,
            Transform::identity(),
            [JointLimit {
                lower: -2.0 * PI,
                upper: 2.0 * PI,
            }; 6],
            [1.0; 6],
        )
        .unwrap()
    }

    #[test]
    fn single_link_fk() {
        let m = single_link();
        let p = forward_kinematics(&m, &JointVector::zeros()).unwrap().translation;
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        let mut q = JointVector::zeros();
        q[0] = FRAC_PI_2;
        let p = forward_kinematics(&m, &q).unwrap().translation;
        assert_relative_eq!(p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn single_link_jacobian_is_tangent() {
        let j = jacobian(&single_link(), &JointVector::zeros()).unwrap();
        assert_relative_eq!(
            j.fixed_view::<3, 1>(0, 0).into_owned(),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn joint_limit_violation_names_joint() {
        let m = ArmModel::ur10();
        let mut q = JointVector::zeros();
        q[3] = 7.0;
        match forward_kinematics(&m, &q) {
            Err(KinematicsError::JointLimit { joint, .. }) => assert_eq!(joint, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ur10_file_round_trips() {
        let m = ArmModel::ur10();
        let again = ArmModel::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(m.dh_rows, again.dh_rows);
        assert_eq!(m.rate_caps, again.rate_caps);
    }

    #[test]
    fn rejects_wrong_row_count_and_bad_limits() {
        let text = ArmModel::ur10().to_toml_string();
        let cut = text.rfind("[[joint]]").unwrap();
        assert!(matches!(
            ArmModel::from_toml_str(&text[..cut]),
            Err(KinematicsError::InvalidModel(_))
        ));
        let bad = text.replacen("lower = -6.283185307179586", "lower = 7.0", 1);
        assert!(ArmModel::from_toml_str(&bad).is_err());
    }

    #[test]
    fn zero_velocity_gives_zero_rates() {
        let m = ArmModel::ur10();
        let q = JointVector::new(0.1, -1.2, 1.3, -1.6, -1.5, 0.2);
        for damping in [0.0, 1e-3, 0.5] {
            let qd = solve_joint_rates(&m, &q, &Vector6::zeros(), damping).unwrap();
            assert_eq!(qd, JointVector::zeros());
        }
    }

    #[test]
    fn identity_jacobian_passes_velocity_through() {
        let j = Matrix6::identity();
        let v = Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0);
        let qd = solve_with_jacobian(&j, &[10.0; 6], &v, 0.0, TaskSpace::Full).unwrap();
        assert_eq!(qd, v);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = ArmModel::ur10();
        let q = JointVector::new(0.1, -1.2, 1.3, -1.6, -1.5, 0.2);
        let mut v = Vector6::zeros();
        v[0] = f64::NAN;
        assert!(matches!(
            solve_joint_rates(&m, &q, &v, 0.0),
            Err(KinematicsError::NonFinite(_))
        ));
        v[0] = 0.1;
        assert!(matches!(
            solve_joint_rates(&m, &q, &v, -1.0),
            Err(KinematicsError::NegativeDamping(_))
        ));
    }

    #[test]
    fn rate_cap_scaling_preserves_direction() {
        let qd = JointVector::new(4.0, -1.0, 0.5, 0.0, 0.0, 6.0);
        let (out, s) = clamp_to_rate_caps(&qd, &[2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        assert_relative_eq!(s, 0.5);
        assert_relative_eq!(out, qd * 0.5);
    }

    #[test]
    fn integrate_contract() {
        let m = ArmModel::ur10();
        let s = JointState::at_rest(JointVector::zeros());
        let same = integrate(&m, &s, &JointVector::zeros(), 0.1);
        assert_eq!(same.q, s.q);
        assert_relative_eq!(same.timestamp, 0.1);

        let mut qd = JointVector::zeros();
        qd[0] = 0.1;
        let next = integrate(&m, &s, &qd, 0.1);
        assert_relative_eq!(next.q[0], 0.01, epsilon = 1e-15);
        assert!(!next.at_limit[0]);

        let mut near = JointState::at_rest(JointVector::zeros());
        near.q[1] = 2.0 * PI - 0.001;
        let mut qd = JointVector::zeros();
        qd[1] = 1.0;
        let pinned = integrate(&m, &near, &qd, 0.1);
        assert_eq!(pinned.q[1], 2.0 * PI);
        assert!(pinned.at_limit[1]);
    }

    #[test]
    fn integrate_is_bitwise_deterministic() {
        let m = ArmModel::ur10();
        let s = JointState::at_rest(JointVector::new(0.3, -1.1, 1.2, -1.7, -1.4, 0.5));
        let qd = JointVector::new(0.013, -0.2, 0.07, 0.3, -0.11, 0.9);
        let a = integrate(&m, &s, &qd, 0.01);
        let b = integrate(&m, &s, &qd, 0.01);
        for i in 0..6 {
            assert_eq!(a.q[i].to_bits(), b.q[i].to_bits());
        }
    }
}
