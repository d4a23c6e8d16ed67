//! Behavior-tree collision avoidance controller.
//!
//! Three branches, picked from the TCP–obstacle distance `d_RO`:
//!
//! * **no avoidance** (`d_RO > d_AT`): the goal-seeking position controller
//!   `v_PC = ẋ_G + k_PC1·tanh(k_PC2·e)` alone;
//! * **avoidance** (`d_ACT ≤ d_RO ≤ d_AT`): `v_PC` blended with a repulsive
//!   velocity, `v = v_PC·(1 − w) + v_rep·w` with `w = exp(−τ·d_RO)`. The
//!   repulsive term depends on whether the obstacle lies ahead of the TCP
//!   (type 1) or not (type 2);
//! * **free drive** (FDCM): the robot is stopped. Entered below `d_ACT` or when
//!   the tracked marker is lost, left only once the marker is visible and
//!   `d_RO > d_DCT`.
//!
//! Every TCP velocity is converted to joint rates by damped least squares.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{
    self, ArmModel, JointVector, KinematicsError, RobotState, TaskSpace, NUM_JOINTS,
};

/// Below this TCP speed the obstacle is classified as type 1.
pub const STATIONARY_SPEED: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("obstacle coincides with the TCP; repulsive potential is singular")]
    CoincidentObstacle,
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Gains and distance thresholds. Lengths in metres, speeds in m/s, angles in
/// radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    /// Saturation speed of the position controller.
    pub k_pc1: f64,
    /// Error scaling inside the tanh, 1/m.
    pub k_pc2: f64,
    /// Space-null attenuation constant, 1/m.
    pub tau: f64,
    /// Obstacle type threshold on the TCP-velocity/obstacle-direction angle.
    pub theta_obs: f64,
    /// Avoidance threshold distance.
    pub d_at: f64,
    /// Free-drive activation distance.
    pub d_act: f64,
    /// Free-drive deactivation distance.
    pub d_dct: f64,
    /// TCP speed cap applied to the final command.
    pub v_max: f64,
    /// Magnitude of the repulsive velocities.
    pub rep_gain: f64,
    /// Damping of the least-squares inversion.
    pub damping: f64,
    pub task_space: TaskSpace,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            k_pc1: 0.2,
            k_pc2: 5.0,
            tau: 12.0,
            theta_obs: 70f64.to_radians(),
            d_at: 0.30,
            d_act: 0.10,
            d_dct: 0.15,
            v_max: 0.2,
            rep_gain: 0.5,
            damping: kinematics::DEFAULT_DAMPING,
            task_space: TaskSpace::Full,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |msg: &str| Err(ControllerError::InvalidParams(msg.to_string()));
        let all = [
            self.k_pc1,
            self.k_pc2,
            self.tau,
            self.theta_obs,
            self.d_at,
            self.d_act,
            self.d_dct,
            self.v_max,
            self.rep_gain,
            self.damping,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(0.0 < self.d_act && self.d_act < self.d_dct && self.d_dct <= self.d_at) {
            return bad("distances must satisfy 0 < d_act < d_dct <= d_at");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.theta_obs > 0.0 && self.theta_obs < PI) {
            return bad("theta_obs must lie in (0, pi)");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        if self.k_pc1 < 0.0 || self.k_pc2 < 0.0 || self.rep_gain < 0.0 || self.damping < 0.0 {
            return bad("gains and damping must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GoalSpec {
    pub position: Vector3<f64>,
    #[serde(default)]
    pub velocity: Vector3<f64>,
}

impl GoalSpec {
    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
        }
    }
}

/// Latest knowledge of the tracked hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub visible: bool,
    /// Seconds since the position was last observed.
    pub age: f64,
}

impl ObstacleState {
    pub fn visible_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            visible: true,
            age: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlCase {
    NoAvoidance,
    AvoidType1,
    AvoidType2,
    Fdcm,
}

impl ControlCase {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlCase::NoAvoidance => "no_avoidance",
            ControlCase::AvoidType1 => "avoid_type1",
            ControlCase::AvoidType2 => "avoid_type2",
            ControlCase::Fdcm => "fdcm",
        }
    }

    pub fn is_avoiding(self) -> bool {
        matches!(self, ControlCase::AvoidType1 | ControlCase::AvoidType2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstacleType {
    /// Ahead of the TCP: collision imminent if the motion continues.
    Type1,
    /// Beside or behind the TCP.
    Type2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub kind: ObstacleType,
    pub theta_c: f64,
    /// TCP speed was below [`STATIONARY_SPEED`]; `theta_c` is reported as 0.
    pub stationary_tcp: bool,
}

/// Free-drive latch threaded through successive controller steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FdcmState {
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub case: ControlCase,
    /// TCP–obstacle distance; infinite when no obstacle is tracked.
    pub d_ro: f64,
    /// Angle between TCP velocity and the TCP→obstacle vector; NaN without an
    /// obstacle.
    pub theta_c: f64,
    pub v_pc: Vector3<f64>,
    pub tcp_velocity_cmd: Vector3<f64>,
    pub qdot_cmd: JointVector,
    pub blend_weight: f64,
    pub fdcm: FdcmState,
    pub stationary_tcp: bool,
    pub coincident: bool,
}

fn unit_or_zero(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 1e-12 {
        v / n
    } else {
        Vector3::zeros()
    }
}

/// Scales `v` down to `cap` if it is longer, keeping its direction.
pub fn cap_speed(v: Vector3<f64>, cap: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > cap {
        v * (cap / n)
    } else {
        v
    }
}

fn to_twist(v: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(v.x, v.y, v.z, 0.0, 0.0, 0.0)
}

/// Goal-seeking TCP velocity (speed capped) and the joint rates realizing it.
pub fn position_controller(
    params: &ControllerParams,
    x_r: &Vector3<f64>,
    goal: &GoalSpec,
    jac: &Matrix6<f64>,
    rate_caps: &[f64; NUM_JOINTS],
) -> Result<(Vector3<f64>, JointVector), ControllerError> {
    let v_pc = position_velocity(params, x_r, goal);
    let qdot = kinematics::solve_with_jacobian(
        jac,
        rate_caps,
        &to_twist(&v_pc),
        params.damping,
        params.task_space,
    )?;
    Ok((v_pc, qdot))
}

fn position_velocity(params: &ControllerParams, x_r: &Vector3<f64>, goal: &GoalSpec) -> Vector3<f64> {
    let e = goal.position - x_r;
    let v = goal.velocity + e.map(|c| params.k_pc1 * (params.k_pc2 * c).tanh());
    cap_speed(v, params.v_max)
}

/// Obstacle type from the angle between the TCP velocity and `x_O − x_R`.
/// The boundary `theta_c == theta_obs` counts as type 1.
pub fn classify_obstacle(
    v_tcp: &Vector3<f64>,
    x_r: &Vector3<f64>,
    x_o: &Vector3<f64>,
    theta_obs: f64,
) -> Classification {
    let speed = v_tcp.norm();
    let to_obstacle = x_o - x_r;
    let dist = to_obstacle.norm();
    if speed < STATIONARY_SPEED || dist == 0.0 {
        return Classification {
            kind: ObstacleType::Type1,
            theta_c: 0.0,
            stationary_tcp: speed < STATIONARY_SPEED,
        };
    }
    let cos = (v_tcp.dot(&to_obstacle) / (speed * dist)).clamp(-1.0, 1.0);
    let theta_c = cos.acos();
    let kind = if theta_c <= theta_obs {
        ObstacleType::Type1
    } else {
        ObstacleType::Type2
    };
    Classification {
        kind,
        theta_c,
        stationary_tcp: false,
    }
}

/// Type 1 repulsion: the normalized sum of a normal escape direction, the
/// tangential part of the current TCP velocity and the goal direction
/// projected off the obstacle axis, scaled to `rep_gain`.
pub fn repulsive_velocity_type1(
    params: &ControllerParams,
    x_r: &Vector3<f64>,
    x_o: &Vector3<f64>,
    x_g: &Vector3<f64>,
    v_tcp: &Vector3<f64>,
) -> Result<Vector3<f64>, ControllerError> {
    let axis = x_o - x_r;
    let d = axis.norm();
    if d == 0.0 {
        return Err(ControllerError::CoincidentObstacle);
    }
    let axis = axis / d;
    let normal = -axis;
    let tangential = unit_or_zero(v_tcp - axis * v_tcp.dot(&axis));
    let to_goal = unit_or_zero(x_g - x_r);
    let goal_bias = unit_or_zero(to_goal - axis * to_goal.dot(&axis));
    // normal is orthogonal to both other terms, so the sum has norm >= 1
    let dir = (normal + tangential + goal_bias).normalize();
    Ok(dir * params.rep_gain)
}

/// Type 2 repulsion: straight away from the obstacle at `rep_gain`.
pub fn repulsive_velocity_type2(
    params: &ControllerParams,
    x_r: &Vector3<f64>,
    x_o: &Vector3<f64>,
) -> Result<Vector3<f64>, ControllerError> {
    let away = x_r - x_o;
    let d = away.norm();
    if d == 0.0 {
        return Err(ControllerError::CoincidentObstacle);
    }
    Ok(away * (params.rep_gain / d))
}

/// `v_PC·(1 − w) + v_rep·w` with `w = exp(−τ·d_RO)`; returns the command and `w`.
pub fn blend(v_pc: &Vector3<f64>, v_rep: &Vector3<f64>, tau: f64, d_ro: f64) -> (Vector3<f64>, f64) {
    let w = (-tau * d_ro).exp();
    (v_pc * (1.0 - w) + v_rep * w, w)
}

/// Free-drive latch: on below `d_act` or when the marker is lost; off only
/// when visible again with `d_ro > d_dct`.
pub fn fdcm_update(state: FdcmState, d_ro: f64, visible: bool, params: &ControllerParams) -> FdcmState {
    let active = if !visible || d_ro < params.d_act {
        true
    } else if state.active {
        d_ro <= params.d_dct
    } else {
        false
    };
    FdcmState { active }
}

/// One tick of the behavior tree. `obstacle = None` means no hand is tracked
/// at all (as opposed to a tracked hand whose marker is currently hidden).
pub fn step(
    params: &ControllerParams,
    model: &ArmModel,
    robot: &RobotState,
    goal: &GoalSpec,
    obstacle: Option<&ObstacleState>,
    fdcm: FdcmState,
) -> Result<ControlDecision, ControllerError> {
    let x_r = robot.position();
    let v_tcp = robot.tcp_velocity;

    let (d_ro, visible) = match obstacle {
        Some(o) => ((o.position - x_r).norm(), o.visible),
        None => (f64::INFINITY, true),
    };
    let coincident = obstacle.is_some() && d_ro == 0.0;
    let mut fdcm = match obstacle {
        Some(_) => fdcm_update(fdcm, d_ro, visible, params),
        None => FdcmState::default(),
    };
    if coincident {
        fdcm.active = true;
    }

    let classification =
        obstacle.map(|o| classify_obstacle(&v_tcp, &x_r, &o.position, params.theta_obs));
    let theta_c = classification.map_or(f64::NAN, |c| c.theta_c);
    let stationary_tcp = classification.map_or(false, |c| c.stationary_tcp);

    let v_pc = position_velocity(params, &x_r, goal);
    if fdcm.active {
        return Ok(ControlDecision {
            case: ControlCase::Fdcm,
            d_ro,
            theta_c,
            v_pc,
            tcp_velocity_cmd: Vector3::zeros(),
            qdot_cmd: JointVector::zeros(),
            blend_weight: 0.0,
            fdcm,
            stationary_tcp,
            coincident,
        });
    }

    let (case, v_cmd, w) = match (obstacle, classification) {
        (Some(o), Some(c)) if d_ro <= params.d_at => {
            let v_rep = match c.kind {
                ObstacleType::Type1 => {
                    repulsive_velocity_type1(params, &x_r, &o.position, &goal.position, &v_tcp)?
                }
                ObstacleType::Type2 => repulsive_velocity_type2(params, &x_r, &o.position)?,
            };
            let (v, w) = blend(&v_pc, &v_rep, params.tau, d_ro);
            let case = match c.kind {
                ObstacleType::Type1 => ControlCase::AvoidType1,
                ObstacleType::Type2 => ControlCase::AvoidType2,
            };
            (case, cap_speed(v, params.v_max), w)
        }
        _ => (ControlCase::NoAvoidance, v_pc, 0.0),
    };

    let jac = kinematics::jacobian(model, &robot.joints.q)?;
    let qdot = kinematics::solve_with_jacobian(
        &jac,
        &model.rate_caps,
        &to_twist(&v_cmd),
        params.damping,
        params.task_space,
    )?;

    Ok(ControlDecision {
        case,
        d_ro,
        theta_c,
        v_pc,
        tcp_velocity_cmd: v_cmd,
        qdot_cmd: qdot,
        blend_weight: w,
        fdcm,
        stationary_tcp,
        coincident,
    })
}
