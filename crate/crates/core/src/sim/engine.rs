//! Fixed-step scenario engine.
//!
//! Each control tick runs, in order: hand update, gimbal step, camera
//! observation (held between frames), safety mode selection, behavior-tree
//! step, joint integration and waypoint bookkeeping. A row is logged every
//! `log_dt` and once more when the run ends.

use std::collections::VecDeque;

use nalgebra::Vector3;
use thiserror::Error;

use crate::apf::{self, ControlCase, ControlDecision, ControllerError, FdcmState, GoalSpec, ObstacleState};
use crate::gimbal::{estimate_axis_signs, GimbalController};
use crate::kinematics::{integrate, ArmModel, JointState, KinematicsError, RobotState};
use crate::perception::{hand_position, CameraModel, Tracker};
use crate::safety::{facing_side, SafetyMonitor, SafetySnapshot};
use crate::sim::config::{ConfigError, HandKind, ScenarioConfig};
use crate::sim::hand::{hand_update, HandState};
use crate::sim::trace::{SimTrace, TraceHeader, TraceRow, TraceSummary, SCHEMA_VERSION};
use crate::transform::Transform;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("non-finite state at t = {t} s (step {step}, trace row {row})")]
    NonFinite { step: u64, row: usize, t: f64 },
    #[error("unknown or read-only parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid value {value} for `{name}`: {reason}")]
    InvalidParam { name: String, value: f64, reason: String },
}

/// Parameters adjustable while an interactive engine runs.
pub const LIVE_PARAMS: &[&str] = &["retreat_speed", "v_max", "theta_OBS"];

/// Latest camera frame, held until the next one.
#[derive(Debug, Clone, Copy)]
struct HeldObservation {
    visible: bool,
    estimate: Option<Vector3<f64>>,
    /// True hand point when `estimate` was taken.
    truth_at_estimate: Option<Vector3<f64>>,
    incidence: f64,
    last_frame: Option<u64>,
    last_seen: f64,
}

pub struct Engine {
    cfg: ScenarioConfig,
    model: ArmModel,
    camera: CameraModel,
    tracker: Tracker,
    gimbal: GimbalController,
    robot: RobotState,
    fdcm: FdcmState,
    monitor: SafetyMonitor,
    safety: SafetySnapshot,
    hand: Option<HandState>,
    held: HeldObservation,
    goal_index: usize,
    reached_at: Option<f64>,
    completed_at: Option<f64>,
    step: u64,
    rows: Vec<TraceRow>,
    last_row: Option<TraceRow>,
    commands: VecDeque<Vector3<f64>>,
    loop_waypoints: bool,
    laps: usize,
}

impl Engine {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let model = cfg.arm_model()?;
        let camera = cfg.camera.model();
        let tracker = Tracker::new(camera, cfg.noise.model(cfg.seed));
        let robot = RobotState::from_joints(&model, JointState::at_rest(cfg.initial_q()))?;
        let hand = cfg.hand.as_ref().map(HandState::initial);
        let mut gimbal = GimbalController::new(cfg.gimbal.params);
        if !cfg.gimbal.enabled {
            gimbal.state.motor_angles = cfg.gimbal.static_angles;
        }
        if let (Some(spec), Some(h)) = (&cfg.hand, &hand) {
            gimbal.state.axis_signs = match cfg.gimbal.axis_signs {
                Some(s) => s,
                None => estimate_axis_signs(&h.forearm_pose(spec), &gimbal.params, &gimbal.state, &camera),
            };
        }
        Ok(Self {
            monitor: SafetyMonitor::new(cfg.safety),
            cfg,
            model,
            camera,
            tracker,
            gimbal,
            robot,
            fdcm: FdcmState::default(),
            safety: SafetySnapshot::idle(0.0),
            hand,
            held: HeldObservation {
                visible: false,
                estimate: None,
                truth_at_estimate: None,
                incidence: f64::NAN,
                last_frame: None,
                last_seen: 0.0,
            },
            goal_index: 0,
            reached_at: None,
            completed_at: None,
            step: 0,
            rows: Vec::new(),
            last_row: None,
            commands: VecDeque::new(),
            loop_waypoints: false,
            laps: 0,
        })
    }

    /// Restart the waypoint program instead of finishing (interactive use).
    pub fn set_looping(&mut self, on: bool) {
        self.loop_waypoints = on;
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.control_dt
    }

    pub fn goal_index(&self) -> usize {
        self.goal_index
    }

    pub fn laps(&self) -> usize {
        self.laps
    }

    pub fn is_finished(&self) -> bool {
        self.completed_at.is_some() || self.time() >= self.cfg.duration - 1e-9
    }

    /// Most recent sensed state (the row that would be logged now).
    pub fn last_row(&self) -> Option<&TraceRow> {
        self.last_row.as_ref()
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    /// Queues an interactive hand target; applied at the start of the next tick.
    pub fn push_hand_target(&mut self, target: Vector3<f64>) {
        self.commands.push_back(target);
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), SimError> {
        let invalid = |reason: &str| SimError::InvalidParam {
            name: name.into(),
            value,
            reason: reason.into(),
        };
        if !value.is_finite() {
            return Err(invalid("must be finite"));
        }
        match name {
            "retreat_speed" => {
                let hand = self.cfg.hand.as_mut().ok_or_else(|| invalid("scenario has no hand"))?;
                if value < 0.0 {
                    return Err(invalid("must be non-negative"));
                }
                hand.retreat_speed = value;
            }
            "v_max" => {
                if value <= 0.0 {
                    return Err(invalid("must be positive"));
                }
                self.cfg.controller.v_max = value;
            }
            "theta_OBS" => {
                if !(value > 0.0 && value < std::f64::consts::PI) {
                    return Err(invalid("must lie in (0, pi)"));
                }
                self.cfg.controller.theta_obs = value;
            }
            _ => return Err(SimError::UnknownParam(name.into())),
        }
        Ok(())
    }

    fn goal(&self) -> GoalSpec {
        let i = self.goal_index.min(self.cfg.waypoints.len() - 1);
        GoalSpec::at(Vector3::from(self.cfg.waypoints[i].position))
    }

    /// Hand, gimbal, camera and safety update for the current time; returns
    /// the controller decision and the row describing this instant.
    fn sense_and_decide(&mut self) -> Result<(ControlDecision, TraceRow), SimError> {
        let t = self.time();
        let dt = self.cfg.control_dt;
        let x_r = self.robot.position();

        let mut obstacle = None;
        let mut hand_true = None;
        if let (Some(spec), Some(state)) = (self.cfg.hand.as_ref(), self.hand.as_mut()) {
            if let Some(target) = self.commands.drain(..).last() {
                state.target = Some(target);
            }
            if self.step > 0 {
                *state = hand_update(spec, state, &self.safety, &x_r, t - dt, dt);
            }
            let forearm = state.forearm_pose(spec);
            // a disabled gimbal still reports the marker angles
            let drive = self.cfg.gimbal.enabled && self.held.visible;
            self.gimbal.update(&forearm, &self.camera, drive, dt);
            let marker = self.gimbal.marker_pose(&forearm);
            let offset = Vector3::from(spec.marker_offset);
            let truth = marker.transform_point(&offset);
            hand_true = Some(truth);

            let frame = (t * self.cfg.camera.rate + 1e-9).floor() as u64;
            if self.held.last_frame.map_or(true, |f| frame > f) {
                let obs = self.tracker.observe(&marker, &self.cfg.occluders, t);
                self.held.last_frame = Some(frame);
                self.held.visible = obs.visible;
                self.held.incidence = obs.incidence;
                if let Ok(est) = hand_position(&obs, &offset) {
                    self.held.estimate = Some(est);
                    self.held.truth_at_estimate = Some(truth);
                    self.held.last_seen = t;
                }
            }
            let estimate = self.held.estimate.unwrap_or(Vector3::repeat(f64::NAN));
            let d = (estimate - x_r).norm();
            let side = facing_side(&forearm, &truth, &x_r);
            self.safety = self.monitor.update(d, self.held.visible, &self.cfg.controller, side, t);
            obstacle = Some(ObstacleState {
                position: estimate,
                velocity: Vector3::zeros(),
                visible: self.held.visible,
                age: if self.held.visible { t - self.held.last_seen } else { (t - self.held.last_seen).max(dt) },
            });
        } else {
            self.safety = SafetySnapshot::idle(t);
        }

        let decision = apf::step(
            &self.cfg.controller,
            &self.model,
            &self.robot,
            &self.goal(),
            obstacle.as_ref(),
            self.fdcm,
        )?;

        let nan3 = [f64::NAN; 3];
        let has_hand = self.hand.is_some();
        let row = TraceRow {
            t,
            q: self.robot.joints.q.into(),
            x_r: x_r.into(),
            v_cmd: decision.tcp_velocity_cmd.into(),
            case: decision.case,
            d_ro: decision.d_ro,
            d_true: hand_true.map_or(f64::INFINITY, |h| (h - x_r).norm()),
            theta_c: decision.theta_c,
            blend_weight: decision.blend_weight,
            mode: self.safety.mode.number(),
            vib_left: self.safety.vib_left,
            vib_right: self.safety.vib_right,
            fdcm: decision.case == ControlCase::Fdcm,
            visible: if has_hand { self.held.visible } else { false },
            incidence: if has_hand { self.held.incidence } else { f64::NAN },
            angle_y: if has_hand { self.gimbal.last_angles.angle_y } else { f64::NAN },
            angle_x: if has_hand { self.gimbal.last_angles.angle_x } else { f64::NAN },
            motors: self.gimbal.state.motor_angles,
            hand_true: hand_true.map_or(nan3, Into::into),
            hand_est: self.held.estimate.map_or(nan3, Into::into),
            obs_true: self.held.truth_at_estimate.map_or(nan3, Into::into),
            goal_index: self.goal_index,
        };
        Ok((decision, row))
    }

    fn actuate(&mut self, decision: &ControlDecision) -> Result<(), SimError> {
        let dt = self.cfg.control_dt;
        self.fdcm = decision.fdcm;
        let joints = integrate(&self.model, &self.robot.joints, &decision.qdot_cmd, dt);
        if !joints.q.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite {
                step: self.step,
                row: self.rows.len(),
                t: self.time(),
            });
        }
        self.robot = RobotState::from_joints(&self.model, joints)?;
        self.step += 1;
        let t = self.time();

        if self.completed_at.is_none() {
            let goal = self.goal().position;
            if self.reached_at.is_none() && (goal - self.robot.position()).norm() < self.cfg.goal_tolerance {
                self.reached_at = Some(t);
            }
            if let Some(r) = self.reached_at {
                if t - r >= self.cfg.waypoints[self.goal_index].dwell - 1e-9 {
                    self.reached_at = None;
                    self.goal_index += 1;
                    if self.goal_index == self.cfg.waypoints.len() {
                        if self.loop_waypoints {
                            self.goal_index = 0;
                            self.laps += 1;
                        } else {
                            self.goal_index -= 1;
                            self.completed_at = Some(t);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// One control tick: sense, decide, log when due, integrate.
    pub fn tick(&mut self) -> Result<(), SimError> {
        let (decision, row) = self.sense_and_decide()?;
        if self.step % self.cfg.steps_per_log() as u64 == 0 {
            self.rows.push(row);
        }
        self.last_row = Some(row);
        self.actuate(&decision)
    }

    /// Runs until the program completes or the duration elapses, logging the
    /// final instant as well.
    pub fn run_to_end(mut self) -> Result<SimTrace, SimError> {
        while !self.is_finished() {
            self.tick()?;
        }
        let (_, row) = self.sense_and_decide()?;
        if self.rows.last().map_or(true, |r| r.t < row.t) {
            self.rows.push(row);
        }
        let end_time = self.time();
        let reached = match self.completed_at {
            Some(_) => self.cfg.waypoints.len(),
            None => self.goal_index,
        };
        Ok(SimTrace {
            header: self.header(),
            rows: self.rows,
            summary: TraceSummary {
                completed: self.completed_at.is_some(),
                task_time: self.completed_at.unwrap_or(end_time),
                end_time,
                waypoints_reached: reached,
            },
        })
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            schema_version: SCHEMA_VERSION,
            scenario: self.cfg.name.clone(),
            seed: self.cfg.seed,
            control_dt: self.cfg.control_dt,
            log_dt: self.cfg.log_dt,
            waypoints: self.cfg.waypoints.iter().map(|w| w.position).collect(),
            camera_pose: self.camera.pose_in_base,
            has_hand: self.cfg.hand.is_some(),
        }
    }

    pub fn hand_kind(&self) -> Option<HandKind> {
        self.cfg.hand.as_ref().map(|h| h.kind)
    }

    pub fn forearm_pose(&self) -> Option<Transform> {
        match (&self.cfg.hand, &self.hand) {
            (Some(spec), Some(h)) => Some(h.forearm_pose(spec)),
            _ => None,
        }
    }
}

/// Runs a scenario to completion.
pub fn run(cfg: ScenarioConfig) -> Result<SimTrace, SimError> {
    Engine::new(cfg)?.run_to_end()
}
