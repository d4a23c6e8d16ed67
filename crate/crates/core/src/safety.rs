//! Four-mode haptic safety state machine.
//!
//! Mode 1 is free operation, Mode 2 buzzes one wrist motor inside the avoidance
//! region, Mode 3 buzzes both and requests free drive inside the critical ring,
//! and Mode 4 (marker lost) does the same regardless of distance. Leaving
//! Modes 3/4 follows the same `d_ACT`/`d_DCT` latch as the controller.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::apf::{fdcm_update, ControllerParams, FdcmState};
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SafetyMode {
    Mode1,
    Mode2,
    Mode3,
    Mode4,
}

impl SafetyMode {
    pub fn number(self) -> u8 {
        match self {
            SafetyMode::Mode1 => 1,
            SafetyMode::Mode2 => 2,
            SafetyMode::Mode3 => 3,
            SafetyMode::Mode4 => 4,
        }
    }

    pub fn is_critical(self) -> bool {
        matches!(self, SafetyMode::Mode3 | SafetyMode::Mode4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotorSide {
    Left,
    Right,
}

/// Which motor Mode 2 drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode2Motor {
    /// The side of the wrist facing the robot TCP.
    #[default]
    Facing,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyParams {
    /// Time a new Mode 1/2 indication must persist before it is committed, s.
    pub dwell: f64,
    pub mode2_motor: Mode2Motor,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            dwell: 0.1,
            mode2_motor: Mode2Motor::Facing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetySnapshot {
    pub mode: SafetyMode,
    pub vib_left: bool,
    pub vib_right: bool,
    pub fdcm_requested: bool,
    pub d_ro: f64,
    pub visible: bool,
    pub timestamp: f64,
}

impl SafetySnapshot {
    fn with_mode(mode: SafetyMode, side: MotorSide, d_ro: f64, visible: bool, timestamp: f64) -> Self {
        let (vib_left, vib_right) = match mode {
            SafetyMode::Mode1 => (false, false),
            SafetyMode::Mode2 => (side == MotorSide::Left, side == MotorSide::Right),
            SafetyMode::Mode3 | SafetyMode::Mode4 => (true, true),
        };
        Self {
            mode,
            vib_left,
            vib_right,
            fdcm_requested: mode.is_critical(),
            d_ro,
            visible,
            timestamp,
        }
    }

    /// Snapshot for a run with no tracked hand.
    pub fn idle(timestamp: f64) -> Self {
        Self::with_mode(SafetyMode::Mode1, MotorSide::Left, f64::INFINITY, true, timestamp)
    }

    pub fn vibrating(&self) -> bool {
        self.vib_left || self.vib_right
    }

    /// Mode/vibration consistency.
    pub fn is_consistent(&self) -> bool {
        let motors = self.vib_left as u8 + self.vib_right as u8;
        let vib_ok = match self.mode {
            SafetyMode::Mode1 => motors == 0,
            SafetyMode::Mode2 => motors == 1,
            SafetyMode::Mode3 | SafetyMode::Mode4 => motors == 2,
        };
        vib_ok && (self.fdcm_requested == self.mode.is_critical())
    }
}

/// Stateless mode from distance and visibility; invisibility dominates.
pub fn select_mode(
    d_ro: f64,
    visible: bool,
    params: &ControllerParams,
    side: MotorSide,
    timestamp: f64,
) -> SafetySnapshot {
    let mode = if !visible {
        SafetyMode::Mode4
    } else if d_ro < params.d_act {
        SafetyMode::Mode3
    } else if d_ro <= params.d_at {
        SafetyMode::Mode2
    } else {
        SafetyMode::Mode1
    };
    SafetySnapshot::with_mode(mode, side, d_ro, visible, timestamp)
}

/// Motor on the side of the wrist that faces the TCP. The forearm frame has
/// +y toward the wearer's left motor.
pub fn facing_side(forearm: &Transform, hand: &Vector3<f64>, tcp: &Vector3<f64>) -> MotorSide {
    let left = forearm.rotation * Vector3::y();
    if (tcp - hand).dot(&left) >= 0.0 {
        MotorSide::Left
    } else {
        MotorSide::Right
    }
}

/// Caller-threaded debounce history: the committed output and the mode the
/// raw indication has been holding since `pending_since`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebounceState {
    pub committed: SafetySnapshot,
    pub pending: Option<(SafetyMode, f64)>,
}

impl DebounceState {
    pub fn new(initial: SafetySnapshot) -> Self {
        Self {
            committed: initial,
            pending: None,
        }
    }
}

/// Commits a Mode 1/2 change only after the candidate has held for `dwell`
/// seconds. Escalations into Mode 3/4 and releases out of them commit on the
/// same step. While a change is pending the committed mode (and its motor
/// side) is kept, with the candidate's distance and visibility.
pub fn boundary_debounce(
    state: &DebounceState,
    candidate: SafetySnapshot,
    dwell: f64,
) -> (DebounceState, SafetySnapshot) {
    let current = state.committed.mode;
    let immediate = candidate.mode.is_critical() || current.is_critical() || candidate.mode == current;
    if immediate {
        let out = if candidate.mode == current && current == SafetyMode::Mode2 {
            // keep the buzzing motor stable while the hand stays in Mode 2
            SafetySnapshot {
                vib_left: state.committed.vib_left,
                vib_right: state.committed.vib_right,
                ..candidate
            }
        } else {
            candidate
        };
        return (
            DebounceState {
                committed: out,
                pending: None,
            },
            out,
        );
    }
    let since = match state.pending {
        Some((mode, since)) if mode == candidate.mode => since,
        _ => candidate.timestamp,
    };
    if candidate.timestamp - since >= dwell - 1e-9 {
        return (
            DebounceState {
                committed: candidate,
                pending: None,
            },
            candidate,
        );
    }
    let held = SafetySnapshot {
        d_ro: candidate.d_ro,
        visible: candidate.visible,
        timestamp: candidate.timestamp,
        ..state.committed
    };
    (
        DebounceState {
            committed: held,
            pending: Some((candidate.mode, since)),
        },
        held,
    )
}

/// Stateful wrapper: latch, raw mode, debounce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMonitor {
    pub params: SafetyParams,
    pub latch: FdcmState,
    pub debounce: DebounceState,
}

impl SafetyMonitor {
    pub fn new(params: SafetyParams) -> Self {
        Self {
            params,
            latch: FdcmState::default(),
            debounce: DebounceState::new(SafetySnapshot::idle(0.0)),
        }
    }

    /// One control tick. `facing` is the side toward the TCP, used when Mode 2
    /// follows the TCP.
    pub fn update(
        &mut self,
        d_ro: f64,
        visible: bool,
        controller: &ControllerParams,
        facing: MotorSide,
        timestamp: f64,
    ) -> SafetySnapshot {
        let side = match self.params.mode2_motor {
            Mode2Motor::Facing => facing,
            Mode2Motor::Left => MotorSide::Left,
            Mode2Motor::Right => MotorSide::Right,
        };
        self.latch = fdcm_update(self.latch, d_ro, visible, controller);
        let mut raw = select_mode(d_ro, visible, controller, side, timestamp);
        if self.latch.active && !raw.mode.is_critical() {
            // visible again but still inside the release band
            raw = SafetySnapshot::with_mode(SafetyMode::Mode3, side, d_ro, visible, timestamp);
        }
        let (state, out) = boundary_debounce(&self.debounce, raw, self.params.dwell);
        self.debounce = state;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ControllerParams {
        ControllerParams::default()
    }

    #[test]
    fn distance_examples() {
        let s = select_mode(0.40, true, &p(), MotorSide::Left, 0.0);
        assert_eq!(s.mode, SafetyMode::Mode1);
        assert!(!s.vibrating());
        let s = select_mode(0.20, true, &p(), MotorSide::Right, 0.0);
        assert_eq!(s.mode, SafetyMode::Mode2);
        assert_eq!((s.vib_left, s.vib_right), (false, true));
        let s = select_mode(0.05, true, &p(), MotorSide::Left, 0.0);
        assert_eq!(s.mode, SafetyMode::Mode3);
        let s = select_mode(0.5, false, &p(), MotorSide::Left, 0.0);
        assert_eq!(s.mode, SafetyMode::Mode4);
        assert!(s.vib_left && s.vib_right && s.fdcm_requested);
    }

    #[test]
    fn facing_side_follows_tcp() {
        let forearm = Transform::identity();
        let hand = Vector3::zeros();
        assert_eq!(facing_side(&forearm, &hand, &Vector3::new(0.0, 0.2, 0.0)), MotorSide::Left);
        assert_eq!(facing_side(&forearm, &hand, &Vector3::new(0.0, -0.2, 0.0)), MotorSide::Right);
    }

    #[test]
    fn fixed_mode2_motor() {
        let mut m = SafetyMonitor::new(SafetyParams {
            dwell: 0.0,
            mode2_motor: Mode2Motor::Right,
        });
        let s = m.update(0.2, true, &p(), MotorSide::Left, 0.0);
        assert_eq!((s.vib_left, s.vib_right), (false, true));
    }

    #[test]
    fn latched_but_visible_stays_mode3() {
        let mut m = SafetyMonitor::new(SafetyParams::default());
        assert_eq!(m.update(0.05, true, &p(), MotorSide::Left, 0.0).mode, SafetyMode::Mode3);
        assert_eq!(m.update(0.12, true, &p(), MotorSide::Left, 0.01).mode, SafetyMode::Mode3);
        assert_eq!(m.update(0.16, true, &p(), MotorSide::Left, 0.02).mode, SafetyMode::Mode2);
    }

    #[test]
    fn mode4_releases_only_above_release_distance() {
        let mut m = SafetyMonitor::new(SafetyParams::default());
        assert_eq!(m.update(0.5, false, &p(), MotorSide::Left, 0.0).mode, SafetyMode::Mode4);
        assert_eq!(m.update(0.5, true, &p(), MotorSide::Left, 0.01).mode, SafetyMode::Mode1);
        assert_eq!(m.update(0.5, false, &p(), MotorSide::Left, 0.02).mode, SafetyMode::Mode4);
        assert_eq!(m.update(0.12, true, &p(), MotorSide::Left, 0.03).mode, SafetyMode::Mode3);
    }
}
