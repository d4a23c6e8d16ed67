//! Simulated operator forearm: scripted, haptic-reactive or externally steered.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::safety::SafetySnapshot;
use crate::sim::config::{HandKind, HandModelSpec};
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    /// Forearm origin, base frame.
    pub position: Vector3<f64>,
    /// Forearm roll added to the configured orientation, rad.
    pub roll: f64,
    /// Accumulated retreat away from the scripted reference.
    pub retreat: Vector3<f64>,
    /// Start of the current uninterrupted vibration, if any.
    pub vibrating_since: Option<f64>,
    /// Latest external position command (interactive hands).
    pub target: Option<Vector3<f64>>,
}

impl HandState {
    pub fn initial(spec: &HandModelSpec) -> Self {
        let (position, roll) = scripted_reference(spec, 0.0);
        Self {
            position,
            roll,
            retreat: Vector3::zeros(),
            vibrating_since: None,
            target: None,
        }
    }

    pub fn forearm_pose(&self, spec: &HandModelSpec) -> Transform {
        let [r, p, y] = spec.forearm_rpy;
        Transform::from_xyz_rpy(self.position.into(), [r + self.roll, p, y])
    }
}

/// Piecewise-linear position and roll along the scripted waypoints, held
/// constant before the first and after the last.
pub fn scripted_reference(spec: &HandModelSpec, t: f64) -> (Vector3<f64>, f64) {
    let w = &spec.waypoints;
    let first = &w[0];
    if t <= first.t || w.len() == 1 {
        return (Vector3::from(first.position), first.roll);
    }
    for pair in w.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if t <= b.t {
            let s = (t - a.t) / (b.t - a.t);
            let pa = Vector3::from(a.position);
            let pb = Vector3::from(b.position);
            return (pa + (pb - pa) * s, a.roll + (b.roll - a.roll) * s);
        }
    }
    let last = w.last().expect("non-empty");
    (Vector3::from(last.position), last.roll)
}

/// Advances the hand to time `t + dt` given the latest haptic snapshot and
/// TCP position.
pub fn hand_update(
    spec: &HandModelSpec,
    state: &HandState,
    safety: &SafetySnapshot,
    tcp: &Vector3<f64>,
    t: f64,
    dt: f64,
) -> HandState {
    let mut next = *state;
    match spec.kind {
        HandKind::Scripted => {
            let (p, roll) = scripted_reference(spec, t + dt);
            next.position = p;
            next.roll = roll;
        }
        HandKind::HapticReactive => {
            if safety.vibrating() {
                let since = *next.vibrating_since.get_or_insert(t);
                if t - since >= spec.reaction_delay - 1e-9 {
                    let away = state.position - tcp;
                    let n = away.norm();
                    if n > 1e-12 {
                        next.retreat += away * (spec.retreat_speed * dt / n);
                    }
                }
            } else {
                next.vibrating_since = None;
                let n = next.retreat.norm();
                let back = spec.return_speed * dt;
                next.retreat = if n <= back {
                    Vector3::zeros()
                } else {
                    next.retreat * ((n - back) / n)
                };
            }
            let (p, roll) = scripted_reference(spec, t + dt);
            next.position = p + next.retreat;
            next.roll = roll;
        }
        HandKind::Interactive => {
            if let Some(target) = state.target {
                let step = target - state.position;
                let max = spec.max_speed * dt;
                let n = step.norm();
                next.position = if n <= max {
                    target
                } else {
                    state.position + step * (max / n)
                };
            }
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety::{select_mode, MotorSide};
    use crate::sim::config::HandWaypoint;

    fn two_point() -> HandModelSpec {
        let mut s = HandModelSpec::scripted(vec![
            HandWaypoint {
                t: 0.0,
                position: [0.0, 0.0, 0.0],
                roll: 0.0,
            },
            HandWaypoint {
                t: 10.0,
                position: [1.0, 0.0, 0.0],
                roll: 0.5,
            },
        ]);
        s.max_speed = 1.0;
        s
    }

    #[test]
    fn scripted_lerp_midpoint() {
        let (p, roll) = scripted_reference(&two_point(), 5.0);
        assert!((p - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((roll - 0.25).abs() < 1e-15);
        assert_eq!(scripted_reference(&two_point(), 20.0).0, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(scripted_reference(&two_point(), -1.0).0, Vector3::zeros());
    }

    #[test]
    fn haptic_retreat_after_delay() {
        let mut spec = HandModelSpec::scripted(vec![HandWaypoint {
            t: 0.0,
            position: [0.5, 0.0, 0.0],
            roll: 0.0,
        }]);
        spec.kind = HandKind::HapticReactive;
        spec.reaction_delay = 0.3;
        spec.retreat_speed = 0.1;
        let buzzing = select_mode(0.2, true, &Default::default(), MotorSide::Left, 0.0);
        let tcp = Vector3::zeros();
        let dt = 0.001;
        let mut s = HandState::initial(&spec);
        let steps = 1300;
        for k in 0..steps {
            s = hand_update(&spec, &s, &buzzing, &tcp, k as f64 * dt, dt);
        }
        let (reference, _) = scripted_reference(&spec, steps as f64 * dt);
        let extra = s.position.norm() - reference.norm();
        assert!((extra - 0.1).abs() < 1e-9, "retreated {extra}");
    }

    #[test]
    fn interactive_holds_then_rate_limits() {
        let mut spec = two_point();
        spec.kind = HandKind::Interactive;
        spec.max_speed = 0.3;
        let idle = SafetySnapshot::idle(0.0);
        let mut s = HandState::initial(&spec);
        let s1 = hand_update(&spec, &s, &idle, &Vector3::zeros(), 0.0, 0.01);
        assert_eq!(s1.position, s.position);
        s.target = Some(Vector3::new(1.0, 0.0, 0.0));
        let s2 = hand_update(&spec, &s, &idle, &Vector3::zeros(), 0.0, 0.01);
        assert!((s2.position.x - 0.003).abs() < 1e-15);
    }
}
