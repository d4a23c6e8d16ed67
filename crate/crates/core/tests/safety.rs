//! Safety state machine: exhaustive consistency sweep and debounce timing.

use cobotguard::apf::ControllerParams;
use cobotguard::safety::{
    boundary_debounce, select_mode, DebounceState, MotorSide, SafetyMode, SafetyMonitor,
    SafetyParams, SafetySnapshot,
};
use proptest::prelude::*;

#[test]
fn consistency_sweep_over_distance_and_visibility() {
    let p = ControllerParams::default();
    for visible in [true, false] {
        for side in [MotorSide::Left, MotorSide::Right] {
            let mut monitor = SafetyMonitor::new(SafetyParams::default());
            for mm in 0..=1000 {
                let d = mm as f64 / 1000.0;
                let raw = select_mode(d, visible, &p, side, 0.0);
                assert!(raw.is_consistent(), "raw d={d} visible={visible}");
                if !visible {
                    assert_eq!(raw.mode, SafetyMode::Mode4);
                }
                let s = monitor.update(d, visible, &p, side, mm as f64 * 0.01);
                assert!(s.is_consistent(), "monitor d={d} visible={visible}");
                if !visible {
                    assert_eq!(s.mode, SafetyMode::Mode4);
                }
            }
        }
    }
}

fn at(mode_d: f64, t: f64) -> SafetySnapshot {
    select_mode(mode_d, true, &ControllerParams::default(), MotorSide::Left, t)
}

#[test]
fn fast_oscillation_across_boundary_is_suppressed() {
    let p = ControllerParams::default();
    let mut state = DebounceState::new(at(0.35, 0.0));
    // 50 Hz square wave across d_AT, sampled at 100 Hz
    for k in 1..300 {
        let t = k as f64 * 0.01;
        let d = if k % 2 == 0 { p.d_at + 0.01 } else { p.d_at - 0.01 };
        let (next, out) = boundary_debounce(&state, at(d, t), 0.1);
        assert_eq!(out.mode, SafetyMode::Mode1);
        state = next;
    }
}

#[test]
fn sustained_crossing_commits_after_dwell() {
    let mut state = DebounceState::new(at(0.35, 0.0));
    let mut changed_at = None;
    for k in 1..=30 {
        let t = k as f64 * 0.01;
        let (next, out) = boundary_debounce(&state, at(0.25, t), 0.1);
        if out.mode == SafetyMode::Mode2 && changed_at.is_none() {
            changed_at = Some(t);
        }
        state = next;
    }
    let t = changed_at.expect("never changed");
    assert!((t - 0.11).abs() < 1e-9, "changed at {t}");
}

#[test]
fn escalation_bypasses_dwell() {
    let mut state = DebounceState::new(at(0.35, 0.0));
    let (next, out) = boundary_debounce(&state, at(0.25, 0.01), 0.1);
    assert_eq!(out.mode, SafetyMode::Mode1);
    state = next;
    let (_, out) = boundary_debounce(&state, at(0.05, 0.02), 0.1);
    assert_eq!(out.mode, SafetyMode::Mode3);
    let hidden = select_mode(0.5, false, &ControllerParams::default(), MotorSide::Left, 0.03);
    let (_, out) = boundary_debounce(&DebounceState::new(at(0.35, 0.0)), hidden, 0.1);
    assert_eq!(out.mode, SafetyMode::Mode4);
}

proptest! {
    #[test]
    fn mode4_dominates_any_history(history in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..200),
                                   final_d in 0.0f64..1.0) {
        let p = ControllerParams::default();
        let mut m = SafetyMonitor::new(SafetyParams::default());
        let mut t = 0.0;
        for (d, visible) in history {
            let s = m.update(d, visible, &p, MotorSide::Left, t);
            prop_assert!(s.is_consistent());
            // escalation within the same step
            if !visible {
                prop_assert_eq!(s.mode, SafetyMode::Mode4);
            } else if d < p.d_act {
                prop_assert_eq!(s.mode, SafetyMode::Mode3);
            }
            t += 0.01;
        }
        prop_assert_eq!(m.update(final_d, false, &p, MotorSide::Left, t).mode, SafetyMode::Mode4);
    }
}
