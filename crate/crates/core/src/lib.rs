//! Collision avoidance and haptic safety for a robot arm sharing its
//! workspace with a tracked human hand.
//!
//! * [`kinematics`]: forward kinematics, Jacobian and damped inversion.
//! * [`apf`]: the potential-field behavior-tree controller.
//! * [`perception`]: camera extrinsics, marker visibility and noise.
//! * [`gimbal`]: the wearable marker-orientation controller.
//! * [`safety`]: the four-mode haptic state machine.
//! * [`sim`]: scenario engine, traces and metrics.

pub mod apf;
pub mod gimbal;
pub mod kinematics;
pub mod perception;
pub mod safety;
pub mod sim;
pub mod transform;
