//! Deterministic scenario simulation: configuration, hand models, the
//! fixed-step engine, trace files and metrics.

pub mod config;
pub mod engine;
pub mod hand;
pub mod metrics;
pub mod trace;

pub use config::ScenarioConfig;
pub use engine::{run, Engine, SimError};
pub use metrics::{compute_metrics, tracking_error_report, Metrics, TrialComparison};
pub use trace::{SimTrace, TraceRow};
