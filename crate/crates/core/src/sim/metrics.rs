//! Trial metrics, tracking-error statistics and four-trial comparison.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::trace::SimTrace;

/// Histogram bin width, m.
pub const BIN_WIDTH: f64 = 0.01;
/// Number of bins covering `[0, 0.6)` m.
pub const BIN_COUNT: usize = 60;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("traces run different waypoint programs")]
    MismatchedWaypoints,
    #[error("trace has no rows with a visible marker")]
    NoVisibleRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// Samples at or beyond the last bin edge.
    pub overflow: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self {
            bin_width: BIN_WIDTH,
            counts: vec![0; BIN_COUNT],
            overflow: 0,
        }
    }

    pub fn add(&mut self, d: f64) {
        // the small nudge keeps values printed on a bin edge (0.25) in the
        // bin they name despite binary rounding
        let idx = ((d / self.bin_width) + 1e-9).floor();
        if idx >= 0.0 && (idx as usize) < self.counts.len() {
            self.counts[idx as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Mean from bin midpoints; `None` if empty or any sample overflowed.
    pub fn midpoint_mean(&self) -> Option<f64> {
        let n: u64 = self.counts.iter().sum();
        if n == 0 || self.overflow > 0 {
            return None;
        }
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| (i as f64 + 0.5) * self.bin_width * *c as f64)
            .sum();
        Some(s / n as f64)
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub rows: usize,
    /// Rows where a hand exists and its marker is visible.
    pub visible_rows: usize,
    pub min_d_ro: Option<f64>,
    pub mean_d_ro: Option<f64>,
    pub histogram: Histogram,
    pub tcp_path_length: f64,
    pub baseline_path_length: Option<f64>,
    /// Extra TCP path relative to the obstacle-free baseline.
    pub collision_path: Option<f64>,
    /// Largest distance of a TCP sample from the baseline TCP polyline.
    pub max_deviation: Option<f64>,
    pub task_time: f64,
    pub completed: bool,
    pub occlusion_time: f64,
    pub fdcm_count: usize,
}

fn polyline_length(points: &[Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + d * s - p).norm()
}

/// Distance from `p` to the nearest point of the polyline.
pub fn distance_to_polyline(p: &Vector3<f64>, line: &[Vector3<f64>]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => (p - only).norm(),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

fn tcp_points(trace: &SimTrace) -> Vec<Vector3<f64>> {
    trace.rows.iter().map(|r| Vector3::from(r.x_r)).collect()
}

pub fn compute_metrics(trace: &SimTrace, baseline: Option<&SimTrace>) -> Result<Metrics, MetricsError> {
    if let Some(b) = baseline {
        if b.header.waypoints != trace.header.waypoints {
            return Err(MetricsError::MismatchedWaypoints);
        }
    }
    let has_hand = trace.header.has_hand;
    let mut histogram = Histogram::new();
    let mut visible_rows = 0;
    let mut min_d: Option<f64> = None;
    let mut sum_d = 0.0;
    let mut occlusion_time = 0.0;
    let mut fdcm_count = 0;
    let mut prev: Option<&crate::sim::trace::TraceRow> = None;
    for r in &trace.rows {
        if has_hand && r.visible && r.d_ro.is_finite() {
            visible_rows += 1;
            histogram.add(r.d_ro);
            sum_d += r.d_ro;
            min_d = Some(min_d.map_or(r.d_ro, |m| m.min(r.d_ro)));
        }
        if let Some(p) = prev {
            if has_hand && !r.visible {
                occlusion_time += r.t - p.t;
            }
            if r.fdcm && !p.fdcm {
                fdcm_count += 1;
            }
        } else if r.fdcm {
            fdcm_count += 1;
        }
        prev = Some(r);
    }
    let points = tcp_points(trace);
    let tcp_path_length = polyline_length(&points);
    let (baseline_path_length, collision_path, max_deviation) = match baseline {
        Some(b) => {
            let bp = tcp_points(b);
            let bl = polyline_length(&bp);
            let dev = points.iter().map(|p| distance_to_polyline(p, &bp)).fold(0.0, f64::max);
            (Some(bl), Some(tcp_path_length - bl), Some(dev))
        }
        None => (None, None, None),
    };
    Ok(Metrics {
        scenario: trace.header.scenario.clone(),
        rows: trace.rows.len(),
        visible_rows,
        min_d_ro: min_d,
        mean_d_ro: (visible_rows > 0).then(|| sum_d / visible_rows as f64),
        histogram,
        tcp_path_length,
        baseline_path_length,
        collision_path,
        max_deviation,
        task_time: trace.summary.task_time,
        completed: trace.summary.completed,
        occlusion_time,
        fdcm_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    /// Mean absolute error per camera axis, m.
    pub mean_abs: [f64; 3],
    pub mean_radial: f64,
    pub samples: usize,
}

/// Estimate-minus-truth statistics in the camera frame over visible rows.
pub fn tracking_error_report(trace: &SimTrace) -> Result<TrackingReport, MetricsError> {
    let to_cam = trace.header.camera_pose.rotation.inverse();
    let mut abs_sum = Vector3::zeros();
    let mut radial = 0.0;
    let mut n = 0usize;
    for r in trace.rows.iter().filter(|r| r.visible) {
        let est = Vector3::from(r.hand_est);
        let truth = Vector3::from(r.obs_true);
        if !(est.iter().chain(truth.iter()).all(|v| v.is_finite())) {
            continue;
        }
        let e = to_cam * (est - truth);
        abs_sum += e.abs();
        radial += e.norm();
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoVisibleRows);
    }
    let m = abs_sum / n as f64;
    Ok(TrackingReport {
        mean_abs: [m.x, m.y, m.z],
        mean_radial: radial / n as f64,
        samples: n,
    })
}

/// Metrics of the four trials: obstacle-free baseline, static marker, gimbal,
/// gimbal with haptic feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialComparison {
    pub baseline: Metrics,
    pub static_marker: Metrics,
    pub gimbal: Metrics,
    pub haptic: Metrics,
}

/// Derived from the four [`Metrics`]; never stored on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDeltas {
    /// Task-time reduction of the gimbal trial relative to the static-marker
    /// trial, percent.
    pub gimbal_time_improvement_pct: f64,
    /// Occlusion-time reduction of the gimbal trial relative to the
    /// static-marker trial, s.
    pub gimbal_occlusion_reduction: f64,
    /// Task-time reduction of the haptic trial relative to the static-marker
    /// trial, percent.
    pub haptic_time_improvement_pct: f64,
    /// Collision-path reduction of the haptic trial relative to the gimbal
    /// trial, percent.
    pub haptic_collision_path_reduction_pct: f64,
    /// Same, relative to the static-marker trial.
    pub haptic_vs_static_collision_path_reduction_pct: f64,
    /// Mean distance gained by the haptic trial over the gimbal trial, m.
    pub haptic_mean_distance_increase: f64,
    /// Minimum distance gained by the haptic trial over the gimbal trial, m.
    pub haptic_min_distance_increase: f64,
}

fn pct_reduction(from: f64, to: f64) -> f64 {
    if from > 0.0 {
        (from - to) / from * 100.0
    } else {
        0.0
    }
}

fn diff(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    }
}

impl TrialComparison {
    pub fn deltas(&self) -> ComparisonDeltas {
        let cp = |m: &Metrics| m.collision_path.unwrap_or(0.0);
        ComparisonDeltas {
            gimbal_time_improvement_pct: pct_reduction(self.static_marker.task_time, self.gimbal.task_time),
            gimbal_occlusion_reduction: self.static_marker.occlusion_time - self.gimbal.occlusion_time,
            haptic_time_improvement_pct: pct_reduction(self.static_marker.task_time, self.haptic.task_time),
            haptic_collision_path_reduction_pct: pct_reduction(cp(&self.gimbal), cp(&self.haptic)),
            haptic_vs_static_collision_path_reduction_pct: pct_reduction(cp(&self.static_marker), cp(&self.haptic)),
            haptic_mean_distance_increase: diff(self.haptic.mean_d_ro, self.gimbal.mean_d_ro),
            haptic_min_distance_increase: diff(self.haptic.min_d_ro, self.gimbal.min_d_ro),
        }
    }

    /// Builds the comparison from the four traces.
    pub fn from_traces(
        baseline: &SimTrace,
        static_marker: &SimTrace,
        gimbal: &SimTrace,
        haptic: &SimTrace,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            baseline: compute_metrics(baseline, Some(baseline))?,
            static_marker: compute_metrics(static_marker, Some(baseline))?,
            gimbal: compute_metrics(gimbal, Some(baseline))?,
            haptic: compute_metrics(haptic, Some(baseline))?,
        })
    }

    /// Per-bin counts of each trial, `bin_lo_cm` plus one column per trial.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo_cm,bin_hi_cm,baseline,static_marker,gimbal,haptic\n");
        for i in 0..BIN_COUNT {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i,
                i + 1,
                self.baseline.histogram.counts[i],
                self.static_marker.histogram.counts[i],
                self.gimbal.histogram.counts[i],
                self.haptic.histogram.counts[i],
            ));
        }
        out
    }
}
