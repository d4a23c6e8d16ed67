//! Command-line front end: run scenarios, calibrate the tracking noise,
//! compare the four exp3-style trials and host the interactive console.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use cobotguard::perception::{calibrate_noise, PerceptionError};
use cobotguard::sim::metrics::{ComparisonDeltas, MetricsError};
use cobotguard::sim::{compute_metrics, run, Metrics, ScenarioConfig, SimError, SimTrace, TrialComparison};
use nalgebra::Vector3;
use serde::Serialize;

pub mod protocol;
pub mod server;

pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_JSONL: &str = "trace.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const HISTOGRAM_CSV: &str = "histogram.csv";

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    /// Bad arguments, configuration or input files.
    Usage = 2,
    /// The simulation or a numerical routine failed.
    Runtime = 3,
}

/// A failed command: the exit status and the message printed on stderr.
#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Runtime,
            message: message.into(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::usage(c.to_string()),
            other => CliError::runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cobotguard", version, about = "Shared-workspace collision avoidance simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trace.csv, trace.jsonl and metrics.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Obstacle-free reference trace (a run output directory) for the
        /// collision-path metric.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Find per-axis noise sigmas matching target mean absolute errors.
    CalibrateNoise {
        /// Target mean absolute errors along the camera x, y, z axes, m.
        #[arg(long, num_args = 3, value_names = ["EX", "EY", "EZ"], default_values_t = [0.008, 0.007, 0.011])]
        targets: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the result as JSON into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare four trial outputs: baseline, static marker, gimbal, gimbal
    /// with haptics.
    Compare {
        #[arg(num_args = 4, value_names = ["BASELINE", "STATIC", "GIMBAL", "HAPTIC"], required = true)]
        trials: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the interactive console websocket.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        #[arg(long, default_value_t = 30.0)]
        stream_hz: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("plain data serializes");
    s.push(b'\n');
    s
}

/// Loads a scenario, applying a seed override. Errors map to exit 2.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Reads `trace.jsonl` from a run output directory.
pub fn read_trace(dir: &Path) -> Result<SimTrace, CliError> {
    let path = dir.join(TRACE_JSONL);
    let file = fs::File::open(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    SimTrace::read_jsonl(std::io::BufReader::new(file)).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn metrics_error(e: MetricsError) -> CliError {
    CliError::usage(e.to_string())
}

fn summary_line(m: &Metrics) -> String {
    let cm = |v: Option<f64>| v.map_or("n/a".to_string(), |d| format!("{:.1} cm", d * 100.0));
    format!(
        "{}: task_time {:.2} s ({}), path {:.3} m, collision_path {}, min d_RO {}, mean d_RO {}, occlusion {:.2} s, fdcm {}",
        m.scenario,
        m.task_time,
        if m.completed { "completed" } else { "timed out" },
        m.tcp_path_length,
        m.collision_path.map_or("n/a".to_string(), |c| format!("{c:.4} m")),
        cm(m.min_d_ro),
        cm(m.mean_d_ro),
        m.occlusion_time,
        m.fdcm_count,
    )
}

pub fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, baseline: Option<&Path>) -> Result<Metrics, CliError> {
    let cfg = load_config(config, seed)?;
    let base = baseline.map(read_trace).transpose()?;
    let trace = run(cfg)?;
    let metrics = compute_metrics(&trace, base.as_ref()).map_err(metrics_error)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&out.join(TRACE_CSV), &csv)?;
    let mut jsonl = Vec::new();
    trace.write_jsonl(&mut jsonl).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&out.join(TRACE_JSONL), &jsonl)?;
    write_file(&out.join(METRICS_JSON), &to_json(&metrics))?;
    println!("{}", summary_line(&metrics));
    Ok(metrics)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub targets: [f64; 3],
    pub sigma: [f64; 3],
    pub achieved_mean_abs: [f64; 3],
    pub achieved_mean_radial: f64,
    pub iterations: usize,
    pub samples: usize,
}

pub fn cmd_calibrate_noise(
    targets: [f64; 3],
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<CalibrationReport, CliError> {
    if samples == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    let cal = calibrate_noise(Vector3::from(targets), samples, seed).map_err(|e| match e {
        PerceptionError::InvalidTarget(_) => CliError::usage(e.to_string()),
        other => CliError::runtime(other.to_string()),
    })?;
    let report = CalibrationReport {
        targets,
        sigma: cal.sigma_axes.into(),
        achieved_mean_abs: cal.achieved_mean_abs.into(),
        achieved_mean_radial: cal.achieved_mean_radial,
        iterations: cal.iterations,
        samples: cal.samples,
    };
    println!(
        "sigma = [{:.6}, {:.6}, {:.6}] m; mean |e| = [{:.5}, {:.5}, {:.5}] m; mean radial {:.5} m ({} iterations x {} samples)",
        report.sigma[0],
        report.sigma[1],
        report.sigma[2],
        report.achieved_mean_abs[0],
        report.achieved_mean_abs[1],
        report.achieved_mean_abs[2],
        report.achieved_mean_radial,
        report.iterations,
        report.samples,
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join("noise_calibration.json"), &to_json(&report))?;
    }
    Ok(report)
}

/// On-disk comparison report: the four metrics and the deltas derived from
/// them.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub trials: TrialComparison,
    pub deltas: ComparisonDeltas,
}

pub fn cmd_compare(trials: &[PathBuf], out: Option<&Path>) -> Result<TrialComparison, CliError> {
    let [b, s, g, h] = trials else {
        return Err(CliError::usage("compare needs exactly four trial directories"));
    };
    let traces = [b, s, g, h].map(|d| read_trace(d));
    let [b, s, g, h] = traces;
    let cmp = TrialComparison::from_traces(&b?, &s?, &g?, &h?).map_err(metrics_error)?;
    let d = cmp.deltas();
    println!("{}", summary_line(&cmp.baseline));
    println!("{}", summary_line(&cmp.static_marker));
    println!("{}", summary_line(&cmp.gimbal));
    println!("{}", summary_line(&cmp.haptic));
    println!(
        "gimbal vs static: task time -{:.1}%, occlusion -{:.2} s; haptic vs gimbal: collision path -{:.1}%, mean d_RO {:+.1} cm, min d_RO {:+.1} cm",
        d.gimbal_time_improvement_pct,
        d.gimbal_occlusion_reduction,
        d.haptic_collision_path_reduction_pct,
        d.haptic_mean_distance_increase * 100.0,
        d.haptic_min_distance_increase * 100.0,
    );
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let report = ComparisonReport {
            trials: cmp.clone(),
            deltas: d,
        };
        write_file(&dir.join(COMPARISON_JSON), &to_json(&report))?;
        write_file(&dir.join(HISTOGRAM_CSV), cmp.histogram_csv().as_bytes())?;
    }
    Ok(cmp)
}

/// Parses arguments and runs the command; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage as i32 } else { Exit::Ok as i32 };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            baseline,
        } => cmd_run(&config, &out, seed, baseline.as_deref()).map(|_| ()),
        Command::CalibrateNoise {
            targets,
            samples,
            seed,
            out,
        } => cmd_calibrate_noise([targets[0], targets[1], targets[2]], samples, seed, out.as_deref()).map(|_| ()),
        Command::Compare { trials, out } => cmd_compare(&trials, out.as_deref()).map(|_| ()),
        Command::Serve {
            config,
            bind,
            stream_hz,
            seed,
        } => server::serve_blocking(&config, &bind, stream_hz, seed),
    };
    match result {
        Ok(()) => Exit::Ok as i32,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.exit as i32
        }
    }
}
