//! Logged simulation rows and their CSV / JSON-lines encodings.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apf::ControlCase;
use crate::transform::Transform;

/// Version of the row schema shared by the CSV header, the JSON-lines records
/// and the console stream.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported schema version {0}")]
    Schema(u32),
}

/// JSON has no NaN or infinity; those are written as the strings "NaN",
/// "inf" and "-inf" and read back from either form.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("NaN".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("not a number: {other}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod array {
        use super::*;

        pub fn serialize<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
            let items = Vec::<Repr>::deserialize(d)?;
            if items.len() != N {
                return Err(serde::de::Error::invalid_length(items.len(), &"fixed-length array"));
            }
            let mut out = [0.0; N];
            for (o, r) in out.iter_mut().zip(items) {
                *o = from_repr(r)?;
            }
            Ok(out)
        }
    }
}

/// One logged sample. Lengths in metres, angles in radians, time in seconds.
/// Hand fields are NaN when the scenario has no hand; `d_ro` is the distance
/// to the latest hand estimate (infinite without a hand).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub q: [f64; 6],
    pub x_r: [f64; 3],
    pub v_cmd: [f64; 3],
    pub case: ControlCase,
    #[serde(with = "nonfinite")]
    pub d_ro: f64,
    #[serde(with = "nonfinite")]
    pub d_true: f64,
    #[serde(with = "nonfinite")]
    pub theta_c: f64,
    pub blend_weight: f64,
    pub mode: u8,
    pub vib_left: bool,
    pub vib_right: bool,
    pub fdcm: bool,
    pub visible: bool,
    #[serde(with = "nonfinite")]
    pub incidence: f64,
    #[serde(with = "nonfinite")]
    pub angle_y: f64,
    #[serde(with = "nonfinite")]
    pub angle_x: f64,
    pub motors: [f64; 2],
    #[serde(with = "nonfinite::array")]
    pub hand_true: [f64; 3],
    #[serde(with = "nonfinite::array")]
    pub hand_est: [f64; 3],
    /// True hand position at the time of the observation behind `hand_est`.
    #[serde(with = "nonfinite::array")]
    pub obs_true: [f64; 3],
    pub goal_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub control_dt: f64,
    pub log_dt: f64,
    pub waypoints: Vec<[f64; 3]>,
    pub camera_pose: Transform,
    pub has_hand: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub completed: bool,
    /// Time the last waypoint (and its dwell) finished, or the end of the run.
    pub task_time: f64,
    pub end_time: f64,
    pub waypoints_reached: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    pub summary: TraceSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Row(TraceRow),
    Summary(TraceSummary),
}

pub const CSV_COLUMNS: &[&str] = &[
    "t", "q1", "q2", "q3", "q4", "q5", "q6", "x_r", "y_r", "z_r", "vx_cmd", "vy_cmd", "vz_cmd", "case",
    "d_ro", "d_true", "theta_c", "blend_weight", "mode", "vib_left", "vib_right", "fdcm", "visible",
    "incidence", "angle_y", "angle_x", "motor_lower", "motor_upper", "hand_true_x", "hand_true_y",
    "hand_true_z", "hand_est_x", "hand_est_y", "hand_est_z", "obs_true_x", "obs_true_y", "obs_true_z",
    "goal_index",
];

/// Nine significant digits in scientific notation.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else {
        format!("{v}")
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        writeln!(w, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.rows {
            let mut cells: Vec<String> = Vec::with_capacity(CSV_COLUMNS.len());
            cells.push(num(r.t));
            cells.extend(r.q.iter().map(|v| num(*v)));
            cells.extend(r.x_r.iter().map(|v| num(*v)));
            cells.extend(r.v_cmd.iter().map(|v| num(*v)));
            cells.push(r.case.as_str().into());
            for v in [r.d_ro, r.d_true, r.theta_c, r.blend_weight] {
                cells.push(num(v));
            }
            cells.push(r.mode.to_string());
            for b in [r.vib_left, r.vib_right, r.fdcm, r.visible] {
                cells.push(flag(b).into());
            }
            for v in [r.incidence, r.angle_y, r.angle_x, r.motors[0], r.motors[1]] {
                cells.push(num(v));
            }
            for a in [r.hand_true, r.hand_est, r.obs_true] {
                cells.extend(a.iter().map(|v| num(*v)));
            }
            cells.push(r.goal_index.to_string());
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        let line = |w: &mut W, r: &Record| -> Result<(), TraceError> {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&mut w, &Record::Header(self.header.clone()))?;
        for r in &self.rows {
            line(&mut w, &Record::Row(*r))?;
        }
        line(&mut w, &Record::Summary(self.summary))?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<SimTrace, TraceError> {
        let mut header = None;
        let mut rows = Vec::new();
        let mut summary = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| TraceError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                Record::Header(h) => {
                    if h.schema_version != SCHEMA_VERSION {
                        return Err(TraceError::Schema(h.schema_version));
                    }
                    header = Some(h);
                }
                Record::Row(row) => rows.push(row),
                Record::Summary(s) => summary = Some(s),
            }
        }
        let missing = |what: &str| TraceError::Format {
            line: 0,
            message: format!("missing {what} record"),
        };
        Ok(SimTrace {
            header: header.ok_or_else(|| missing("header"))?,
            rows,
            summary: summary.ok_or_else(|| missing("summary"))?,
        })
    }
}
