//! Websocket message schema shared with the browser console. Every frame is
//! a JSON text frame with a `type` tag and the schema version. Lengths are in
//! metres, angles in radians, time in seconds. Non-finite quantities (no
//! hand estimate yet, no hand at all) are sent as `null`.

use cobotguard::sim::trace::{TraceRow, SCHEMA_VERSION};
use cobotguard::sim::ScenarioConfig;
use serde::{Deserialize, Serialize};

/// Workspace bounds reported to clients and used to clamp hand targets, m.
pub const WORKSPACE_MIN: [f64; 3] = [0.0, -0.9, 0.0];
pub const WORKSPACE_MAX: [f64; 3] = [1.4, 0.9, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMsg {
    pub schema_version: u32,
    pub scenario: String,
    pub workspace: Workspace,
    pub d_act: f64,
    pub d_at: f64,
    pub d_dct: f64,
    pub waypoints: Vec<[f64; 3]>,
    pub stream_hz: f64,
    pub control_dt: f64,
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    pub schema_version: u32,
    pub t: f64,
    pub x_r: [f64; 3],
    pub q: [f64; 6],
    pub hand_true: Option<[f64; 3]>,
    pub hand_est: Option<[f64; 3]>,
    pub d_ro: Option<f64>,
    pub mode: u8,
    pub vib_left: bool,
    pub vib_right: bool,
    pub fdcm: bool,
    pub case: String,
    pub visible: bool,
    pub angle_y: Option<f64>,
    pub angle_x: Option<f64>,
    pub goal_index: usize,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub schema_version: u32,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Config(ConfigMsg),
    State(StateMsg),
    Error(ErrorMsg),
}

/// Client commands. A `schema_version` field is optional; when present it
/// must match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    HandMove { x: f64, y: f64, z: f64 },
    Pause {},
    Resume {},
    Reset {},
    SetParam { name: String, value: f64 },
}

/// Error codes carried by `error` frames.
pub mod code {
    pub const MALFORMED: &str = "malformed";
    pub const SCHEMA: &str = "schema_version";
    pub const INVALID_VALUE: &str = "invalid_value";
    pub const UNKNOWN_PARAM: &str = "unknown_param";
    pub const ENGINE: &str = "engine";
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn finite3(v: [f64; 3]) -> Option<[f64; 3]> {
    v.iter().all(|x| x.is_finite()).then_some(v)
}

impl StateMsg {
    pub fn from_row(row: &TraceRow, paused: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            t: row.t,
            x_r: row.x_r,
            q: row.q,
            hand_true: finite3(row.hand_true),
            hand_est: finite3(row.hand_est),
            d_ro: finite(row.d_ro),
            mode: row.mode,
            vib_left: row.vib_left,
            vib_right: row.vib_right,
            fdcm: row.fdcm,
            case: row.case.as_str().into(),
            visible: row.visible,
            angle_y: finite(row.angle_y),
            angle_x: finite(row.angle_x),
            goal_index: row.goal_index,
            paused,
        }
    }
}

impl ConfigMsg {
    pub fn new(cfg: &ScenarioConfig, stream_hz: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: cfg.name.clone(),
            workspace: Workspace {
                min: WORKSPACE_MIN,
                max: WORKSPACE_MAX,
            },
            d_act: cfg.controller.d_act,
            d_at: cfg.controller.d_at,
            d_dct: cfg.controller.d_dct,
            waypoints: cfg.waypoints.iter().map(|w| w.position).collect(),
            stream_hz,
            control_dt: cfg.control_dt,
            params: cobotguard::sim::engine::LIVE_PARAMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn error_msg(code: &str, message: impl Into<String>) -> ServerMsg {
    ServerMsg::Error(ErrorMsg {
        schema_version: SCHEMA_VERSION,
        code: code.into(),
        message: message.into(),
    })
}

/// Parses and validates a client text frame.
pub fn parse_client(text: &str) -> Result<ClientMsg, ServerMsg> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| error_msg(code::MALFORMED, format!("not JSON: {e}")))?;
    if let Some(v) = value.get("schema_version") {
        if v.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(error_msg(
                code::SCHEMA,
                format!("schema_version {v} does not match server version {SCHEMA_VERSION}"),
            ));
        }
    }
    let mut value = value;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("schema_version");
    }
    let msg: ClientMsg = serde_json::from_value(value).map_err(|e| error_msg(code::MALFORMED, e.to_string()))?;
    match &msg {
        ClientMsg::HandMove { x, y, z } if ![x, y, z].iter().all(|v| v.is_finite()) => {
            Err(error_msg(code::INVALID_VALUE, "hand_move coordinates must be finite"))
        }
        ClientMsg::SetParam { name, .. } if !cobotguard::sim::engine::LIVE_PARAMS.contains(&name.as_str()) => Err(
            error_msg(code::UNKNOWN_PARAM, format!("`{name}` is not an adjustable parameter")),
        ),
        _ => Ok(msg),
    }
}

/// Clamps a hand target into the workspace box.
pub fn clamp_to_workspace(p: [f64; 3]) -> [f64; 3] {
    let mut out = p;
    for i in 0..3 {
        out[i] = p[i].clamp(WORKSPACE_MIN[i], WORKSPACE_MAX[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        assert_eq!(
            parse_client(r#"{"type":"hand_move","x":0.5,"y":0.1,"z":0.2}"#).unwrap(),
            ClientMsg::HandMove { x: 0.5, y: 0.1, z: 0.2 }
        );
        assert_eq!(parse_client(r#"{"type":"pause"}"#).unwrap(), ClientMsg::Pause {});
        assert_eq!(
            parse_client(r#"{"type":"reset","schema_version":1}"#).unwrap(),
            ClientMsg::Reset {}
        );
    }

    #[test]
    fn rejects_bad_frames() {
        let code_of = |t: &str| match parse_client(t) {
            Err(ServerMsg::Error(e)) => e.code,
            other => panic!("{other:?}"),
        };
        assert_eq!(code_of("{"), code::MALFORMED);
        assert_eq!(code_of(r#"{"type":"fly"}"#), code::MALFORMED);
        assert_eq!(code_of(r#"{"type":"pause","schema_version":7}"#), code::SCHEMA);
        assert_eq!(code_of(r#"{"type":"set_param","name":"d_act","value":0.2}"#), code::UNKNOWN_PARAM);
    }

    #[test]
    fn clamps_targets() {
        assert_eq!(clamp_to_workspace([5.0, -5.0, 0.5]), [WORKSPACE_MAX[0], WORKSPACE_MIN[1], 0.5]);
    }
}
