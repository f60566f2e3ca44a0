//! JSON frames exchanged over `/ws`. Every frame carries the schema version
//! in `v`; see `docs/ws-protocol.md`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use teleguide_core::coupling::Grab;
use teleguide_core::kinematics::GraspPoint;
use teleguide_core::session::SessionSnapshot;
use teleguide_core::task::secs;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerColor {
    Red,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerColors {
    pub elbow: MarkerColor,
    pub wrist: MarkerColor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrabState {
    Free,
    Near,
    Engaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrabView {
    pub state: GrabState,
    /// Nearest point when `near`, held point when `engaged`.
    pub point: Option<GraspPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetView {
    pub pose: String,
    pub elbow: [f64; 3],
    pub wrist: [f64; 3],
    pub matched: bool,
    /// Seconds of hold left while holding, otherwise null.
    pub hold_remaining: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceView {
    /// Force rendered on the leader, leader frame, N.
    pub leader: [f64; 3],
    /// Force applied at the engaged point, follower frame, N.
    pub follower: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    /// 0 between trials.
    pub trial_id: u32,
    pub block: u8,
    pub condition: String,
    pub familiarization: bool,
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiStateMessage {
    pub v: u32,
    /// Increases by one per emitted state; never repeats within a server run.
    pub seq: u64,
    /// Simulated time, s.
    pub t: f64,
    pub q: [f64; 6],
    pub elbow: [f64; 3],
    pub wrist: [f64; 3],
    /// Leader device position, leader frame.
    pub leader: [f64; 3],
    /// Leader position mapped into the follower frame.
    pub leader_mapped: [f64; 3],
    pub grip_closed: bool,
    pub grab: GrabView,
    pub marker_colors: MarkerColors,
    pub target: Option<TargetView>,
    pub forces: ForceView,
    pub trial: TrialView,
    /// False while the session is paused.
    pub running: bool,
    pub done: bool,
    /// Set once if the simulation stopped on a fault.
    pub fault: Option<String>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn grab_view(g: Grab) -> GrabView {
    match g {
        Grab::Free => GrabView {
            state: GrabState::Free,
            point: None,
        },
        Grab::Near(p) => GrabView {
            state: GrabState::Near,
            point: Some(p),
        },
        Grab::Engaged(p) => GrabView {
            state: GrabState::Engaged,
            point: Some(p),
        },
    }
}

/// Green marks the engaged point; everything else is red.
pub fn marker_colors(g: Grab) -> MarkerColors {
    let color = |p| {
        if g.engaged() == Some(p) {
            MarkerColor::Green
        } else {
            MarkerColor::Red
        }
    };
    MarkerColors {
        elbow: color(GraspPoint::Elbow),
        wrist: color(GraspPoint::Wrist),
    }
}

/// State frame for one session snapshot.
pub fn snapshot(s: &SessionSnapshot, seq: u64, running: bool, fault: Option<String>) -> UiStateMessage {
    let tick = &s.tick;
    UiStateMessage {
        v: PROTOCOL_VERSION,
        seq,
        t: secs(tick.t_us),
        q: tick.q.into(),
        elbow: arr(&tick.elbow),
        wrist: arr(&tick.wrist),
        leader: arr(&tick.leader),
        leader_mapped: arr(&tick.mapped),
        grip_closed: s.grip_closed,
        grab: grab_view(tick.grab),
        marker_colors: marker_colors(tick.grab),
        target: s.target.map(|t| TargetView {
            pose: t.pose.as_str().to_string(),
            elbow: arr(&t.elbow),
            wrist: arr(&t.wrist),
            matched: s.matched,
            hold_remaining: s.hold_remaining,
        }),
        forces: ForceView {
            leader: arr(&tick.force_leader),
            follower: arr(&tick.force_follower),
        },
        trial: TrialView {
            trial_id: tick.trial_id,
            block: tick.block,
            condition: tick.condition.as_str().to_string(),
            familiarization: s.familiarization,
            phase: tick.phase.to_string(),
        },
        running,
        done: s.done,
        fault,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionControl {
    Start,
    Pause,
    NextTrial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UiCommand {
    /// Desired leader hand position, leader frame, m.
    SetTarget { v: u32, pos: [f64; 3] },
    SetGrip { v: u32, closed: bool },
    SessionControl { v: u32, action: SessionControl },
}

impl UiCommand {
    fn version(&self) -> u32 {
        match self {
            UiCommand::SetTarget { v, .. }
            | UiCommand::SetGrip { v, .. }
            | UiCommand::SessionControl { v, .. } => *v,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error("malformed command: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0} (server speaks {PROTOCOL_VERSION})")]
    Version(u32),
    #[error("unknown command kind '{0}'")]
    UnknownKind(String),
    #[error("target position must be finite")]
    NonFinite,
    #[error("{0}")]
    Rejected(&'static str),
}

const KINDS: [&str; 3] = ["set_target", "set_grip", "session_control"];

/// Parses and validates one client text frame.
pub fn parse_command(text: &str) -> Result<UiCommand, CommandError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CommandError::Malformed(e.to_string()))?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| CommandError::Malformed("missing string field 'kind'".into()))?;
    if !KINDS.contains(&kind) {
        return Err(CommandError::UnknownKind(kind.to_string()));
    }
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return Err(CommandError::Version(v.min(u32::MAX as u64) as u32)),
        None => return Err(CommandError::Malformed("missing integer field 'v'".into())),
    }
    let cmd: UiCommand =
        serde_json::from_value(value).map_err(|e| CommandError::Malformed(e.to_string()))?;
    debug_assert_eq!(cmd.version(), PROTOCOL_VERSION);
    if let UiCommand::SetTarget { pos, .. } = &cmd {
        if pos.iter().any(|x| !x.is_finite()) {
            return Err(CommandError::NonFinite);
        }
    }
    Ok(cmd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerMode {
    /// A human drives the leader through commands.
    Ui,
    /// Scripted leader; the client only watches.
    Observer,
    /// A recorded bundle is streamed.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Hello { v: u32, mode: ServerMode, rate_hz: f64 },
    State(Box<UiStateMessage>),
    Error { v: u32, message: String },
}

impl ServerFrame {
    pub fn error(message: impl Into<String>) -> Self {
        ServerFrame::Error {
            v: PROTOCOL_VERSION,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }
}
