//! JSON messages exchanged with operator consoles.
//!
//! Every message is a single JSON object:
//! `{"protocol_version": 1, "seq": 7, "kind": "recover_view", "payload": {"label": "AV"}}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Configuration;
use crate::controller::{ControllerEvent, ControllerState, EmSample, Mode};
use crate::kinematics::TipPose;
use crate::roadmap::{RoadmapStats, ViewBookmark};

pub const PROTOCOL_VERSION: u32 = 1;

pub const KINDS: [&str; 9] = [
    "jog_knob",
    "jog_tip",
    "save_view",
    "recover_view",
    "cancel",
    "telemetry",
    "view_list",
    "event",
    "error",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("{0:?} messages are sent by the server only")]
    NotACommand(&'static str),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::UnsupportedVersion(_) => "unsupported_version",
            ProtocolError::UnknownKind(_) => "unknown_kind",
            ProtocolError::NotACommand(_) => "not_a_command",
        }
    }
}

/// Progress of the active recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewProgress {
    pub label: String,
    pub reached: usize,
    pub waypoints: usize,
    pub remaining_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub tick: u64,
    pub mode: Mode,
    pub teleop_active: bool,
    pub current_q: Configuration,
    pub actual_q: Configuration,
    /// Tip pose as reported by the EM sensor.
    pub tip_pose: TipPose,
    pub roadmap: RoadmapStats,
    pub active_view: Option<ViewProgress>,
    /// Sequence number of the last command applied.
    pub ack_seq: u64,
}

impl Telemetry {
    pub fn new(
        state: &ControllerState,
        em: &EmSample,
        roadmap: RoadmapStats,
        ack_seq: u64,
    ) -> Self {
        Self {
            tick: state.tick,
            mode: state.mode,
            teleop_active: state.teleop_active,
            current_q: state.current_q,
            actual_q: state.actual_q,
            tip_pose: em.pose,
            roadmap,
            active_view: state.active_path.as_ref().map(|p| ViewProgress {
                label: p.label.clone(),
                reached: p.reached,
                waypoints: p.path.len(),
                remaining_cost: p.remaining_cost(),
            }),
            ack_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
    /// Sequence number of the offending inbound message, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Body {
    JogKnob { rates: [f64; 4] },
    JogTip { twist: [f64; 6] },
    SaveView { label: String },
    RecoverView { label: String },
    Cancel,
    Telemetry(Telemetry),
    ViewList { views: Vec<ViewBookmark> },
    Event(ControllerEvent),
    Error(ErrorPayload),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::JogKnob { .. } => "jog_knob",
            Body::JogTip { .. } => "jog_tip",
            Body::SaveView { .. } => "save_view",
            Body::RecoverView { .. } => "recover_view",
            Body::Cancel => "cancel",
            Body::Telemetry(_) => "telemetry",
            Body::ViewList { .. } => "view_list",
            Body::Event(_) => "event",
            Body::Error(_) => "error",
        }
    }

    /// Converts an inbound message into a controller command.
    pub fn into_command(self) -> Result<Command, ProtocolError> {
        match self {
            Body::JogKnob { rates } => Ok(Command::JogKnob(rates)),
            Body::JogTip { twist } => Ok(Command::JogTip(twist)),
            Body::SaveView { label } => Ok(Command::SaveView(label)),
            Body::RecoverView { label } => Ok(Command::RecoverView(label)),
            Body::Cancel => Ok(Command::Cancel),
            other => Err(ProtocolError::NotACommand(other.kind())),
        }
    }
}

/// Operator commands understood by the control loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Command {
    JogKnob([f64; 4]),
    JogTip([f64; 6]),
    SaveView(String),
    RecoverView(String),
    Cancel,
}

impl Command {
    pub fn is_jog(&self) -> bool {
        matches!(self, Command::JogKnob(_) | Command::JogTip(_))
    }

    pub fn into_body(self) -> Body {
        match self {
            Command::JogKnob(rates) => Body::JogKnob { rates },
            Command::JogTip(twist) => Body::JogTip { twist },
            Command::SaveView(label) => Body::SaveView { label },
            Command::RecoverView(label) => Body::RecoverView { label },
            Command::Cancel => Body::Cancel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub protocol_version: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl WireMessage {
    pub fn new(seq: u64, body: Body) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            seq,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    /// Parses and checks version and kind before decoding the payload.
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ProtocolError::Malformed("expected a JSON object".into()))?;
        let version = obj
            .get("protocol_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ProtocolError::Malformed("missing protocol_version".into()))?;
        if version != u64::from(PROTOCOL_VERSION) {
            return Err(ProtocolError::UnsupportedVersion(version));
        }
        let kind = obj
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ProtocolError::Malformed("missing kind".into()))?;
        if !KINDS.contains(&kind) {
            return Err(ProtocolError::UnknownKind(kind.to_owned()));
        }
        serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    /// Sequence number of a message that may not parse, for error replies.
    pub fn peek_seq(text: &str) -> Option<u64> {
        serde_json::from_str::<serde_json::Value>(text)
            .ok()?
            .get("seq")?
            .as_u64()
    }
}
