//! JSON messages exchanged with live clients.
//!
//! Client to server:
//! `{"type":"command","id":…,"kind":…,"payload":{…}}` and
//! `{"type":"subscribe","decimation":n}`.
//! Server to client: `ack`, `snapshot` and `dropped` messages. Complex
//! numbers travel as `[re, im]` pairs, angles in radians.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::timing::StepRecord;
use crate::engine::{Event, EventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    LineTrip,
    LineClose,
    FaultOn,
    FaultOff,
    ParamChange,
    ControlToggle,
    SetpointChange,
    AdmittanceDelta,
    Pause,
    Resume,
    SetSpeed,
    Console,
}

impl CommandKind {
    pub fn event_kind(self) -> Option<EventKind> {
        Some(match self {
            CommandKind::LineTrip => EventKind::LineTrip,
            CommandKind::LineClose => EventKind::LineClose,
            CommandKind::FaultOn => EventKind::FaultOn,
            CommandKind::FaultOff => EventKind::FaultOff,
            CommandKind::ParamChange => EventKind::ParamChange,
            CommandKind::ControlToggle => EventKind::ControlToggle,
            CommandKind::SetpointChange => EventKind::SetpointChange,
            CommandKind::AdmittanceDelta => EventKind::AdmittanceDelta,
            _ => return None,
        })
    }
}

/// Command body. Event kinds use `target`, `value` and `imag`;
/// `set_speed` uses `value`; `console` uses `text`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imag: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// Client-chosen token echoed in the acknowledgment.
    pub id: Value,
    pub kind: CommandKind,
    #[serde(default)]
    pub payload: Payload,
}

impl Command {
    pub fn new(id: impl Into<Value>, kind: CommandKind, payload: Payload) -> Self {
        Self { id: id.into(), kind, payload }
    }

    pub fn event(id: impl Into<Value>, kind: CommandKind, target: &str, value: Option<f64>) -> Self {
        Self::new(id, kind, Payload { target: Some(target.to_owned()), value, ..Payload::default() })
    }

    pub fn console(id: impl Into<Value>, text: &str) -> Self {
        Self::new(id, CommandKind::Console, Payload { text: Some(text.to_owned()), ..Payload::default() })
    }

    /// The engine event this command stands for, at time `t`.
    pub fn to_event(&self, t: f64) -> Result<Option<Event>, String> {
        let Some(kind) = self.kind.event_kind() else {
            return Ok(None);
        };
        let target = self.payload.target.clone().ok_or_else(|| "payload.target is required".to_owned())?;
        Ok(Some(Event { t, kind, target, value: self.payload.value, imag: self.payload.imag }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(Command),
    Subscribe { decimation: u32 },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Applied,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub id: Value,
    pub status: AckStatus,
    /// Simulation time at which the command took effect (or was refused).
    pub t_sim: f64,
    /// Rejection reason, console output or a no-op warning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Ack {
    pub fn applied(id: Value, t_sim: f64, detail: Option<String>) -> Self {
        Self { id, status: AckStatus::Applied, t_sim, detail }
    }

    pub fn rejected(id: Value, t_sim: f64, reason: impl Into<String>) -> Self {
        Self { id, status: AckStatus::Rejected, t_sim, detail: Some(reason.into()) }
    }

    pub fn is_applied(&self) -> bool {
        self.status == AckStatus::Applied
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub name: String,
    pub delta: f64,
    pub d_omega: f64,
    pub e_f: f64,
    pub p_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusVoltage {
    pub name: String,
    pub v: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlFlags {
    pub gen: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avr: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gov: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pss: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineStatus {
    pub name: String,
    pub closed: bool,
}

/// System state published after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub t_sim: f64,
    /// Steps between snapshots delivered to this subscriber.
    pub decimation: u32,
    pub generators: Vec<GeneratorState>,
    pub buses: Vec<BusVoltage>,
    pub controls: Vec<ControlFlags>,
    pub lines: Vec<LineStatus>,
    pub timing: Option<StepRecord>,
    #[serde(default)]
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack(Ack),
    Snapshot(Snapshot),
    Dropped { count: u64 },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }
}
