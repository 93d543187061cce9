use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LineTrip,
    LineClose,
    FaultOn,
    FaultOff,
    ParamChange,
    ControlToggle,
    SetpointChange,
    /// Raw additive change to one full-network admittance entry; target is
    /// `"i,j"` (bus names or indices), `value` and `imag` the increment.
    AdmittanceDelta,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::LineTrip,
        EventKind::LineClose,
        EventKind::FaultOn,
        EventKind::FaultOff,
        EventKind::ParamChange,
        EventKind::ControlToggle,
        EventKind::SetpointChange,
        EventKind::AdmittanceDelta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::LineTrip => "line_trip",
            EventKind::LineClose => "line_close",
            EventKind::FaultOn => "fault_on",
            EventKind::FaultOff => "fault_off",
            EventKind::ParamChange => "param_change",
            EventKind::ControlToggle => "control_toggle",
            EventKind::SetpointChange => "setpoint_change",
            EventKind::AdmittanceDelta => "admittance_delta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Simulation time, s.
    pub t: f64,
    pub kind: EventKind,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imag: Option<f64>,
}

impl Event {
    pub fn new(t: f64, kind: EventKind, target: impl Into<String>) -> Self {
        Self { t, kind, target: target.into(), value: None, imag: None }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn line_trip(t: f64, line: &str) -> Self {
        Self::new(t, EventKind::LineTrip, line)
    }

    pub fn line_close(t: f64, line: &str) -> Self {
        Self::new(t, EventKind::LineClose, line)
    }

    pub fn fault_on(t: f64, bus: &str) -> Self {
        Self::new(t, EventKind::FaultOn, bus)
    }

    pub fn fault_off(t: f64, bus: &str) -> Self {
        Self::new(t, EventKind::FaultOff, bus)
    }

    /// Event-file line; numbers use the shortest form that parses back
    /// to the same value.
    pub fn to_line(&self) -> String {
        let mut s = format!("{} {} {}", self.t, self.kind.as_str(), self.target);
        match (self.value, self.imag) {
            (Some(v), Some(i)) => s.push_str(&format!(" {v} {i}")),
            (Some(v), None) => s.push_str(&format!(" {v}")),
            (None, Some(i)) => s.push_str(&format!(" 0 {i}")),
            (None, None) => {}
        }
        s
    }
}

/// Outcome of applying an event. `inverse` undoes it exactly; it is `None`
/// when the event was a no-op.
#[derive(Debug, Clone, PartialEq)]
pub struct Receipt {
    pub event: Event,
    pub inverse: Option<Event>,
    pub warning: Option<String>,
}

impl Receipt {
    pub(crate) fn applied(ev: &Event, inverse: Event) -> Self {
        Self { event: ev.clone(), inverse: Some(inverse), warning: None }
    }

    pub(crate) fn noop(ev: &Event, warning: String) -> Self {
        log::warn!("{warning}");
        Self { event: ev.clone(), inverse: None, warning: Some(warning) }
    }
}

/// Parses one event line: `t kind target [value [imag]]`.
pub fn parse_event_line(line: &str) -> Result<Event, EngineError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() < 3 || toks.len() > 5 {
        return Err(EngineError::InvalidEvent(format!(
            "expected 't kind target [value]', got '{}'",
            line.trim()
        )));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| EngineError::InvalidEvent(format!("'{s}' is not a number")))
    };
    let t = num(toks[0])?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(EngineError::InvalidEvent(format!("event time must be non-negative, got {t}")));
    }
    let kind = EventKind::parse(toks[1])
        .ok_or_else(|| EngineError::InvalidEvent(format!("unknown event kind '{}'", toks[1])))?;
    let mut ev = Event::new(t, kind, toks[2]);
    if let Some(v) = toks.get(3) {
        ev.value = Some(num(v)?);
    }
    if let Some(v) = toks.get(4) {
        ev.imag = Some(num(v)?);
    }
    Ok(ev)
}

/// Parses an event file; blank lines and `#` comments are skipped. Errors
/// carry the 1-based line number.
pub fn parse_event_file(path: &Path) -> Result<Vec<Event>, EngineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::InvalidEvent(format!("{}: {e}", path.display())))?;
    parse_events(&text)
}

pub(crate) fn parse_events(text: &str) -> Result<Vec<Event>, EngineError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ev = parse_event_line(line).map_err(|e| match e {
            EngineError::InvalidEvent(m) => EngineError::InvalidEvent(format!("line {}: {m}", n + 1)),
            other => other,
        })?;
        out.push(ev);
    }
    Ok(out)
}
