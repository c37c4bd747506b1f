//! Operator protocol: snapshots out, commands in.
//!
//! Wire format is JSON text frames. Server to client:
//! `{"type":"snapshot","v":1,...}` and `{"type":"error","v":1,"message":...}`.
//! Client to server:
//! `{"type":"command","kind":"start","params":{},"client_id":"panel-1"}`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::command::AxisName;
use crate::motion::ZPosition;
use crate::simkernel::scenario::{InjectionKind, InputEvent};
use crate::simkernel::sim::{LightTower, Simulation, Terminal};
use crate::Micros;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported message type `{0}`")]
    UnknownType(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("unknown command kind `{0}`")]
    UnknownKind(String),
    #[error("invalid params for `{kind}`: {message}")]
    Params { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySummary {
    pub mode: String,
    pub fault_cause: Option<String>,
    pub mcr_energized: bool,
    pub red_light: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub phase: String,
    pub column: u32,
    pub row: u32,
    pub parts_done: u32,
    pub total_parts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSummary {
    pub part_id: u32,
    pub theta_deg: f64,
    pub t_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(rename = "type")]
    pub msg_type: String,
    pub v: u32,
    pub t_us: Micros,
    pub safety: SafetySummary,
    pub cycle: CycleSummary,
    /// Homed axes only; an unhomed axis reads null.
    pub axes_mm: BTreeMap<String, Option<f64>>,
    pub z: String,
    pub light_tower: LightTower,
    pub parts_done: u32,
    pub total_parts: u32,
    pub last_measurement: Option<MeasurementSummary>,
    /// Set once the run has settled.
    pub terminal: Option<Terminal>,
}

impl Snapshot {
    pub fn capture(sim: &Simulation) -> Self {
        let safety = sim.safety();
        let cycle = sim.cycle();
        let axes_mm = AxisName::ALL
            .iter()
            .map(|&a| (a.as_str().to_string(), sim.axis_mm(a).map(|mm| (mm * 1000.0).round() / 1000.0)))
            .collect();
        let z = sim.cell().z.confirmed();
        Self {
            msg_type: "snapshot".into(),
            v: PROTOCOL_VERSION,
            t_us: sim.now(),
            safety: SafetySummary {
                mode: safety.mode().as_str().into(),
                fault_cause: safety.fault_cause().map(|c| c.as_str().into()),
                mcr_energized: safety.mcr_energized(),
                red_light: safety.red_light(),
            },
            cycle: CycleSummary {
                phase: cycle.phase.as_str().into(),
                column: cycle.column,
                row: cycle.row,
                parts_done: cycle.parts_done,
                total_parts: cycle.total_parts,
            },
            axes_mm,
            z: if z == ZPosition::InTransit { "in_transit".into() } else { z.as_str().into() },
            light_tower: LightTower::from_state(safety, cycle.phase),
            parts_done: cycle.parts_done,
            total_parts: cycle.total_parts,
            last_measurement: sim.last_measurement().map(|m| MeasurementSummary {
                part_id: m.part_id,
                theta_deg: crate::goniometry::report_deg(m.theta_measured_deg),
                t_us: m.t_us,
            }),
            terminal: sim.terminal(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    #[serde(rename = "type")]
    pub msg_type: String,
    pub v: u32,
    pub message: String,
}

impl ErrorReply {
    pub fn new(err: &ProtocolError) -> Self {
        Self { msg_type: "error".into(), v: PROTOCOL_VERSION, message: err.to_string() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error reply serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Start,
    Stop,
    Estop,
    EstopRelease,
    Reset,
    DoorOpen,
    DoorClose,
    Inject,
}

impl CommandKind {
    pub const ALL: [CommandKind; 8] = [
        CommandKind::Start,
        CommandKind::Stop,
        CommandKind::Estop,
        CommandKind::EstopRelease,
        CommandKind::Reset,
        CommandKind::DoorOpen,
        CommandKind::DoorClose,
        CommandKind::Inject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Start => "start",
            CommandKind::Stop => "stop",
            CommandKind::Estop => "estop",
            CommandKind::EstopRelease => "estop_release",
            CommandKind::Reset => "reset",
            CommandKind::DoorOpen => "door_open",
            CommandKind::DoorClose => "door_close",
            CommandKind::Inject => "inject",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    #[serde(rename = "type")]
    pub msg_type: String,
    pub kind: CommandKind,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub client_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<u32>,
}

impl CommandMessage {
    pub fn new(kind: CommandKind, client_id: &str) -> Self {
        Self {
            msg_type: "command".into(),
            kind,
            params: Map::new(),
            client_id: client_id.into(),
            v: Some(PROTOCOL_VERSION),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("command serializes")
    }

    /// The simulated input this command produces.
    pub fn to_input(&self) -> Result<InputEvent, ProtocolError> {
        let params_err = |message: String| ProtocolError::Params { kind: self.kind.as_str().into(), message };
        let simple = |kind: InjectionKind| InputEvent::decode(kind, &self.params).map_err(params_err);
        match self.kind {
            CommandKind::Start => simple(InjectionKind::StartPress),
            CommandKind::Stop => simple(InjectionKind::StopPress),
            CommandKind::Estop => simple(InjectionKind::EstopPress),
            CommandKind::EstopRelease => simple(InjectionKind::EstopRelease),
            CommandKind::Reset => simple(InjectionKind::ResetPress),
            CommandKind::DoorOpen => simple(InjectionKind::DoorOpen),
            CommandKind::DoorClose => simple(InjectionKind::DoorClose),
            CommandKind::Inject => {
                let mut params = self.params.clone();
                let kind = params.remove("kind").ok_or_else(|| params_err("missing `kind`".into()))?;
                let kind: InjectionKind =
                    serde_json::from_value(kind).map_err(|e| params_err(format!("injection kind: {e}")))?;
                InputEvent::decode(kind, &params).map_err(params_err)
            }
        }
    }
}

/// Parses a client text frame into a command and its input event.
pub fn parse_command(text: &str) -> Result<(CommandMessage, InputEvent), ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| ProtocolError::Malformed("expected a JSON object".into()))?;
    match obj.get("type").and_then(Value::as_str) {
        Some("command") => {}
        Some(other) => return Err(ProtocolError::UnknownType(other.into())),
        None => return Err(ProtocolError::Malformed("missing `type`".into())),
    }
    if let Some(v) = obj.get("v") {
        match v.as_u64() {
            Some(n) if n == u64::from(PROTOCOL_VERSION) => {}
            Some(n) => return Err(ProtocolError::Version(n.min(u64::from(u32::MAX)) as u32)),
            None => return Err(ProtocolError::Malformed("`v` must be an integer".into())),
        }
    }
    let kind =
        obj.get("kind").and_then(Value::as_str).ok_or_else(|| ProtocolError::Malformed("missing `kind`".into()))?;
    if CommandKind::parse(kind).is_none() {
        return Err(ProtocolError::UnknownKind(kind.into()));
    }
    let msg: CommandMessage = serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let input = msg.to_input()?;
    Ok((msg, input))
}

/// Ordered funnel from all clients into the simulation.
///
/// Commands keep arrival order, except that E-stops received for a tick are
/// delivered ahead of everything else.
#[derive(Debug, Default)]
pub struct CommandQueue {
    pending: VecDeque<InputEvent>,
}

impl CommandQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: InputEvent) {
        self.pending.push_back(event);
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    /// Everything queued for the coming tick, E-stops first.
    pub fn drain_tick(&mut self) -> Vec<InputEvent> {
        let mut all: Vec<InputEvent> = self.pending.drain(..).collect();
        all.sort_by_key(|e| !e.is_estop());
        all
    }
}
