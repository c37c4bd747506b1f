//! Dual-channel safety relay.
//!
//! Each safety source (two E-stops and the door interlock) is wired as a pair
//! of redundant contacts. A channel reads asserted while its contact is
//! closed, which is the healthy, permissive state. Opening both channels
//! faults the relay immediately; a pair whose channels disagree for longer
//! than the discrepancy window faults it as a wiring/contact failure. Faults
//! latch until an explicit reset with every pair healthy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{Actuator, Command};
use crate::signals::SignalState;
use crate::Micros;

pub const DEFAULT_DISCREPANCY_WINDOW_US: Micros = 500_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SafetyError {
    #[error("safety channels missing source `{0}`")]
    MissingSource(&'static str),
    #[error("discrepancy window must be positive")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetySource {
    EstopOperator,
    EstopMain,
    DoorInterlock,
}

impl SafetySource {
    pub const ALL: [SafetySource; 3] =
        [SafetySource::EstopOperator, SafetySource::EstopMain, SafetySource::DoorInterlock];

    pub fn as_str(self) -> &'static str {
        match self {
            SafetySource::EstopOperator => "estop_operator",
            SafetySource::EstopMain => "estop_main",
            SafetySource::DoorInterlock => "door_interlock",
        }
    }

    fn open_cause(self) -> FaultCause {
        match self {
            SafetySource::EstopOperator | SafetySource::EstopMain => FaultCause::Estop,
            SafetySource::DoorInterlock => FaultCause::DoorOpen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyChannelPair {
    pub source: SafetySource,
    pub channel_a: SignalState,
    pub channel_b: SignalState,
}

impl SafetyChannelPair {
    pub fn is_healthy(&self) -> bool {
        self.channel_a.is_asserted() && self.channel_b.is_asserted()
    }

    pub fn both_open(&self) -> bool {
        !self.channel_a.is_asserted() && !self.channel_b.is_asserted()
    }

    /// Start of the current disagreement, if the channels disagree.
    pub fn disagreeing_since(&self) -> Option<Micros> {
        (self.channel_a.is_asserted() != self.channel_b.is_asserted())
            .then(|| self.channel_a.last_change_us().max(self.channel_b.last_change_us()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyMode {
    Run,
    Faulted,
    AwaitReset,
}

impl SafetyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SafetyMode::Run => "run",
            SafetyMode::Faulted => "faulted",
            SafetyMode::AwaitReset => "await_reset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCause {
    Estop,
    DoorOpen,
    ChannelDiscrepancy,
}

impl FaultCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultCause::Estop => "estop",
            FaultCause::DoorOpen => "door_open",
            FaultCause::ChannelDiscrepancy => "channel_discrepancy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyState {
    mode: SafetyMode,
    fault_cause: Option<FaultCause>,
    mcr_energized: bool,
    red_light: bool,
    faulted_at: Option<Micros>,
}

impl Default for SafetyState {
    fn default() -> Self {
        Self::running()
    }
}

impl SafetyState {
    pub fn running() -> Self {
        Self { mode: SafetyMode::Run, fault_cause: None, mcr_energized: true, red_light: false, faulted_at: None }
    }

    fn not_running(mode: SafetyMode, cause: FaultCause, faulted_at: Micros) -> Self {
        Self { mode, fault_cause: Some(cause), mcr_energized: false, red_light: true, faulted_at: Some(faulted_at) }
    }

    pub fn faulted(cause: FaultCause, at: Micros) -> Self {
        Self::not_running(SafetyMode::Faulted, cause, at)
    }

    pub fn mode(&self) -> SafetyMode {
        self.mode
    }

    pub fn fault_cause(&self) -> Option<FaultCause> {
        self.fault_cause
    }

    pub fn mcr_energized(&self) -> bool {
        self.mcr_energized
    }

    pub fn red_light(&self) -> bool {
        self.red_light
    }

    pub fn faulted_at(&self) -> Option<Micros> {
        self.faulted_at
    }

    pub fn is_run(&self) -> bool {
        self.mode == SafetyMode::Run
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    #[default]
    ManualOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    pub discrepancy_window_ms: u64,
    pub reset_policy: ResetPolicy,
    /// Informational only.
    pub performance_level: String,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            discrepancy_window_ms: DEFAULT_DISCREPANCY_WINDOW_US / 1000,
            reset_policy: ResetPolicy::ManualOnly,
            performance_level: "PL c".into(),
        }
    }
}

impl SafetyConfig {
    pub fn discrepancy_window_us(&self) -> Micros {
        self.discrepancy_window_ms * 1000
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        if self.discrepancy_window_ms == 0 {
            return Err(SafetyError::ZeroWindow);
        }
        Ok(())
    }
}

/// Fault visible on the channel inputs right now, most severe first.
fn detect(channels: &[SafetyChannelPair], now: Micros, window: Micros) -> Option<FaultCause> {
    let mut found: Option<FaultCause> = None;
    let rank = |c: FaultCause| match c {
        FaultCause::Estop => 0,
        FaultCause::DoorOpen => 1,
        FaultCause::ChannelDiscrepancy => 2,
    };
    for pair in channels {
        let cause = if pair.both_open() {
            Some(pair.source.open_cause())
        } else {
            pair.disagreeing_since()
                .filter(|&since| now.saturating_sub(since) > window)
                .map(|_| FaultCause::ChannelDiscrepancy)
        };
        if let Some(c) = cause {
            if found.is_none_or(|f| rank(c) < rank(f)) {
                found = Some(c);
            }
        }
    }
    found
}

/// Earliest time after `now` at which a pending disagreement would trip the
/// discrepancy check with the inputs unchanged.
pub fn next_discrepancy_deadline(channels: &[SafetyChannelPair], now: Micros, cfg: &SafetyConfig) -> Option<Micros> {
    let window = cfg.discrepancy_window_us();
    channels.iter().filter_map(|p| p.disagreeing_since()).map(|since| since + window + 1).filter(|&t| t > now).min()
}

/// Advances the relay by one evaluation.
pub fn step_safety(
    state: &SafetyState,
    channels: &[SafetyChannelPair],
    reset_requested: bool,
    now: Micros,
    cfg: &SafetyConfig,
) -> Result<SafetyState, SafetyError> {
    for source in SafetySource::ALL {
        if !channels.iter().any(|p| p.source == source) {
            return Err(SafetyError::MissingSource(source.as_str()));
        }
    }
    let detected = detect(channels, now, cfg.discrepancy_window_us());
    let all_healthy = channels.iter().all(SafetyChannelPair::is_healthy);

    let next = match state.mode {
        SafetyMode::Run => match detected {
            Some(cause) => SafetyState::faulted(cause, now),
            None => SafetyState::running(),
        },
        SafetyMode::Faulted => {
            let mut cause = state.fault_cause.unwrap_or(FaultCause::Estop);
            // A contact failure found while latched outranks the original
            // cause: it must be repaired before the cell can run again.
            if detected == Some(FaultCause::ChannelDiscrepancy) {
                cause = FaultCause::ChannelDiscrepancy;
            }
            let at = state.faulted_at.unwrap_or(now);
            if reset_requested && all_healthy {
                SafetyState::not_running(SafetyMode::AwaitReset, cause, at)
            } else {
                SafetyState::not_running(SafetyMode::Faulted, cause, at)
            }
        }
        SafetyMode::AwaitReset => {
            if all_healthy {
                SafetyState::running()
            } else {
                let cause = detected.or(state.fault_cause).unwrap_or(FaultCause::Estop);
                SafetyState::faulted(cause, now)
            }
        }
    };
    Ok(next)
}

/// Applies the master control relay to a command set.
///
/// With the MCR dropped every drive and solenoid command is replaced by a
/// de-energize of the same actuator. Indicators and instruments pass.
pub fn mcr_gate(state: &SafetyState, requested: &[Command]) -> Vec<Command> {
    if state.mcr_energized {
        return requested.to_vec();
    }
    let mut out = Vec::with_capacity(requested.len());
    let mut cut: BTreeSet<Actuator> = BTreeSet::new();
    for cmd in requested {
        match cmd.actuator() {
            Some(actuator) if cmd.is_gated() => {
                if cut.insert(actuator) {
                    out.push(Command::DeEnergize { actuator });
                }
            }
            _ => out.push(*cmd),
        }
    }
    out
}
