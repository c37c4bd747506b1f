//! Actuator command vocabulary shared by the sequencer, the MCR gate and the
//! device models.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    X,
    Y,
    Dispenser,
}

impl AxisName {
    pub const ALL: [AxisName; 3] = [AxisName::X, AxisName::Y, AxisName::Dispenser];

    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::X => "x",
            AxisName::Y => "y",
            AxisName::Dispenser => "dispenser",
        }
    }
}

impl fmt::Display for AxisName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZDirection {
    Up,
    Down,
}

impl ZDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            ZDirection::Up => "up",
            ZDirection::Down => "down",
        }
    }
}

/// Anything fed from the MCR-switched 24 V branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    Drive(AxisName),
    ZValve,
    Venturi,
    DispenseValve,
    PumpRelay,
}

impl Actuator {
    pub const ALL: [Actuator; 7] = [
        Actuator::Drive(AxisName::X),
        Actuator::Drive(AxisName::Y),
        Actuator::Drive(AxisName::Dispenser),
        Actuator::ZValve,
        Actuator::Venturi,
        Actuator::DispenseValve,
        Actuator::PumpRelay,
    ];

    pub fn label(self) -> String {
        match self {
            Actuator::Drive(axis) => format!("{axis}_drive"),
            Actuator::ZValve => "z_valve".into(),
            Actuator::Venturi => "venturi".into(),
            Actuator::DispenseValve => "dispense_valve".into(),
            Actuator::PumpRelay => "pump_relay".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lamp {
    StartPilot,
    StopPilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandClass {
    Drive,
    Solenoid,
    Indicator,
    Instrument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Move {
        axis: AxisName,
        target_steps: i64,
    },
    Home {
        axis: AxisName,
    },
    /// Stop pulsing immediately; the drive stays powered.
    Halt {
        axis: AxisName,
    },
    Z {
        direction: ZDirection,
    },
    Grip,
    Release,
    Dispense {
        part_id: u32,
    },
    PumpRun {
        duration_us: Micros,
    },
    PumpStop,
    DeEnergize {
        actuator: Actuator,
    },
    Measure {
        part_id: u32,
    },
    Lamp {
        lamp: Lamp,
        on: bool,
    },
}

impl Command {
    pub fn class(&self) -> CommandClass {
        match self {
            Command::Move { .. } | Command::Home { .. } | Command::Halt { .. } => CommandClass::Drive,
            Command::Z { .. }
            | Command::Grip
            | Command::Release
            | Command::Dispense { .. }
            | Command::PumpRun { .. }
            | Command::PumpStop => CommandClass::Solenoid,
            Command::DeEnergize { actuator } => match actuator {
                Actuator::Drive(_) => CommandClass::Drive,
                _ => CommandClass::Solenoid,
            },
            Command::Measure { .. } => CommandClass::Instrument,
            Command::Lamp { .. } => CommandClass::Indicator,
        }
    }

    /// The actuator a drive or solenoid command acts on.
    pub fn actuator(&self) -> Option<Actuator> {
        Some(match self {
            Command::Move { axis, .. } | Command::Home { axis } | Command::Halt { axis } => Actuator::Drive(*axis),
            Command::Z { .. } => Actuator::ZValve,
            Command::Grip | Command::Release => Actuator::Venturi,
            Command::Dispense { .. } => Actuator::DispenseValve,
            Command::PumpRun { .. } | Command::PumpStop => Actuator::PumpRelay,
            Command::DeEnergize { actuator } => *actuator,
            Command::Measure { .. } | Command::Lamp { .. } => return None,
        })
    }

    /// True for commands that put energy into a drive or solenoid.
    pub fn is_energize(&self) -> bool {
        matches!(
            self,
            Command::Move { .. }
                | Command::Home { .. }
                | Command::Z { .. }
                | Command::Grip
                | Command::Dispense { .. }
                | Command::PumpRun { .. }
        )
    }

    pub fn is_gated(&self) -> bool {
        matches!(self.class(), CommandClass::Drive | CommandClass::Solenoid)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Move { .. } => "move",
            Command::Home { .. } => "home",
            Command::Halt { .. } => "halt",
            Command::Z { .. } => "z",
            Command::Grip => "grip",
            Command::Release => "release",
            Command::Dispense { .. } => "dispense",
            Command::PumpRun { .. } => "pump_run",
            Command::PumpStop => "pump_stop",
            Command::DeEnergize { .. } => "de_energize",
            Command::Measure { .. } => "measure",
            Command::Lamp { .. } => "lamp",
        }
    }
}
