//! Deterministic software twin of a robotic contact-angle test cell.
//!
//! Device models (safety relay, stepper drives, pneumatic Z, dispenser,
//! vacuum gripper), the test-cycle sequencer, a synthetic goniometry
//! pipeline, an electrical rule checker and the operator-protocol types,
//! all driven by a fixed-tick virtual clock.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod command;
pub mod compliance;
pub mod fluidics;
pub mod gateway;
pub mod goniometry;
pub mod motion;
pub mod safety;
pub mod sequencer;
pub mod signals;
pub mod simkernel;

/// Virtual time in microseconds since run start.
pub type Micros = u64;

pub use command::{Actuator, AxisName, Command, ZDirection};
pub use safety::{FaultCause, SafetyMode, SafetyState};
pub use sequencer::{CycleState, Phase, TrayLayout};
pub use simkernel::{run, EventLog, EventRecord, Scenario, Simulation, Terminal};
