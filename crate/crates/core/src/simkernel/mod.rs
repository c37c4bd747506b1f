//! Deterministic discrete-event engine: virtual clock, seeded random
//! streams, scenario loading, the simulated cell and the tick loop.

pub mod cell;
pub mod clock;
pub mod log;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use clock::{VirtualClock, DEFAULT_TICK_US};
pub use log::{EventLog, EventRecord, PendingEvent};
pub use rng::random_stream;
pub use scenario::{InjectionKind, InputEvent, Scenario, ScenarioError};
pub use sim::{run, LightTower, RunError, RunOutcome, Simulation, Terminal, TickReport};
