//! The tick loop.
//!
//! Each tick: apply due inputs (E-stop presses first), evaluate the safety
//! relay, let the sequencer react to device feedback, gate its commands
//! through the MCR, hand them to the devices and run the devices to the next
//! tick boundary. Ticks in which nothing can change are skipped in one jump;
//! the event log is identical either way.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::command::{AxisName, Command};
use crate::goniometry::MeasurementRecord;
use crate::safety::{
    mcr_gate, next_discrepancy_deadline, step_safety, SafetyChannelPair, SafetyMode, SafetySource, SafetyState,
};
use crate::sequencer::{step_cycle, CellPlan, CycleState, OperatorInput, Phase};
use crate::signals::{ElectricalMode, Logic, OutputImage, PowerRail, RailVoltage, SignalState};
use crate::simkernel::cell::Cell;
use crate::simkernel::clock::VirtualClock;
use crate::simkernel::log::{EventLog, PendingEvent};
use crate::simkernel::scenario::{Channel, ContactLevel, InputEvent, Scenario};
use crate::Micros;

pub const MCR_RAIL: &str = "24V_MCR";
pub const CONTROL_RAIL: &str = "24V";

/// Outputs fed from the MCR-switched rail.
const MCR_OUTPUTS: [&str; 4] = ["z_valve", "venturi_valve", "dispense_valve", "pump_relay"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("simulated time exceeded the {limit_s} s guard in phase {phase}")]
    Timeout { limit_s: u64, phase: &'static str },
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Complete,
    Faulted,
    Stopped,
}

impl Terminal {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::Complete => "complete",
            Terminal::Faulted => "faulted",
            Terminal::Stopped => "stopped",
        }
    }
}

/// Everything observable about one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub t_us: Micros,
    pub safety: SafetyState,
    pub phase: Phase,
    /// Commands after the MCR gate, as delivered to the devices.
    pub commands: Vec<Command>,
    /// State of the MCR rail at the end of the tick.
    pub mcr_rail_energized: bool,
    /// Number of log records the tick produced.
    pub events: usize,
    /// Ticks covered, more than one when quiet ticks were skipped.
    pub ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Stuck {
    source: SafetySource,
    channel: Channel,
}

pub struct Simulation {
    scenario: Scenario,
    plan: CellPlan,
    clock: VirtualClock,
    log: EventLog,
    safety: SafetyState,
    channels: [SafetyChannelPair; 3],
    stuck: Vec<Stuck>,
    cycle: CycleState,
    cell: Cell,
    schedule: VecDeque<(Micros, InputEvent)>,
    queued: Vec<InputEvent>,
    outputs: OutputImage,
    operator: OperatorInput,
    reset_requested: bool,
    fast_forward: bool,
    last_measurement: Option<MeasurementRecord>,
}

fn healthy_pair(source: SafetySource) -> SafetyChannelPair {
    let closed = SignalState::from_logical(ElectricalMode::SinkingNpn, Logic::Asserted, 0);
    SafetyChannelPair { source, channel_a: closed, channel_b: closed }
}

impl Simulation {
    /// Builds a simulation from a validated scenario.
    pub fn new(scenario: Scenario) -> Self {
        let plan = scenario.plan().expect("validated scenario");
        let mut outputs = OutputImage::new();
        outputs.add_rail(PowerRail::new(MCR_RAIL, RailVoltage::Dc24));
        outputs.add_rail(PowerRail::new(CONTROL_RAIL, RailVoltage::Dc24));
        for name in MCR_OUTPUTS {
            outputs.add_output(name, MCR_RAIL).expect("rail exists");
        }
        for name in ["tower_green", "tower_amber", "tower_red", "start_pilot", "stop_pilot"] {
            outputs.add_output(name, CONTROL_RAIL).expect("rail exists");
        }
        let cell = Cell::new(&scenario);
        let schedule = scenario.input_schedule().into();
        Self {
            clock: VirtualClock::new(scenario.tick_us),
            log: EventLog::new(),
            safety: SafetyState::running(),
            channels: SafetySource::ALL.map(healthy_pair),
            stuck: Vec::new(),
            cycle: CycleState::new(&plan.layout),
            cell,
            schedule,
            queued: Vec::new(),
            outputs,
            operator: OperatorInput::default(),
            reset_requested: false,
            fast_forward: true,
            last_measurement: None,
            plan,
            scenario,
        }
    }

    /// Disables idle-tick skipping (for equivalence checks).
    pub fn with_fast_forward(mut self, enabled: bool) -> Self {
        self.fast_forward = enabled;
        self
    }

    pub fn now(&self) -> Micros {
        self.clock.now()
    }

    pub fn tick_us(&self) -> Micros {
        self.clock.tick()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn safety(&self) -> &SafetyState {
        &self.safety
    }

    pub fn channels(&self) -> &[SafetyChannelPair; 3] {
        &self.channels
    }

    pub fn cycle(&self) -> &CycleState {
        &self.cycle
    }

    pub fn cell(&self) -> &Cell {
        &self.cell
    }

    pub fn outputs(&self) -> &OutputImage {
        &self.outputs
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn last_measurement(&self) -> Option<&MeasurementRecord> {
        self.last_measurement.as_ref()
    }

    pub fn axis_mm(&self, axis: AxisName) -> Option<f64> {
        self.cell.axis_mm(axis)
    }

    /// Queues a live input for the next tick.
    pub fn submit(&mut self, event: InputEvent) {
        self.queued.push(event);
    }

    pub fn has_pending_inputs(&self) -> bool {
        !self.queued.is_empty() || !self.schedule.is_empty()
    }

    /// True once nothing can change without further input.
    pub fn is_settled(&self) -> bool {
        if self.has_pending_inputs() || self.cell.is_busy() || self.cell.has_pending_fault() {
            return false;
        }
        let stable = match self.safety.mode() {
            SafetyMode::Run => {
                matches!(self.cycle.phase, Phase::Idle | Phase::Complete) && self.pending_discrepancy().is_none()
            }
            // A latched fault can still be upgraded to a contact failure.
            SafetyMode::Faulted => self.cycle.phase == Phase::Faulted && self.pending_discrepancy().is_none(),
            SafetyMode::AwaitReset => false,
        };
        stable && !self.operator.start && !self.operator.stop && !self.reset_requested
    }

    /// A discrepancy trip the relay has not evaluated yet. The clock reads
    /// the next tick to run, so a deadline inside the tick just evaluated
    /// (edges between ticks, or exactly one window after an aligned edge)
    /// is still pending.
    fn pending_discrepancy(&self) -> Option<Micros> {
        let evaluated = self.clock.now().saturating_sub(self.clock.tick());
        next_discrepancy_deadline(&self.channels, evaluated, &self.scenario.safety)
    }

    pub fn terminal(&self) -> Option<Terminal> {
        if !self.is_settled() {
            return None;
        }
        Some(match self.cycle.phase {
            Phase::Complete => Terminal::Complete,
            Phase::Faulted => Terminal::Faulted,
            _ => Terminal::Stopped,
        })
    }

    fn set_channel(&mut self, source: SafetySource, channel: Channel, closed: bool, at: Micros) {
        if self.stuck.contains(&Stuck { source, channel }) {
            return;
        }
        let pair = self.channels.iter_mut().find(|p| p.source == source).expect("all sources present");
        let slot = match channel {
            Channel::A => &mut pair.channel_a,
            Channel::B => &mut pair.channel_b,
        };
        if slot.is_asserted() != closed {
            *slot = slot.with_logical(Logic::from_bool(closed), at);
        }
    }

    fn set_pair(&mut self, source: SafetySource, closed: bool, at: Micros) {
        self.set_channel(source, Channel::A, closed, at);
        self.set_channel(source, Channel::B, closed, at);
    }

    /// Applies one input to the simulated world.
    /// Contact edges carry `at`, the input's own time, which may fall
    /// between ticks; everything else happens at the tick `now`.
    fn inject(&mut self, event: InputEvent, at: Micros, now: Micros, events: &mut Vec<PendingEvent>) {
        let mut record = PendingEvent::new(now, "kernel", "input");
        record.payload = event.payload();
        events.push(record);
        match event {
            InputEvent::EstopPress { source } => self.set_pair(source, false, at),
            InputEvent::EstopRelease { source } => self.set_pair(source, true, at),
            InputEvent::DoorOpen => self.set_pair(SafetySource::DoorInterlock, false, at),
            InputEvent::DoorClose => self.set_pair(SafetySource::DoorInterlock, true, at),
            InputEvent::ChannelStuck { source, channel, level } => {
                if let Some(level) = level {
                    self.set_channel(source, channel, level == ContactLevel::Closed, at);
                }
                let s = Stuck { source, channel };
                if !self.stuck.contains(&s) {
                    self.stuck.push(s);
                }
            }
            InputEvent::PartMissing { column, row } => {
                let id = self.cell.part_id_at(column, row);
                self.cell.remove_part(id);
            }
            InputEvent::PumpDry => self.cell.run_dry(),
            InputEvent::SensorSuppress { duration_us } => {
                self.cell.suppress_z_sensors(duration_us.map(|d| now + d));
            }
            InputEvent::StopPress => self.operator.stop = true,
            InputEvent::StartPress => self.operator.start = true,
            InputEvent::ResetPress => self.reset_requested = true,
        }
    }

    /// Runs exactly one tick.
    pub fn step(&mut self) -> TickReport {
        let now = self.clock.now();
        let tick = self.clock.tick();
        let mut events: Vec<PendingEvent> = Vec::new();

        // Inputs due by now, E-stops first.
        let mut due: Vec<(Micros, InputEvent)> =
            std::mem::take(&mut self.queued).into_iter().map(|e| (now, e)).collect();
        while self.schedule.front().is_some_and(|(t, _)| *t <= now) {
            due.push(self.schedule.pop_front().expect("front exists"));
        }
        due.sort_by_key(|(_, e)| !e.is_estop());
        for (at, event) in due {
            self.inject(event, at, now, &mut events);
        }

        // Safety relay.
        let before = self.safety;
        self.safety = step_safety(&before, &self.channels, self.reset_requested, now, &self.scenario.safety)
            .expect("all safety sources present");
        self.reset_requested = false;
        if self.safety != before {
            events.push(
                PendingEvent::new(now, "safety", "mode")
                    .with("mode", self.safety.mode().as_str())
                    .with("cause", self.safety.fault_cause().map_or(Value::Null, |c| c.as_str().into()))
                    .with("mcr_energized", self.safety.mcr_energized()),
            );
        }
        if self.safety.mcr_energized() != before.mcr_energized() {
            self.outputs.set_rail(MCR_RAIL, self.safety.mcr_energized(), now).expect("rail exists");
            events.push(PendingEvent::new(now, "safety", "mcr").with("energized", self.safety.mcr_energized()));
            if !self.safety.mcr_energized() {
                self.cell.power_loss(now, &mut events);
            }
        }

        // Sequencer.
        let feedback = self.cell.take_feedback();
        let operator = std::mem::take(&mut self.operator);
        let out = step_cycle(&self.cycle, &self.safety, operator, &feedback, &self.plan, now);
        let changed_cycle = out.state != self.cycle;
        self.cycle = out.state;
        events.extend(out.events);

        // MCR gate and devices.
        let commands = mcr_gate(&self.safety, &out.commands);
        let run = self.safety.is_run();
        for cmd in &commands {
            let mut record = PendingEvent::new(now, "sequencer", "command");
            if let Value::Object(map) = serde_json::to_value(cmd).expect("command serializes") {
                record.payload = map;
            }
            events.push(record);
            self.drive_output(cmd, now);
            self.cell.apply(cmd, now, run, &mut events);
        }
        self.cell.advance_to(now + tick, &mut events);
        self.update_tower(now);

        // Stable by time: device completions inside the tick keep their
        // exact instants after the tick's own records.
        events.sort_by_key(|e| e.t_us);
        let n = events.len();
        for e in events {
            if e.kind == "measurement" {
                self.last_measurement = self.cell.measurements.last().copied();
            }
            self.log.push(e);
        }
        self.clock.advance();

        let quiet = n == 0 && !changed_cycle && self.safety == before && commands.is_empty();
        let mut ticks = 1;
        if quiet && self.fast_forward {
            ticks += self.skip_quiet();
        }
        TickReport {
            t_us: now,
            safety: self.safety,
            phase: self.cycle.phase,
            commands,
            mcr_rail_energized: self.outputs.rail(MCR_RAIL).is_some_and(|r| r.energized),
            events: n,
            ticks,
        }
    }

    /// After a quiet tick, jumps the clock to the last tick boundary before
    /// anything can happen. Returns the ticks skipped.
    fn skip_quiet(&mut self) -> u64 {
        if !self.queued.is_empty() || self.cell.has_pending_fault() {
            return 0;
        }
        let now = self.clock.now();
        let tick = self.clock.tick();
        // Tick start at which each wake source becomes visible.
        let mut wake: Option<Micros> = None;
        let mut consider = |t: Micros| wake = Some(wake.map_or(t, |w| w.min(t)));
        if let Some((t, _)) = self.schedule.front() {
            consider(self.clock.boundary_at_or_after(*t));
        }
        if let Some(t) = self.pending_discrepancy() {
            consider(self.clock.boundary_at_or_after(t));
        }
        if let Some(t) = self.cell.next_event_us() {
            // The event falls in (T, T + tick] of the tick starting at T.
            let b = self.clock.boundary_at_or_after(t);
            consider(b.saturating_sub(tick).max(now));
        }
        let Some(target) = wake else {
            return 0;
        };
        if target <= now {
            return 0;
        }
        // Devices run through the gap; by construction nothing is emitted.
        let mut events = Vec::new();
        self.cell.advance_to(target, &mut events);
        debug_assert!(events.is_empty(), "fast-forward crossed a device event: {events:?}");
        let skipped = (target - now) / tick;
        self.clock.jump_to(target);
        skipped
    }

    fn drive_output(&mut self, cmd: &Command, now: Micros) {
        use crate::command::{Actuator, ZDirection};
        let mut set = |name: &str, on: bool| {
            self.outputs.drive(name, Logic::from_bool(on), now).expect("known output");
        };
        match *cmd {
            Command::Z { direction } => set("z_valve", direction == ZDirection::Down),
            Command::Grip => set("venturi_valve", true),
            Command::Release => set("venturi_valve", false),
            Command::PumpRun { .. } => set("pump_relay", true),
            Command::PumpStop => set("pump_relay", false),
            Command::DeEnergize { actuator } => match actuator {
                Actuator::ZValve => set("z_valve", false),
                Actuator::Venturi => set("venturi_valve", false),
                Actuator::DispenseValve => set("dispense_valve", false),
                Actuator::PumpRelay => set("pump_relay", false),
                Actuator::Drive(_) => {}
            },
            Command::Lamp { lamp, on } => set(
                match lamp {
                    crate::command::Lamp::StartPilot => "start_pilot",
                    crate::command::Lamp::StopPilot => "stop_pilot",
                },
                on,
            ),
            _ => {}
        }
    }

    fn update_tower(&mut self, now: Micros) {
        let tower = LightTower::from_state(&self.safety, self.cycle.phase);
        for (name, on) in [("tower_green", tower.green), ("tower_amber", tower.amber), ("tower_red", tower.red)] {
            if self.outputs.output(name).map(|s| s.is_asserted()) != Some(on) {
                self.outputs.drive(name, Logic::from_bool(on), now).expect("known output");
            }
        }
    }

    /// Runs until the cell settles.
    pub fn run_to_end(&mut self) -> Result<Terminal, RunError> {
        let limit = self.scenario.max_time_s * 1_000_000;
        loop {
            if let Some(t) = self.terminal() {
                return Ok(t);
            }
            if self.clock.now() > limit {
                return Err(RunError::Timeout { limit_s: self.scenario.max_time_s, phase: self.cycle.phase.as_str() });
            }
            self.step();
        }
    }
}

/// Stack light colors derived from safety and cycle state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightTower {
    pub green: bool,
    pub amber: bool,
    pub red: bool,
}

impl LightTower {
    pub fn from_state(safety: &SafetyState, phase: Phase) -> Self {
        let red = !safety.is_run();
        let green = !red && phase.is_active();
        Self { green, amber: !red && !green, red }
    }
}

/// Outcome of a complete headless run.
pub struct RunOutcome {
    pub terminal: Terminal,
    pub simulation: Simulation,
}

/// Runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<RunOutcome, RunError> {
    let mut sim = Simulation::new(scenario);
    let terminal = sim.run_to_end()?;
    Ok(RunOutcome { terminal, simulation: sim })
}
