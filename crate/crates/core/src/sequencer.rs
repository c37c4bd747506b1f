//! Test-cycle control logic.
//!
//! After the operator's start the cell initializes, homes every axis and then
//! walks the tray column by column (outer loop) and row by row within a
//! column (inner loop). Each part is picked, placed on the tester, dosed
//! with a droplet, measured and unloaded. A stop parks the cell; a safety
//! fault drops everything immediately.
//!
//! Every phase is a short script of device actions. One action is issued at
//! a time; the sequencer waits for the devices to report idle before moving
//! on, so ordering within a part is guaranteed by construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{Actuator, AxisName, Command, Lamp, ZDirection};
use crate::safety::SafetyState;
use crate::simkernel::log::PendingEvent;
use crate::Micros;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequencerError {
    #[error("slot ({column}, {row}) is outside a {columns}x{rows} tray")]
    IndexError { column: u32, row: u32, columns: u32, rows: u32 },
    #[error("invalid tray layout: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrayLayout {
    pub columns: u32,
    pub rows: u32,
    pub origin_mm: (f64, f64),
    pub pitch_mm: (f64, f64),
}

impl Default for TrayLayout {
    fn default() -> Self {
        Self { columns: 5, rows: 5, origin_mm: (20.0, 100.0), pitch_mm: (60.0, 60.0) }
    }
}

impl TrayLayout {
    pub fn total_parts(&self) -> u32 {
        self.columns * self.rows
    }

    pub fn validate(&self) -> Result<(), SequencerError> {
        if self.columns == 0 || self.rows == 0 {
            return Err(SequencerError::Layout("columns and rows must be positive".into()));
        }
        let (ox, oy) = self.origin_mm;
        let (px, py) = self.pitch_mm;
        if !(ox >= 0.0 && oy >= 0.0 && px > 0.0 && py > 0.0) {
            return Err(SequencerError::Layout("origin must be non-negative and pitch positive".into()));
        }
        Ok(())
    }

    /// One-based part id of a slot, numbered in visiting order.
    pub fn part_id(&self, column: u32, row: u32) -> u32 {
        column * self.rows + row + 1
    }

    pub fn slot_of(&self, part_id: u32) -> (u32, u32) {
        let i = part_id - 1;
        (i / self.rows, i % self.rows)
    }
}

pub fn part_position(layout: &TrayLayout, column: u32, row: u32) -> Result<(f64, f64), SequencerError> {
    if column >= layout.columns || row >= layout.rows {
        return Err(SequencerError::IndexError { column, row, columns: layout.columns, rows: layout.rows });
    }
    Ok((
        layout.origin_mm.0 + f64::from(column) * layout.pitch_mm.0,
        layout.origin_mm.1 + f64::from(row) * layout.pitch_mm.1,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Initializing,
    Homing,
    Picking,
    Placing,
    Dispensing,
    Measuring,
    Unloading,
    Advancing,
    Complete,
    Stopping,
    Faulted,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Initializing => "initializing",
            Phase::Homing => "homing",
            Phase::Picking => "picking",
            Phase::Placing => "placing",
            Phase::Dispensing => "dispensing",
            Phase::Measuring => "measuring",
            Phase::Unloading => "unloading",
            Phase::Advancing => "advancing",
            Phase::Complete => "complete",
            Phase::Stopping => "stopping",
            Phase::Faulted => "faulted",
        }
    }

    /// Phases in which the cycle is actively working a batch.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            Phase::Initializing
                | Phase::Homing
                | Phase::Picking
                | Phase::Placing
                | Phase::Dispensing
                | Phase::Measuring
                | Phase::Unloading
                | Phase::Advancing
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPolicy {
    #[default]
    SkipPart,
    Halt,
}

/// Device-level failures reported back to the sequencer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceFault {
    PickMiss,
    DryDispense,
    ActuatorFault,
    MeasurementFault,
    HomingTimeout,
    Motion,
}

impl DeviceFault {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceFault::PickMiss => "pick_miss",
            DeviceFault::DryDispense => "dry_dispense",
            DeviceFault::ActuatorFault => "actuator_fault",
            DeviceFault::MeasurementFault => "measurement_fault",
            DeviceFault::HomingTimeout => "homing_timeout",
            DeviceFault::Motion => "motion",
        }
    }

    /// Faults the skip-part policy may absorb. Homing and motion faults
    /// always halt the batch.
    pub fn is_per_part(self) -> bool {
        matches!(
            self,
            DeviceFault::PickMiss
                | DeviceFault::DryDispense
                | DeviceFault::ActuatorFault
                | DeviceFault::MeasurementFault
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeviceFeedback {
    pub busy: bool,
    pub fault: Option<DeviceFault>,
    pub homed: [bool; 3],
    pub reservoir_ml: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OperatorInput {
    pub start: bool,
    pub stop: bool,
}

/// Targets in drive steps, resolved once from the layout and axis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPlan {
    pub layout: TrayLayout,
    /// Slot targets, indexed by `part_id - 1`.
    pub slots: Vec<(i64, i64)>,
    pub station: (i64, i64),
    pub unload: (i64, i64),
    pub drop_steps: i64,
    pub policy: FaultPolicy,
    pub refill_below_ml: f64,
    pub reservoir_capacity_ml: f64,
    pub pump_flow_ml_per_min: f64,
}

impl CellPlan {
    fn slot(&self, column: u32, row: u32) -> (i64, i64) {
        self.slots[(self.layout.part_id(column, row) - 1) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleState {
    pub phase: Phase,
    pub column: u32,
    pub row: u32,
    pub parts_done: u32,
    pub total_parts: u32,
    pub started_at: Option<Micros>,
    /// Current action within the phase script.
    pub step: u8,
    /// Whether `step` has been issued and is awaiting device completion.
    pub issued: bool,
    /// The current part was abandoned and only recovery actions remain.
    pub skipping: bool,
    /// Set when a device fault halted the batch.
    pub halted: Option<DeviceFault>,
    pub homed: bool,
}

impl CycleState {
    pub fn new(layout: &TrayLayout) -> Self {
        Self {
            phase: Phase::Idle,
            column: 0,
            row: 0,
            parts_done: 0,
            total_parts: layout.total_parts(),
            started_at: None,
            step: 0,
            issued: false,
            skipping: false,
            halted: None,
            homed: false,
        }
    }

    pub fn part_id(&self, layout: &TrayLayout) -> u32 {
        layout.part_id(self.column, self.row)
    }
}

/// Resets the cycle to its initial conditions: indices and counters zeroed,
/// axes considered unhomed. The phase itself is left to the caller.
pub fn initialize(cycle: &CycleState) -> CycleState {
    CycleState {
        phase: cycle.phase,
        column: 0,
        row: 0,
        parts_done: 0,
        total_parts: cycle.total_parts,
        started_at: cycle.started_at,
        step: 0,
        issued: false,
        skipping: false,
        halted: None,
        homed: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    pub state: CycleState,
    pub commands: Vec<Command>,
    pub events: Vec<PendingEvent>,
}

fn de_energize_all() -> Vec<Command> {
    Actuator::ALL.iter().map(|&actuator| Command::DeEnergize { actuator }).collect()
}

fn move_xy(target: (i64, i64)) -> Vec<Command> {
    vec![
        Command::Move { axis: AxisName::X, target_steps: target.0 },
        Command::Move { axis: AxisName::Y, target_steps: target.1 },
    ]
}

fn z(direction: ZDirection) -> Vec<Command> {
    vec![Command::Z { direction }]
}

/// The action list of a phase for the current part.
fn script(cycle: &CycleState, plan: &CellPlan, feedback: &DeviceFeedback) -> Vec<Vec<Command>> {
    let part = cycle.part_id(&plan.layout);
    match cycle.phase {
        Phase::Initializing => {
            let mut steps = vec![vec![Command::Release, Command::PumpStop]];
            if feedback.reservoir_ml < plan.refill_below_ml && plan.pump_flow_ml_per_min > 0.0 {
                let missing = plan.reservoir_capacity_ml - feedback.reservoir_ml;
                let duration_us = (missing / plan.pump_flow_ml_per_min * 60e6).ceil() as Micros;
                steps.push(vec![Command::PumpRun { duration_us }]);
            }
            steps
        }
        Phase::Homing => vec![vec![
            Command::Z { direction: ZDirection::Up },
            Command::Home { axis: AxisName::X },
            Command::Home { axis: AxisName::Y },
            Command::Home { axis: AxisName::Dispenser },
        ]],
        Phase::Picking => vec![
            move_xy(plan.slot(cycle.column, cycle.row)),
            z(ZDirection::Down),
            vec![Command::Grip],
            z(ZDirection::Up),
        ],
        Phase::Placing => vec![move_xy(plan.station), z(ZDirection::Down), vec![Command::Release], z(ZDirection::Up)],
        Phase::Dispensing => vec![
            vec![Command::Move { axis: AxisName::Dispenser, target_steps: plan.drop_steps }],
            vec![Command::Dispense { part_id: part }],
            vec![Command::Move { axis: AxisName::Dispenser, target_steps: 0 }],
        ],
        Phase::Measuring => vec![vec![Command::Measure { part_id: part }]],
        Phase::Unloading => vec![
            z(ZDirection::Down),
            vec![Command::Grip],
            z(ZDirection::Up),
            move_xy(plan.unload),
            z(ZDirection::Down),
            vec![Command::Release],
            z(ZDirection::Up),
        ],
        Phase::Advancing if cycle.skipping => vec![vec![Command::Release], z(ZDirection::Up)],
        Phase::Stopping => {
            let mut first: Vec<Command> = AxisName::ALL.iter().map(|&axis| Command::Halt { axis }).collect();
            first.extend([Command::Release, Command::PumpStop, Command::Z { direction: ZDirection::Up }]);
            let park: Vec<Command> = AxisName::ALL
                .iter()
                .zip(feedback.homed)
                .filter(|(_, homed)| *homed)
                .map(|(&axis, _)| Command::Move { axis, target_steps: 0 })
                .collect();
            if park.is_empty() {
                vec![first]
            } else {
                vec![first, park]
            }
        }
        _ => Vec::new(),
    }
}

fn phase_after(phase: Phase) -> Phase {
    match phase {
        Phase::Initializing => Phase::Homing,
        Phase::Homing => Phase::Picking,
        Phase::Picking => Phase::Placing,
        Phase::Placing => Phase::Dispensing,
        Phase::Dispensing => Phase::Measuring,
        Phase::Measuring => Phase::Unloading,
        Phase::Unloading => Phase::Advancing,
        other => other,
    }
}

struct Step<'a> {
    next: CycleState,
    commands: Vec<Command>,
    events: Vec<PendingEvent>,
    now: Micros,
    plan: &'a CellPlan,
}

impl Step<'_> {
    fn enter(&mut self, phase: Phase) {
        let from = self.next.phase;
        if from == phase {
            return;
        }
        self.next.phase = phase;
        self.next.step = 0;
        self.next.issued = false;
        if from.is_active() != phase.is_active() || phase == Phase::Stopping {
            let running = phase.is_active();
            self.commands.push(Command::Lamp { lamp: Lamp::StartPilot, on: running });
            self.commands.push(Command::Lamp { lamp: Lamp::StopPilot, on: !running });
        }
        self.events.push(
            PendingEvent::new(self.now, "sequencer", "phase")
                .with("from", from.as_str())
                .with("to", phase.as_str())
                .with("column", self.next.column)
                .with("row", self.next.row)
                .with("parts_done", self.next.parts_done),
        );
    }

    fn advance_index(&mut self) {
        let layout = &self.plan.layout;
        self.next.parts_done += 1;
        self.next.skipping = false;
        if self.next.parts_done >= self.next.total_parts {
            self.enter(Phase::Complete);
            return;
        }
        self.next.row += 1;
        if self.next.row >= layout.rows {
            self.next.row = 0;
            self.next.column += 1;
        }
        self.enter(Phase::Picking);
    }
}

/// Advances the cycle by one tick.
pub fn step_cycle(
    cycle: &CycleState,
    safety: &SafetyState,
    operator: OperatorInput,
    feedback: &DeviceFeedback,
    plan: &CellPlan,
    now: Micros,
) -> CycleOutput {
    let mut s = Step { next: cycle.clone(), commands: Vec::new(), events: Vec::new(), now, plan };

    if !safety.is_run() {
        if cycle.phase != Phase::Faulted {
            s.enter(Phase::Faulted);
            s.next.homed = false;
            s.commands.extend(de_energize_all());
        }
        return finish(s);
    }

    match cycle.phase {
        Phase::Faulted => {
            s.enter(Phase::Idle);
            return finish(s);
        }
        Phase::Idle | Phase::Complete => {
            if operator.start && !operator.stop {
                s.next = initialize(&s.next);
                s.next.started_at = Some(now);
                s.enter(Phase::Initializing);
            }
            return finish(s);
        }
        Phase::Stopping => {}
        phase if phase.is_active() && operator.stop => {
            s.enter(Phase::Stopping);
            return finish(s);
        }
        _ => {}
    }

    // Wait for the outstanding action.
    if s.next.issued {
        if feedback.busy {
            return finish(s);
        }
        if let Some(fault) = feedback.fault {
            if s.next.phase != Phase::Stopping && !s.next.skipping {
                handle_fault(&mut s, fault);
                return finish(s);
            }
        }
        s.next.step += 1;
        s.next.issued = false;
    }

    let actions = script(&s.next, plan, feedback);
    if let Some(action) = actions.get(usize::from(s.next.step)) {
        s.commands.extend(action.iter().copied());
        s.next.issued = true;
        return finish(s);
    }

    // Script finished.
    match s.next.phase {
        Phase::Stopping => s.enter(Phase::Idle),
        Phase::Homing => {
            s.next.homed = true;
            s.enter(Phase::Picking);
        }
        Phase::Advancing => s.advance_index(),
        phase => s.enter(phase_after(phase)),
    }
    finish(s)
}

fn handle_fault(s: &mut Step<'_>, fault: DeviceFault) {
    let part = s.next.part_id(&s.plan.layout);
    if fault.is_per_part() && s.plan.policy == FaultPolicy::SkipPart && s.next.phase != Phase::Homing {
        s.events.push(
            PendingEvent::new(s.now, "sequencer", "part_skipped")
                .with("part_id", part)
                .with("column", s.next.column)
                .with("row", s.next.row)
                .with("fault", fault.as_str()),
        );
        if s.next.phase == Phase::Advancing {
            // Restart the advance script from the top.
            s.next.step = 0;
            s.next.issued = false;
        } else {
            s.enter(Phase::Advancing);
        }
        s.next.skipping = true;
    } else {
        s.events
            .push(PendingEvent::new(s.now, "sequencer", "halted").with("part_id", part).with("fault", fault.as_str()));
        s.next.halted = Some(fault);
        s.enter(Phase::Stopping);
    }
}

fn finish(s: Step<'_>) -> CycleOutput {
    CycleOutput { state: s.next, commands: s.commands, events: s.events }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety::FaultCause;

    fn plan() -> CellPlan {
        let layout = TrayLayout::default();
        let slots = (1..=layout.total_parts())
            .map(|id| {
                let (c, r) = layout.slot_of(id);
                (i64::from(c) * 100, i64::from(r) * 100)
            })
            .collect();
        CellPlan {
            layout,
            slots,
            station: (1000, 1000),
            unload: (2000, 2000),
            drop_steps: 500,
            policy: FaultPolicy::SkipPart,
            refill_below_ml: 50.0,
            reservoir_capacity_ml: 250.0,
            pump_flow_ml_per_min: 1300.0,
        }
    }

    fn idle_feedback() -> DeviceFeedback {
        DeviceFeedback { busy: false, fault: None, homed: [true; 3], reservoir_ml: 100.0 }
    }

    fn start() -> OperatorInput {
        OperatorInput { start: true, stop: false }
    }

    #[test]
    fn positions() {
        let layout = TrayLayout::default();
        assert_eq!(part_position(&layout, 0, 0).unwrap(), layout.origin_mm);
        assert_eq!(part_position(&layout, 1, 0).unwrap(), (layout.origin_mm.0 + 60.0, layout.origin_mm.1));
        assert!(matches!(part_position(&layout, 5, 0), Err(SequencerError::IndexError { .. })));
        assert!(matches!(part_position(&layout, 0, 5), Err(SequencerError::IndexError { .. })));
        for c in 0..5 {
            for r in 0..5 {
                let (_, y) = part_position(&layout, c, r).unwrap();
                assert!((0.0..=1360.0).contains(&y));
            }
        }
    }

    #[test]
    fn start_from_idle() {
        let p = plan();
        let c = CycleState::new(&p.layout);
        let out = step_cycle(&c, &SafetyState::running(), start(), &idle_feedback(), &p, 0);
        assert_eq!(out.state.phase, Phase::Initializing);
        let none = step_cycle(&c, &SafetyState::running(), OperatorInput::default(), &idle_feedback(), &p, 0);
        assert_eq!(none.state.phase, Phase::Idle);
        assert!(none.commands.is_empty());
    }

    #[test]
    fn safety_fault_dominates_every_phase() {
        let p = plan();
        let faulted = SafetyState::faulted(FaultCause::Estop, 0);
        for phase in [
            Phase::Idle,
            Phase::Initializing,
            Phase::Homing,
            Phase::Picking,
            Phase::Placing,
            Phase::Dispensing,
            Phase::Measuring,
            Phase::Unloading,
            Phase::Advancing,
            Phase::Complete,
            Phase::Stopping,
            Phase::Faulted,
        ] {
            let mut c = CycleState::new(&p.layout);
            c.phase = phase;
            let out = step_cycle(&c, &faulted, start(), &idle_feedback(), &p, 0);
            assert_eq!(out.state.phase, Phase::Faulted);
            assert!(out.commands.iter().all(|c| !c.is_energize()), "{phase:?}");
        }
    }

    #[test]
    fn initialize_zeroes_and_is_idempotent() {
        let p = plan();
        let mut c = CycleState::new(&p.layout);
        c.column = 3;
        c.row = 2;
        c.parts_done = 17;
        c.homed = true;
        let once = initialize(&c);
        assert_eq!((once.column, once.row, once.parts_done, once.homed), (0, 0, 0, false));
        assert_eq!(initialize(&once), once);
    }

    /// Trace oracle: drive the sequencer with instantly-completing devices
    /// and record the slot of every measure command.
    #[test]
    fn healthy_run_visits_slots_column_major() {
        let p = plan();
        let mut c = CycleState::new(&p.layout);
        let mut measured = Vec::new();
        let mut op = start();
        for t in 0..100_000u64 {
            let out = step_cycle(&c, &SafetyState::running(), op, &idle_feedback(), &p, t);
            op = OperatorInput::default();
            for cmd in &out.commands {
                if let Command::Measure { part_id } = cmd {
                    measured.push(p.layout.slot_of(*part_id));
                }
            }
            c = out.state;
            if c.phase == Phase::Complete {
                break;
            }
        }
        assert_eq!(c.phase, Phase::Complete);
        assert_eq!(c.parts_done, 25);
        let expected: Vec<(u32, u32)> = (0..5).flat_map(|col| (0..5).map(move |row| (col, row))).collect();
        assert_eq!(measured, expected);
    }

    #[test]
    fn stop_parks_then_idles() {
        let p = plan();
        let mut c = CycleState::new(&p.layout);
        c.phase = Phase::Placing;
        c.issued = true;
        let out = step_cycle(
            &c,
            &SafetyState::running(),
            OperatorInput { start: false, stop: true },
            &idle_feedback(),
            &p,
            0,
        );
        assert_eq!(out.state.phase, Phase::Stopping);
        let mut c = out.state;
        let mut issued = Vec::new();
        for t in 1..10 {
            let out = step_cycle(&c, &SafetyState::running(), OperatorInput::default(), &idle_feedback(), &p, t);
            issued.extend(out.commands);
            c = out.state;
        }
        assert_eq!(c.phase, Phase::Idle);
        assert!(issued.contains(&Command::Release));
        assert!(issued.contains(&Command::Z { direction: ZDirection::Up }));
        assert!(issued.contains(&Command::Move { axis: AxisName::X, target_steps: 0 }));
    }

    #[test]
    fn pick_miss_skips_part() {
        let p = plan();
        let mut c = CycleState::new(&p.layout);
        c.phase = Phase::Picking;
        c.step = 2;
        c.issued = true;
        let fb = DeviceFeedback { fault: Some(DeviceFault::PickMiss), ..idle_feedback() };
        let out = step_cycle(&c, &SafetyState::running(), OperatorInput::default(), &fb, &p, 0);
        assert_eq!(out.state.phase, Phase::Advancing);
        assert!(out.state.skipping);
        assert!(out.events.iter().any(|e| e.kind == "part_skipped"));

        let halting = CellPlan { policy: FaultPolicy::Halt, ..p };
        let out = step_cycle(&c, &SafetyState::running(), OperatorInput::default(), &fb, &halting, 0);
        assert_eq!(out.state.phase, Phase::Stopping);
        assert_eq!(out.state.halted, Some(DeviceFault::PickMiss));
    }

    #[test]
    fn refill_when_low() {
        let p = plan();
        let mut c = CycleState::new(&p.layout);
        c.phase = Phase::Initializing;
        c.step = 1;
        let fb = DeviceFeedback { reservoir_ml: 10.0, ..idle_feedback() };
        let out = step_cycle(&c, &SafetyState::running(), OperatorInput::default(), &fb, &p, 0);
        assert!(matches!(out.commands.as_slice(), [Command::PumpRun { .. }]));
    }
}
