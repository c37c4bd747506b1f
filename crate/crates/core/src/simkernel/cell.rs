//! Simulated cell hardware: what the controller's commands actually do.
//!
//! Every device change that the sequencer can observe is reported as an
//! event with its exact time, and `next_event_us` predicts the next one so
//! the kernel can skip quiet stretches.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::command::{Actuator, AxisName, Command};
use crate::fluidics::{dispense, DispenseSpec, FluidicsError, GripOutcome, PumpSpec, Reservoir, VacuumGripper};
use crate::goniometry::{measure, report_deg, MeasurementRecord};
use crate::motion::{
    plan_move, steps_to_mm, HomingAction, HomingRun, MotionError, MoveProfile, PneumaticZ, StepperAxis, ZEvent,
    ZPosition,
};
use crate::sequencer::{DeviceFault, DeviceFeedback};
use crate::simkernel::log::PendingEvent;
use crate::simkernel::rng::{random_stream, StreamRng};
use crate::simkernel::scenario::{GoniometryConfig, Scenario};
use crate::Micros;

#[derive(Debug, Clone, PartialEq)]
enum Activity {
    Idle,
    Moving { start: Micros, from: i64, profile: MoveProfile, done: u64 },
    Homing { start: Micros, run: HomingRun, pulses: u64, next: HomingAction },
}

/// One stepper drive and the carriage it moves.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisDrive {
    pub axis: StepperAxis,
    /// Carriage position in steps from the home switch. The switch reads
    /// asserted at or below zero.
    physical: i64,
    activity: Activity,
    /// Pulses emitted since power-up.
    pub pulses_total: u64,
}

impl AxisDrive {
    pub fn new(axis: StepperAxis, physical: i64) -> Self {
        Self { axis, physical, activity: Activity::Idle, pulses_total: 0 }
    }

    pub fn physical_steps(&self) -> i64 {
        self.physical
    }

    pub fn switch_asserted(&self) -> bool {
        self.physical <= 0
    }

    pub fn is_busy(&self) -> bool {
        self.activity != Activity::Idle
    }

    /// Carriage position in the homed frame, valid or not.
    fn frame_position(&self) -> i64 {
        self.physical - self.axis.home_backoff_steps
    }

    pub fn start_move(&mut self, target: i64, now: Micros) -> Result<MoveProfile, MotionError> {
        let profile = plan_move(&self.axis, target)?;
        let from = self.axis.position().expect("planned moves are homed");
        self.activity = if profile.pulses() == 0 {
            Activity::Idle
        } else {
            Activity::Moving { start: now, from, profile, done: 0 }
        };
        Ok(profile)
    }

    pub fn start_homing(&mut self, now: Micros) {
        self.axis.mark_unhomed();
        let mut run = HomingRun::new(&self.axis);
        let next = run.next(self.switch_asserted());
        self.activity = Activity::Homing { start: now, run, pulses: 0, next };
    }

    /// Stops the pulse train. Returns what was interrupted.
    pub fn stop(&mut self) -> Option<&'static str> {
        match std::mem::replace(&mut self.activity, Activity::Idle) {
            Activity::Idle => None,
            Activity::Moving { .. } => Some("move"),
            Activity::Homing { .. } => {
                self.axis.mark_unhomed();
                Some("homing")
            }
        }
    }

    /// Time of the next completion, timeout or homing result.
    pub fn next_event_us(&self) -> Option<Micros> {
        match &self.activity {
            Activity::Idle => None,
            Activity::Moving { start, profile, .. } => Some(start + self.axis.pulse_offset_us(profile.pulses())),
            Activity::Homing { start, run, pulses, next } => {
                let mut run = *run;
                let mut next = *next;
                let mut physical = self.physical;
                let mut k = *pulses;
                loop {
                    match next {
                        HomingAction::Pulse(dir) => {
                            k += 1;
                            physical += dir.sign();
                            if run.is_seeking() {
                                next = run.next(physical <= 0);
                            } else {
                                next = run.next(false);
                            }
                        }
                        _ => return Some(start + self.axis.pulse_offset_us(k)),
                    }
                }
            }
        }
    }

    /// Emits every pulse due up to `t`.
    pub fn advance_to(&mut self, t: Micros, events: &mut Vec<PendingEvent>) -> Option<DeviceFault> {
        let name = self.axis.name.as_str();
        match &mut self.activity {
            Activity::Idle => None,
            Activity::Moving { start, from, profile, done } => {
                let (start, from, profile) = (*start, *from, *profile);
                let target_done = self.axis.pulses_within(t.saturating_sub(start)).min(profile.pulses());
                let newly = target_done - *done;
                *done = target_done;
                self.physical += profile.direction.sign() * newly as i64;
                self.pulses_total += newly;
                if target_done == profile.pulses() {
                    let end = start + self.axis.pulse_offset_us(profile.pulses());
                    let pos = from + profile.delta_steps;
                    self.axis.set_homed_position(pos);
                    self.activity = Activity::Idle;
                    events.push(
                        PendingEvent::new(end, "motion", "move_end")
                            .with("axis", name)
                            .with("position_steps", pos)
                            .with("pulses", profile.pulses())
                            .with("elapsed_us", end - start),
                    );
                } else {
                    let pos = from + profile.direction.sign() * target_done as i64;
                    self.axis.set_homed_position(pos);
                }
                None
            }
            Activity::Homing { start, run, pulses, next } => {
                let start = *start;
                loop {
                    match *next {
                        HomingAction::Pulse(dir) => {
                            let at = start + self.axis.pulse_offset_us(*pulses + 1);
                            if at > t {
                                return None;
                            }
                            *pulses += 1;
                            self.physical += dir.sign();
                            self.pulses_total += 1;
                            let asserted = self.physical <= 0;
                            *next = run.next(asserted && run.is_seeking());
                        }
                        HomingAction::Done => {
                            let at = start + self.axis.pulse_offset_us(*pulses);
                            let seek = run.seek_pulses();
                            self.activity = Activity::Idle;
                            self.axis.set_homed_position(0);
                            events.push(
                                PendingEvent::new(at, "motion", "homed")
                                    .with("axis", name)
                                    .with("seek_pulses", seek)
                                    .with("elapsed_us", at - start),
                            );
                            return None;
                        }
                        HomingAction::Timeout => {
                            let at = start + self.axis.pulse_offset_us(*pulses);
                            let max_seek = run.max_seek();
                            self.activity = Activity::Idle;
                            events.push(
                                PendingEvent::new(at, "motion", "homing_timeout")
                                    .with("axis", name)
                                    .with("max_seek", max_seek),
                            );
                            return Some(DeviceFault::HomingTimeout);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Timed {
    until: Micros,
    part_id: u32,
}

/// All simulated hardware of the cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub drives: [AxisDrive; 3],
    pub z: PneumaticZ,
    pub gripper: VacuumGripper,
    pub reservoir: Reservoir,
    pump: PumpSpec,
    dispense_spec: DispenseSpec,
    goniometry: GoniometryConfig,
    station: (i64, i64),
    unload: (i64, i64),
    drop_steps: i64,
    layout_rows: u32,
    /// Parts resting somewhere, keyed by position in the homed frame.
    parts: BTreeMap<(i64, i64), u32>,
    carried: Option<u32>,
    pub unloaded: Vec<u32>,
    droplets: BTreeMap<u32, f64>,
    pump_run: Option<(Micros, Micros)>,
    supply_dry: bool,
    burst: Option<Timed>,
    tester: Option<Timed>,
    z_suppress_until: Option<Micros>,
    pending_fault: Option<DeviceFault>,
    pub measurements: Vec<MeasurementRecord>,
    dispense_rng: StreamRng,
    measure_rng: StreamRng,
}

impl Cell {
    pub fn new(scenario: &Scenario) -> Self {
        let plan = scenario.plan().expect("validated scenario");
        let drive = |name: AxisName| {
            let axis = scenario.axis(name);
            let initial = crate::motion::mm_to_steps(&axis, scenario.axes.get(name).initial_position_mm).0;
            AxisDrive::new(axis, initial)
        };
        let mut parts = BTreeMap::new();
        for (i, &slot) in plan.slots.iter().enumerate() {
            parts.insert(slot, i as u32 + 1);
        }
        Self {
            drives: [drive(AxisName::X), drive(AxisName::Y), drive(AxisName::Dispenser)],
            z: PneumaticZ::new(scenario.z.stroke_time_ms * 1000, scenario.z.confirm_margin_ms * 1000),
            gripper: VacuumGripper::default(),
            reservoir: Reservoir::new(scenario.fluidics.reservoir_capacity_ml, scenario.fluidics.reservoir_level_ml)
                .expect("validated reservoir"),
            pump: scenario.fluidics.pump.clone(),
            dispense_spec: scenario.fluidics.dispense.clone(),
            goniometry: scenario.goniometry.clone(),
            station: plan.station,
            unload: plan.unload,
            drop_steps: plan.drop_steps,
            layout_rows: plan.layout.rows,
            parts,
            carried: None,
            unloaded: Vec::new(),
            droplets: BTreeMap::new(),
            pump_run: None,
            supply_dry: false,
            burst: None,
            tester: None,
            z_suppress_until: None,
            pending_fault: None,
            measurements: Vec::new(),
            dispense_rng: random_stream(scenario.seed, "dispense-volume"),
            measure_rng: random_stream(scenario.seed, "measurement-noise"),
        }
    }

    pub fn drive(&self, axis: AxisName) -> &AxisDrive {
        &self.drives[axis_index(axis)]
    }

    fn drive_mut(&mut self, axis: AxisName) -> &mut AxisDrive {
        &mut self.drives[axis_index(axis)]
    }

    pub fn axis_mm(&self, axis: AxisName) -> Option<f64> {
        let d = self.drive(axis);
        d.axis.position().map(|p| steps_to_mm(&d.axis, p))
    }

    pub fn is_busy(&self) -> bool {
        self.drives.iter().any(AxisDrive::is_busy)
            || self.z.in_motion()
            || self.pump_run.is_some()
            || self.burst.is_some()
            || self.tester.is_some()
    }

    pub fn carried(&self) -> Option<u32> {
        self.carried
    }

    /// Device status for the sequencer; consumes any pending fault.
    pub fn take_feedback(&mut self) -> DeviceFeedback {
        DeviceFeedback {
            busy: self.is_busy(),
            fault: self.pending_fault.take(),
            homed: [0, 1, 2].map(|i| self.drives[i].axis.is_homed()),
            reservoir_ml: self.reservoir.level_ml(),
        }
    }

    pub fn has_pending_fault(&self) -> bool {
        self.pending_fault.is_some()
    }

    fn fault(&mut self, fault: DeviceFault) {
        self.pending_fault.get_or_insert(fault);
    }

    fn location(&self) -> (i64, i64) {
        (self.drives[0].frame_position(), self.drives[1].frame_position())
    }

    // Input hooks used by injections.

    pub fn remove_part(&mut self, part_id: u32) -> bool {
        let key = self.parts.iter().find(|(_, &id)| id == part_id).map(|(k, _)| *k);
        key.and_then(|k| self.parts.remove(&k)).is_some()
    }

    pub fn part_id_at(&self, column: u32, row: u32) -> u32 {
        column * self.layout_rows + row + 1
    }

    pub fn run_dry(&mut self) {
        self.reservoir.empty();
        self.supply_dry = true;
    }

    pub fn suppress_z_sensors(&mut self, until: Option<Micros>) {
        self.z.sensors_suppressed = true;
        self.z_suppress_until = until;
    }

    /// Executes one gated command at `now`.
    pub fn apply(&mut self, cmd: &Command, now: Micros, safety_run: bool, events: &mut Vec<PendingEvent>) {
        match *cmd {
            Command::Move { axis, target_steps } => {
                let drive = self.drive_mut(axis);
                let from = drive.axis.position();
                match drive.start_move(target_steps, now) {
                    Ok(profile) => {
                        events.push(
                            PendingEvent::new(now, "motion", "move_start")
                                .with("axis", axis.as_str())
                                .with("from_steps", from.unwrap_or_default())
                                .with("to_steps", target_steps)
                                .with("pulses", profile.pulses())
                                .with("duration_us", profile.duration_us),
                        );
                        if profile.pulses() == 0 {
                            events.push(
                                PendingEvent::new(now, "motion", "move_end")
                                    .with("axis", axis.as_str())
                                    .with("position_steps", target_steps)
                                    .with("pulses", 0)
                                    .with("elapsed_us", 0),
                            );
                        }
                    }
                    Err(e) => {
                        events.push(
                            PendingEvent::new(now, "motion", "move_rejected")
                                .with("axis", axis.as_str())
                                .with("error", e.to_string()),
                        );
                        self.fault(DeviceFault::Motion);
                    }
                }
            }
            Command::Home { axis } => {
                let drive = self.drive_mut(axis);
                let physical = drive.physical;
                drive.start_homing(now);
                events.push(
                    PendingEvent::new(now, "motion", "home_start")
                        .with("axis", axis.as_str())
                        .with("switch", physical <= 0),
                );
                // A zero-length homing finishes on the spot.
                let mut local = Vec::new();
                if let Some(f) = self.drive_mut(axis).advance_to(now, &mut local) {
                    self.fault(f);
                }
                events.extend(local);
            }
            Command::Halt { axis } => {
                let drive = self.drive_mut(axis);
                if let Some(what) = drive.stop() {
                    let pos = drive.axis.position();
                    events.push(
                        PendingEvent::new(now, "motion", "halted")
                            .with("axis", axis.as_str())
                            .with("interrupted", what)
                            .with("position_steps", pos.map_or(Value::Null, Value::from)),
                    );
                }
            }
            Command::Z { direction } => match self.z.command(direction, now, safety_run) {
                Ok(true) => {
                    events.push(PendingEvent::new(now, "motion", "z_stroke").with("target", direction.as_str()))
                }
                Ok(false) => {}
                Err(_) => self.fault(DeviceFault::ActuatorFault),
            },
            Command::Grip => {
                let loc = self.location();
                let present = self.parts.contains_key(&loc);
                let z_down = self.z.confirmed() == ZPosition::Down && !self.z.in_motion();
                match self.gripper.grip(present, z_down, safety_run) {
                    Ok(GripOutcome::Gripped) => {
                        let id = self.parts.remove(&loc).expect("present");
                        self.carried = Some(id);
                        events.push(PendingEvent::new(now, "fluidics", "gripped").with("part_id", id));
                    }
                    Ok(GripOutcome::PickMiss) => {
                        events.push(
                            PendingEvent::new(now, "fluidics", "pick_miss")
                                .with("x_steps", loc.0)
                                .with("y_steps", loc.1),
                        );
                        self.fault(DeviceFault::PickMiss);
                    }
                    Err(e) => {
                        events.push(PendingEvent::new(now, "fluidics", "grip_rejected").with("error", e.to_string()));
                        self.fault(DeviceFault::ActuatorFault);
                    }
                }
            }
            Command::Release => self.release(now, events),
            Command::Dispense { part_id } => self.dispense(part_id, now, safety_run, events),
            Command::PumpRun { duration_us } => {
                if self.pump_run.is_none() {
                    self.pump_run = Some((now, now + duration_us));
                    events.push(PendingEvent::new(now, "fluidics", "pump_start").with("duration_us", duration_us));
                    if duration_us == 0 {
                        self.finish_pump(now, events);
                    }
                }
            }
            Command::PumpStop => {
                if self.pump_run.is_some() {
                    self.finish_pump(now, events);
                }
            }
            Command::DeEnergize { actuator } => self.de_energize(actuator, now, events),
            Command::Measure { part_id } => {
                let at_station = self.parts.get(&self.station) == Some(&part_id);
                if at_station && self.droplets.contains_key(&part_id) && self.tester.is_none() {
                    let until = now + self.goniometry.measure_time_ms * 1000;
                    self.tester = Some(Timed { until, part_id });
                    events.push(PendingEvent::new(now, "goniometry", "capture_start").with("part_id", part_id));
                } else {
                    events.push(
                        PendingEvent::new(now, "goniometry", "measurement_fault")
                            .with("part_id", part_id)
                            .with("reason", if at_station { "no droplet" } else { "part not on station" }),
                    );
                    self.fault(DeviceFault::MeasurementFault);
                }
            }
            Command::Lamp { .. } => {}
        }
    }

    fn release(&mut self, now: Micros, events: &mut Vec<PendingEvent>) {
        let was_on = self.gripper.venturi_on();
        self.gripper.release();
        let Some(id) = self.carried.take() else {
            if was_on {
                events.push(PendingEvent::new(now, "fluidics", "released"));
            }
            return;
        };
        let loc = self.location();
        let mut ev = PendingEvent::new(now, "fluidics", "released").with("part_id", id);
        if loc == self.unload {
            self.unloaded.push(id);
            ev = ev.with("at", "unload");
        } else if let std::collections::btree_map::Entry::Vacant(slot) = self.parts.entry(loc) {
            slot.insert(id);
            ev = ev.with("at", if loc == self.station { "station" } else { "floor" });
        } else {
            // Landed on another part; treat it as lost.
            ev = ev.with("at", "lost");
        }
        events.push(ev);
    }

    fn dispense(&mut self, part_id: u32, now: Micros, safety_run: bool, events: &mut Vec<PendingEvent>) {
        let d = self.drive(AxisName::Dispenser);
        let at_drop = d.axis.position() == Some(self.drop_steps) && !d.is_busy();
        let before = self.reservoir.level_ml();
        match dispense(&self.dispense_spec, &mut self.reservoir, at_drop, safety_run, &mut self.dispense_rng) {
            Ok(droplet) => {
                let target = self.parts.get(&self.station).copied();
                if let Some(id) = target {
                    self.droplets.insert(id, droplet.volume_ul);
                }
                self.burst = Some(Timed { until: now + self.dispense_spec.burst_duration_us(), part_id });
                events.push(
                    PendingEvent::new(now, "fluidics", "dispense")
                        .with("part_id", target.map_or(Value::Null, Value::from))
                        .with("volume_ul", droplet.volume_ul)
                        .with("nominal_ul", droplet.nominal_ul)
                        .with("drawn_ml", before - self.reservoir.level_ml())
                        .with("level_ml", self.reservoir.level_ml()),
                );
            }
            Err(FluidicsError::DryDispense { level_ml, needed_ml }) => {
                events.push(
                    PendingEvent::new(now, "fluidics", "dry_dispense")
                        .with("part_id", part_id)
                        .with("level_ml", level_ml)
                        .with("needed_ml", needed_ml),
                );
                self.fault(DeviceFault::DryDispense);
            }
            Err(e) => {
                events.push(PendingEvent::new(now, "fluidics", "dispense_rejected").with("error", e.to_string()));
                self.fault(DeviceFault::ActuatorFault);
            }
        }
    }

    fn finish_pump(&mut self, at: Micros, events: &mut Vec<PendingEvent>) {
        let Some((start, _)) = self.pump_run.take() else { return };
        let ran = at - start;
        let volume = if self.supply_dry { 0.0 } else { self.pump.volume_ml(ran) };
        let fill = self.reservoir.fill(volume);
        events.push(
            PendingEvent::new(at, "fluidics", "pump_stop")
                .with("ran_us", ran)
                .with("delta_ml", fill.delta_ml)
                .with("overfilled", fill.overfilled)
                .with("level_ml", self.reservoir.level_ml()),
        );
    }

    fn de_energize(&mut self, actuator: Actuator, now: Micros, events: &mut Vec<PendingEvent>) {
        let label = actuator.label();
        let changed = match actuator {
            Actuator::Drive(axis) => {
                let drive = self.drive_mut(axis);
                let was_homed = drive.axis.is_homed();
                let stopped = drive.stop().is_some();
                // Without holding torque the position is no longer trusted.
                drive.axis.mark_unhomed();
                stopped || was_homed
            }
            Actuator::ZValve => self.z.de_energize(),
            Actuator::Venturi => {
                let on = self.gripper.venturi_on();
                if on {
                    self.release(now, events);
                }
                on
            }
            Actuator::DispenseValve => self.burst.take().is_some(),
            Actuator::PumpRelay => {
                let running = self.pump_run.is_some();
                self.finish_pump(now, events);
                running
            }
        };
        if changed {
            events.push(PendingEvent::new(now, "motion", "de_energized").with("actuator", label));
        }
    }

    /// Earliest pending device event.
    pub fn next_event_us(&self) -> Option<Micros> {
        let mut t: Option<Micros> = None;
        let mut take = |c: Option<Micros>| {
            if let Some(c) = c {
                t = Some(t.map_or(c, |t| t.min(c)));
            }
        };
        for d in &self.drives {
            take(d.next_event_us());
        }
        take(self.z.next_event_us());
        take(self.pump_run.map(|(_, end)| end));
        take(self.burst.map(|b| b.until));
        take(self.tester.map(|m| m.until));
        take(self.z_suppress_until);
        t
    }

    /// Runs every device forward to `t`.
    pub fn advance_to(&mut self, t: Micros, events: &mut Vec<PendingEvent>) {
        for i in 0..3 {
            if let Some(f) = self.drives[i].advance_to(t, events) {
                self.fault(f);
            }
        }
        if let Some(until) = self.z_suppress_until.filter(|&u| u <= t) {
            // A stroke that ends before the sensors recover still faults.
            if self.z.next_event_us().is_some_and(|d| d < until) {
                self.advance_z(until - 1, events);
            }
            self.z.sensors_suppressed = false;
            self.z_suppress_until = None;
            events.push(PendingEvent::new(until, "motion", "z_sensors_restored"));
        }
        self.advance_z(t, events);
        if let Some((_, end)) = self.pump_run {
            if end <= t {
                self.finish_pump(end, events);
            }
        }
        if let Some(b) = self.burst {
            if b.until <= t {
                self.burst = None;
                events.push(PendingEvent::new(b.until, "fluidics", "dispense_end").with("part_id", b.part_id));
            }
        }
        if let Some(m) = self.tester {
            if m.until <= t {
                self.tester = None;
                self.complete_measurement(m, events);
            }
        }
    }

    fn advance_z(&mut self, t: Micros, events: &mut Vec<PendingEvent>) {
        match self.z.advance_to(t) {
            Some(ZEvent::Confirmed { position, at }) => {
                events.push(PendingEvent::new(at, "motion", "z_confirmed").with("position", position.as_str()));
            }
            Some(ZEvent::Fault { target, at }) => {
                events.push(PendingEvent::new(at, "motion", "z_fault").with("target", target.as_str()));
                self.fault(DeviceFault::ActuatorFault);
            }
            None => {}
        }
    }

    fn complete_measurement(&mut self, m: Timed, events: &mut Vec<PendingEvent>) {
        let theta = self.goniometry.true_theta(m.part_id);
        let volume = self.droplets.get(&m.part_id).copied().unwrap_or(self.dispense_spec.droplet_volume_ul);
        match measure(m.part_id, theta, volume, &self.goniometry.noise, &mut self.measure_rng, m.until) {
            Ok(record) => {
                let (column, row) = ((m.part_id - 1) / self.layout_rows, (m.part_id - 1) % self.layout_rows);
                events.push(
                    PendingEvent::new(m.until, "goniometry", "measurement")
                        .with("part_id", m.part_id)
                        .with("column", column)
                        .with("row", row)
                        .with("theta_deg", report_deg(record.theta_measured_deg))
                        .with("true_theta_deg", theta)
                        .with("volume_ul", volume)
                        .with("rms_residual_mm", record.rms_residual_mm),
                );
                self.measurements.push(record);
            }
            Err(e) => {
                events.push(
                    PendingEvent::new(m.until, "goniometry", "measurement_fault")
                        .with("part_id", m.part_id)
                        .with("reason", e.to_string()),
                );
                self.fault(DeviceFault::MeasurementFault);
            }
        }
    }

    /// Master control relay dropped: every MCR-fed actuator loses power.
    pub fn power_loss(&mut self, now: Micros, events: &mut Vec<PendingEvent>) {
        for actuator in Actuator::ALL {
            self.de_energize(actuator, now, events);
        }
    }
}

fn axis_index(axis: AxisName) -> usize {
    match axis {
        AxisName::X => 0,
        AxisName::Y => 1,
        AxisName::Dispenser => 2,
    }
}
