//! Cartesian platform: pulse/direction stepper axes (X ball screw, Y belt and
//! the dispenser's linear guide) and the pneumatic Z stroke.
//!
//! Stepping is constant-rate; an N-step move takes exactly N / pulse_rate
//! seconds of simulated time. Pulse `k` of a move started at `t0` fires at
//! `t0 + ceil(k * 1e6 / rate)` microseconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{AxisName, ZDirection};
use crate::signals::{ElectricalMode, Logic, SignalState};
use crate::Micros;

pub const DEFAULT_STEPS_PER_REV: u32 = 200;
pub const DEFAULT_PULSE_RATE_HZ: u32 = 400;
pub const DEFAULT_BACKOFF_STEPS: i64 = 50;
pub const DEFAULT_STROKE_TIME_US: Micros = 300_000;
pub const DEFAULT_CONFIRM_MARGIN_US: Micros = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MotionError {
    #[error("axis {0} is not homed")]
    NotHomed(AxisName),
    #[error("axis {axis}: target {target} outside [{min}, {max}]")]
    LimitError { axis: AxisName, target: i64, min: i64, max: i64 },
    #[error("axis {axis}: home switch not found within {max_seek} steps")]
    HomingTimeout { axis: AxisName, max_seek: u64 },
    #[error("axis {axis}: homing aborted after {pulses} pulses")]
    HomingAborted { axis: AxisName, pulses: u64 },
    #[error("Z confirmation sensor for `{0}` did not assert")]
    ActuatorFault(&'static str),
    #[error("safety circuit is not in run")]
    SafetyInterlock,
    #[error("axis {axis}: invalid configuration: {message}")]
    Config { axis: AxisName, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepDirection {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl StepDirection {
    pub fn sign(self) -> i64 {
        match self {
            StepDirection::Positive => 1,
            StepDirection::Negative => -1,
        }
    }
}

/// Per-axis settings as they appear in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    #[serde(default = "default_steps_per_rev")]
    pub steps_per_rev: u32,
    #[serde(default = "default_pulse_rate")]
    pub pulse_rate_hz: u32,
    /// Ball-screw lead or belt pulley circumference.
    pub travel_per_rev_mm: f64,
    /// Usable travel beyond the home position.
    pub travel_mm: f64,
    #[serde(default = "default_backoff")]
    pub home_backoff_steps: i64,
    /// Where the carriage sits at power-up, measured from the home switch.
    pub initial_position_mm: f64,
    pub drive_fuse_a: f64,
}

fn default_steps_per_rev() -> u32 {
    DEFAULT_STEPS_PER_REV
}
fn default_pulse_rate() -> u32 {
    DEFAULT_PULSE_RATE_HZ
}
fn default_backoff() -> i64 {
    DEFAULT_BACKOFF_STEPS
}

impl AxisConfig {
    pub fn x_default() -> Self {
        Self {
            steps_per_rev: DEFAULT_STEPS_PER_REV,
            pulse_rate_hz: DEFAULT_PULSE_RATE_HZ,
            travel_per_rev_mm: 5.0,
            travel_mm: 400.0,
            home_backoff_steps: DEFAULT_BACKOFF_STEPS,
            initial_position_mm: 300.0,
            drive_fuse_a: 1.0,
        }
    }

    pub fn y_default() -> Self {
        Self {
            steps_per_rev: DEFAULT_STEPS_PER_REV,
            pulse_rate_hz: DEFAULT_PULSE_RATE_HZ,
            travel_per_rev_mm: 40.0,
            travel_mm: CellGeometry::default().y_travel_mm,
            home_backoff_steps: DEFAULT_BACKOFF_STEPS,
            initial_position_mm: 600.0,
            drive_fuse_a: 1.0,
        }
    }

    pub fn dispenser_default() -> Self {
        Self {
            steps_per_rev: DEFAULT_STEPS_PER_REV,
            pulse_rate_hz: DEFAULT_PULSE_RATE_HZ,
            travel_per_rev_mm: 40.0,
            travel_mm: 300.0,
            home_backoff_steps: DEFAULT_BACKOFF_STEPS,
            initial_position_mm: 50.0,
            drive_fuse_a: 0.5,
        }
    }
}

/// One stepper axis as the controller sees it: position is only known once
/// the axis has been homed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperAxis {
    pub name: AxisName,
    pub steps_per_rev: u32,
    pub pulse_rate_hz: u32,
    pub travel_per_rev_mm: f64,
    pub min_steps: i64,
    pub max_steps: i64,
    pub home_backoff_steps: i64,
    pub drive_fuse_a: f64,
    position: Option<i64>,
}

impl StepperAxis {
    pub fn from_config(name: AxisName, cfg: &AxisConfig) -> Result<Self, MotionError> {
        let bad = |message: &str| MotionError::Config { axis: name, message: message.to_string() };
        if cfg.steps_per_rev == 0 {
            return Err(bad("steps_per_rev must be positive"));
        }
        if cfg.pulse_rate_hz == 0 {
            return Err(bad("pulse_rate_hz must be positive"));
        }
        if !(cfg.travel_per_rev_mm > 0.0) || !(cfg.travel_mm > 0.0) {
            return Err(bad("travel lengths must be positive"));
        }
        if cfg.home_backoff_steps < 0 {
            return Err(bad("home_backoff_steps must be non-negative"));
        }
        if !(cfg.initial_position_mm >= 0.0) {
            return Err(bad("initial_position_mm must be non-negative"));
        }
        let mut axis = Self {
            name,
            steps_per_rev: cfg.steps_per_rev,
            pulse_rate_hz: cfg.pulse_rate_hz,
            travel_per_rev_mm: cfg.travel_per_rev_mm,
            min_steps: 0,
            max_steps: 0,
            home_backoff_steps: cfg.home_backoff_steps,
            drive_fuse_a: cfg.drive_fuse_a,
            position: None,
        };
        axis.max_steps = mm_to_steps(&axis, cfg.travel_mm).0;
        Ok(axis)
    }

    pub fn position(&self) -> Option<i64> {
        self.position
    }

    pub fn is_homed(&self) -> bool {
        self.position.is_some()
    }

    pub fn mark_unhomed(&mut self) {
        self.position = None;
    }

    /// Records a known position in the homed frame. Used by the drive model
    /// as pulses are emitted.
    pub fn set_homed_position(&mut self, steps: i64) {
        self.position = Some(steps);
    }

    pub fn pulse_period_us(&self) -> f64 {
        1e6 / f64::from(self.pulse_rate_hz)
    }

    /// Offset from the pulse train start to pulse `k`.
    pub fn pulse_offset_us(&self, k: u64) -> Micros {
        let rate = u128::from(self.pulse_rate_hz);
        (u128::from(k) * 1_000_000).div_ceil(rate) as Micros
    }

    /// Pulses a train started `elapsed` ago has emitted.
    pub fn pulses_within(&self, elapsed: Micros) -> u64 {
        (u128::from(elapsed) * u128::from(self.pulse_rate_hz) / 1_000_000) as u64
    }

    pub fn in_limits(&self, steps: i64) -> bool {
        (self.min_steps..=self.max_steps).contains(&steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveProfile {
    pub axis: AxisName,
    pub delta_steps: i64,
    pub direction: StepDirection,
    pub duration_us: Micros,
}

impl MoveProfile {
    pub fn pulses(&self) -> u64 {
        self.delta_steps.unsigned_abs()
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_us as f64 / 1e6
    }
}

pub fn plan_move(axis: &StepperAxis, target_steps: i64) -> Result<MoveProfile, MotionError> {
    let position = axis.position.ok_or(MotionError::NotHomed(axis.name))?;
    if !axis.in_limits(target_steps) {
        return Err(MotionError::LimitError {
            axis: axis.name,
            target: target_steps,
            min: axis.min_steps,
            max: axis.max_steps,
        });
    }
    let delta_steps = target_steps - position;
    Ok(MoveProfile {
        axis: axis.name,
        delta_steps,
        direction: if delta_steps < 0 { StepDirection::Negative } else { StepDirection::Positive },
        duration_us: axis.pulse_offset_us(delta_steps.unsigned_abs()),
    })
}

pub fn steps_to_mm(axis: &StepperAxis, steps: i64) -> f64 {
    steps as f64 * axis.travel_per_rev_mm / f64::from(axis.steps_per_rev)
}

/// Nearest whole step to `mm`, with the residual `mm - steps_to_mm(steps)`.
pub fn mm_to_steps(axis: &StepperAxis, mm: f64) -> (i64, f64) {
    let exact = mm * f64::from(axis.steps_per_rev) / axis.travel_per_rev_mm;
    let steps = exact.round() as i64;
    (steps, mm - steps_to_mm(axis, steps))
}

/// What a homing sequence wants next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomingAction {
    Pulse(StepDirection),
    Done,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HomingStage {
    Seek { pulses: u64 },
    BackOff { remaining: i64 },
    Done,
    TimedOut,
}

/// Homing state machine: seek toward the switch (negative direction), stop
/// on its asserting edge, back off a fixed number of steps, then zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HomingRun {
    stage: HomingStage,
    max_seek: u64,
    backoff: i64,
    seek_pulses: u64,
}

impl HomingRun {
    pub fn new(axis: &StepperAxis) -> Self {
        let span = (axis.max_steps - axis.min_steps).max(0) as u64;
        Self {
            stage: HomingStage::Seek { pulses: 0 },
            // Full travel plus 10% before giving up.
            max_seek: span + span / 10 + axis.home_backoff_steps as u64,
            backoff: axis.home_backoff_steps,
            seek_pulses: 0,
        }
    }

    pub fn max_seek(&self) -> u64 {
        self.max_seek
    }

    pub fn seek_pulses(&self) -> u64 {
        self.seek_pulses
    }

    pub fn is_seeking(&self) -> bool {
        matches!(self.stage, HomingStage::Seek { .. })
    }

    /// Feeds the current switch level and returns the next action.
    pub fn next(&mut self, switch_asserted: bool) -> HomingAction {
        loop {
            match self.stage {
                HomingStage::Seek { pulses } => {
                    if switch_asserted {
                        self.seek_pulses = pulses;
                        self.stage = HomingStage::BackOff { remaining: self.backoff };
                        continue;
                    }
                    if pulses >= self.max_seek {
                        self.stage = HomingStage::TimedOut;
                        continue;
                    }
                    self.stage = HomingStage::Seek { pulses: pulses + 1 };
                    return HomingAction::Pulse(StepDirection::Negative);
                }
                HomingStage::BackOff { remaining } => {
                    if remaining == 0 {
                        self.stage = HomingStage::Done;
                        continue;
                    }
                    self.stage = HomingStage::BackOff { remaining: remaining - 1 };
                    return HomingAction::Pulse(StepDirection::Positive);
                }
                HomingStage::Done => return HomingAction::Done,
                HomingStage::TimedOut => return HomingAction::Timeout,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomingOutcome {
    pub axis: StepperAxis,
    pub seek_pulses: u64,
    pub backoff_pulses: u64,
}

/// Homes `axis` against a sampled limit switch.
///
/// `limit_switch` yields the switch state before each seek pulse (sample 0
/// is taken before any motion). `safety_ok(pulse_index)` is consulted before
/// every pulse; a `false` aborts with no further pulses.
pub fn home<I, F>(axis: &StepperAxis, limit_switch: I, mut safety_ok: F) -> Result<HomingOutcome, MotionError>
where
    I: IntoIterator<Item = SignalState>,
    F: FnMut(u64) -> bool,
{
    let mut run = HomingRun::new(axis);
    let mut samples = limit_switch.into_iter();
    let mut switch = false;
    let mut pulses = 0u64;
    let mut backoff_pulses = 0u64;
    loop {
        if run.is_seeking() {
            // An exhausted stream means the switch never asserts.
            switch = samples.next().is_some_and(|s| s.is_asserted());
        }
        match run.next(switch) {
            HomingAction::Pulse(dir) => {
                if !safety_ok(pulses) {
                    return Err(MotionError::HomingAborted { axis: axis.name, pulses });
                }
                pulses += 1;
                if dir == StepDirection::Positive {
                    backoff_pulses += 1;
                }
            }
            HomingAction::Done => {
                let mut homed = axis.clone();
                homed.position = Some(0);
                return Ok(HomingOutcome { axis: homed, seek_pulses: run.seek_pulses(), backoff_pulses });
            }
            HomingAction::Timeout => {
                return Err(MotionError::HomingTimeout { axis: axis.name, max_seek: run.max_seek() })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZPosition {
    Up,
    Down,
    InTransit,
}

impl ZPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            ZPosition::Up => "up",
            ZPosition::Down => "down",
            ZPosition::InTransit => "in_transit",
        }
    }

    fn from_direction(d: ZDirection) -> Self {
        match d {
            ZDirection::Up => ZPosition::Up,
            ZDirection::Down => ZPosition::Down,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ZTransition {
    target: ZDirection,
    started_at: Micros,
}

/// Outcome of advancing the Z cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZEvent {
    Confirmed { position: ZPosition, at: Micros },
    Fault { target: ZDirection, at: Micros },
}

/// Binary pneumatic stroke with end-of-travel proximity sensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PneumaticZ {
    commanded: ZDirection,
    confirmed: ZPosition,
    pub stroke_time_us: Micros,
    pub confirm_margin_us: Micros,
    sensor_up: SignalState,
    sensor_down: SignalState,
    transition: Option<ZTransition>,
    /// Scenario hook: the confirmation sensors never assert.
    pub sensors_suppressed: bool,
}

impl PneumaticZ {
    pub fn new(stroke_time_us: Micros, confirm_margin_us: Micros) -> Self {
        Self {
            commanded: ZDirection::Up,
            confirmed: ZPosition::Up,
            stroke_time_us,
            confirm_margin_us,
            sensor_up: SignalState::from_logical(ElectricalMode::SinkingNpn, Logic::Asserted, 0),
            sensor_down: SignalState::input_idle(),
            transition: None,
            sensors_suppressed: false,
        }
    }

    pub fn commanded(&self) -> ZDirection {
        self.commanded
    }

    pub fn confirmed(&self) -> ZPosition {
        self.confirmed
    }

    pub fn sensor_up(&self) -> SignalState {
        self.sensor_up
    }

    pub fn sensor_down(&self) -> SignalState {
        self.sensor_down
    }

    pub fn in_motion(&self) -> bool {
        self.transition.is_some()
    }

    /// Starts a stroke. Returns `false` when the cylinder already sits at the
    /// commanded pole (no-op, zero elapsed time).
    pub fn command(&mut self, direction: ZDirection, now: Micros, safety_run: bool) -> Result<bool, MotionError> {
        if !safety_run {
            return Err(MotionError::SafetyInterlock);
        }
        if self.transition.is_none() && self.confirmed == ZPosition::from_direction(direction) {
            self.commanded = direction;
            return Ok(false);
        }
        if let Some(t) = self.transition {
            if t.target == direction {
                return Ok(true);
            }
        }
        self.commanded = direction;
        self.confirmed = ZPosition::InTransit;
        self.sensor_up = self.sensor_up.with_logical(Logic::Deasserted, now);
        self.sensor_down = self.sensor_down.with_logical(Logic::Deasserted, now);
        self.transition = Some(ZTransition { target: direction, started_at: now });
        Ok(true)
    }

    /// Valve power lost: the stroke stops where it is.
    pub fn de_energize(&mut self) -> bool {
        self.transition.take().is_some()
    }

    /// Time of the next confirmation or fault, if a stroke is in flight.
    pub fn next_event_us(&self) -> Option<Micros> {
        self.transition.map(|t| {
            if self.sensors_suppressed {
                t.started_at + self.stroke_time_us + self.confirm_margin_us
            } else {
                t.started_at + self.stroke_time_us
            }
        })
    }

    pub fn advance_to(&mut self, now: Micros) -> Option<ZEvent> {
        let t = self.transition?;
        let due = self.next_event_us()?;
        if due > now {
            return None;
        }
        self.transition = None;
        if self.sensors_suppressed {
            return Some(ZEvent::Fault { target: t.target, at: due });
        }
        self.confirmed = ZPosition::from_direction(t.target);
        match t.target {
            ZDirection::Up => self.sensor_up = self.sensor_up.with_logical(Logic::Asserted, due),
            ZDirection::Down => self.sensor_down = self.sensor_down.with_logical(Logic::Asserted, due),
        }
        Some(ZEvent::Confirmed { position: self.confirmed, at: due })
    }
}

/// Fixed cell dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub y_travel_mm: f64,
    /// Length, width, height.
    pub enclosure_mm: (f64, f64, f64),
}

impl Default for CellGeometry {
    fn default() -> Self {
        Self { y_travel_mm: 1360.0, enclosure_mm: (1475.0, 650.0, 1680.0) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn homed(cfg: AxisConfig, name: AxisName, at: i64) -> StepperAxis {
        let mut axis = StepperAxis::from_config(name, &cfg).unwrap();
        axis.position = Some(at);
        axis
    }

    fn switch_after(n: usize) -> impl Iterator<Item = SignalState> {
        (0..).map(move |i| SignalState::from_logical(ElectricalMode::SinkingNpn, Logic::from_bool(i >= n), i as Micros))
    }

    #[test]
    fn eight_hundred_steps_take_two_seconds() {
        let axis = homed(AxisConfig::x_default(), AxisName::X, 0);
        let p = plan_move(&axis, 800).unwrap();
        assert_eq!(p.delta_steps, 800);
        assert_eq!(p.direction, StepDirection::Positive);
        assert_eq!(p.duration_us, 2_000_000);
        assert_eq!(p.duration_s(), 2.0);
    }

    #[test]
    fn null_move() {
        let axis = homed(AxisConfig::y_default(), AxisName::Y, 321);
        let p = plan_move(&axis, 321).unwrap();
        assert_eq!(p.delta_steps, 0);
        assert_eq!(p.duration_us, 0);
    }

    #[test]
    fn move_errors() {
        let unhomed = StepperAxis::from_config(AxisName::X, &AxisConfig::x_default()).unwrap();
        assert_eq!(plan_move(&unhomed, 10), Err(MotionError::NotHomed(AxisName::X)));
        let axis = homed(AxisConfig::y_default(), AxisName::Y, 0);
        assert_eq!(axis.max_steps, 6800);
        assert!(matches!(plan_move(&axis, 6801), Err(MotionError::LimitError { .. })));
        assert!(matches!(plan_move(&axis, -1), Err(MotionError::LimitError { .. })));
    }

    #[test]
    fn conversions() {
        // 5 mm lead, 200 steps/rev: one revolution is 5 mm.
        let x = homed(AxisConfig::x_default(), AxisName::X, 0);
        assert_eq!(steps_to_mm(&x, 200), 5.0);
        assert_eq!(steps_to_mm(&x, 0), 0.0);
        let (steps, residual) = mm_to_steps(&x, 5.01);
        assert_eq!(steps, 200);
        assert!((residual - 0.01).abs() < 1e-12);
    }

    #[test]
    fn homing_with_scripted_switch() {
        let axis = StepperAxis::from_config(AxisName::X, &AxisConfig::x_default()).unwrap();
        let out = home(&axis, switch_after(1200), |_| true).unwrap();
        assert_eq!(out.seek_pulses, 1200);
        assert_eq!(out.backoff_pulses, 50);
        assert_eq!(out.axis.position(), Some(0));
        // Physical offset from the switch: -1200 + 1200 + 50.
        assert_eq!(-(out.seek_pulses as i64) + 1200 + out.backoff_pulses as i64, 50);
    }

    #[test]
    fn homing_at_switch_backs_off_immediately() {
        let axis = StepperAxis::from_config(AxisName::Y, &AxisConfig::y_default()).unwrap();
        let out = home(&axis, switch_after(0), |_| true).unwrap();
        assert_eq!(out.seek_pulses, 0);
        assert_eq!(out.backoff_pulses, 50);
        assert!(out.axis.is_homed());
    }

    #[test]
    fn homing_timeout_and_abort() {
        let axis = StepperAxis::from_config(AxisName::Dispenser, &AxisConfig::dispenser_default()).unwrap();
        assert!(matches!(home(&axis, switch_after(usize::MAX), |_| true), Err(MotionError::HomingTimeout { .. })));
        let mut last = 0;
        let err = home(&axis, switch_after(1000), |k| {
            last = k;
            k < 300
        })
        .unwrap_err();
        assert_eq!(err, MotionError::HomingAborted { axis: AxisName::Dispenser, pulses: 300 });
        assert_eq!(last, 300);
    }

    #[test]
    fn homing_twice_is_idempotent() {
        let axis = StepperAxis::from_config(AxisName::X, &AxisConfig::x_default()).unwrap();
        let first = home(&axis, switch_after(700), |_| true).unwrap();
        // Second run starts 50 steps off the switch.
        let second = home(&first.axis, switch_after(50), |_| true).unwrap();
        assert_eq!(first.axis.position(), Some(0));
        assert_eq!(second.axis.position(), Some(0));
    }

    #[test]
    fn z_stroke_timing() {
        let mut z = PneumaticZ::new(DEFAULT_STROKE_TIME_US, DEFAULT_CONFIRM_MARGIN_US);
        assert_eq!(z.command(ZDirection::Up, 0, true), Ok(false));
        assert_eq!(z.command(ZDirection::Down, 1_000, true), Ok(true));
        assert_eq!(z.confirmed(), ZPosition::InTransit);
        assert_eq!(z.advance_to(300_999), None);
        assert_eq!(z.advance_to(301_000), Some(ZEvent::Confirmed { position: ZPosition::Down, at: 301_000 }));
        assert!(z.sensor_down().is_asserted());
        assert!(!z.sensor_up().is_asserted());
        assert_eq!(z.command(ZDirection::Down, 400_000, true), Ok(false));
        assert_eq!(z.command(ZDirection::Up, 0, false), Err(MotionError::SafetyInterlock));
    }

    #[test]
    fn z_suppressed_sensor_faults() {
        let mut z = PneumaticZ::new(300_000, 100_000);
        z.sensors_suppressed = true;
        z.command(ZDirection::Down, 0, true).unwrap();
        assert_eq!(z.advance_to(300_000), None);
        assert_eq!(z.advance_to(400_000), Some(ZEvent::Fault { target: ZDirection::Down, at: 400_000 }));
        assert_eq!(z.confirmed(), ZPosition::InTransit);
    }

    proptest! {
        #[test]
        fn executing_a_profile_lands_on_target(pos in 0i64..6800, target in 0i64..6800) {
            // Step-counting oracle: emit one signed pulse at a time.
            let axis = homed(AxisConfig::y_default(), AxisName::Y, pos);
            let p = plan_move(&axis, target).unwrap();
            let mut at = pos;
            for _ in 0..p.pulses() {
                at += p.direction.sign();
            }
            prop_assert_eq!(at, target);
            prop_assert_eq!(p.duration_us, p.pulses() * 2_500);
            prop_assert_eq!(axis.pulses_within(p.duration_us), p.pulses());
        }

        #[test]
        fn step_mm_roundtrip(s in -1_000_000i64..1_000_000) {
            for cfg in [AxisConfig::x_default(), AxisConfig::y_default()] {
                let axis = homed(cfg, AxisName::X, 0);
                let (back, residual) = mm_to_steps(&axis, steps_to_mm(&axis, s));
                prop_assert_eq!(back, s);
                prop_assert!(residual.abs() < 1e-9);
            }
        }

        #[test]
        fn pulse_offsets_are_consistent(k in 0u64..100_000, rate in 1u32..5_000) {
            let mut axis = homed(AxisConfig::x_default(), AxisName::X, 0);
            axis.pulse_rate_hz = rate;
            let t = axis.pulse_offset_us(k);
            prop_assert_eq!(axis.pulses_within(t), k);
            if t > 0 {
                prop_assert!(axis.pulses_within(t - 1) < k);
            }
        }
    }
}
