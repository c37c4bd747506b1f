//! Scenario files: cell configuration plus a timed list of injected inputs.
//!
//! The format is JSON. Every section is optional and falls back to the
//! default cell; unknown fields and unknown injection kinds are rejected.
//! See `docs/scenario.md` for the schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::command::AxisName;
use crate::fluidics::{DispenseSpec, PumpSpec, Reservoir};
use crate::goniometry::MeasurementNoise;
use crate::motion::{mm_to_steps, AxisConfig, StepperAxis, DEFAULT_CONFIRM_MARGIN_US, DEFAULT_STROKE_TIME_US};
use crate::safety::{SafetyConfig, SafetySource};
use crate::sequencer::{part_position, CellPlan, FaultPolicy, TrayLayout};
use crate::simkernel::clock::DEFAULT_TICK_US;
use crate::Micros;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("scenario field `{path}` (line {line}): {message}")]
    Field { path: String, line: usize, message: String },
    #[error("scenario field `{path}`: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AxesConfig {
    pub x: AxisConfig,
    pub y: AxisConfig,
    pub dispenser: AxisConfig,
}

impl Default for AxesConfig {
    fn default() -> Self {
        Self { x: AxisConfig::x_default(), y: AxisConfig::y_default(), dispenser: AxisConfig::dispenser_default() }
    }
}

impl AxesConfig {
    pub fn get(&self, axis: AxisName) -> &AxisConfig {
        match axis {
            AxisName::X => &self.x,
            AxisName::Y => &self.y,
            AxisName::Dispenser => &self.dispenser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZConfig {
    pub stroke_time_ms: u64,
    pub confirm_margin_ms: u64,
}

impl Default for ZConfig {
    fn default() -> Self {
        Self { stroke_time_ms: DEFAULT_STROKE_TIME_US / 1000, confirm_margin_ms: DEFAULT_CONFIRM_MARGIN_US / 1000 }
    }
}

/// Fixed poses outside the tray, in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationsConfig {
    pub test_station_mm: (f64, f64),
    pub unload_mm: (f64, f64),
    /// Dispenser axis position above the test station.
    pub drop_position_mm: f64,
}

impl Default for StationsConfig {
    fn default() -> Self {
        Self { test_station_mm: (140.0, 700.0), unload_mm: (140.0, 1000.0), drop_position_mm: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidicsConfig {
    pub pump: PumpSpec,
    pub dispense: DispenseSpec,
    pub reservoir_capacity_ml: f64,
    pub reservoir_level_ml: f64,
    /// Initialization tops the reservoir up when it is below this level.
    pub refill_below_ml: f64,
}

impl Default for FluidicsConfig {
    fn default() -> Self {
        Self {
            pump: PumpSpec::default(),
            dispense: DispenseSpec::default(),
            reservoir_capacity_ml: 250.0,
            reservoir_level_ml: 100.0,
            refill_below_ml: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoniometryConfig {
    /// True contact angle of every part unless overridden below.
    pub default_theta_deg: f64,
    /// Overrides keyed by part id.
    pub theta_by_part: BTreeMap<u32, f64>,
    pub noise: MeasurementNoise,
    pub measure_time_ms: u64,
}

impl Default for GoniometryConfig {
    fn default() -> Self {
        Self {
            default_theta_deg: 75.0,
            theta_by_part: BTreeMap::new(),
            noise: MeasurementNoise::default(),
            measure_time_ms: 500,
        }
    }
}

impl GoniometryConfig {
    pub fn true_theta(&self, part_id: u32) -> f64 {
        self.theta_by_part.get(&part_id).copied().unwrap_or(self.default_theta_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    EstopPress,
    EstopRelease,
    DoorOpen,
    DoorClose,
    ChannelStuck,
    PartMissing,
    PumpDry,
    SensorSuppress,
    StopPress,
    StartPress,
    ResetPress,
}

impl InjectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectionKind::EstopPress => "estop_press",
            InjectionKind::EstopRelease => "estop_release",
            InjectionKind::DoorOpen => "door_open",
            InjectionKind::DoorClose => "door_close",
            InjectionKind::ChannelStuck => "channel_stuck",
            InjectionKind::PartMissing => "part_missing",
            InjectionKind::PumpDry => "pump_dry",
            InjectionKind::SensorSuppress => "sensor_suppress",
            InjectionKind::StopPress => "stop_press",
            InjectionKind::StartPress => "start_press",
            InjectionKind::ResetPress => "reset_press",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub t_us: Micros,
    pub kind: InjectionKind,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::A => "a",
            Channel::B => "b",
        }
    }
}

/// Contact state a stuck channel is frozen at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactLevel {
    Open,
    Closed,
}

/// A decoded input event, from a scenario injection or a live operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputEvent {
    EstopPress { source: SafetySource },
    EstopRelease { source: SafetySource },
    DoorOpen,
    DoorClose,
    ChannelStuck { source: SafetySource, channel: Channel, level: Option<ContactLevel> },
    PartMissing { column: u32, row: u32 },
    PumpDry,
    SensorSuppress { duration_us: Option<Micros> },
    StopPress,
    StartPress,
    ResetPress,
}

impl InputEvent {
    pub fn is_estop(&self) -> bool {
        matches!(self, InputEvent::EstopPress { .. })
    }

    pub fn kind(&self) -> InjectionKind {
        match self {
            InputEvent::EstopPress { .. } => InjectionKind::EstopPress,
            InputEvent::EstopRelease { .. } => InjectionKind::EstopRelease,
            InputEvent::DoorOpen => InjectionKind::DoorOpen,
            InputEvent::DoorClose => InjectionKind::DoorClose,
            InputEvent::ChannelStuck { .. } => InjectionKind::ChannelStuck,
            InputEvent::PartMissing { .. } => InjectionKind::PartMissing,
            InputEvent::PumpDry => InjectionKind::PumpDry,
            InputEvent::SensorSuppress { .. } => InjectionKind::SensorSuppress,
            InputEvent::StopPress => InjectionKind::StopPress,
            InputEvent::StartPress => InjectionKind::StartPress,
            InputEvent::ResetPress => InjectionKind::ResetPress,
        }
    }

    /// Decodes an injection kind and its parameters.
    pub fn decode(kind: InjectionKind, params: &Map<String, Value>) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Empty {}
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Estop {
            #[serde(default)]
            source: Option<String>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Stuck {
            source: String,
            channel: Channel,
            #[serde(default)]
            level: Option<ContactLevel>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Slot {
            column: u32,
            row: u32,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Suppress {
            #[serde(default)]
            duration_ms: Option<u64>,
        }

        fn parse<T: serde::de::DeserializeOwned>(params: &Map<String, Value>) -> Result<T, String> {
            serde_json::from_value(Value::Object(params.clone())).map_err(|e| e.to_string())
        }
        fn estop_source(name: Option<&str>) -> Result<SafetySource, String> {
            match name {
                None | Some("operator") | Some("estop_operator") => Ok(SafetySource::EstopOperator),
                Some("main") | Some("estop_main") => Ok(SafetySource::EstopMain),
                Some(other) => Err(format!("unknown E-stop `{other}` (expected operator or main)")),
            }
        }
        fn any_source(name: &str) -> Result<SafetySource, String> {
            match name {
                "door" | "door_interlock" => Ok(SafetySource::DoorInterlock),
                other => estop_source(Some(other))
                    .map_err(|_| format!("unknown safety source `{other}` (expected operator, main or door)")),
            }
        }

        Ok(match kind {
            InjectionKind::EstopPress => {
                let p: Estop = parse(params)?;
                InputEvent::EstopPress { source: estop_source(p.source.as_deref())? }
            }
            InjectionKind::EstopRelease => {
                let p: Estop = parse(params)?;
                InputEvent::EstopRelease { source: estop_source(p.source.as_deref())? }
            }
            InjectionKind::ChannelStuck => {
                let p: Stuck = parse(params)?;
                InputEvent::ChannelStuck { source: any_source(&p.source)?, channel: p.channel, level: p.level }
            }
            InjectionKind::PartMissing => {
                let p: Slot = parse(params)?;
                InputEvent::PartMissing { column: p.column, row: p.row }
            }
            InjectionKind::SensorSuppress => {
                let p: Suppress = parse(params)?;
                InputEvent::SensorSuppress { duration_us: p.duration_ms.map(|ms| ms * 1000) }
            }
            simple => {
                let _: Empty = parse(params)?;
                match simple {
                    InjectionKind::DoorOpen => InputEvent::DoorOpen,
                    InjectionKind::DoorClose => InputEvent::DoorClose,
                    InjectionKind::PumpDry => InputEvent::PumpDry,
                    InjectionKind::StopPress => InputEvent::StopPress,
                    InjectionKind::StartPress => InputEvent::StartPress,
                    _ => InputEvent::ResetPress,
                }
            }
        })
    }

    /// Payload fields describing the event in the log.
    pub fn payload(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("kind".into(), self.kind().as_str().into());
        match *self {
            InputEvent::EstopPress { source } | InputEvent::EstopRelease { source } => {
                m.insert("source".into(), source.as_str().into());
            }
            InputEvent::ChannelStuck { source, channel, level } => {
                m.insert("source".into(), source.as_str().into());
                m.insert("channel".into(), channel.as_str().into());
                if let Some(level) = level {
                    let text = match level {
                        ContactLevel::Open => "open",
                        ContactLevel::Closed => "closed",
                    };
                    m.insert("level".into(), text.into());
                }
            }
            InputEvent::PartMissing { column, row } => {
                m.insert("column".into(), column.into());
                m.insert("row".into(), row.into());
            }
            InputEvent::SensorSuppress { duration_us: Some(d) } => {
                m.insert("duration_us".into(), d.into());
            }
            _ => {}
        }
        m
    }
}

fn default_tick() -> Micros {
    DEFAULT_TICK_US
}

fn default_true() -> bool {
    true
}

fn default_max_time() -> u64 {
    7200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tick")]
    pub tick_us: Micros,
    /// Press start at t=0.
    #[serde(default = "default_true")]
    pub autostart: bool,
    /// Runaway guard on simulated time.
    #[serde(default = "default_max_time")]
    pub max_time_s: u64,
    #[serde(default)]
    pub layout: TrayLayout,
    #[serde(default)]
    pub axes: AxesConfig,
    #[serde(default)]
    pub z: ZConfig,
    #[serde(default)]
    pub stations: StationsConfig,
    #[serde(default)]
    pub fluidics: FluidicsConfig,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub goniometry: GoniometryConfig,
    #[serde(default)]
    pub policy: FaultPolicy,
    #[serde(default)]
    pub injections: Vec<Injection>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: None,
            seed: 0,
            tick_us: DEFAULT_TICK_US,
            autostart: true,
            max_time_s: default_max_time(),
            layout: TrayLayout::default(),
            axes: AxesConfig::default(),
            z: ZConfig::default(),
            stations: StationsConfig::default(),
            fluidics: FluidicsConfig::default(),
            safety: SafetyConfig::default(),
            goniometry: GoniometryConfig::default(),
            policy: FaultPolicy::default(),
            injections: Vec::new(),
        }
    }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() || path == "." {
                ScenarioError::Syntax { line: inner.line(), column: inner.column(), message: inner.to_string() }
            } else {
                ScenarioError::Field { path, line: inner.line(), message: inner.to_string() }
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.tick_us == 0 {
            return Err(invalid("tick_us", "must be positive"));
        }
        if self.max_time_s == 0 {
            return Err(invalid("max_time_s", "must be positive"));
        }
        self.layout.validate().map_err(|e| invalid("layout", e.to_string()))?;
        for axis in AxisName::ALL {
            StepperAxis::from_config(axis, self.axes.get(axis))
                .map_err(|e| invalid(format!("axes.{axis}"), e.to_string()))?;
        }
        if self.z.stroke_time_ms == 0 {
            return Err(invalid("z.stroke_time_ms", "must be positive"));
        }
        self.safety.validate().map_err(|e| invalid("safety", e.to_string()))?;
        self.fluidics.dispense.validate().map_err(|e| invalid("fluidics.dispense", e.to_string()))?;
        if !(self.fluidics.pump.flow_rate_ml_per_min >= 0.0) {
            return Err(invalid("fluidics.pump.flow_rate_ml_per_min", "must be non-negative"));
        }
        Reservoir::new(self.fluidics.reservoir_capacity_ml, self.fluidics.reservoir_level_ml)
            .map_err(|e| invalid("fluidics.reservoir_level_ml", e.to_string()))?;
        let g = &self.goniometry;
        let angle_ok = |a: f64| a > 0.0 && a < 180.0;
        if !angle_ok(g.default_theta_deg) {
            return Err(invalid("goniometry.default_theta_deg", "must lie in (0, 180)"));
        }
        for (&part, &theta) in &g.theta_by_part {
            if part == 0 || part > self.layout.total_parts() {
                return Err(invalid(format!("goniometry.theta_by_part.{part}"), "no such part"));
            }
            if !angle_ok(theta) {
                return Err(invalid(format!("goniometry.theta_by_part.{part}"), "must lie in (0, 180)"));
            }
        }
        if g.noise.n_points < crate::goniometry::MIN_PROFILE_POINTS || !(g.noise.sigma_rel_base_radius >= 0.0) {
            return Err(invalid("goniometry.noise", "need at least 5 points and a non-negative sigma"));
        }
        self.plan().map_err(|(path, msg)| invalid(path, msg))?;

        let mut last = 0;
        for (i, inj) in self.injections.iter().enumerate() {
            if inj.t_us < last {
                return Err(invalid(format!("injections[{i}].t_us"), "injection times must be non-decreasing"));
            }
            last = inj.t_us;
            let event =
                InputEvent::decode(inj.kind, &inj.params).map_err(|m| invalid(format!("injections[{i}].params"), m))?;
            if let InputEvent::PartMissing { column, row } = event {
                if column >= self.layout.columns || row >= self.layout.rows {
                    return Err(invalid(format!("injections[{i}].params"), "slot outside the tray"));
                }
            }
        }
        Ok(())
    }

    pub fn axis(&self, name: AxisName) -> StepperAxis {
        StepperAxis::from_config(name, self.axes.get(name)).expect("validated axis config")
    }

    /// Resolves every pose the sequencer needs to drive steps.
    pub fn plan(&self) -> Result<CellPlan, (String, String)> {
        let x =
            StepperAxis::from_config(AxisName::X, &self.axes.x).map_err(|e| ("axes.x".to_string(), e.to_string()))?;
        let y =
            StepperAxis::from_config(AxisName::Y, &self.axes.y).map_err(|e| ("axes.y".to_string(), e.to_string()))?;
        let d = StepperAxis::from_config(AxisName::Dispenser, &self.axes.dispenser)
            .map_err(|e| ("axes.dispenser".to_string(), e.to_string()))?;
        let xy = |path: &str, mm: (f64, f64)| -> Result<(i64, i64), (String, String)> {
            let sx = mm_to_steps(&x, mm.0).0;
            let sy = mm_to_steps(&y, mm.1).0;
            if !x.in_limits(sx) || !y.in_limits(sy) {
                return Err((path.to_string(), format!("pose ({}, {}) mm is outside axis travel", mm.0, mm.1)));
            }
            Ok((sx, sy))
        };
        let layout = self.layout.clone();
        let mut slots = Vec::with_capacity(layout.total_parts() as usize);
        for id in 1..=layout.total_parts() {
            let (c, r) = layout.slot_of(id);
            let mm = part_position(&layout, c, r).map_err(|e| ("layout".to_string(), e.to_string()))?;
            slots.push(xy("layout", mm)?);
        }
        let station = xy("stations.test_station_mm", self.stations.test_station_mm)?;
        let unload = xy("stations.unload_mm", self.stations.unload_mm)?;
        if slots.contains(&station) || slots.contains(&unload) || station == unload {
            return Err(("stations".into(), "station, unload pose and tray slots must be distinct".into()));
        }
        let drop_steps = mm_to_steps(&d, self.stations.drop_position_mm).0;
        if !d.in_limits(drop_steps) {
            return Err(("stations.drop_position_mm".into(), "outside dispenser travel".into()));
        }
        Ok(CellPlan {
            layout,
            slots,
            station,
            unload,
            drop_steps,
            policy: self.policy,
            refill_below_ml: self.fluidics.refill_below_ml,
            reservoir_capacity_ml: self.fluidics.reservoir_capacity_ml,
            pump_flow_ml_per_min: self.fluidics.pump.flow_rate_ml_per_min,
        })
    }

    /// Injections decoded, with the automatic start press prepended.
    pub fn input_schedule(&self) -> Vec<(Micros, InputEvent)> {
        let mut out = Vec::with_capacity(self.injections.len() + 1);
        if self.autostart {
            out.push((0, InputEvent::StartPress));
        }
        for inj in &self.injections {
            let event = InputEvent::decode(inj.kind, &inj.params).expect("validated injection");
            out.push((inj.t_us, event));
        }
        // Stable: equal times keep file order, autostart first.
        out.sort_by_key(|(t, _)| *t);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default_cell() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s, Scenario::default());
        let plan = s.plan().unwrap();
        assert_eq!(plan.slots.len(), 25);
    }

    #[test]
    fn roundtrip() {
        let mut s = Scenario::default();
        s.injections.push(Injection { t_us: 5, kind: InjectionKind::DoorOpen, params: Map::new() });
        assert_eq!(Scenario::from_json(&s.to_json_pretty()).unwrap(), s);
    }

    #[test]
    fn unknown_kind_rejected_with_path() {
        let text = "{\n  \"injections\": [\n    {\"t_us\": 0, \"kind\": \"meteor_strike\"}\n  ]\n}";
        match Scenario::from_json(text).unwrap_err() {
            ScenarioError::Field { path, line, .. } => {
                assert_eq!(path, "injections[0].kind");
                assert_eq!(line, 3);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let err = Scenario::from_json("{\"layout\": {\"colums\": 5}}").unwrap_err();
        assert!(err.to_string().contains("colums"), "{err}");
    }

    #[test]
    fn decreasing_times_rejected() {
        let text = r#"{"injections":[{"t_us":10,"kind":"door_open"},{"t_us":5,"kind":"door_close"}]}"#;
        let err = Scenario::from_json(text).unwrap_err();
        assert!(err.to_string().contains("injections[1].t_us"), "{err}");
    }

    #[test]
    fn params_checked() {
        let bad = r#"{"injections":[{"t_us":0,"kind":"channel_stuck","params":{"source":"door","channel":"c"}}]}"#;
        assert!(Scenario::from_json(bad).is_err());
        let outside = r#"{"injections":[{"t_us":0,"kind":"part_missing","params":{"column":5,"row":0}}]}"#;
        assert!(Scenario::from_json(outside).is_err());
        let extra = r#"{"injections":[{"t_us":0,"kind":"door_open","params":{"x":1}}]}"#;
        assert!(Scenario::from_json(extra).is_err());
        let ok = r#"{"injections":[{"t_us":0,"kind":"channel_stuck","params":{"source":"door","channel":"a","level":"closed"}}]}"#;
        let s = Scenario::from_json(ok).unwrap();
        assert_eq!(
            s.input_schedule()[1].1,
            InputEvent::ChannelStuck {
                source: SafetySource::DoorInterlock,
                channel: Channel::A,
                level: Some(ContactLevel::Closed)
            }
        );
    }

    #[test]
    fn syntax_error_has_line() {
        match Scenario::from_json("{\n\"seed\": 1,\n}").unwrap_err() {
            ScenarioError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }
}
