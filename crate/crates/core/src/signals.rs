//! Logic-level I/O model shared by every device.
//!
//! Pins follow the cell's labelling convention: a direction prefix (`I` or
//! `O`), a terminal block number and the original GPIO number, e.g. `I:1/2`.
//! Inputs are NPN sinking and therefore active-low; outputs are PNP sourcing
//! and active-high.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Micros;

/// Default switch debounce window.
pub const DEFAULT_DEBOUNCE_US: Micros = 5_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SignalError {
    #[error("malformed pin label `{text}`: bad token `{token}`")]
    Parse { text: String, token: String },
    #[error("block number must be positive")]
    ZeroBlock,
    #[error("pin {0} is already assigned")]
    DuplicatePin(String),
    #[error("pin name `{0}` is already in use")]
    DuplicateName(String),
    #[error("pin map line {line}: {message}")]
    PinMap { line: usize, message: String },
    #[error("sample timestamps are not monotone at index {index}")]
    NonMonotone { index: usize },
    #[error("unknown rail `{0}`")]
    UnknownRail(String),
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectricalMode {
    SinkingNpn,
    SourcingPnp,
}

impl Direction {
    pub fn electrical_mode(self) -> ElectricalMode {
        match self {
            Direction::Input => ElectricalMode::SinkingNpn,
            Direction::Output => ElectricalMode::SourcingPnp,
        }
    }

    fn prefix(self) -> char {
        match self {
            Direction::Input => 'I',
            Direction::Output => 'O',
        }
    }
}

/// A single terminal-block connection.
///
/// The electrical mode is a function of the direction, so it cannot be set
/// inconsistently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PinAssignment {
    direction: Direction,
    block: u32,
    gpio: u32,
}

impl PinAssignment {
    pub fn new(direction: Direction, block: u32, gpio: u32) -> Result<Self, SignalError> {
        if block == 0 {
            return Err(SignalError::ZeroBlock);
        }
        Ok(Self { direction, block, gpio })
    }

    pub fn input(block: u32, gpio: u32) -> Result<Self, SignalError> {
        Self::new(Direction::Input, block, gpio)
    }

    pub fn output(block: u32, gpio: u32) -> Result<Self, SignalError> {
        Self::new(Direction::Output, block, gpio)
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn block(&self) -> u32 {
        self.block
    }

    pub fn gpio(&self) -> u32 {
        self.gpio
    }

    pub fn electrical_mode(&self) -> ElectricalMode {
        self.direction.electrical_mode()
    }
}

/// Renders a pin as `<I|O>:<block>/<gpio>`.
pub fn format_label(pin: &PinAssignment) -> String {
    format!("{}:{}/{}", pin.direction.prefix(), pin.block, pin.gpio)
}

/// Inverse of [`format_label`].
pub fn parse_label(text: &str) -> Result<PinAssignment, SignalError> {
    let bad = |token: &str| SignalError::Parse { text: text.to_string(), token: token.to_string() };
    let (prefix, rest) = text.split_once(':').ok_or_else(|| bad(text))?;
    let direction = match prefix {
        "I" => Direction::Input,
        "O" => Direction::Output,
        other => return Err(bad(other)),
    };
    let (block, gpio) = rest.split_once('/').ok_or_else(|| bad(rest))?;
    let block = parse_number(block).ok_or_else(|| bad(block))?;
    let gpio = parse_number(gpio).ok_or_else(|| bad(gpio))?;
    if block == 0 {
        return Err(bad("0"));
    }
    PinAssignment::new(direction, block, gpio)
}

// Plain decimal digits only: no sign, no whitespace, no leading zeros.
fn parse_number(token: &str) -> Option<u32> {
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if token.len() > 1 && token.starts_with('0') {
        return None;
    }
    token.parse().ok()
}

impl fmt::Display for PinAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_label(self))
    }
}

impl FromStr for PinAssignment {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Logic {
    Asserted,
    Deasserted,
}

impl Logic {
    pub fn from_bool(asserted: bool) -> Self {
        if asserted {
            Logic::Asserted
        } else {
            Logic::Deasserted
        }
    }

    pub fn is_asserted(self) -> bool {
        self == Logic::Asserted
    }
}

/// Physical level that represents `logic` for the given electrical mode.
pub fn physical_for(mode: ElectricalMode, logic: Logic) -> Level {
    match (mode, logic) {
        (ElectricalMode::SinkingNpn, Logic::Asserted) => Level::Low,
        (ElectricalMode::SinkingNpn, Logic::Deasserted) => Level::High,
        (ElectricalMode::SourcingPnp, Logic::Asserted) => Level::High,
        (ElectricalMode::SourcingPnp, Logic::Deasserted) => Level::Low,
    }
}

/// Logical meaning of a physical level for the given electrical mode.
pub fn logical_for(mode: ElectricalMode, level: Level) -> Logic {
    match (mode, level) {
        (ElectricalMode::SinkingNpn, Level::Low) => Logic::Asserted,
        (ElectricalMode::SinkingNpn, Level::High) => Logic::Deasserted,
        (ElectricalMode::SourcingPnp, Level::High) => Logic::Asserted,
        (ElectricalMode::SourcingPnp, Level::Low) => Logic::Deasserted,
    }
}

/// Sampled state of one pin. Physical and logical views always agree under
/// the pin's electrical mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalState {
    mode: ElectricalMode,
    physical_level: Level,
    logical: Logic,
    last_change_us: Micros,
}

impl SignalState {
    pub fn from_logical(mode: ElectricalMode, logical: Logic, at: Micros) -> Self {
        Self { mode, physical_level: physical_for(mode, logical), logical, last_change_us: at }
    }

    pub fn from_physical(mode: ElectricalMode, level: Level, at: Micros) -> Self {
        Self { mode, physical_level: level, logical: logical_for(mode, level), last_change_us: at }
    }

    /// A de-asserted input sampled at time zero.
    pub fn input_idle() -> Self {
        Self::from_logical(ElectricalMode::SinkingNpn, Logic::Deasserted, 0)
    }

    pub fn mode(&self) -> ElectricalMode {
        self.mode
    }

    pub fn physical_level(&self) -> Level {
        self.physical_level
    }

    pub fn logical(&self) -> Logic {
        self.logical
    }

    pub fn is_asserted(&self) -> bool {
        self.logical.is_asserted()
    }

    pub fn last_change_us(&self) -> Micros {
        self.last_change_us
    }

    /// Returns the state after driving `logical` at `at`. `last_change_us`
    /// only moves when the level actually changes.
    pub fn with_logical(self, logical: Logic, at: Micros) -> Self {
        if logical == self.logical {
            self
        } else {
            Self::from_logical(self.mode, logical, at)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Rising,
    Falling,
    None,
}

/// Classifies the logical transition between two samples of the same pin.
pub fn detect_edge(previous: &SignalState, current: &SignalState) -> Edge {
    match (previous.logical, current.logical) {
        (Logic::Deasserted, Logic::Asserted) => Edge::Rising,
        (Logic::Asserted, Logic::Deasserted) => Edge::Falling,
        _ => Edge::None,
    }
}

/// Debounces a raw sample stream.
///
/// Samples are treated as a piecewise-constant signal that holds each value
/// until the next sample. The first element of the result is the initial
/// stable state; every later element is an output transition, emitted once
/// the raw level has held for `window_us`.
pub fn debounce(raw: &[SignalState], window_us: Micros) -> Result<Vec<SignalState>, SignalError> {
    for (index, pair) in raw.windows(2).enumerate() {
        if pair[1].last_change_us < pair[0].last_change_us {
            return Err(SignalError::NonMonotone { index: index + 1 });
        }
    }
    let Some(first) = raw.first() else {
        return Ok(Vec::new());
    };
    let mode = first.mode;
    let mut out = vec![SignalState::from_logical(mode, first.logical, first.last_change_us)];
    let mut stable = first.logical;
    let mut candidate: Option<(Logic, Micros)> = None;

    for sample in &raw[1..] {
        let t = sample.last_change_us;
        if let Some((level, since)) = candidate {
            if since + window_us <= t {
                stable = level;
                out.push(SignalState::from_logical(mode, level, since + window_us));
                candidate = None;
            }
        }
        if sample.logical == stable {
            candidate = None;
        } else {
            match candidate {
                Some((level, _)) if level == sample.logical => {}
                _ => candidate = Some((sample.logical, t)),
            }
        }
    }
    if let Some((level, since)) = candidate {
        out.push(SignalState::from_logical(mode, level, since + window_us));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RailVoltage {
    #[serde(rename = "120VAC")]
    Ac120,
    #[serde(rename = "24VDC")]
    Dc24,
    #[serde(rename = "12VDC")]
    Dc12,
    #[serde(rename = "5VDC")]
    Dc5,
    #[serde(rename = "3.3VDC")]
    Dc3v3,
}

impl RailVoltage {
    pub fn volts(self) -> f64 {
        match self {
            RailVoltage::Ac120 => 120.0,
            RailVoltage::Dc24 => 24.0,
            RailVoltage::Dc12 => 12.0,
            RailVoltage::Dc5 => 5.0,
            RailVoltage::Dc3v3 => 3.3,
        }
    }

    pub fn is_ac(self) -> bool {
        matches!(self, RailVoltage::Ac120)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRail {
    pub name: String,
    pub nominal_voltage: RailVoltage,
    pub energized: bool,
}

impl PowerRail {
    pub fn new(name: impl Into<String>, nominal_voltage: RailVoltage) -> Self {
        Self { name: name.into(), nominal_voltage, energized: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinEntry {
    pub pin: PinAssignment,
    pub name: String,
    pub description: String,
}

/// Cell-wide pin table. Built once and read-only afterwards.
#[derive(Debug, Clone, Default)]
pub struct PinRegistry {
    by_pin: BTreeMap<PinAssignment, usize>,
    by_name: BTreeMap<String, usize>,
    entries: Vec<PinEntry>,
}

/// Best-effort default pin map. Not authoritative: the published sheets are
/// only partly legible.
pub const DEFAULT_PIN_MAP: &str = include_str!("../fixtures/default_pinmap.csv");

impl PinRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: PinEntry) -> Result<(), SignalError> {
        if self.by_pin.contains_key(&entry.pin) {
            return Err(SignalError::DuplicatePin(format_label(&entry.pin)));
        }
        if self.by_name.contains_key(&entry.name) {
            return Err(SignalError::DuplicateName(entry.name));
        }
        let index = self.entries.len();
        self.by_pin.insert(entry.pin, index);
        self.by_name.insert(entry.name.clone(), index);
        self.entries.push(entry);
        Ok(())
    }

    /// Parses a pin-map file: one `LABEL,NAME,DESCRIPTION` per line, `#`
    /// starts a comment line.
    pub fn from_pin_map(text: &str) -> Result<Self, SignalError> {
        let mut registry = Self::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.splitn(3, ',');
            let label = fields.next().unwrap_or_default().trim();
            let name = fields.next().map(str::trim).unwrap_or_default();
            let description = fields.next().map(str::trim).unwrap_or_default();
            if name.is_empty() {
                return Err(SignalError::PinMap { line, message: "missing NAME field".into() });
            }
            let pin = parse_label(label).map_err(|e| SignalError::PinMap { line, message: e.to_string() })?;
            registry
                .insert(PinEntry { pin, name: name.to_string(), description: description.to_string() })
                .map_err(|e| SignalError::PinMap { line, message: e.to_string() })?;
        }
        Ok(registry)
    }

    pub fn default_cell() -> Self {
        Self::from_pin_map(DEFAULT_PIN_MAP).expect("bundled pin map is valid")
    }

    pub fn by_name(&self, name: &str) -> Option<&PinEntry> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn by_pin(&self, pin: &PinAssignment) -> Option<&PinEntry> {
        self.by_pin.get(pin).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PinEntry> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone)]
struct OutputSlot {
    rail: String,
    requested: Logic,
    state: SignalState,
}

/// Output image: each output is referenced to a rail and reads de-asserted
/// whenever that rail is de-energized.
#[derive(Debug, Clone, Default)]
pub struct OutputImage {
    rails: BTreeMap<String, PowerRail>,
    outputs: BTreeMap<String, OutputSlot>,
}

impl OutputImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_rail(&mut self, rail: PowerRail) {
        self.rails.insert(rail.name.clone(), rail);
    }

    pub fn add_output(&mut self, name: impl Into<String>, rail: &str) -> Result<(), SignalError> {
        if !self.rails.contains_key(rail) {
            return Err(SignalError::UnknownRail(rail.to_string()));
        }
        self.outputs.insert(
            name.into(),
            OutputSlot {
                rail: rail.to_string(),
                requested: Logic::Deasserted,
                state: SignalState::from_logical(ElectricalMode::SourcingPnp, Logic::Deasserted, 0),
            },
        );
        Ok(())
    }

    pub fn drive(&mut self, name: &str, logic: Logic, now: Micros) -> Result<(), SignalError> {
        let slot = self.outputs.get_mut(name).ok_or_else(|| SignalError::UnknownOutput(name.to_string()))?;
        slot.requested = logic;
        let energized = self.rails.get(&slot.rail).is_some_and(|r| r.energized);
        let effective = if energized { logic } else { Logic::Deasserted };
        slot.state = slot.state.with_logical(effective, now);
        Ok(())
    }

    /// Sets a rail's supply and re-evaluates every output that depends on it
    /// at the same instant.
    pub fn set_rail(&mut self, rail: &str, energized: bool, now: Micros) -> Result<(), SignalError> {
        let entry = self.rails.get_mut(rail).ok_or_else(|| SignalError::UnknownRail(rail.to_string()))?;
        if entry.energized == energized {
            return Ok(());
        }
        entry.energized = energized;
        for slot in self.outputs.values_mut().filter(|s| s.rail == rail) {
            let effective = if energized { slot.requested } else { Logic::Deasserted };
            slot.state = slot.state.with_logical(effective, now);
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> Option<SignalState> {
        self.outputs.get(name).map(|s| s.state)
    }

    pub fn rail(&self, name: &str) -> Option<&PowerRail> {
        self.rails.get(name)
    }

    pub fn outputs_on(&self, rail: &str) -> impl Iterator<Item = (&str, SignalState)> + '_ {
        let rail = rail.to_string();
        self.outputs.iter().filter(move |(_, s)| s.rail == rail).map(|(n, s)| (n.as_str(), s.state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input(logic: Logic, t: Micros) -> SignalState {
        SignalState::from_logical(ElectricalMode::SinkingNpn, logic, t)
    }

    #[test]
    fn labels_match_convention() {
        assert_eq!(format_label(&PinAssignment::input(1, 2).unwrap()), "I:1/2");
        assert_eq!(format_label(&PinAssignment::output(2, 17).unwrap()), "O:2/17");
        assert_eq!(parse_label("I:1/2").unwrap(), PinAssignment::input(1, 2).unwrap());
        assert_eq!(parse_label("O:2/0").unwrap(), PinAssignment::output(2, 0).unwrap());
    }

    #[test]
    fn parse_error_names_token() {
        match parse_label("X:1/2") {
            Err(SignalError::Parse { token, .. }) => assert_eq!(token, "X"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_label("I:1/x2") {
            Err(SignalError::Parse { token, .. }) => assert_eq!(token, "x2"),
            other => panic!("unexpected {other:?}"),
        }
        for bad in ["", "I", "I:", "I:1", "I:/2", "I:0/2", "I:1/+2", "I:01/2", "i:1/2", " I:1/2"] {
            assert!(parse_label(bad).is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn electrical_mode_follows_direction() {
        assert_eq!(PinAssignment::input(1, 1).unwrap().electrical_mode(), ElectricalMode::SinkingNpn);
        assert_eq!(PinAssignment::output(1, 1).unwrap().electrical_mode(), ElectricalMode::SourcingPnp);
        assert_eq!(PinAssignment::new(Direction::Input, 0, 3), Err(SignalError::ZeroBlock));
    }

    #[test]
    fn polarity_is_involutive() {
        for mode in [ElectricalMode::SinkingNpn, ElectricalMode::SourcingPnp] {
            for logic in [Logic::Asserted, Logic::Deasserted] {
                assert_eq!(logical_for(mode, physical_for(mode, logic)), logic);
            }
        }
        assert_eq!(physical_for(ElectricalMode::SinkingNpn, Logic::Asserted), Level::Low);
        assert_eq!(physical_for(ElectricalMode::SourcingPnp, Logic::Asserted), Level::High);
    }

    #[test]
    fn edges() {
        let lo = input(Logic::Deasserted, 0);
        let hi = input(Logic::Asserted, 1);
        assert_eq!(detect_edge(&lo, &hi), Edge::Rising);
        assert_eq!(detect_edge(&hi, &lo), Edge::Falling);
        assert_eq!(detect_edge(&hi, &hi), Edge::None);
        assert_eq!(detect_edge(&lo, &lo), Edge::None);
    }

    #[test]
    fn square_wave_edge_count() {
        // Counting oracle: a wave with N transitions has N edges.
        for n in [0usize, 1, 2, 7, 64] {
            let wave: Vec<SignalState> =
                (0..=n).map(|i| input(Logic::from_bool(i % 2 == 1), i as Micros * 10)).collect();
            let edges = wave.windows(2).filter(|w| detect_edge(&w[0], &w[1]) != Edge::None).count();
            assert_eq!(edges, n);
        }
    }

    #[test]
    fn debounce_rejects_chatter() {
        let raw = [
            input(Logic::Deasserted, 0),
            input(Logic::Asserted, 1_000),
            input(Logic::Deasserted, 2_000),
            input(Logic::Asserted, 3_000),
            input(Logic::Deasserted, 4_500),
        ];
        let out = debounce(&raw, DEFAULT_DEBOUNCE_US).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].logical(), Logic::Deasserted);
    }

    #[test]
    fn debounce_delays_clean_transition() {
        let raw = [input(Logic::Deasserted, 0), input(Logic::Asserted, 10_000)];
        let out = debounce(&raw, DEFAULT_DEBOUNCE_US).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].logical(), Logic::Asserted);
        assert_eq!(out[1].last_change_us(), 15_000);
    }

    #[test]
    fn debounce_rejects_time_travel() {
        let raw = [input(Logic::Deasserted, 10), input(Logic::Asserted, 5)];
        assert_eq!(debounce(&raw, 5), Err(SignalError::NonMonotone { index: 1 }));
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut reg = PinRegistry::new();
        let pin = PinAssignment::input(1, 2).unwrap();
        reg.insert(PinEntry { pin, name: "a".into(), description: String::new() }).unwrap();
        assert!(matches!(
            reg.insert(PinEntry { pin, name: "b".into(), description: String::new() }),
            Err(SignalError::DuplicatePin(_))
        ));
        // Same block/gpio in the other direction is a different pin.
        let out = PinAssignment::output(1, 2).unwrap();
        reg.insert(PinEntry { pin: out, name: "c".into(), description: String::new() }).unwrap();
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn pin_map_parsing() {
        let text = "# comment\nI:1/2,start_button,operator start\n\nO:1/5,red_light,fault lamp, red\n";
        let reg = PinRegistry::from_pin_map(text).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.by_name("red_light").unwrap().description, "fault lamp, red");
        let err = PinRegistry::from_pin_map("I:1/2,a,x\nQ:1/2,b,y\n").unwrap_err();
        assert!(matches!(err, SignalError::PinMap { line: 2, .. }));
        let dup = PinRegistry::from_pin_map("I:1/2,a,x\nI:1/2,b,y\n").unwrap_err();
        assert!(matches!(dup, SignalError::PinMap { line: 2, .. }));
        assert!(PinRegistry::default_cell().by_name("start_button").is_some());
    }

    #[test]
    fn rail_loss_forces_outputs_low_immediately() {
        let mut img = OutputImage::new();
        img.add_rail(PowerRail::new("24V_MCR", RailVoltage::Dc24));
        img.add_rail(PowerRail::new("24V", RailVoltage::Dc24));
        img.add_output("z_valve", "24V_MCR").unwrap();
        img.add_output("x_enable", "24V_MCR").unwrap();
        img.add_output("green_lamp", "24V").unwrap();
        for name in ["z_valve", "x_enable", "green_lamp"] {
            img.drive(name, Logic::Asserted, 10).unwrap();
        }
        img.set_rail("24V_MCR", false, 20).unwrap();
        for (_, state) in img.outputs_on("24V_MCR") {
            assert_eq!(state.logical(), Logic::Deasserted);
            assert_eq!(state.last_change_us(), 20);
        }
        assert!(img.output("green_lamp").unwrap().is_asserted());
        // Requests made while the rail is down take effect when it returns.
        img.drive("z_valve", Logic::Asserted, 30).unwrap();
        assert!(!img.output("z_valve").unwrap().is_asserted());
        img.set_rail("24V_MCR", true, 40).unwrap();
        assert!(img.output("z_valve").unwrap().is_asserted());
    }

    fn arb_pin() -> impl Strategy<Value = PinAssignment> {
        (any::<bool>(), 1u32..=u32::MAX, any::<u32>()).prop_map(|(out, block, gpio)| {
            let dir = if out { Direction::Output } else { Direction::Input };
            PinAssignment::new(dir, block, gpio).unwrap()
        })
    }

    fn arb_train() -> impl Strategy<Value = Vec<(bool, u64)>> {
        prop::collection::vec((any::<bool>(), 0u64..20_000), 1..60)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn label_roundtrip(pin in arb_pin()) {
            prop_assert_eq!(parse_label(&format_label(&pin)).unwrap(), pin);
        }

        #[test]
        fn debounce_never_adds_transitions(train in arb_train(), window in 1u64..10_000) {
            let mut t = 0;
            let raw: Vec<SignalState> = train
                .iter()
                .map(|&(level, dt)| {
                    t += dt;
                    input(Logic::from_bool(level), t)
                })
                .collect();
            let raw_transitions = raw.windows(2).filter(|w| w[0].logical() != w[1].logical()).count();
            let out = debounce(&raw, window).unwrap();
            prop_assert!(out.len() - 1 <= raw_transitions);
            // Output transitions alternate and respect the window.
            for pair in out.windows(2) {
                prop_assert_ne!(pair[0].logical(), pair[1].logical());
                prop_assert!(pair[1].last_change_us() >= pair[0].last_change_us());
            }
        }
    }
}
