//! Electrical rule checks over the fuse/cable/enclosure tables.
//!
//! Input dialect (UTF-8 CSV, one record per line):
//!
//! ```text
//! id,rating_a,class,branch,load_a
//! FU-08040,4.0,CLASS J,POWER CIRCUIT,3.0
//! #! enclosures
//! name,max_voltage,lockable,nameplate
//! AC ENCLOSURE,120,true,voltage_rating;current_rating;...
//! #! devices
//! id,voltage,kind,enclosure
//! DSC-08040,120,ac,AC ENCLOSURE
//! #! cables
//! id,awg,conductors,description
//! CBL-08040,14,3,POWER CIRCUIT
//! ```
//!
//! The fuse table comes first; `#! <section>` switches tables. Lines
//! starting with `#` are comments, headers are optional, `load_a` may be
//! empty. Malformed rows are reported with their line number and skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Load multiplier for branch fuses (125% rule).
pub const FUSE_LOAD_FACTOR: f64 = 1.25;

/// Devices above this AC voltage must sit in a lockable enclosure.
pub const SEGREGATION_LIMIT_V: f64 = 50.0;

const REL_TOL: f64 = 1e-9;

pub const GLASS_LADDER_A: &[f64] = &[
    0.1, 0.125, 0.16, 0.2, 0.25, 0.315, 0.4, 0.5, 0.63, 0.8, 1.0, 1.25, 1.6, 2.0, 2.5, 3.15, 4.0, 5.0, 6.3, 8.0, 10.0,
];

pub const CLASS_J_LADDER_A: &[f64] =
    &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 17.5, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 60.0];

/// The ten nameplate entries every enclosure must carry.
pub const NAMEPLATE_FIELDS: [&str; 10] = [
    "voltage_rating",
    "current_rating",
    "frequency",
    "phase",
    "power_rating",
    "manufacturer",
    "serial_number",
    "short_circuit_current_rating",
    "enclosure_type",
    "operating_temperature",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplianceError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    InputError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseSpec {
    pub id: String,
    pub rating_a: f64,
    pub class: String,
    pub branch: String,
    pub load_a: Option<f64>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureDecl {
    pub name: String,
    pub max_voltage: f64,
    pub lockable: bool,
    pub nameplate_fields: BTreeSet<String>,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurrentKind {
    Ac,
    Dc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDecl {
    pub id: String,
    pub voltage: f64,
    pub kind: CurrentKind,
    pub enclosure: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    pub id: String,
    pub awg: Option<u32>,
    pub conductors: Option<u32>,
    pub description: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bom {
    pub fuses: Vec<FuseSpec>,
    pub enclosures: Vec<EnclosureDecl>,
    pub devices: Vec<DeviceDecl>,
    pub cables: Vec<CableSpec>,
    pub issues: Vec<ParseIssue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Fuses,
    Enclosures,
    Devices,
    Cables,
    Unknown,
}

impl Section {
    fn header(self) -> &'static [&'static str] {
        match self {
            Section::Fuses => &["id", "rating_a", "class", "branch", "load_a"],
            Section::Enclosures => &["name", "max_voltage", "lockable", "nameplate"],
            Section::Devices => &["id", "voltage", "kind", "enclosure"],
            Section::Cables => &["id", "awg", "conductors", "description"],
            Section::Unknown => &[],
        }
    }
}

fn split_record(line: &str) -> Result<Vec<String>, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(line.as_bytes());
    match reader.records().next() {
        Some(Ok(rec)) => Ok(rec.iter().map(|f| f.trim().to_string()).collect()),
        Some(Err(e)) => Err(e.to_string()),
        None => Ok(Vec::new()),
    }
}

fn number(field: &str, what: &str) -> Result<f64, String> {
    let cleaned = field.trim_end_matches(|c: char| c.is_ascii_alphabetic() || c == ' ');
    let v: f64 = cleaned.trim().parse().map_err(|_| format!("{what} `{field}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{what} `{field}` is not finite"));
    }
    Ok(v)
}

fn optional_u32(field: &str, what: &str) -> Result<Option<u32>, String> {
    let cleaned = field.trim_end_matches(|c: char| c.is_ascii_alphabetic() || c == ' ').trim();
    if cleaned.is_empty() {
        return Ok(None);
    }
    cleaned.parse().map(Some).map_err(|_| format!("{what} `{field}` is not a whole number"))
}

fn need<'a>(fields: &'a [String], i: usize, what: &str) -> Result<&'a str, String> {
    match fields.get(i).map(String::as_str) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(format!("missing {what}")),
    }
}

fn parse_fuse(fields: &[String], line: usize) -> Result<FuseSpec, String> {
    if fields.len() > 5 {
        return Err(format!("expected at most 5 fields, found {}", fields.len()));
    }
    let id = need(fields, 0, "id")?.to_string();
    let rating_a = number(need(fields, 1, "rating_a")?, "rating")?;
    if rating_a <= 0.0 {
        return Err(format!("rating {rating_a} A must be positive"));
    }
    let class = fields.get(2).cloned().unwrap_or_default();
    let branch = fields.get(3).cloned().unwrap_or_default();
    let load_a = match fields.get(4).map(String::as_str) {
        None | Some("") => None,
        Some(v) => Some(number(v, "load")?),
    };
    Ok(FuseSpec { id, rating_a, class, branch, load_a, line })
}

fn parse_bool(field: &str) -> Result<bool, String> {
    match field.to_ascii_lowercase().as_str() {
        "true" | "yes" | "y" | "1" => Ok(true),
        "false" | "no" | "n" | "0" => Ok(false),
        _ => Err(format!("lockable `{field}` is not a boolean")),
    }
}

fn parse_enclosure(fields: &[String], line: usize) -> Result<EnclosureDecl, String> {
    if fields.len() > 4 {
        return Err(format!("expected at most 4 fields, found {}", fields.len()));
    }
    let name = need(fields, 0, "name")?.to_string();
    let max_voltage = number(need(fields, 1, "max_voltage")?, "max_voltage")?;
    let lockable = parse_bool(need(fields, 2, "lockable")?)?;
    let nameplate_fields = fields
        .get(3)
        .map(|s| s.split(';').map(|f| f.trim().to_string()).filter(|f| !f.is_empty()).collect())
        .unwrap_or_default();
    Ok(EnclosureDecl { name, max_voltage, lockable, nameplate_fields, line })
}

fn parse_device(fields: &[String], line: usize) -> Result<DeviceDecl, String> {
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let id = need(fields, 0, "id")?.to_string();
    let voltage = number(need(fields, 1, "voltage")?, "voltage")?;
    let kind = match need(fields, 2, "kind")?.to_ascii_lowercase().as_str() {
        "ac" => CurrentKind::Ac,
        "dc" => CurrentKind::Dc,
        other => return Err(format!("kind `{other}` must be ac or dc")),
    };
    let enclosure = fields[3].clone();
    Ok(DeviceDecl { id, voltage, kind, enclosure, line })
}

fn parse_cable(fields: &[String], line: usize) -> Result<CableSpec, String> {
    if fields.len() > 4 {
        return Err(format!("expected at most 4 fields, found {}", fields.len()));
    }
    Ok(CableSpec {
        id: need(fields, 0, "id")?.to_string(),
        awg: optional_u32(fields.get(1).map_or("", String::as_str), "awg")?,
        conductors: optional_u32(fields.get(2).map_or("", String::as_str), "conductors")?,
        description: fields.get(3).cloned().unwrap_or_default(),
        line,
    })
}

/// Parses a BOM document. Never fails: problems become `issues`.
pub fn parse_bom(text: &str) -> Bom {
    let mut bom = Bom::default();
    let mut section = Section::Fuses;
    let mut first_row = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim().trim_start_matches('\u{feff}');
        if trimmed.is_empty() {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix("#!") {
            section = match name.trim().to_ascii_lowercase().as_str() {
                "fuses" => Section::Fuses,
                "enclosures" => Section::Enclosures,
                "devices" => Section::Devices,
                "cables" => Section::Cables,
                other => {
                    bom.issues.push(ParseIssue { line, message: format!("unknown section `{other}`") });
                    Section::Unknown
                }
            };
            first_row = true;
            continue;
        }
        if trimmed.starts_with('#') || section == Section::Unknown {
            continue;
        }
        let fields = match split_record(trimmed) {
            Ok(f) => f,
            Err(message) => {
                bom.issues.push(ParseIssue { line, message });
                continue;
            }
        };
        if std::mem::take(&mut first_row) {
            let header = section.header();
            let lower: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
            if lower.len() == header.len() && lower.iter().zip(header).all(|(a, b)| a == b) {
                continue;
            }
        }
        let result = match section {
            Section::Fuses => parse_fuse(&fields, line).map(|f| bom.fuses.push(f)),
            Section::Enclosures => parse_enclosure(&fields, line).map(|e| bom.enclosures.push(e)),
            Section::Devices => parse_device(&fields, line).map(|d| bom.devices.push(d)),
            Section::Cables => parse_cable(&fields, line).map(|c| bom.cables.push(c)),
            Section::Unknown => Ok(()),
        };
        if let Err(message) = result {
            bom.issues.push(ParseIssue { line, message });
        }
    }
    bom
}

/// Reads and parses a BOM file. Invalid UTF-8 is replaced, not rejected.
pub fn parse_bom_file(path: &Path) -> Result<Bom, ComplianceError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ComplianceError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(parse_bom(&String::from_utf8_lossy(&bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Pass,
    Warn,
    Fail,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Pass => "pass",
            Severity::Warn => "warn",
            Severity::Fail => "fail",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub rule_id: String,
    pub severity: Severity,
    pub subject: String,
    pub message: String,
}

impl Finding {
    fn new(rule_id: &str, severity: Severity, subject: &str, message: String) -> Self {
        Self { rule_id: rule_id.to_string(), severity, subject: subject.to_string(), message }
    }
}

/// Standard fuse sizes per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseLadders {
    pub glass: Vec<f64>,
    pub class_j: Vec<f64>,
    /// Used when the class is not recognized.
    pub other: Vec<f64>,
}

impl Default for FuseLadders {
    fn default() -> Self {
        let mut other: Vec<f64> = GLASS_LADDER_A.iter().chain(CLASS_J_LADDER_A).copied().collect();
        other.sort_by(f64::total_cmp);
        other.dedup();
        Self { glass: GLASS_LADDER_A.to_vec(), class_j: CLASS_J_LADDER_A.to_vec(), other }
    }
}

impl FuseLadders {
    /// One ladder for every class.
    pub fn uniform(mut sizes: Vec<f64>) -> Self {
        sizes.sort_by(f64::total_cmp);
        sizes.dedup();
        Self { glass: sizes.clone(), class_j: sizes.clone(), other: sizes }
    }

    pub fn for_class(&self, class: &str) -> &[f64] {
        let c = class.to_ascii_uppercase();
        if c.contains("GLASS") || c.contains("5X20") || c.contains("5MM") {
            &self.glass
        } else if c == "J" || c.contains("CLASS J") || c.contains("CLASS_J") {
            &self.class_j
        } else {
            &self.other
        }
    }
}

fn at_least(a: f64, b: f64) -> bool {
    a >= b * (1.0 - REL_TOL)
}

fn fmt_a(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s} A")
}

/// Minimum fuse rating for a load.
pub fn min_rating_a(load_a: f64) -> f64 {
    FUSE_LOAD_FACTOR * load_a
}

/// Largest load a fuse of `rating_a` may protect.
pub fn max_admissible_load_a(rating_a: f64) -> f64 {
    rating_a / FUSE_LOAD_FACTOR
}

/// Smallest ladder size that satisfies `required_a`.
pub fn next_standard_size(ladder: &[f64], required_a: f64) -> Option<f64> {
    ladder.iter().copied().filter(|&s| at_least(s, required_a)).min_by(f64::total_cmp)
}

/// The 125% rule for one fuse with a known load.
pub fn check_fuse_sizing(fuse: &FuseSpec, ladders: &FuseLadders) -> Result<Finding, ComplianceError> {
    let load = fuse.load_a.ok_or_else(|| ComplianceError::InputError(format!("{}: load is unknown", fuse.id)))?;
    if !(load > 0.0) {
        return Err(ComplianceError::InputError(format!("{}: load {load} A must be positive", fuse.id)));
    }
    let required = min_rating_a(load);
    let ladder = ladders.for_class(&fuse.class);
    let standard = next_standard_size(ladder, required);
    let limit = format!("max admissible load {}", fmt_a(max_admissible_load_a(fuse.rating_a)));
    let finding = if !at_least(fuse.rating_a, required) {
        Finding::new(
            "fuse-125",
            Severity::Fail,
            &fuse.id,
            format!(
                "rating {} is below 125% of load {} (minimum {}{}); {limit}",
                fmt_a(fuse.rating_a),
                fmt_a(load),
                fmt_a(required),
                standard.map_or(String::new(), |s| format!(", next standard size {}", fmt_a(s))),
            ),
        )
    } else {
        let ceiling = standard.map_or(required, |s| s.max(required));
        if at_least(ceiling, fuse.rating_a) {
            Finding::new(
                "fuse-125",
                Severity::Pass,
                &fuse.id,
                format!(
                    "rating {} covers load {} (minimum {}); {limit}",
                    fmt_a(fuse.rating_a),
                    fmt_a(load),
                    fmt_a(required)
                ),
            )
        } else {
            Finding::new(
                "fuse-125",
                Severity::Warn,
                &fuse.id,
                format!(
                    "rating {} is oversized for load {}: minimum {}, smallest standard size {}",
                    fmt_a(fuse.rating_a),
                    fmt_a(load),
                    fmt_a(required),
                    fmt_a(ceiling)
                ),
            )
        }
    };
    Ok(finding)
}

/// Fuse findings including rows whose load is unknown or invalid.
pub fn check_fuses(fuses: &[FuseSpec], ladders: &FuseLadders) -> Vec<Finding> {
    fuses
        .iter()
        .map(|fuse| match fuse.load_a {
            None => Finding::new(
                "fuse-load-unknown",
                Severity::Warn,
                &fuse.id,
                format!("load not stated; max admissible load {}", fmt_a(max_admissible_load_a(fuse.rating_a))),
            ),
            Some(_) => check_fuse_sizing(fuse, ladders)
                .unwrap_or_else(|e| Finding::new("fuse-125", Severity::Fail, &fuse.id, e.to_string())),
        })
        .collect()
}

/// AC/DC segregation and lockable-enclosure rules.
pub fn check_segregation(enclosures: &[EnclosureDecl], devices: &[DeviceDecl]) -> Vec<Finding> {
    let by_name: BTreeMap<&str, &EnclosureDecl> = enclosures.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut out = Vec::new();
    let mut kinds: BTreeMap<&str, BTreeSet<&'static str>> = BTreeMap::new();
    for d in devices {
        let enclosure = by_name.get(d.enclosure.as_str());
        let high = d.kind == CurrentKind::Ac && d.voltage > SEGREGATION_LIMIT_V;
        let finding = match (high, enclosure) {
            (true, Some(e)) if e.lockable => Finding::new(
                "segregation-lockable",
                Severity::Pass,
                &d.id,
                format!("{} V AC housed in lockable enclosure `{}`", d.voltage, e.name),
            ),
            (true, Some(e)) => Finding::new(
                "segregation-lockable",
                Severity::Fail,
                &d.id,
                format!("{} V AC in enclosure `{}`, which is not lockable", d.voltage, e.name),
            ),
            (true, None) => Finding::new(
                "segregation-lockable",
                Severity::Fail,
                &d.id,
                format!("{} V AC outside any declared enclosure (`{}`)", d.voltage, d.enclosure),
            ),
            (false, _) => Finding::new(
                "segregation-lockable",
                Severity::Pass,
                &d.id,
                format!("{} V {} needs no lockable enclosure", d.voltage, kind_str(d.kind)),
            ),
        };
        out.push(finding);
        if let Some(e) = enclosure {
            if d.voltage > e.max_voltage {
                out.push(Finding::new(
                    "enclosure-voltage",
                    Severity::Fail,
                    &d.id,
                    format!("{} V exceeds the {} V rating of `{}`", d.voltage, e.max_voltage, e.name),
                ));
            }
            kinds.entry(e.name.as_str()).or_default().insert(kind_str(d.kind));
        }
    }
    for (name, k) in kinds {
        if k.len() > 1 {
            out.push(Finding::new(
                "segregation-mixed",
                Severity::Warn,
                name,
                "AC and DC devices share this enclosure".to_string(),
            ));
        }
    }
    out
}

fn kind_str(k: CurrentKind) -> &'static str {
    match k {
        CurrentKind::Ac => "AC",
        CurrentKind::Dc => "DC",
    }
}

/// Required nameplate entries absent from `enclosure`, in canonical order.
pub fn missing_nameplate_fields(enclosure: &EnclosureDecl) -> Vec<&'static str> {
    NAMEPLATE_FIELDS.iter().copied().filter(|f| !enclosure.nameplate_fields.contains(*f)).collect()
}

pub fn check_nameplate(enclosure: &EnclosureDecl) -> Finding {
    let missing = missing_nameplate_fields(enclosure);
    if missing.is_empty() {
        Finding::new("nameplate", Severity::Pass, &enclosure.name, "all ten nameplate fields present".into())
    } else {
        Finding::new("nameplate", Severity::Fail, &enclosure.name, format!("nameplate missing: {}", missing.join(", ")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub findings: Vec<Finding>,
}

impl RuleReport {
    pub fn new(mut findings: Vec<Finding>) -> Self {
        findings.sort_by(|a, b| {
            (a.subject.as_str(), a.rule_id.as_str(), a.message.as_str()).cmp(&(
                b.subject.as_str(),
                b.rule_id.as_str(),
                b.message.as_str(),
            ))
        });
        Self { findings }
    }

    pub fn count(&self, severity: Severity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }

    pub fn has_failures(&self) -> bool {
        self.count(Severity::Fail) > 0
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.findings {
            out.push_str(&format!("{:<4} {:<22} {:<14} {}\n", f.severity, f.rule_id, f.subject, f.message));
        }
        out.push_str(&format!(
            "{} pass, {} warn, {} fail\n",
            self.count(Severity::Pass),
            self.count(Severity::Warn),
            self.count(Severity::Fail)
        ));
        out
    }

    pub fn to_json(&self) -> String {
        let summary = serde_json::json!({
            "findings": self.findings,
            "summary": {
                "pass": self.count(Severity::Pass),
                "warn": self.count(Severity::Warn),
                "fail": self.count(Severity::Fail),
            }
        });
        serde_json::to_string_pretty(&summary).expect("report serializes")
    }
}

/// Every rule over a parsed BOM, including parse issues as failures.
pub fn check_bom(bom: &Bom, ladders: &FuseLadders) -> RuleReport {
    let mut findings = check_fuses(&bom.fuses, ladders);
    findings.extend(check_segregation(&bom.enclosures, &bom.devices));
    findings.extend(bom.enclosures.iter().map(check_nameplate));
    findings.extend(
        bom.issues
            .iter()
            .map(|issue| Finding::new("parse", Severity::Fail, &format!("line {}", issue.line), issue.message.clone())),
    );
    RuleReport::new(findings)
}

/// The electrical drawing tables as shipped with the crate.
pub const DRAWING_BOM: &str = include_str!("../fixtures/drawing_bom.csv");
