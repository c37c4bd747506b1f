//! `acat` command line: headless runs, the live operator service, and the
//! goniometry and compliance tools.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use acat_core::compliance::{check_bom, parse_bom_file, FuseLadders};
use acat_core::goniometry::{fit_circle, report_deg, ProfilePoints};
use acat_core::simkernel::RunError;
use acat_core::{Scenario, Simulation, Terminal};
use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

pub mod serve;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAULTED: i32 = 2;
pub const EXIT_STOPPED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

pub const PORT_ENV: &str = "ACAT_PORT";

/// Wall-clock pacing of virtual time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    /// As fast as the host allows.
    Max,
    /// Virtual seconds per wall second.
    Factor(f64),
}

impl FromStr for Speed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(Speed::Max);
        }
        match s.parse::<f64>() {
            Ok(f) if f.is_finite() && f > 0.0 => Ok(Speed::Factor(f)),
            _ => Err(format!("expected a positive number or `max`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "acat", version, about = "Software twin of the ACAT contact-angle test cell")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scenario headless; exit 0 complete, 2 faulted, 3 stopped.
    Run {
        /// Scenario JSON; the default cell when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write the JSONL event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value = "max")]
        speed: Speed,
    },
    /// Serve live snapshots and accept operator commands over WebSocket.
    Serve {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overridden by ACAT_PORT.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Rewritten each time the cell settles, and on shutdown.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value = "1")]
        speed: Speed,
    },
    /// Check a bill of materials; exit 0 iff there are no fail findings.
    CheckBom {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Fit a circle to a drop profile (`x_mm,y_mm` CSV) and report the contact angle.
    Fit {
        file: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        baseline_y: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print the default scenario as JSON.
    Scenario,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<i32> {
    match cmd {
        Cmd::Run { scenario, log, speed } => cmd_run(scenario.as_deref(), log.as_deref(), speed),
        Cmd::Serve { scenario, port, bind, log, speed } => {
            let port = port_from_env(port)?;
            let scenario = load_scenario(scenario.as_deref())?;
            serve::run_blocking(SocketAddr::new(bind, port), scenario, speed, log)?;
            Ok(EXIT_OK)
        }
        Cmd::CheckBom { file, format } => cmd_check_bom(&file, format),
        Cmd::Fit { file, baseline_y, format } => cmd_fit(&file, baseline_y, format),
        Cmd::Scenario => {
            println!("{}", Scenario::default().to_json_pretty());
            Ok(EXIT_OK)
        }
    }
}

fn port_from_env(flag: u16) -> anyhow::Result<u16> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{PORT_ENV}=`{v}` is not a port number")),
        Err(_) => Ok(flag),
    }
}

pub fn load_scenario(path: Option<&Path>) -> anyhow::Result<Scenario> {
    let Some(path) = path else { return Ok(Scenario::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

pub fn exit_code(terminal: Terminal) -> i32 {
    match terminal {
        Terminal::Complete => EXIT_OK,
        Terminal::Faulted => EXIT_FAULTED,
        Terminal::Stopped => EXIT_STOPPED,
    }
}

/// Steps `sim` to its terminal state, sleeping to hold the requested pace.
pub fn run_paced(sim: &mut Simulation, speed: Speed) -> Result<Terminal, RunError> {
    let Speed::Factor(factor) = speed else { return sim.run_to_end() };
    let limit = sim.scenario().max_time_s * 1_000_000;
    let start = Instant::now();
    loop {
        if let Some(t) = sim.terminal() {
            return Ok(t);
        }
        if sim.now() > limit {
            return Err(RunError::Timeout { limit_s: sim.scenario().max_time_s, phase: sim.cycle().phase.as_str() });
        }
        sim.step();
        let due = start + Duration::from_secs_f64(sim.now() as f64 / 1e6 / factor);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    }
}

fn cmd_run(scenario: Option<&Path>, log: Option<&Path>, speed: Speed) -> anyhow::Result<i32> {
    let scenario = load_scenario(scenario)?;
    let mut sim = Simulation::new(scenario);
    let outcome = run_paced(&mut sim, speed);
    if let Some(path) = log {
        write_log(&sim, path)?;
    }
    let terminal = outcome?;
    let cycle = sim.cycle();
    eprintln!(
        "{}: {}/{} parts, t={:.3} s, {} events",
        terminal.as_str(),
        cycle.parts_done,
        cycle.total_parts,
        sim.now() as f64 / 1e6,
        sim.log().len()
    );
    Ok(exit_code(terminal))
}

pub fn write_log(sim: &Simulation, path: &Path) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    sim.log().write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_check_bom(file: &Path, format: Format) -> anyhow::Result<i32> {
    let bom = parse_bom_file(file)?;
    let report = check_bom(&bom, &FuseLadders::default());
    let text = match format {
        Format::Text => report.to_text(),
        Format::Json => report.to_json(),
    };
    let mut stdout = io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        stdout.write_all(b"\n")?;
    }
    Ok(if report.has_failures() { EXIT_ERROR } else { EXIT_OK })
}

/// Reads an `x_mm,y_mm` profile. The header is optional and `#` lines are comments.
pub fn read_profile(path: &Path, baseline_y: f64) -> anyhow::Result<ProfilePoints> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_profile(&text, baseline_y)
}

pub fn parse_profile(text: &str, baseline_y: f64) -> anyhow::Result<ProfilePoints> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if i == 0 && row.get(0).is_some_and(|f| f.eq_ignore_ascii_case("x_mm")) {
            continue;
        }
        if row.len() != 2 {
            bail!("line {line}: expected 2 fields, found {}", row.len());
        }
        let coord = |k: usize| -> anyhow::Result<f64> {
            row[k].parse().with_context(|| format!("line {line}: `{}` is not a number", &row[k]))
        };
        points.push((coord(0)?, coord(1)?));
    }
    Ok(ProfilePoints { points, baseline_y, noise_sigma: 0.0, seed: 0 })
}

fn cmd_fit(file: &Path, baseline_y: f64, format: Format) -> anyhow::Result<i32> {
    let profile = read_profile(file, baseline_y)?;
    let fit = fit_circle(&profile)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&fit)?),
        Format::Text => {
            println!("points            {}", profile.points.len());
            println!("center_mm         {:.6}, {:.6}", fit.center.0, fit.center.1);
            println!("radius_mm         {:.6}", fit.radius);
            println!("rms_residual_mm   {:.3e}", fit.rms_residual);
            println!("contact_angle_deg {:.3}", report_deg(fit.contact_angle_deg));
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_parses() {
        assert_eq!("max".parse::<Speed>(), Ok(Speed::Max));
        assert_eq!("2.5".parse::<Speed>(), Ok(Speed::Factor(2.5)));
        assert!("0".parse::<Speed>().is_err());
        assert!("fast".parse::<Speed>().is_err());
    }

    #[test]
    fn profile_header_and_comments() {
        let p = parse_profile("# drop\nx_mm,y_mm\n0,1\n 1 , 0.5\n", 0.0).unwrap();
        assert_eq!(p.points, vec![(0.0, 1.0), (1.0, 0.5)]);
        let err = parse_profile("x_mm,y_mm\n0,1\n1,abc\n", 0.0).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(run_cli(["acat", "run", "--speed", "warp"]), EXIT_USAGE);
        assert_eq!(run_cli(["acat", "launch"]), EXIT_USAGE);
        assert_eq!(run_cli(["acat", "--version"]), EXIT_OK);
    }
}
