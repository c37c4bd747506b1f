//! Water path (reservoir, diaphragm pump, burst-driven dispense valve) and
//! the venturi vacuum end effector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Micros;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidicsError {
    #[error("safety circuit is not in run")]
    SafetyInterlock,
    #[error("reservoir holds {level_ml} mL, droplet needs {needed_ml} mL")]
    DryDispense { level_ml: f64, needed_ml: f64 },
    #[error("dispenser is not at the drop position")]
    PositionError,
    #[error("gripper already holds a part")]
    StateError,
    #[error("invalid fluidics configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSpec {
    pub flow_rate_ml_per_min: f64,
    pub supply_voltage: f64,
    pub fuse_a: f64,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self { flow_rate_ml_per_min: 1300.0, supply_voltage: 12.0, fuse_a: 1.6 }
    }
}

impl PumpSpec {
    pub fn volume_ml(&self, duration_us: Micros) -> f64 {
        self.flow_rate_ml_per_min * duration_us as f64 / 60e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    capacity_ml: f64,
    level_ml: f64,
}

/// Result of adding water to the reservoir.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub delta_ml: f64,
    pub overfilled: bool,
}

impl Reservoir {
    pub fn new(capacity_ml: f64, level_ml: f64) -> Result<Self, FluidicsError> {
        if !(capacity_ml > 0.0) || !(0.0..=capacity_ml).contains(&level_ml) {
            return Err(FluidicsError::Config(format!("reservoir level {level_ml} mL must lie in [0, {capacity_ml}]")));
        }
        Ok(Self { capacity_ml, level_ml })
    }

    pub fn capacity_ml(&self) -> f64 {
        self.capacity_ml
    }

    pub fn level_ml(&self) -> f64 {
        self.level_ml
    }

    pub fn fill(&mut self, volume_ml: f64) -> Fill {
        let room = self.capacity_ml - self.level_ml;
        if volume_ml > room {
            self.level_ml = self.capacity_ml;
            Fill { delta_ml: room, overfilled: true }
        } else {
            self.level_ml += volume_ml;
            Fill { delta_ml: volume_ml, overfilled: false }
        }
    }

    pub fn empty(&mut self) {
        self.level_ml = 0.0;
    }

    fn draw(&mut self, volume_ml: f64) -> Result<(), FluidicsError> {
        if self.level_ml < volume_ml {
            return Err(FluidicsError::DryDispense { level_ml: self.level_ml, needed_ml: volume_ml });
        }
        self.level_ml -= volume_ml;
        Ok(())
    }
}

/// Runs the pump for `duration_us`, cut short at `fault_after_us` when the
/// safety relay drops during the run.
pub fn pump_run(
    pump: &PumpSpec,
    reservoir: &mut Reservoir,
    duration_us: Micros,
    fault_after_us: Option<Micros>,
    safety_run: bool,
) -> Result<Fill, FluidicsError> {
    if !safety_run {
        return Err(FluidicsError::SafetyInterlock);
    }
    let ran = fault_after_us.map_or(duration_us, |f| f.min(duration_us));
    Ok(reservoir.fill(pump.volume_ml(ran)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispenseSpec {
    pub droplet_volume_ul: f64,
    pub burst_duration_ms: f64,
    pub anti_drip: bool,
    /// Relative standard deviation of the dispensed volume.
    pub volume_noise_rel_sigma: f64,
    /// Truncation bound of the volume noise, relative.
    pub volume_tolerance_rel: f64,
}

impl Default for DispenseSpec {
    fn default() -> Self {
        Self {
            droplet_volume_ul: 10.0,
            burst_duration_ms: 50.0,
            anti_drip: true,
            volume_noise_rel_sigma: 0.01,
            volume_tolerance_rel: 0.02,
        }
    }
}

/// Valve calibration: 50 ms of air releases 10 µL.
pub const UL_PER_BURST_MS: f64 = 0.2;

impl DispenseSpec {
    /// Burst length needed for a droplet of `volume_ul`.
    pub fn burst_for_volume_ms(volume_ul: f64) -> f64 {
        volume_ul / UL_PER_BURST_MS
    }

    pub fn volume_for_burst_ul(burst_ms: f64) -> f64 {
        burst_ms * UL_PER_BURST_MS
    }

    pub fn burst_duration_us(&self) -> Micros {
        (self.burst_duration_ms * 1000.0).round() as Micros
    }

    pub fn nominal_ml(&self) -> f64 {
        self.droplet_volume_ul / 1000.0
    }

    pub fn validate(&self) -> Result<(), FluidicsError> {
        if !(self.droplet_volume_ul > 0.0) {
            return Err(FluidicsError::Config("droplet_volume_ul must be positive".into()));
        }
        if !(self.burst_duration_ms > 0.0) {
            return Err(FluidicsError::Config("burst_duration_ms must be positive".into()));
        }
        if !(self.volume_noise_rel_sigma >= 0.0) || !(self.volume_tolerance_rel >= 0.0) {
            return Err(FluidicsError::Config("volume noise settings must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Droplet {
    pub volume_ul: f64,
    pub nominal_ul: f64,
}

/// Releases one droplet. The reservoir is charged the nominal volume; the
/// delivered volume carries truncated Gaussian noise drawn from `rng`.
pub fn dispense<R: Rng + ?Sized>(
    spec: &DispenseSpec,
    reservoir: &mut Reservoir,
    at_drop_position: bool,
    safety_run: bool,
    rng: &mut R,
) -> Result<Droplet, FluidicsError> {
    if !safety_run {
        return Err(FluidicsError::SafetyInterlock);
    }
    if !at_drop_position {
        return Err(FluidicsError::PositionError);
    }
    reservoir.draw(spec.nominal_ml())?;
    let nominal = spec.droplet_volume_ul;
    let rel = if spec.volume_noise_rel_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.volume_noise_rel_sigma).expect("finite sigma");
        let draw: f64 = normal.sample(rng);
        draw.clamp(-spec.volume_tolerance_rel, spec.volume_tolerance_rel)
    } else {
        0.0
    };
    Ok(Droplet { volume_ul: nominal * (1.0 + rel), nominal_ul: nominal })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VacuumGripper {
    venturi_on: bool,
    gripped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripOutcome {
    Gripped,
    PickMiss,
}

impl VacuumGripper {
    pub fn venturi_on(&self) -> bool {
        self.venturi_on
    }

    pub fn gripped(&self) -> bool {
        self.gripped
    }

    pub fn grip(&mut self, part_present: bool, z_down: bool, safety_run: bool) -> Result<GripOutcome, FluidicsError> {
        if !safety_run {
            return Err(FluidicsError::SafetyInterlock);
        }
        if self.gripped {
            return Err(FluidicsError::StateError);
        }
        if !z_down {
            return Err(FluidicsError::PositionError);
        }
        self.venturi_on = true;
        if part_present {
            self.gripped = true;
            Ok(GripOutcome::Gripped)
        } else {
            Ok(GripOutcome::PickMiss)
        }
    }

    pub fn release(&mut self) {
        self.venturi_on = false;
        self.gripped = false;
    }
}
