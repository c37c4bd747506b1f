//! Synthetic sessile-drop goniometry.
//!
//! A droplet is modelled as a spherical cap resting on a horizontal baseline.
//! Profiles are sampled along the visible arc, optionally perturbed by
//! radial Gaussian noise, and the contact angle is recovered with an
//! algebraic (Kåsa) least-squares circle fit.
//!
//! Coordinates: `y` grows upward and the droplet sits above `baseline_y`.
//! For a circle of radius `R` centred at height `c_y` the contact angle is
//! `acos((baseline_y - c_y) / R)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkernel::rng::random_stream;
use crate::Micros;

/// Fits flatter than this are rejected as ill-conditioned.
pub const MIN_FIT_ANGLE_DEG: f64 = 5.0;
pub const MIN_PROFILE_POINTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GoniometryError {
    #[error("contact angle {0}° is degenerate; must lie strictly between 0° and 180°")]
    DegenerateCap(f64),
    #[error("droplet volume must be positive, got {0}")]
    InvalidVolume(f64),
    #[error("need at least {MIN_PROFILE_POINTS} profile points, got {0}")]
    InputError(usize),
    #[error("circle fit failed: {0}")]
    FitError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCap {
    pub theta_deg: f64,
    pub volume_ul: f64,
    pub sphere_radius_mm: f64,
    pub base_radius_mm: f64,
    pub apex_height_mm: f64,
}

// 2 - 3cosθ + cos³θ, factored to keep precision near θ = 0.
fn cap_shape_factor(theta: f64) -> f64 {
    let c = theta.cos();
    (1.0 - c).powi(2) * (2.0 + c)
}

pub fn cap_from_volume_angle(volume_ul: f64, theta_deg: f64) -> Result<SphericalCap, GoniometryError> {
    if !(theta_deg > 0.0 && theta_deg < 180.0) {
        return Err(GoniometryError::DegenerateCap(theta_deg));
    }
    if !(volume_ul > 0.0) || !volume_ul.is_finite() {
        return Err(GoniometryError::InvalidVolume(volume_ul));
    }
    let theta = theta_deg.to_radians();
    let r = (3.0 * volume_ul / (PI * cap_shape_factor(theta))).cbrt();
    Ok(SphericalCap {
        theta_deg,
        volume_ul,
        sphere_radius_mm: r,
        base_radius_mm: r * theta.sin(),
        apex_height_mm: r * (1.0 - theta.cos()),
    })
}

impl SphericalCap {
    /// Volume recomputed from radius and height: πh²(3R − h)/3.
    pub fn volume_from_geometry(&self) -> f64 {
        let h = self.apex_height_mm;
        PI * h * h * (3.0 * self.sphere_radius_mm - h) / 3.0
    }

    /// Height of the sphere centre above the baseline (negative below).
    pub fn center_height_mm(&self) -> f64 {
        -self.sphere_radius_mm * self.theta_deg.to_radians().cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoints {
    pub points: Vec<(f64, f64)>,
    pub baseline_y: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Samples `n_points` at uniform arc angles across the visible arc, with
/// radial noise from the `"profile-noise"` stream of `seed`.
pub fn synthesize_profile(
    cap: &SphericalCap,
    n_points: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<ProfilePoints, GoniometryError> {
    let mut rng = random_stream(seed, "profile-noise");
    let mut profile = synthesize_profile_with(cap, n_points, noise_sigma, &mut rng)?;
    profile.seed = seed;
    Ok(profile)
}

pub fn synthesize_profile_with<R: Rng + ?Sized>(
    cap: &SphericalCap,
    n_points: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<ProfilePoints, GoniometryError> {
    if n_points < MIN_PROFILE_POINTS {
        return Err(GoniometryError::InputError(n_points));
    }
    let theta = cap.theta_deg.to_radians();
    let r = cap.sphere_radius_mm;
    let cy = cap.center_height_mm();
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite sigma"));
    let last = (n_points - 1) as f64;
    let points = (0..n_points)
        .map(|i| {
            // Arc angle measured from the apex; ±θ lands on the baseline.
            let psi = theta * (2.0 * i as f64 / last - 1.0);
            let radius = match &noise {
                Some(n) => r + n.sample(rng),
                None => r,
            };
            let y = cy + radius * psi.cos();
            let y = if noise.is_none() { y.max(0.0) } else { y };
            (radius * psi.sin(), y)
        })
        .collect();
    Ok(ProfilePoints { points, baseline_y: 0.0, noise_sigma, seed: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub center: (f64, f64),
    pub radius: f64,
    pub rms_residual: f64,
    pub contact_angle_deg: f64,
}

/// Contact angle of a circle against a horizontal baseline.
pub fn contact_angle_deg(center_y: f64, radius: f64, baseline_y: f64) -> f64 {
    ((baseline_y - center_y) / radius).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Algebraic least-squares circle fit: minimises Σ(x² + y² + Dx + Ey + F)².
pub fn fit_circle(profile: &ProfilePoints) -> Result<CircleFit, GoniometryError> {
    let pts = &profile.points;
    let n = pts.len();
    if n < 3 {
        return Err(GoniometryError::FitError(format!("need at least 3 points, got {n}")));
    }
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(GoniometryError::FitError("non-finite coordinate".into()));
    }
    // Centre and scale for conditioning; undone after the solve.
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let scale = (pts.iter().map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(scale > 0.0) {
        return Err(GoniometryError::FitError("all points coincide".into()));
    }
    let mut a = DMatrix::<f64>::zeros(n, 3);
    let mut b = DVector::<f64>::zeros(n);
    for (i, &(x, y)) in pts.iter().enumerate() {
        let u = (x - mx) / scale;
        let v = (y - my) / scale;
        a[(i, 0)] = u;
        a[(i, 1)] = v;
        a[(i, 2)] = 1.0;
        b[i] = -(u * u + v * v);
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > smax * 1e-10) {
        return Err(GoniometryError::FitError("points are collinear or degenerate".into()));
    }
    let sol = svd.solve(&b, 0.0).map_err(|e| GoniometryError::FitError(e.to_string()))?;
    let (d, e, f) = (sol[0], sol[1], sol[2]);
    let cu = -d / 2.0;
    let cv = -e / 2.0;
    let r2 = cu * cu + cv * cv - f;
    if !(r2 > 0.0) {
        return Err(GoniometryError::FitError("no real circle fits the points".into()));
    }
    let radius = r2.sqrt() * scale;
    let center = (mx + cu * scale, my + cv * scale);
    let rms_residual = (pts.iter().map(|&(x, y)| ((x - center.0).hypot(y - center.1) - radius).powi(2)).sum::<f64>()
        / n as f64)
        .sqrt();
    if (profile.baseline_y - center.1).abs() > radius {
        return Err(GoniometryError::FitError("fitted circle does not meet the baseline".into()));
    }
    let angle = contact_angle_deg(center.1, radius, profile.baseline_y);
    if angle < MIN_FIT_ANGLE_DEG {
        return Err(GoniometryError::FitError(format!(
            "arc too flat ({angle:.3}° < {MIN_FIT_ANGLE_DEG}°) for a reliable fit"
        )));
    }
    Ok(CircleFit { center, radius, rms_residual, contact_angle_deg: angle })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementNoise {
    /// Radial noise sigma as a fraction of the droplet's base radius.
    pub sigma_rel_base_radius: f64,
    pub n_points: usize,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self { sigma_rel_base_radius: 0.005, n_points: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub part_id: u32,
    pub theta_measured_deg: f64,
    pub rms_residual_mm: f64,
    pub t_us: Micros,
}

/// Full pipeline for one droplet: cap geometry, simulated profile, fit.
pub fn measure<R: Rng + ?Sized>(
    part_id: u32,
    surface_true_theta_deg: f64,
    droplet_volume_ul: f64,
    noise: &MeasurementNoise,
    rng: &mut R,
    now: Micros,
) -> Result<MeasurementRecord, GoniometryError> {
    let cap = cap_from_volume_angle(droplet_volume_ul, surface_true_theta_deg)?;
    let sigma = noise.sigma_rel_base_radius * cap.base_radius_mm;
    let profile = synthesize_profile_with(&cap, noise.n_points, sigma, rng)?;
    let fit = fit_circle(&profile)?;
    Ok(MeasurementRecord {
        part_id,
        theta_measured_deg: fit.contact_angle_deg,
        rms_residual_mm: fit.rms_residual,
        t_us: now,
    })
}

/// Rounds an angle for reporting (three decimals).
pub fn report_deg(angle: f64) -> f64 {
    (angle * 1000.0).round() / 1000.0
}
