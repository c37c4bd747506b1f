//! Fixtures shared by the benchmarks.

use acat_core::goniometry::{cap_from_volume_angle, synthesize_profile, ProfilePoints};
use acat_core::safety::{SafetyChannelPair, SafetySource};
use acat_core::signals::{ElectricalMode, Logic, SignalState};

/// A noisy profile of a 5 µL droplet at `theta_deg`.
pub fn drop_profile(theta_deg: f64, n_points: usize) -> ProfilePoints {
    let cap = cap_from_volume_angle(5.0, theta_deg).expect("valid cap");
    let sigma = 0.005 * cap.base_radius_mm;
    synthesize_profile(&cap, n_points, sigma, 7).expect("enough points")
}

/// All three safety sources with both channels closed.
pub fn healthy_channels() -> Vec<SafetyChannelPair> {
    let closed = SignalState::from_logical(ElectricalMode::SinkingNpn, Logic::Asserted, 0);
    SafetySource::ALL.iter().map(|&source| SafetyChannelPair { source, channel_a: closed, channel_b: closed }).collect()
}

/// Same, with the door's B channel open since `since`.
pub fn disagreeing_channels(since: u64) -> Vec<SafetyChannelPair> {
    let mut channels = healthy_channels();
    let door = channels.iter_mut().find(|p| p.source == SafetySource::DoorInterlock).expect("door pair");
    door.channel_b = SignalState::from_logical(ElectricalMode::SinkingNpn, Logic::Deasserted, since);
    channels
}
