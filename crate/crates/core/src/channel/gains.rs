//! Parametric gain laws for the three transmission media.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in air, m/s.
pub const SOUND_SPEED: f64 = 343.0;

/// Lower / upper operational volume, m^3.
pub const VOLUME_MIN: f64 = 0.05;
pub const VOLUME_MAX: f64 = 0.5;
/// Volume at which air coupling is referenced.
pub const VOLUME_REF: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MembraneParams {
    /// Nepers per metre at 1 kHz.
    pub beta0: f64,
    /// Nepers per metre added per decade above 1 kHz.
    pub beta_slope: f64,
    /// Module-to-membrane coupling at zero distance.
    pub ref_gain: f64,
}

impl Default for MembraneParams {
    fn default() -> Self {
        MembraneParams {
            beta0: 0.5,
            beta_slope: 2.5,
            ref_gain: 0.3,
        }
    }
}

impl MembraneParams {
    pub fn beta(&self, freq: f64) -> f64 {
        (self.beta0 + self.beta_slope * (freq / 1_000.0).log10()).max(self.beta0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AirParams {
    /// Absorption at 1 kHz, dB/m.
    pub absorption_1k: f64,
    /// Absorption at 20 kHz, dB/m.
    pub absorption_20k: f64,
    /// Linear gain at 1 m, both robots at 0.25 m^3.
    pub coupling_ref: f64,
}

/// Output of `acoustic-swarm calibrate-air` with default noise and seed.
pub const CALIBRATED_COUPLING_REF: f64 = 7.031e-4;

impl Default for AirParams {
    fn default() -> Self {
        AirParams {
            absorption_1k: 0.005,
            absorption_20k: 0.5,
            coupling_ref: CALIBRATED_COUPLING_REF,
        }
    }
}

impl AirParams {
    /// Absorption in dB/m, straight line between the two anchors in log-log.
    pub fn absorption_db_per_m(&self, freq: f64) -> f64 {
        let slope = (self.absorption_20k / self.absorption_1k).ln() / 20f64.ln();
        self.absorption_1k * (freq / 1_000.0).powf(slope)
    }
}

/// Transmission factor across an inter-robot joint, relative to all three
/// magnets aligned.
pub fn joint_gain(n_contacts: u8) -> Result<f64> {
    match n_contacts {
        3 => Ok(1.00),
        2 => Ok(0.65),
        1 => Ok(0.55),
        0 => Ok(0.0),
        n => Err(Error::InvalidContacts(n)),
    }
}

pub fn membrane_gain(params: &MembraneParams, freq: f64, geodesic_m: f64) -> f64 {
    params.ref_gain * (-params.beta(freq) * geodesic_m).exp()
}

/// Spherical spreading, air absorption and the volume-dependent pickup of the
/// pressurized skins on both ends. Clamped to 1.
pub fn air_gain(params: &AirParams, freq: f64, dist_m: f64, vol_tx: f64, vol_rx: f64) -> Result<f64> {
    if dist_m <= 0.0 {
        return Err(Error::ZeroDistance(dist_m));
    }
    let spreading = 1.0 / dist_m;
    // coupling_ref already includes the first metre of absorption
    let absorption = 10f64.powf(-params.absorption_db_per_m(freq) * (dist_m - 1.0) / 20.0);
    let skins = (vol_tx / VOLUME_REF).powf(2.0 / 3.0) * (vol_rx / VOLUME_REF).powf(2.0 / 3.0);
    Ok((params.coupling_ref * spreading * absorption * skins).min(1.0))
}

pub fn air_delay_samples(dist_m: f64) -> usize {
    (dist_m / SOUND_SPEED * crate::signals::SAMPLE_RATE as f64).round() as usize
}

/// Radius of a sphere of volume `v`.
pub fn radius_for_volume(v: f64) -> f64 {
    (3.0 * v / (4.0 * std::f64::consts::PI)).cbrt()
}
