use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::LIGHT_SPEED;
use crate::error::{Error, Result};

/// Water response parameters.
///
/// `wavenumber` converts the `K·ΔZ` product into a phase (radians per metre
/// per pulse). The default places the first `cos = -1` point of a four-pulse
/// train at 40 MHz for n = 1.333.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MFunctionParams {
    /// Attenuation coefficient ε, 1/m.
    pub epsilon: f64,
    pub k_pulses: u32,
    pub refractive_index: f64,
    /// Phase scale κ, rad/m.
    pub wavenumber: f64,
}

/// Frequency at which the default wavenumber puts `K·κ·ΔZ = π` for K = 4.
pub const DEFAULT_CALIBRATION_FREQ: f64 = 40e6;

impl Default for MFunctionParams {
    fn default() -> Self {
        let refractive_index = 1.333;
        Self {
            epsilon: 0.11,
            k_pulses: 4,
            refractive_index,
            wavenumber: Self::calibrated_wavenumber(4, refractive_index, DEFAULT_CALIBRATION_FREQ),
        }
    }
}

impl MFunctionParams {
    /// κ such that `K·κ·ΔZ(freq) = π`.
    pub fn calibrated_wavenumber(k_pulses: u32, refractive_index: f64, freq: f64) -> f64 {
        PI / (k_pulses as f64 * half_wavelength(freq, refractive_index))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        if self.k_pulses < 1 {
            return Err(Error::Config("k_pulses must be >= 1".into()));
        }
        if !(self.refractive_index.is_finite() && self.refractive_index > 0.0) {
            return Err(Error::Config("refractive_index must be positive".into()));
        }
        if !self.wavenumber.is_finite() {
            return Err(Error::Config("wavenumber must be finite".into()));
        }
        Ok(())
    }
}

/// Half of the in-water modulation wavelength, ΔZ = (c/n)/(2f).
pub fn half_wavelength(freq: f64, refractive_index: f64) -> f64 {
    LIGHT_SPEED / refractive_index / (2.0 * freq)
}

/// Ratio of output to input modulation amplitude at carrier `freq`:
/// `sqrt(1 + e^{-2εΔZ} - 2 e^{-εΔZ} cos(κ·K·ΔZ))`.
pub fn m_function(freq: f64, p: &MFunctionParams) -> Result<f64> {
    if !(freq.is_finite() && freq > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "frequency must be positive, got {freq}"
        )));
    }
    p.validate()?;
    let dz = half_wavelength(freq, p.refractive_index);
    let decay = (-p.epsilon * dz).exp();
    let phase = p.wavenumber * p.k_pulses as f64 * dz;
    // Clamp tiny negative rounding residue near ΔZ → 0.
    let m2 = (1.0 + decay * decay - 2.0 * decay * phase.cos()).max(0.0);
    Ok(m2.sqrt())
}
