//! Unit conventions.
//!
//! Internally ħ = 1, energies are angular frequencies in rad/ps and times are
//! in ps. Interaction strengths (μ₀ℰ, Δαℰ²/4, βℰ³/8) are given directly in
//! rad/ps with dimensionless field envelopes.

use serde::{Deserialize, Serialize};

/// 2πc in rad/ps per cm⁻¹.
pub const RAD_PER_PS_PER_WAVENUMBER: f64 = 0.188_365_156_7;

/// 2π × 10⁻³ in rad/ps per GHz.
pub const RAD_PER_PS_PER_GHZ: f64 = 0.006_283_185_307;

/// k_B/ħ in rad/ps per kelvin.
pub const RAD_PER_PS_PER_KELVIN: f64 = 0.130_920_339_2;

/// Debye × (V/m) in rad/ps: 3.335_640_952e-30 C·m · 1 V/m / ħ.
pub const RAD_PER_PS_PER_DEBYE_VOLT_PER_METRE: f64 = 3.163_028_8e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnergyUnit {
    #[default]
    RadPerPs,
    Wavenumber,
    Ghz,
}

impl EnergyUnit {
    pub fn to_rad_per_ps(self, value: f64) -> f64 {
        match self {
            EnergyUnit::RadPerPs => value,
            EnergyUnit::Wavenumber => value * RAD_PER_PS_PER_WAVENUMBER,
            EnergyUnit::Ghz => value * RAD_PER_PS_PER_GHZ,
        }
    }
}

/// k_B·T in rad/ps.
pub fn thermal_energy(kelvin: f64) -> f64 {
    kelvin * RAD_PER_PS_PER_KELVIN
}

/// Dipole coupling μ·E in rad/ps for μ in Debye and E in V/m.
pub fn dipole_coupling(debye: f64, volt_per_metre: f64) -> f64 {
    debye * volt_per_metre * RAD_PER_PS_PER_DEBYE_VOLT_PER_METRE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(EnergyUnit::RadPerPs.to_rad_per_ps(2.0), 2.0);
        assert!((EnergyUnit::Wavenumber.to_rad_per_ps(1.0) - 0.1883651567).abs() < 1e-10);
        assert!((EnergyUnit::Ghz.to_rad_per_ps(1000.0) - 2.0 * std::f64::consts::PI).abs() < 1e-9);
        assert!((thermal_energy(1.0) - 0.1309203392).abs() < 1e-10);
    }
}
