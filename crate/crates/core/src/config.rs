//! Physical parameters of the vapor cell, the atoms and the lasers.
//!
//! Internal units: lengths in µm, times in ns, angular frequencies in rad/ns,
//! velocities in µm/ns. [`PhysicalSection`] holds the same parameters in
//! laboratory units and is the form read from and written to config files;
//! conversion happens once in [`PhysicalSection::to_config`].

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::PulseSequence;

pub const K_BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const RB85_MASS_AMU: f64 = 84.911_789_738;

/// 1 m/s expressed in µm/ns.
pub const METRE_PER_SECOND: f64 = 1e-3;

/// Release geometry for light-induced desorption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LiadWalls {
    /// Each atom leaves either wall with equal probability.
    #[default]
    Both,
    /// All atoms leave the wall at axial coordinate 0.
    Near,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalConfig {
    /// Wall separation along the beam axis (µm).
    pub cell_thickness: f64,
    /// Vapor temperature (K).
    pub temperature: f64,
    /// Atomic mass (kg).
    pub atom_mass: f64,
    /// Lifetime of |e⟩ (ns).
    pub lifetime: f64,
    /// Van-der-Waals coefficient C6/ħ (rad/ns · µm⁶).
    pub c6: f64,
    /// Ceiling applied to C6/d⁶ before fitting (rad/ns).
    pub interaction_cap: f64,
    /// Laser wavelengths λ₁..λ₃ (nm).
    pub laser_wavelengths: [f64; 3],
    /// Wavelength of the |e⟩ → |g⟩ photon (nm).
    pub emission_wavelength: f64,
    /// Laser detunings δ₁..δ₃ (rad/ns).
    pub detunings: [f64; 3],
    /// Gaussian beam waists w₀,₁..w₀,₃ (µm).
    pub waists: [f64; 3],
    /// Radius of the transverse sampling disk (µm).
    pub transverse_radius: f64,
    /// LIAD amplitude `a` (s³/m³); only the shape parameter enters sampling.
    pub liad_a: f64,
    /// LIAD velocity scale `b` (µm/ns).
    pub liad_b: f64,
    pub liad_walls: LiadWalls,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        PhysicalSection::default()
            .to_config()
            .expect("default physical parameters are valid")
    }
}

impl PhysicalConfig {
    /// Single-atom decay rate Γ = 1/τ (1/ns).
    pub fn gamma(&self) -> f64 {
        1.0 / self.lifetime
    }

    /// Thermal velocity spread √(k_B T / m) per component (µm/ns).
    pub fn thermal_sigma(&self) -> f64 {
        (K_BOLTZMANN * self.temperature / self.atom_mass).sqrt() * METRE_PER_SECOND
    }

    /// Signed wave numbers along the beam axis (1/µm). Lasers 2 and 3
    /// propagate against laser 1.
    pub fn wave_numbers(&self) -> [f64; 3] {
        let k = self.laser_wavelengths.map(|l| TAU / (l * 1e-3));
        [k[0], -k[1], -k[2]]
    }

    /// Mixed wave number k₀ = k₁ + k₂ − k₃ (signed, 1/µm).
    pub fn k0(&self) -> f64 {
        let k = self.wave_numbers();
        k[0] + k[1] - k[2]
    }

    /// Wave number of the emitted photon (1/µm).
    pub fn k_emission(&self) -> f64 {
        TAU / (self.emission_wavelength * 1e-3)
    }

    /// Doppler-shifted detuning δ_{j,n} = δ_j − k_j v_axial.
    pub fn doppler_detuning(&self, laser: usize, axial_velocity: f64) -> f64 {
        self.detunings[laser] - self.wave_numbers()[laser] * axial_velocity
    }

    /// Capped van-der-Waals shift C6/d⁶ (rad/ns).
    pub fn interaction(&self, distance: f64) -> f64 {
        let d2 = distance * distance;
        let raw = self.c6 / (d2 * d2 * d2);
        if raw.is_finite() {
            raw.min(self.interaction_cap)
        } else {
            self.interaction_cap
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_thickness", self.cell_thickness),
            ("temperature", self.temperature),
            ("atom_mass", self.atom_mass),
            ("lifetime", self.lifetime),
            ("c6", self.c6),
            ("interaction_cap", self.interaction_cap),
            ("emission_wavelength", self.emission_wavelength),
            ("transverse_radius", self.transverse_radius),
            ("liad_a", self.liad_a),
            ("liad_b", self.liad_b),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        for j in 0..3 {
            if !(self.laser_wavelengths[j].is_finite() && self.laser_wavelengths[j] > 0.0) {
                return Err(Error::Config(format!("laser {} wavelength must be positive", j + 1)));
            }
            if !(self.waists[j].is_finite() && self.waists[j] > 0.0) {
                return Err(Error::Config(format!("laser {} waist must be positive", j + 1)));
            }
            if !self.detunings[j].is_finite() {
                return Err(Error::Config(format!("laser {} detuning is not finite", j + 1)));
            }
        }
        Ok(())
    }
}

/// Physical parameters in laboratory units, as stored in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalSection {
    pub cell_thickness_um: f64,
    pub temperature_k: f64,
    pub mass_amu: f64,
    pub lifetime_ns: f64,
    /// C6/h in MHz·µm⁶.
    pub c6_mhz_um6: f64,
    /// Cap on C6/(h d⁶) in GHz.
    pub interaction_cap_ghz: f64,
    pub laser_wavelength_nm: [f64; 3],
    pub emission_wavelength_nm: f64,
    /// Detunings δ_j/2π in GHz.
    pub detuning_ghz: [f64; 3],
    pub waist_um: [f64; 3],
    /// Defaults to twice the waist of laser 2.
    pub transverse_radius_um: Option<f64>,
    pub liad_a_s3_per_m3: f64,
    pub liad_b_m_per_s: f64,
    pub liad_walls: LiadWalls,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        // ⁸⁵Rb: 5S1/2 → 5P1/2 → 40S1/2 → 5P3/2, emission on D2.
        PhysicalSection {
            cell_thickness_um: 1.0,
            temperature_k: 473.15,
            mass_amu: RB85_MASS_AMU,
            lifetime_ns: 26.2,
            c6_mhz_um6: 642.1,
            interaction_cap_ghz: 159.15,
            laser_wavelength_nm: [794.979, 475.486, 480.919],
            emission_wavelength_nm: 780.241,
            detuning_ghz: [-100.0, 100.0, 0.0],
            waist_um: [0.5, 2.0, 2.0],
            transverse_radius_um: None,
            liad_a_s3_per_m3: 1.1e-7,
            liad_b_m_per_s: 271.0,
            liad_walls: LiadWalls::Both,
        }
    }
}

impl PhysicalSection {
    pub fn to_config(&self) -> Result<PhysicalConfig> {
        let cfg = PhysicalConfig {
            cell_thickness: self.cell_thickness_um,
            temperature: self.temperature_k,
            atom_mass: self.mass_amu * ATOMIC_MASS_UNIT,
            lifetime: self.lifetime_ns,
            c6: TAU * self.c6_mhz_um6 * 1e-3,
            interaction_cap: TAU * self.interaction_cap_ghz,
            laser_wavelengths: self.laser_wavelength_nm,
            emission_wavelength: self.emission_wavelength_nm,
            detunings: self.detuning_ghz.map(|g| TAU * g),
            waists: self.waist_um,
            transverse_radius: self
                .transverse_radius_um
                .unwrap_or(2.0 * self.waist_um[1]),
            liad_a: self.liad_a_s3_per_m3,
            liad_b: self.liad_b_m_per_s * METRE_PER_SECOND,
            liad_walls: self.liad_walls,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &PhysicalConfig) -> Self {
        PhysicalSection {
            cell_thickness_um: cfg.cell_thickness,
            temperature_k: cfg.temperature,
            mass_amu: cfg.atom_mass / ATOMIC_MASS_UNIT,
            lifetime_ns: cfg.lifetime,
            c6_mhz_um6: cfg.c6 / TAU * 1e3,
            interaction_cap_ghz: cfg.interaction_cap / TAU,
            laser_wavelength_nm: cfg.laser_wavelengths,
            emission_wavelength_nm: cfg.emission_wavelength,
            detuning_ghz: cfg.detunings.map(|d| d / TAU),
            waist_um: cfg.waists,
            transverse_radius_um: Some(cfg.transverse_radius),
            liad_a_s3_per_m3: cfg.liad_a,
            liad_b_m_per_s: cfg.liad_b / METRE_PER_SECOND,
            liad_walls: cfg.liad_walls,
        }
    }
}

/// Contents of a run config file: a `[physical]` table and a `[pulses]`
/// table with `laser1`..`laser3`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physical: PhysicalSection,
    pub pulses: PulseSequence,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.physical.to_config()?;
        cfg.pulses.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = RunConfig::from_toml("[physical]\ntemperature_k = 400.0\n").unwrap();
        assert_eq!(partial.physical.temperature_k, 400.0);
        assert_eq!(partial.pulses, PulseSequence::default());
        assert!(RunConfig::from_toml("[physical]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[physical]\ncell_thickness_um = -1.0\n").is_err());
    }

    #[test]
    fn defaults_are_consistent() {
        let cfg = PhysicalConfig::default();
        assert_eq!(cfg.gamma() * cfg.lifetime, 1.0);
        assert!((cfg.transverse_radius - 4.0).abs() < 1e-12);
        // two-photon resonance and zero-velocity resonance of the full chain
        assert_eq!(cfg.detunings[0] + cfg.detunings[1] - cfg.detunings[2], 0.0);
        assert!((cfg.detunings[0] + TAU * 100.0).abs() < 1e-9);
    }

    #[test]
    fn thermal_sigma_matches_rb85_at_200c() {
        let cfg = PhysicalConfig::default();
        let sigma_si = (K_BOLTZMANN * 473.15 / (RB85_MASS_AMU * ATOMIC_MASS_UNIT)).sqrt();
        assert!((sigma_si - 215.3).abs() < 0.2, "{sigma_si}");
        assert!((cfg.thermal_sigma() - sigma_si * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn mixed_wave_vector_points_along_laser_one() {
        let cfg = PhysicalConfig::default();
        let k = cfg.wave_numbers();
        assert!(k[0] > 0.0 && k[1] < 0.0 && k[2] < 0.0);
        assert!(cfg.k0() > 0.0);
        // phase matching: |k0| close to the emitted wave number
        assert!((cfg.k0() - cfg.k_emission()).abs() / cfg.k_emission() < 0.05);
    }

    #[test]
    fn c6_at_one_micron() {
        let cfg = PhysicalConfig::default();
        assert!((cfg.interaction(1.0) - TAU * 0.6421).abs() < 1e-12);
        assert_eq!(cfg.interaction(0.0), cfg.interaction_cap);
    }

    #[test]
    fn rejects_non_positive_lengths() {
        let s = PhysicalSection { cell_thickness_um: 0.0, ..Default::default() };
        assert!(matches!(s.to_config(), Err(Error::Config(_))));
        let s = PhysicalSection { temperature_k: -1.0, ..Default::default() };
        assert!(s.to_config().is_err());
    }

    #[test]
    fn section_round_trip() {
        let cfg = PhysicalConfig::default();
        let back = PhysicalSection::from_config(&cfg).to_config().unwrap();
        assert!((back.c6 - cfg.c6).abs() < 1e-12);
        assert!((back.liad_b - cfg.liad_b).abs() < 1e-15);
    }
}
