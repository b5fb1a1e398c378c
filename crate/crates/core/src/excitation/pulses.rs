use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rectangular laser pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserPulse {
    #[serde(rename = "start_ns")]
    pub start: f64,
    #[serde(rename = "duration_ns")]
    pub duration: f64,
    /// Peak Rabi frequency (rad/ns).
    #[serde(rename = "rabi_rad_per_ns")]
    pub rabi: f64,
}

impl LaserPulse {
    pub const OFF: LaserPulse = LaserPulse { start: 0.0, duration: 0.0, rabi: 0.0 };

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn is_on(&self, t: f64) -> bool {
        self.duration > 0.0 && t >= self.start && t <= self.end()
    }
}

/// Three rectangular pulses. Detunings are properties of the lasers and live
/// in [`crate::PhysicalConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub laser1: LaserPulse,
    pub laser2: LaserPulse,
    pub laser3: LaserPulse,
}

impl Default for PulseSequence {
    fn default() -> Self {
        PulseSequence::tied(1.0, 1.1, 0.4, [36.0, 36.0, std::f64::consts::PI / 0.4])
    }
}

impl PulseSequence {
    /// Lasers 1 and 2 share the window [0, Δt₁₂]; laser 3 runs from t_{s,3}.
    pub fn tied(gap12: f64, start3: f64, duration3: f64, rabi: [f64; 3]) -> Self {
        PulseSequence {
            laser1: LaserPulse { start: 0.0, duration: gap12, rabi: rabi[0] },
            laser2: LaserPulse { start: 0.0, duration: gap12, rabi: rabi[1] },
            laser3: LaserPulse { start: start3, duration: duration3, rabi: rabi[2] },
        }
    }

    pub fn lasers(&self) -> [LaserPulse; 3] {
        [self.laser1, self.laser2, self.laser3]
    }

    pub fn laser(&self, j: usize) -> LaserPulse {
        self.lasers()[j]
    }

    /// Total duration t₀ = max_j(t_{s,j} + Δt_j).
    pub fn total_duration(&self) -> f64 {
        self.lasers().iter().map(LaserPulse::end).fold(0.0, f64::max)
    }

    /// End of the first two lasers, Δt₁₂.
    pub fn gap12(&self) -> f64 {
        self.laser1.end().max(self.laser2.end())
    }

    pub fn gates_at(&self, t: f64) -> [bool; 3] {
        self.lasers().map(|l| l.is_on(t))
    }

    /// Sorted switching times inside `window`, including its ends.
    pub fn breakpoints(&self, window: (f64, f64)) -> Vec<f64> {
        let mut b = vec![window.0, window.1];
        for l in self.lasers() {
            for t in [l.start, l.end()] {
                if t > window.0 && t < window.1 {
                    b.push(t);
                }
            }
        }
        b.sort_by(f64::total_cmp);
        b.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        b
    }

    pub fn validate(&self) -> Result<()> {
        for (j, l) in self.lasers().iter().enumerate() {
            if !(l.start.is_finite() && l.duration.is_finite() && l.rabi.is_finite()) {
                return Err(Error::Config(format!("laser {} has non-finite parameters", j + 1)));
            }
            if l.start < 0.0 || l.duration < 0.0 {
                return Err(Error::Config(format!(
                    "laser {} needs non-negative start and duration",
                    j + 1
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_times() {
        let p = PulseSequence::tied(1.0, 1.2, 0.4, [1.0, 1.0, 1.0]);
        assert_eq!(p.gap12(), 1.0);
        assert!((p.total_duration() - 1.6).abs() < 1e-15);
        assert_eq!(p.breakpoints((0.0, 1.6)), vec![0.0, 1.0, 1.2, 1.6]);
        assert_eq!(p.gates_at(0.5), [true, true, false]);
        assert_eq!(p.gates_at(1.1), [false, false, false]);
    }

    #[test]
    fn negative_duration_is_rejected() {
        let mut p = PulseSequence::default();
        p.laser3.duration = -0.1;
        assert!(p.validate().is_err());
        assert!(PulseSequence::default().validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let p = PulseSequence::default();
        let s = toml::to_string(&p).unwrap();
        assert!(s.contains("rabi_rad_per_ns"));
        let back: PulseSequence = toml::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
