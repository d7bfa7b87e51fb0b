//! Hyperfine structure of the ¹⁷¹Yb⁺ ²S½ manifold in a static field.
//!
//! All frequencies are angular frequencies in rad/s and all fields are in
//! tesla. Use [`units`](crate::units) to convert from lab-style quantities.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::units;

/// Hyperfine constant and gyromagnetic ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Magnetic hyperfine constant `A` (rad/s).
    pub hyperfine: f64,
    /// Electronic gyromagnetic ratio (rad/s per tesla).
    pub gamma_e: f64,
    /// Nuclear gyromagnetic ratio (rad/s per tesla).
    pub gamma_n: f64,
}

impl PhysicalConstants {
    /// ¹⁷¹Yb⁺ values: A = 2π×12.643 GHz, γₑ = 2π×2.8024 MHz/G, γₙ = 2π×4.7248 kHz/G.
    pub const YB171: PhysicalConstants = PhysicalConstants {
        hyperfine: 2.0 * PI * 12.643e9,
        gamma_e: 2.0 * PI * 2.8024e6 * 1.0e4,
        gamma_n: 2.0 * PI * 4.7248e3 * 1.0e4,
    };

    /// Coefficient of the quadratic Zeeman shift of the clock transition,
    /// (γₑ+γₙ)²/(2A), in rad/s per T².
    pub fn second_order_zeeman(&self) -> f64 {
        let g = self.gamma_e + self.gamma_n;
        g * g / (2.0 * self.hyperfine)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::YB171
    }
}

/// Static field and the two microwave dressing drives.
///
/// The drive frequencies are not stored: they are resonant with |1⟩↔|0⟩ and
/// |−1⟩↔|0⟩ by construction, with phases π and 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub constants: PhysicalConstants,
    /// Static field along z (T).
    pub b_z: f64,
    /// Rabi frequency Ω of each dressing drive (rad/s).
    pub omega_mw: f64,
}

impl SensorConfig {
    pub const PHASE_1: f64 = PI;
    pub const PHASE_2: f64 = 0.0;

    pub fn new(b_z: f64, omega_mw: f64) -> Result<Self> {
        let cfg = Self {
            constants: PhysicalConstants::YB171,
            b_z,
            omega_mw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Dressing drive Ω = 2π×37.27 kHz at the given field.
    pub fn with_field(b_z: f64) -> Result<Self> {
        Self::new(b_z, units::khz(37.27))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_z > 0.0 && self.b_z.is_finite()) {
            return Err(Error::InvalidConfig(format!("b_z must be > 0, got {}", self.b_z)));
        }
        if !(self.omega_mw > 0.0 && self.omega_mw.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "omega_mw must be > 0, got {}",
                self.omega_mw
            )));
        }
        Ok(())
    }

    /// γₑB_z: the fastest rotation kept in the refined Hamiltonian.
    pub fn larmor(&self) -> f64 {
        self.constants.gamma_e * self.b_z
    }

    /// Resonant carrier ω₁ − ω₀́ of the sensing transition.
    pub fn sensing_frequency(&self) -> f64 {
        transition_frequencies(self).one_to_clock_upper
    }
}

/// Parameters of the target radio-frequency signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Target Rabi frequency Ω_tg (rad/s).
    pub omega_tg_rabi: f64,
    /// Detuning ξ from ω₁ − ω₀́ (rad/s).
    pub xi: f64,
    /// Signal phase (rad).
    #[serde(default)]
    pub phi_tg: f64,
}

impl SignalConfig {
    pub fn new(omega_tg_rabi: f64, xi: f64) -> Result<Self> {
        let s = Self {
            omega_tg_rabi,
            xi,
            phi_tg: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_tg_rabi >= 0.0 && self.omega_tg_rabi.is_finite()) || !self.xi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "signal requires finite omega_tg_rabi >= 0 and finite xi, got ({}, {})",
                self.omega_tg_rabi, self.xi
            )));
        }
        Ok(())
    }

    /// Carrier frequency ω_tg = ω₁ − ω₀́ + ξ.
    pub fn carrier(&self, sensor: &SensorConfig) -> f64 {
        sensor.sensing_frequency() + self.xi
    }
}

/// Which form of the |0⟩, |0́⟩ eigenvalues to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LevelFormula {
    /// Second-order expansion in (γₑ+γₙ)B_z/A.
    #[default]
    Expanded,
    /// Closed-form square roots from the 2×2 diagonalisation.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLevels {
    pub omega_1: f64,
    pub omega_m1: f64,
    pub omega_0p: f64,
    pub omega_0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFrequencies {
    /// ω₁ − ω₀́
    pub one_to_clock_upper: f64,
    /// ω₁ − ω₀
    pub one_to_clock_lower: f64,
    /// ω₀́ − ω₋₁
    pub clock_upper_to_minus_one: f64,
    /// ω₋₁ − ω₀
    pub minus_one_to_clock_lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Diagonal element of the mixed block, −A/4 + (γₑ+γₙ)B_z/2.
    pub a: f64,
    /// Off-diagonal element of the mixed block, A/2.
    pub b: f64,
}

/// Magnetic-dipole couplings c of the four allowed transitions, in rad/s per
/// tesla of transverse drive field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleCouplings {
    pub c_1_0p: f64,
    pub c_1_0: f64,
    pub c_0p_m1: f64,
    pub c_0_m1: f64,
}

pub fn energy_levels(cfg: &SensorConfig) -> EnergyLevels {
    energy_levels_with(cfg, LevelFormula::Expanded)
}

pub fn energy_levels_with(cfg: &SensorConfig, formula: LevelFormula) -> EnergyLevels {
    let k = &cfg.constants;
    let a = k.hyperfine;
    let b = cfg.b_z;
    let zeeman = (k.gamma_e - k.gamma_n) * b / 2.0;
    let (omega_0p, omega_0) = match formula {
        LevelFormula::Expanded => {
            let shift = k.second_order_zeeman() * b * b / 2.0;
            (a / 4.0 + shift, -3.0 * a / 4.0 - shift)
        }
        LevelFormula::Exact => {
            let x = (k.gamma_e + k.gamma_n) * b / a;
            let root = (1.0 + x * x).sqrt();
            (-a / 4.0 + a / 2.0 * root, -a / 4.0 - a / 2.0 * root)
        }
    };
    EnergyLevels {
        omega_1: a / 4.0 + zeeman,
        omega_m1: a / 4.0 - zeeman,
        omega_0p,
        omega_0,
    }
}

/// Transition frequencies as differences of [`energy_levels`].
pub fn transition_frequencies(cfg: &SensorConfig) -> TransitionFrequencies {
    let l = energy_levels(cfg);
    TransitionFrequencies {
        one_to_clock_upper: l.omega_1 - l.omega_0p,
        one_to_clock_lower: l.omega_1 - l.omega_0,
        clock_upper_to_minus_one: l.omega_0p - l.omega_m1,
        minus_one_to_clock_lower: l.omega_m1 - l.omega_0,
    }
}

/// Eigenvector components of |0́⟩ = α|10⟩ + β|01⟩ and |0⟩ = γ|10⟩ + δ|01⟩,
/// using the exact eigenvalues.
pub fn mixing_coefficients(cfg: &SensorConfig) -> MixingCoefficients {
    let k = &cfg.constants;
    let levels = energy_levels_with(cfg, LevelFormula::Exact);
    let a = -k.hyperfine / 4.0 + (k.gamma_e + k.gamma_n) * cfg.b_z / 2.0;
    let b = k.hyperfine / 2.0;
    let r_up = (levels.omega_0p - a) / b;
    let r_lo = (levels.omega_0 - a) / b;
    let alpha = (1.0 / (1.0 + r_up * r_up)).sqrt();
    let gamma = (1.0 / (1.0 + r_lo * r_lo)).sqrt();
    MixingCoefficients {
        alpha,
        beta: r_up * alpha,
        gamma,
        delta: r_lo * gamma,
        a,
        b,
    }
}

/// Transition couplings obtained by expanding J_x and I_x in the eigenbasis.
pub fn dipole_couplings(cfg: &SensorConfig) -> DipoleCouplings {
    let k = &cfg.constants;
    let m = mixing_coefficients(cfg);
    let det = m.gamma * m.beta - m.alpha * m.delta;
    DipoleCouplings {
        c_1_0p: (k.gamma_e * m.gamma + k.gamma_n * m.delta) / det,
        c_1_0: -(k.gamma_e * m.alpha + k.gamma_n * m.beta) / det,
        c_0p_m1: -(k.gamma_e * m.delta + k.gamma_n * m.gamma) / det,
        c_0_m1: (k.gamma_e * m.beta + k.gamma_n * m.alpha) / det,
    }
}

/// Largest Rabi frequency resolvable without aliasing from samples spaced
/// by `delta_t`: 2π/(√2 Δt).
pub fn nyquist_max_rabi(delta_t: f64) -> Result<f64> {
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sample spacing must be > 0, got {delta_t}"
        )));
    }
    Ok(2.0 * PI / (SQRT_2 * delta_t))
}
