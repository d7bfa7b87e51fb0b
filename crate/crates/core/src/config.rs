//! On-disk configuration. Every field is in SI units except frequencies,
//! which are plain Hz with an `_hz` suffix; conversion to the angular
//! frequencies used internally happens here and nowhere else.

use serde::{Deserialize, Serialize};

use crate::dynamics::StepControl;
use crate::error::{Error, Result};
use crate::inference::{McmcConfig, ParamPrior, Prior, RecordMode};
use crate::measurement::{MeasurementPlan, ScheduleKind};
use crate::noise::{NoiseConfig, OUParams};
use crate::physics::{SensorConfig, SignalConfig};
use crate::units::{hz, to_hz};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorFile {
    pub b_z_tesla: f64,
    #[serde(default = "default_omega_mw_hz")]
    pub omega_mw_hz: f64,
}

fn default_omega_mw_hz() -> f64 {
    37.27e3
}

impl SensorFile {
    pub fn to_domain(&self) -> Result<SensorConfig> {
        SensorConfig::new(self.b_z_tesla, hz(self.omega_mw_hz))
    }
}

impl From<&SensorConfig> for SensorFile {
    fn from(s: &SensorConfig) -> Self {
        SensorFile {
            b_z_tesla: s.b_z,
            omega_mw_hz: to_hz(s.omega_mw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalFile {
    pub omega_tg_hz: f64,
    #[serde(default)]
    pub xi_hz: f64,
    #[serde(default)]
    pub phi_tg_rad: f64,
}

impl SignalFile {
    pub fn to_domain(&self) -> Result<SignalConfig> {
        let mut s = SignalConfig::new(hz(self.omega_tg_hz), hz(self.xi_hz))?;
        s.phi_tg = self.phi_tg_rad;
        s.validate()?;
        Ok(s)
    }
}

impl From<&SignalConfig> for SignalFile {
    fn from(s: &SignalConfig) -> Self {
        SignalFile {
            omega_tg_hz: to_hz(s.omega_tg_rabi),
            xi_hz: to_hz(s.xi),
            phi_tg_rad: s.phi_tg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseFile {
    pub t2_s: f64,
    pub tau_mu_s: f64,
    /// Overrides the T₂ calibration of the field-noise amplitude.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_mu_hz: Option<f64>,
    pub eps_tau_s: f64,
    pub eps_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseFile {
    fn default() -> Self {
        (&NoiseConfig::default()).into()
    }
}

impl NoiseFile {
    pub fn to_domain(&self) -> Result<NoiseConfig> {
        let cfg = NoiseConfig {
            t2: self.t2_s,
            tau_mu: self.tau_mu_s,
            eps: OUParams {
                tau: self.eps_tau_s,
                sigma: self.eps_sigma,
            },
            sigma_mu: self.sigma_mu_hz.map(hz),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&NoiseConfig> for NoiseFile {
    fn from(n: &NoiseConfig) -> Self {
        NoiseFile {
            t2_s: n.t2,
            tau_mu_s: n.tau_mu,
            sigma_mu_hz: n.sigma_mu.map(to_hz),
            eps_tau_s: n.eps.tau,
            eps_sigma: n.eps.sigma,
            seed: n.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    /// Explicit schedule; overrides `t_f_s`/`n_p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times_s: Option<Vec<f64>>,
    #[serde(default)]
    pub t_f_s: f64,
    #[serde(default)]
    pub n_p: usize,
    pub n_m: u32,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

impl PlanFile {
    /// `seed` is used only by random schedules.
    pub fn to_domain(&self, seed: u64) -> Result<MeasurementPlan> {
        if let Some(times) = &self.times_s {
            return MeasurementPlan::new(times.clone(), self.n_m, self.schedule);
        }
        match self.schedule {
            ScheduleKind::EvenlySpaced => MeasurementPlan::evenly_spaced(self.t_f_s, self.n_p, self.n_m),
            ScheduleKind::RandomInWindow => {
                use rand_chacha::rand_core::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                MeasurementPlan::random_in_window(self.t_f_s, self.n_p, self.n_m, &mut rng)
            }
        }
    }
}

/// One prior factor, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ParamPriorFile {
    Flat { lo_hz: f64, hi_hz: f64 },
    Gaussian { mean_hz: f64, sigma_hz: f64 },
}

impl ParamPriorFile {
    pub fn to_domain(&self) -> Result<ParamPrior> {
        match *self {
            ParamPriorFile::Flat { lo_hz, hi_hz } => ParamPrior::flat(hz(lo_hz), hz(hi_hz)),
            ParamPriorFile::Gaussian { mean_hz, sigma_hz } => ParamPrior::gaussian(hz(mean_hz), hz(sigma_hz)),
        }
    }
}

impl From<&ParamPrior> for ParamPriorFile {
    fn from(p: &ParamPrior) -> Self {
        match *p {
            ParamPrior::Flat { lo, hi } => ParamPriorFile::Flat {
                lo_hz: to_hz(lo),
                hi_hz: to_hz(hi),
            },
            ParamPrior::Gaussian { mean, sigma } => ParamPriorFile::Gaussian {
                mean_hz: to_hz(mean),
                sigma_hz: to_hz(sigma),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    pub omega: ParamPriorFile,
    /// Absent: ξ is held at zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<ParamPriorFile>,
}

impl PriorFile {
    pub fn to_domain(&self) -> Result<Prior> {
        Ok(Prior {
            omega: self.omega.to_domain()?,
            xi: self.xi.as_ref().map(|p| p.to_domain()).transpose()?,
        })
    }
}

impl From<&Prior> for PriorFile {
    fn from(p: &Prior) -> Self {
        PriorFile {
            omega: (&p.omega).into(),
            xi: p.xi.as_ref().map(Into::into),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcFile {
    pub n_mc: usize,
    pub n_chains: usize,
    pub pre_steps: usize,
    pub burn_in: usize,
    pub proposal_sigma_omega_hz: f64,
    pub proposal_sigma_xi_hz: f64,
    pub record: RecordMode,
    pub memoize: bool,
}

impl Default for McmcFile {
    fn default() -> Self {
        (&McmcConfig::default()).into()
    }
}

impl McmcFile {
    pub fn to_domain(&self, seed: u64) -> Result<McmcConfig> {
        let cfg = McmcConfig {
            n_mc: self.n_mc,
            n_chains: self.n_chains,
            pre_steps: self.pre_steps,
            burn_in: self.burn_in,
            proposal_sigma_omega: hz(self.proposal_sigma_omega_hz),
            proposal_sigma_xi: hz(self.proposal_sigma_xi_hz),
            record: self.record,
            memoize: self.memoize,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&McmcConfig> for McmcFile {
    fn from(c: &McmcConfig) -> Self {
        McmcFile {
            n_mc: c.n_mc,
            n_chains: c.n_chains,
            pre_steps: c.pre_steps,
            burn_in: c.burn_in,
            proposal_sigma_omega_hz: to_hz(c.proposal_sigma_omega),
            proposal_sigma_xi_hz: to_hz(c.proposal_sigma_xi),
            record: c.record,
            memoize: c.memoize,
        }
    }
}

/// Integrator resolution for simulation and for likelihood evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorFile {
    pub simulate_steps_per_period: f64,
    pub inference_steps_per_period: f64,
}

impl Default for IntegratorFile {
    fn default() -> Self {
        IntegratorFile {
            simulate_steps_per_period: StepControl::default().steps_per_period,
            inference_steps_per_period: StepControl::inference().steps_per_period,
        }
    }
}

impl IntegratorFile {
    fn control(steps: f64) -> Result<StepControl> {
        if !(steps > 0.0 && steps.is_finite()) {
            return Err(Error::InvalidConfig(format!("steps per period must be > 0, got {steps}")));
        }
        Ok(StepControl {
            steps_per_period: steps,
            ..StepControl::default()
        })
    }

    pub fn simulate(&self) -> Result<StepControl> {
        Self::control(self.simulate_steps_per_period)
    }

    pub fn inference(&self) -> Result<StepControl> {
        Self::control(self.inference_steps_per_period)
    }
}
