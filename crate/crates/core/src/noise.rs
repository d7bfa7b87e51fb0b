//! Ornstein–Uhlenbeck models for field fluctuations μ(t) and relative drive
//! intensity fluctuations ε(t).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUParams {
    /// Correlation time (s).
    pub tau: f64,
    /// Stationary standard deviation.
    pub sigma: f64,
}

impl OUParams {
    pub fn new(tau: f64, sigma: f64) -> Result<Self> {
        let p = OUParams { tau, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "OU process needs tau > 0 and sigma >= 0, got ({}, {})",
                self.tau, self.sigma
            )));
        }
        Ok(())
    }
}

/// Exact OU update over `dt`.
pub fn ou_step<R: Rng + ?Sized>(x: f64, dt: f64, p: &OUParams, rng: &mut R) -> f64 {
    let decay = (-dt / p.tau).exp();
    if p.sigma == 0.0 {
        return x * decay;
    }
    let n: f64 = rng.sample(StandardNormal);
    x * decay + p.sigma * (-(-2.0 * dt / p.tau).exp_m1()).sqrt() * n
}

/// ⟨ζ²(t)⟩ for ζ(t) = ∫₀ᵗ μ(s) ds with μ an OU process released from
/// μ(0) = 0. This is the form the T₂ calibration is built on.
pub fn zeta_variance(t: f64, p: &OUParams) -> f64 {
    let x = t / p.tau;
    // 2x − 3 + 4e^{−x} − e^{−2x} cancels catastrophically for small x.
    let bracket = if x < 1e-2 {
        x * x * x * (2.0 / 3.0 - x / 2.0 + 7.0 * x * x / 30.0)
    } else {
        2.0 * x - 3.0 + 4.0 * (-x).exp() - (-2.0 * x).exp()
    };
    p.sigma * p.sigma * p.tau * p.tau * bracket
}

/// ⟨ζ²(t)⟩ when μ starts from its stationary distribution.
pub fn zeta_variance_stationary(t: f64, p: &OUParams) -> f64 {
    let x = t / p.tau;
    let bracket = if x < 1e-2 {
        x * x * (1.0 - x / 3.0 + x * x / 12.0)
    } else {
        2.0 * (x - 1.0 + (-x).exp())
    };
    p.sigma * p.sigma * p.tau * p.tau * bracket
}

/// σ_μ such that ⟨ζ²(T₂)⟩ = 2, i.e. a coherence e^{−⟨ζ²⟩/2} of e^{−1} at T₂.
pub fn calibrate_sigma_mu(t2: f64, tau_mu: f64) -> Result<f64> {
    if !(t2 > tau_mu && tau_mu > 0.0 && t2.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "calibration needs t2 > tau_mu > 0, got t2 = {t2}, tau_mu = {tau_mu}"
        )));
    }
    let r = t2 / tau_mu;
    let bracket = tau_mu * (t2 - tau_mu * (1.5 - 2.0 * (-r).exp() + 0.5 * (-2.0 * r).exp()));
    if !(bracket > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "non-positive calibration bracket {bracket:e}"
        )));
    }
    Ok(bracket.powf(-0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Coherence time T₂ (s).
    pub t2: f64,
    /// Field-noise correlation time (s).
    pub tau_mu: f64,
    /// Drive-intensity noise.
    pub eps: OUParams,
    /// Overrides the T₂-calibrated σ_μ when set.
    #[serde(default)]
    pub sigma_mu: Option<f64>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            t2: 5.3e-3,
            tau_mu: 5.3e-5,
            eps: OUParams {
                tau: 1e-3,
                sigma: 2.5e-3,
            },
            sigma_mu: None,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// No fluctuations at all.
    pub fn silent() -> Self {
        NoiseConfig {
            eps: OUParams { tau: 1e-3, sigma: 0.0 },
            sigma_mu: Some(0.0),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.eps.validate()?;
        self.mu_params()?;
        Ok(())
    }

    pub fn mu_params(&self) -> Result<OUParams> {
        let sigma = match self.sigma_mu {
            Some(s) => s,
            None => calibrate_sigma_mu(self.t2, self.tau_mu)?,
        };
        OUParams::new(self.tau_mu, sigma)
    }

    /// Generator seeded from `seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// μ and ε sampled on the integrator's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub eps: Vec<f64>,
}

fn ou_path<R: Rng + ?Sized>(grid: &[f64], p: &OUParams, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut x = if p.sigma > 0.0 {
        p.sigma * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let mut prev = grid.first().copied().unwrap_or(0.0);
    for &t in grid {
        if t > prev {
            x = ou_step(x, t - prev, p, rng);
        }
        out.push(x);
        prev = t;
    }
    out
}

/// Independent μ and ε records on `grid`, each started from its
/// stationary distribution.
pub fn make_trace<R: Rng + ?Sized>(cfg: &NoiseConfig, grid: &[f64], rng: &mut R) -> Result<NoiseTrace> {
    if grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidArgument("noise grid must be ascending".into()));
    }
    let mu = ou_path(grid, &cfg.mu_params()?, rng);
    let eps = ou_path(grid, &cfg.eps, rng);
    Ok(NoiseTrace {
        times: grid.to_vec(),
        mu,
        eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_decays_deterministically() {
        let p = OUParams::new(2.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(ou_step(3.0, 1.0, &p, &mut rng), 3.0 * (-0.5f64).exp());
    }

    #[test]
    fn zeta_variance_limits() {
        let p = OUParams::new(1e-4, 2.0).unwrap();
        assert_eq!(zeta_variance(0.0, &p), 0.0);
        // Linear growth 2σ²τt with a constant −3σ²τ² offset: 1.5% low at
        // t = 100τ, under 1% from t = 300τ.
        let lin = |t: f64| 2.0 * p.sigma * p.sigma * p.tau * t;
        let t = 100.0 * p.tau;
        assert!((zeta_variance(t, &p) / lin(t) - (1.0 - 3.0 / 200.0)).abs() < 1e-12);
        let t = 300.0 * p.tau;
        assert!((zeta_variance(t, &p) / lin(t) - 1.0).abs() < 0.01);
        let t = 1e-4 * p.tau;
        let zero_start = 2.0 / 3.0 * p.sigma * p.sigma * t * t * t / p.tau;
        assert!((zeta_variance(t, &p) / zero_start - 1.0).abs() < 1e-3);
        assert!((zeta_variance_stationary(t, &p) / (p.sigma * p.sigma * t * t) - 1.0).abs() < 1e-3);
        for x in [0.009, 0.011] {
            let t = x * p.tau;
            let direct = 2.0 * x - 3.0 + 4.0 * (-x).exp() - (-2.0 * x).exp();
            let series = zeta_variance(t, &p) / (p.sigma * p.sigma * p.tau * p.tau);
            assert!((series / direct - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration_hits_two_at_t2() {
        let (t2, tau) = (5.3e-3, 5.3e-5);
        let s = calibrate_sigma_mu(t2, tau).unwrap();
        assert!((zeta_variance(t2, &OUParams::new(tau, s).unwrap()) - 2.0).abs() < 1e-9);
        assert!(calibrate_sigma_mu(1.0, 2.0).is_err());
        assert!(calibrate_sigma_mu(1.0, 0.0).is_err());
    }

    #[test]
    fn silent_config_gives_zero_trace() {
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 1e-6).collect();
        let tr = make_trace(&NoiseConfig::silent(), &grid, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(tr.mu.iter().chain(&tr.eps).all(|&x| x == 0.0));
    }

    #[test]
    fn traces_are_seed_deterministic() {
        let grid: Vec<f64> = (0..50).map(|k| k as f64 * 1e-6).collect();
        let cfg = NoiseConfig::default();
        let a = make_trace(&cfg, &grid, &mut cfg.rng()).unwrap();
        let b = make_trace(&cfg, &grid, &mut cfg.rng()).unwrap();
        assert_eq!(a, b);
    }
}
