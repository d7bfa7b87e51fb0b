//! Bayesian estimation of the signal parameters Θ = (Ω_tg, ξ) from binomial
//! outcome counts: likelihood, priors, grid posteriors and a multi-chain
//! Metropolis sampler.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use crate::dynamics::{p_d_analytic, propagate_with, ModelKind, RefinedModel, StateVector, StepControl};
use crate::error::{Error, Result};
use crate::measurement::Dataset;
use crate::physics::{SensorConfig, SignalConfig};
use crate::units::{hz, khz, to_hz};

/// Predicted populations are clamped to [ε_p, 1 − ε_p].
pub const PROBABILITY_FLOOR: f64 = 1e-9;
/// Memo key resolution for Θ (rad/s).
pub const MEMO_QUANTUM: f64 = 2.0 * std::f64::consts::PI * 1e-3;
/// Chains accepting less than this fraction of proposals are rejected.
pub const MIN_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterPoint {
    /// Ω_tg (rad/s)
    pub omega_tg_rabi: f64,
    /// ξ (rad/s)
    pub xi: f64,
}

impl ParameterPoint {
    pub fn new(omega_tg_rabi: f64, xi: f64) -> Self {
        ParameterPoint { omega_tg_rabi, xi }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Omega => self.omega_tg_rabi,
            Param::Xi => self.xi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Omega,
    Xi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParamPrior {
    Flat { lo: f64, hi: f64 },
    Gaussian { mean: f64, sigma: f64 },
}

impl ParamPrior {
    pub fn flat(lo: f64, hi: f64) -> Result<Self> {
        let p = ParamPrior::Flat { lo, hi };
        p.validate()?;
        Ok(p)
    }

    pub fn gaussian(mean: f64, sigma: f64) -> Result<Self> {
        let p = ParamPrior::Gaussian { mean, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ParamPrior::Flat { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            ParamPrior::Gaussian { mean, sigma } if mean.is_finite() && sigma > 0.0 && sigma.is_finite() => Ok(()),
            _ => Err(Error::InvalidConfig(format!("invalid prior {self:?}"))),
        }
    }

    /// Normalised log density.
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            ParamPrior::Flat { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ParamPrior::Gaussian { mean, sigma } => {
                let z = (x - mean) / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ParamPrior::Flat { lo, hi } => rng.random_range(lo..=hi),
            ParamPrior::Gaussian { mean, sigma } => mean + sigma * rng.sample::<f64, _>(StandardNormal),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ParamPrior::Flat { lo, hi } => 0.5 * (lo + hi),
            ParamPrior::Gaussian { mean, .. } => mean,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            ParamPrior::Flat { lo, hi } => (hi - lo) / 12f64.sqrt(),
            ParamPrior::Gaussian { sigma, .. } => sigma,
        }
    }
}

/// Independent priors on Ω_tg and ξ. Without a ξ factor, ξ is pinned to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub omega: ParamPrior,
    pub xi: Option<ParamPrior>,
}

impl Prior {
    /// Flat Ω_tg ∈ [0, 2π×4.2 kHz], ξ = 0.
    pub fn case_one() -> Self {
        Prior {
            omega: ParamPrior::Flat { lo: 0.0, hi: khz(4.2) },
            xi: None,
        }
    }

    /// Flat Ω_tg ∈ [0, 2π×50 kHz], ξ ~ N(0, (2π×0.25 kHz)²).
    pub fn case_two() -> Self {
        Prior {
            omega: ParamPrior::Flat { lo: 0.0, hi: khz(50.0) },
            xi: Some(ParamPrior::Gaussian {
                mean: 0.0,
                sigma: khz(0.25),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.omega.validate()?;
        if let Some(xi) = &self.xi {
            xi.validate()?;
        }
        Ok(())
    }

    pub fn fixed_xi(&self) -> bool {
        self.xi.is_none()
    }

    pub fn log_density(&self, theta: &ParameterPoint) -> f64 {
        if !(theta.omega_tg_rabi >= 0.0) {
            return f64::NEG_INFINITY;
        }
        let xi = match &self.xi {
            Some(p) => p.log_pdf(theta.xi),
            None if theta.xi == 0.0 => 0.0,
            None => f64::NEG_INFINITY,
        };
        self.omega.log_pdf(theta.omega_tg_rabi) + xi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterPoint {
        loop {
            let theta = ParameterPoint {
                omega_tg_rabi: self.omega.sample(rng),
                xi: self.xi.map_or(0.0, |p| p.sample(rng)),
            };
            if self.log_density(&theta).is_finite() {
                return theta;
            }
        }
    }
}

/// Maps Θ to predicted P_D at the data times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardModel {
    Ideal,
    Refined { sensor: SensorConfig, control: StepControl },
}

impl ForwardModel {
    /// Refined model with the likelihood step rule.
    pub fn refined(sensor: SensorConfig) -> Self {
        ForwardModel::Refined {
            sensor,
            control: StepControl::inference(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ForwardModel::Ideal => ModelKind::Ideal,
            ForwardModel::Refined { .. } => ModelKind::Refined,
        }
    }

    pub fn predict(&self, times: &[f64], theta: &ParameterPoint) -> Result<Vec<f64>> {
        match self {
            ForwardModel::Ideal => {
                if theta.xi != 0.0 {
                    return Err(Error::InvalidArgument("the ideal model has no detuning; xi must be 0".into()));
                }
                Ok(times.iter().map(|&t| p_d_analytic(t, theta.omega_tg_rabi)).collect())
            }
            ForwardModel::Refined { sensor, control } => {
                if times.is_empty() {
                    return Ok(Vec::new());
                }
                let signal = SignalConfig::new(theta.omega_tg_rabi, theta.xi)?;
                let model = RefinedModel::new(sensor, &signal);
                Ok(propagate_with(&model, StateVector::dark(), times, *control)?.p_d)
            }
        }
    }
}

/// ln[C(n, x) pˣ (1−p)ⁿ⁻ˣ].
pub fn log_binomial_pmf(x: u32, n: u32, p: f64) -> Result<f64> {
    if x > n || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("binomial pmf domain: x = {x}, n = {n}, p = {p}")));
    }
    let (xf, mf) = (x as f64, (n - x) as f64);
    let success = if x == 0 { 0.0 } else { xf * p.ln() };
    let failure = if x == n { 0.0 } else { mf * (-p).ln_1p() };
    Ok(ln_binomial(n as u64, x as u64) + success + failure)
}

pub fn log_likelihood(data: &Dataset, theta: &ParameterPoint, model: &ForwardModel) -> Result<f64> {
    let p = model.predict(&data.times_s, theta)?;
    data.x.iter().zip(&p).try_fold(0.0, |acc, (&x, &p)| {
        Ok(acc + log_binomial_pmf(x, data.n_m, p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR))?)
    })
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Posterior over an Ω_tg grid at fixed ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    pub xi: f64,
    pub log_post: Vec<f64>,
    /// Normalised so that its trapezoid integral is 1.
    pub density: Vec<f64>,
}

impl GridPosterior {
    /// Mean and standard deviation by trapezoid quadrature.
    pub fn moments(&self) -> (f64, f64) {
        let mean = trapezoid(
            &self.grid,
            &self.grid.iter().zip(&self.density).map(|(x, d)| x * d).collect::<Vec<_>>(),
        );
        let var = trapezoid(
            &self.grid,
            &self.grid.iter().zip(&self.density).map(|(x, d)| (x - mean).powi(2) * d).collect::<Vec<_>>(),
        );
        (mean, var.max(0.0).sqrt())
    }

    pub fn argmax(&self) -> f64 {
        let i = self
            .log_post
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.grid[i]
    }

    /// Local maxima of the density, highest first.
    pub fn peaks(&self) -> Vec<f64> {
        let d = &self.density;
        let mut idx: Vec<usize> = (0..d.len())
            .filter(|&i| (i == 0 || d[i] > d[i - 1]) && (i + 1 == d.len() || d[i] >= d[i + 1]))
            .collect();
        idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
        idx.into_iter().map(|i| self.grid[i]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega_tg_hz,xi_hz,log_post,density_per_hz")?;
        for ((x, lp), d) in self.grid.iter().zip(&self.log_post).zip(&self.density) {
            writeln!(w, "{},{},{},{}", to_hz(*x), to_hz(self.xi), lp, d * hz(1.0))?;
        }
        Ok(())
    }
}

/// Posterior over `grid` (values of Ω_tg) with ξ fixed at `xi`; the prior's
/// ξ factor, if any, is evaluated there too.
pub fn grid_posterior_at(
    data: &Dataset,
    prior: &Prior,
    grid: &[f64],
    xi: f64,
    model: &ForwardModel,
) -> Result<GridPosterior> {
    prior.validate()?;
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid needs >= 2 strictly increasing points".into()));
    }
    let log_prior: Vec<f64> = grid
        .iter()
        .map(|&w| prior.log_density(&ParameterPoint::new(w, xi)))
        .collect();
    if log_prior.iter().any(|lp| !lp.is_finite()) {
        return Err(Error::InvalidArgument("grid extends outside the prior support".into()));
    }
    let log_like: Vec<f64> = grid
        .par_iter()
        .map(|&w| log_likelihood(data, &ParameterPoint::new(w, xi), model))
        .collect::<Result<_>>()?;
    let log_post: Vec<f64> = log_prior.iter().zip(&log_like).map(|(a, b)| a + b).collect();
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::ZeroPosterior);
    }
    let w: Vec<f64> = log_post.iter().map(|lp| (lp - max).exp()).collect();
    let z = trapezoid(grid, &w);
    if !(z > 0.0) {
        return Err(Error::ZeroPosterior);
    }
    Ok(GridPosterior {
        grid: grid.to_vec(),
        xi,
        log_post,
        density: w.iter().map(|v| v / z).collect(),
    })
}

/// Grid posterior with ξ = 0.
pub fn grid_posterior(data: &Dataset, prior: &Prior, grid: &[f64], model: &ForwardModel) -> Result<GridPosterior> {
    grid_posterior_at(data, prior, grid, 0.0, model)
}

/// Joint posterior of (Ω_tg, ξ) on a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior2D {
    pub omega: Vec<f64>,
    pub xi: Vec<f64>,
    /// Row-major, `log_post[i * xi.len() + j]` at (omega[i], xi[j]).
    pub log_post: Vec<f64>,
}

impl GridPosterior2D {
    fn weights(&self) -> Vec<f64> {
        let max = self.log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.log_post.iter().map(|lp| (lp - max).exp()).collect()
    }

    fn marginal(&self, p: Param) -> GridPosterior {
        let w = self.weights();
        let nx = self.xi.len();
        let (grid, sums): (&[f64], Vec<f64>) = match p {
            Param::Omega => (
                &self.omega,
                (0..self.omega.len()).map(|i| trapezoid(&self.xi, &w[i * nx..(i + 1) * nx])).collect(),
            ),
            Param::Xi => (
                &self.xi,
                (0..nx)
                    .map(|j| {
                        let col: Vec<f64> = (0..self.omega.len()).map(|i| w[i * nx + j]).collect();
                        trapezoid(&self.omega, &col)
                    })
                    .collect(),
            ),
        };
        let z = trapezoid(grid, &sums);
        GridPosterior {
            grid: grid.to_vec(),
            xi: f64::NAN,
            log_post: sums.iter().map(|v| v.ln()).collect(),
            density: sums.iter().map(|v| v / z).collect(),
        }
    }

    /// Marginal density of Ω_tg (ξ integrated out).
    pub fn marginal_omega(&self) -> GridPosterior {
        self.marginal(Param::Omega)
    }

    /// Marginal density of ξ (Ω_tg integrated out).
    pub fn marginal_xi(&self) -> GridPosterior {
        self.marginal(Param::Xi)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega_tg_hz,xi_hz,log_post")?;
        for (i, o) in self.omega.iter().enumerate() {
            for (j, x) in self.xi.iter().enumerate() {
                writeln!(w, "{},{},{}", to_hz(*o), to_hz(*x), self.log_post[i * self.xi.len() + j])?;
            }
        }
        Ok(())
    }
}

/// Joint posterior over `omega` × `xi`. The prior needs a ξ factor.
pub fn grid_posterior_2d(
    data: &Dataset,
    prior: &Prior,
    omega: &[f64],
    xi: &[f64],
    model: &ForwardModel,
) -> Result<GridPosterior2D> {
    prior.validate()?;
    if prior.xi.is_none() {
        return Err(Error::InvalidArgument("a 2-D grid needs a prior on xi".into()));
    }
    for g in [omega, xi] {
        if g.len() < 2 || g.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid needs >= 2 strictly increasing points".into()));
        }
    }
    let points: Vec<ParameterPoint> = omega
        .iter()
        .flat_map(|&o| xi.iter().map(move |&x| ParameterPoint::new(o, x)))
        .collect();
    if points.iter().any(|p| !prior.log_density(p).is_finite()) {
        return Err(Error::InvalidArgument("grid extends outside the prior support".into()));
    }
    let log_post: Vec<f64> = points
        .par_iter()
        .map(|p| Ok(prior.log_density(p) + log_likelihood(data, p, model)?))
        .collect::<Result<_>>()?;
    if !log_post.iter().any(|lp| lp.is_finite()) {
        return Err(Error::ZeroPosterior);
    }
    Ok(GridPosterior2D {
        omega: omega.to_vec(),
        xi: xi.to_vec(),
        log_post,
    })
}

/// What goes into sample moments and histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordMode {
    /// Textbook Metropolis: a rejected step repeats the current state.
    #[default]
    DuplicateOnReject,
    /// Only states reached by an accepted move.
    AcceptedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    /// Random-walk steps per chain, burn-in included.
    pub n_mc: usize,
    pub n_chains: usize,
    /// Independence steps proposing from the prior before the random walk.
    pub pre_steps: usize,
    /// Random-walk steps discarded.
    pub burn_in: usize,
    pub proposal_sigma_omega: f64,
    pub proposal_sigma_xi: f64,
    pub record: RecordMode,
    /// Share likelihood values across chains, keyed on Θ rounded to
    /// [`MEMO_QUANTUM`]; the likelihood is then evaluated at the rounded Θ.
    pub memoize: bool,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_mc: 10_000,
            n_chains: 5,
            pre_steps: 100,
            burn_in: 200,
            proposal_sigma_omega: khz(0.1),
            proposal_sigma_xi: khz(0.01),
            record: RecordMode::DuplicateOnReject,
            memoize: true,
            seed: 0,
        }
    }
}

impl McmcConfig {
    /// Wider steps, σ̃_Ω = 2π×1 kHz.
    pub fn wide_proposal() -> Self {
        McmcConfig {
            proposal_sigma_omega: khz(1.0),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc <= self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "n_mc ({}) must exceed burn_in ({})",
                self.n_mc, self.burn_in
            )));
        }
        if self.n_chains == 0 {
            return Err(Error::InvalidConfig("n_chains must be at least 1".into()));
        }
        for s in [self.proposal_sigma_omega, self.proposal_sigma_xi] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("proposal sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Unnormalised log posterior the sampler explores.
pub trait LogTarget: Sync {
    fn log_prior(&self, theta: &ParameterPoint) -> f64;
    fn log_likelihood(&self, theta: &ParameterPoint) -> Result<f64>;
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterPoint;
    /// ξ is not sampled.
    fn fixed_xi(&self) -> bool;
}

/// Posterior of Θ given a dataset.
pub struct DatasetPosterior<'a> {
    pub data: &'a Dataset,
    pub prior: Prior,
    pub model: ForwardModel,
    memo: Option<Mutex<HashMap<(i64, i64), f64>>>,
}

impl<'a> DatasetPosterior<'a> {
    pub fn new(data: &'a Dataset, prior: Prior, model: ForwardModel, memoize: bool) -> Self {
        DatasetPosterior {
            data,
            prior,
            model,
            memo: memoize.then(|| Mutex::new(HashMap::new())),
        }
    }

    /// Number of distinct Θ evaluated through the memo.
    pub fn memo_len(&self) -> usize {
        self.memo.as_ref().map_or(0, |m| m.lock().map(|m| m.len()).unwrap_or(0))
    }
}

impl LogTarget for DatasetPosterior<'_> {
    fn log_prior(&self, theta: &ParameterPoint) -> f64 {
        self.prior.log_density(theta)
    }

    fn log_likelihood(&self, theta: &ParameterPoint) -> Result<f64> {
        let Some(memo) = &self.memo else {
            return log_likelihood(self.data, theta, &self.model);
        };
        let key = (
            (theta.omega_tg_rabi / MEMO_QUANTUM).round() as i64,
            (theta.xi / MEMO_QUANTUM).round() as i64,
        );
        if let Some(v) = memo.lock().expect("memo lock").get(&key) {
            return Ok(*v);
        }
        let snapped = ParameterPoint::new(key.0 as f64 * MEMO_QUANTUM, key.1 as f64 * MEMO_QUANTUM);
        let v = log_likelihood(self.data, &snapped, &self.model)?;
        memo.lock().expect("memo lock").insert(key, v);
        Ok(v)
    }

    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterPoint {
        self.prior.sample(rng)
    }

    fn fixed_xi(&self) -> bool {
        self.prior.fixed_xi()
    }
}

/// Metropolis rule: accept with probability min(1, e^{log_ratio}).
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// One chain after burn-in, duplicate-on-reject.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<ParameterPoint>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Accepted fraction of the recorded random-walk proposals.
    pub acceptance: f64,
}

impl Chain {
    pub fn values(&self, p: Param, mode: RecordMode) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.accepted)
            .filter(|(_, &a)| mode == RecordMode::DuplicateOnReject || a)
            .map(|(s, _)| s.get(p))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,omega_tg_hz,xi_hz,log_post,accepted")?;
        for (j, ((s, lp), a)) in self.states.iter().zip(&self.log_post).zip(&self.accepted).enumerate() {
            writeln!(w, "{j},{},{},{lp},{}", to_hz(s.omega_tg_rabi), to_hz(s.xi), *a as u8)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub chains: Vec<Chain>,
    pub record: RecordMode,
    pub fixed_xi: bool,
}

impl ChainSamples {
    pub fn pooled(&self, p: Param) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.values(p, self.record)).collect()
    }

    /// Mean acceptance over chains.
    pub fn acceptance(&self) -> f64 {
        self.chains.iter().map(|c| c.acceptance).sum::<f64>() / self.chains.len() as f64
    }

    /// Split-R̂ over the duplicate-on-reject paths.
    pub fn r_hat(&self, p: Param) -> Result<f64> {
        let paths: Vec<Vec<f64>> = self
            .chains
            .iter()
            .map(|c| c.values(p, RecordMode::DuplicateOnReject))
            .collect();
        split_r_hat(&paths)
    }

    /// Largest split-R̂ over the sampled parameters.
    pub fn max_r_hat(&self) -> Result<f64> {
        let mut r = self.r_hat(Param::Omega)?;
        if !self.fixed_xi {
            r = r.max(self.r_hat(Param::Xi)?);
        }
        Ok(r)
    }

    pub fn moments(&self, p: Param) -> (f64, f64) {
        sample_moments(&self.pooled(p))
    }

    pub fn summary(&self, bins: usize) -> Result<EstimateSummary> {
        let omega = self.moments(Param::Omega);
        let omega_hist = marginal_histogram(&self.pooled(Param::Omega), bins)?;
        let (xi, xi_hist) = if self.fixed_xi {
            (None, None)
        } else {
            (
                Some(self.moments(Param::Xi)),
                Some(marginal_histogram(&self.pooled(Param::Xi), bins)?),
            )
        };
        Ok(EstimateSummary {
            omega,
            xi,
            omega_hist,
            xi_hist,
        })
    }
}

/// Posterior means and standard deviations with marginal histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub omega: (f64, f64),
    pub xi: Option<(f64, f64)>,
    pub omega_hist: Histogram,
    pub xi_hist: Option<Histogram>,
}

pub fn sample_moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn run_chain<T: LogTarget + ?Sized>(target: &T, cfg: &McmcConfig, index: usize) -> Result<Chain> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let step_omega = Normal::new(0.0, cfg.proposal_sigma_omega).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let step_xi = Normal::new(0.0, cfg.proposal_sigma_xi).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut theta = target.sample_prior(&mut rng);
    let mut log_like = target.log_likelihood(&theta)?;
    let mut log_post = target.log_prior(&theta) + log_like;

    // Independence moves from the prior: the prior cancels in α.
    for _ in 0..cfg.pre_steps {
        let cand = target.sample_prior(&mut rng);
        let cand_like = target.log_likelihood(&cand)?;
        if metropolis_accept(cand_like - log_like, &mut rng) {
            theta = cand;
            log_like = cand_like;
            log_post = target.log_prior(&theta) + log_like;
        }
    }

    let kept = cfg.n_mc - cfg.burn_in;
    let mut chain = Chain {
        states: Vec::with_capacity(kept),
        log_post: Vec::with_capacity(kept),
        accepted: Vec::with_capacity(kept),
        acceptance: 0.0,
    };
    for j in 0..cfg.n_mc {
        let cand = ParameterPoint {
            omega_tg_rabi: theta.omega_tg_rabi + rng.sample(step_omega),
            xi: if target.fixed_xi() {
                theta.xi
            } else {
                theta.xi + rng.sample(step_xi)
            },
        };
        let cand_prior = target.log_prior(&cand);
        let cand_post = if cand_prior.is_finite() {
            cand_prior + target.log_likelihood(&cand)?
        } else {
            f64::NEG_INFINITY
        };
        let accepted = metropolis_accept(cand_post - log_post, &mut rng);
        if accepted {
            theta = cand;
            log_post = cand_post;
        }
        if j >= cfg.burn_in {
            chain.states.push(theta);
            chain.log_post.push(log_post);
            chain.accepted.push(accepted);
        }
    }
    chain.acceptance = chain.accepted.iter().filter(|&&a| a).count() as f64 / kept as f64;
    if chain.acceptance < MIN_ACCEPTANCE {
        return Err(Error::LowAcceptance {
            chain: index,
            acceptance: chain.acceptance,
        });
    }
    log::debug!("chain {index}: acceptance {:.3}", chain.acceptance);
    Ok(chain)
}

/// Independent Metropolis chains, run in parallel and returned in chain
/// order. Chain `c` draws from stream `c` of a ChaCha generator seeded
/// with `cfg.seed`.
pub fn run_chains<T: LogTarget + ?Sized>(target: &T, cfg: &McmcConfig) -> Result<ChainSamples> {
    cfg.validate()?;
    let chains = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainSamples {
        chains,
        record: cfg.record,
        fixed_xi: target.fixed_xi(),
    })
}

pub fn metropolis_run(data: &Dataset, prior: &Prior, cfg: &McmcConfig, model: &ForwardModel) -> Result<ChainSamples> {
    prior.validate()?;
    run_chains(&DatasetPosterior::new(data, *prior, *model, cfg.memoize), cfg)
}

fn check_chains(chains: &[Vec<f64>], min_len: usize) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("R-hat needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < min_len || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "R-hat needs equal-length chains of at least {min_len} samples"
        )));
    }
    Ok(n)
}

/// Gelman–Rubin potential scale reduction factor. Zero within-chain
/// variance gives +∞.
pub fn r_hat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 2)? as f64;
    let m = chains.len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| sample_moments(c)).collect();
    let w = stats.iter().map(|(_, s)| s * s).sum::<f64>() / m;
    let grand = stats.iter().map(|(mu, _)| mu).sum::<f64>() / m;
    let b_over_n = stats.iter().map(|(mu, _)| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if !(w > 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok((((n - 1.0) / n * w + b_over_n) / w).sqrt())
}

/// R̂ after splitting each chain into halves, which also flags drifts
/// within a chain.
pub fn split_r_hat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 4)?;
    let half = n / 2;
    let halves: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect();
    r_hat(&halves)
}

/// Normalised histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Integrates to 1 over the edges.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn moments(&self) -> (f64, f64) {
        let c = self.centers();
        let widths: Vec<f64> = self.edges.windows(2).map(|e| e[1] - e[0]).collect();
        let mean: f64 = c.iter().zip(&self.density).zip(&widths).map(|((x, d), w)| x * d * w).sum();
        let var: f64 = c
            .iter()
            .zip(&self.density)
            .zip(&widths)
            .map(|((x, d), w)| (x - mean).powi(2) * d * w)
            .sum();
        (mean, var.sqrt())
    }

    /// Bin indices of well-separated maxima, highest first; see
    /// [`separated_modes`].
    pub fn modes(&self, min_dip: f64) -> Vec<usize> {
        separated_modes(&self.density, min_dip)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, scale: f64) -> Result<()> {
        writeln!(w, "lo,hi,count,density")?;
        for (k, (c, d)) in self.counts.iter().zip(&self.density).enumerate() {
            writeln!(w, "{},{},{},{}", self.edges[k] * scale, self.edges[k + 1] * scale, c, d / scale)?;
        }
        Ok(())
    }
}

/// Indices of well-separated local maxima of `d`, highest first. Two maxima
/// count as separate modes when the lowest value between them is at most
/// (1 − `min_dip`) times the lower of the two.
pub fn separated_modes(d: &[f64], min_dip: f64) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..d.len())
        .filter(|&i| d[i] > 0.0 && (i == 0 || d[i] > d[i - 1]) && (i + 1 == d.len() || d[i] >= d[i + 1]))
        .collect();
    cand.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut modes: Vec<usize> = Vec::new();
    for i in cand {
        let separated = modes.iter().all(|&j| {
            let (lo, hi) = (i.min(j), i.max(j));
            let valley = d[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
            valley <= (1.0 - min_dip) * d[i].min(d[j])
        });
        if separated {
            modes.push(i);
        }
    }
    modes
}

/// Histogram of `samples` over their range in `bins` equal bins.
pub fn marginal_histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument("histogram needs samples and at least one bin".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1.0) * 1e-3;
        (lo - pad, hi + pad)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let k = (((s - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = samples.len() as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|k| lo + k as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        counts,
    })
}
