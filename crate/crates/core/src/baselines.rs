//! Comparison estimators: FFT peak picking and least-squares fits.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use crate::error::{Error, Result};
use crate::inference::{grid_posterior, uniform_grid, ForwardModel, ParameterPoint, Prior};
use crate::measurement::{generate_dataset, shot_uncertainty, Acquisition, Dataset, MeasurementPlan};
use crate::physics::{SensorConfig, SignalConfig};
use crate::units::to_hz;

/// Non-DC magnitudes at or below this count as no peak.
pub const PEAK_FLOOR: f64 = 1e-12;

/// One-sided amplitude spectrum of 2P^s − 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// ω_n (rad/s), n = 0..=N/2.
    pub frequencies: Vec<f64>,
    /// |c_n| divided by the largest non-DC magnitude.
    pub magnitudes: Vec<f64>,
    /// δω (rad/s).
    pub resolution: f64,
    /// Full unnormalised DFT.
    pub coefficients: Vec<Complex64>,
    /// Rescaled time series that was transformed.
    pub series: Vec<f64>,
}

impl Spectrum {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_hz,magnitude")?;
        for (f, m) in self.frequencies.iter().zip(&self.magnitudes) {
            writeln!(w, "{},{}", to_hz(*f), m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FftEstimate {
    /// Ω_est = √2 ω_max.
    pub omega_tg_rabi: f64,
    /// √2 δω/4.
    pub uncertainty: f64,
    pub omega_max: f64,
    pub peak_bin: usize,
    pub spectrum: Spectrum,
}

/// Dominant-frequency estimate of Ω_tg for evenly spaced data following
/// cos²(Ω t/√8) = (1 + cos(Ω t/√2))/2.
pub fn fft_estimate(data: &Dataset) -> Result<FftEstimate> {
    if data.len() < 4 {
        return Err(Error::Spectrum(format!("need at least 4 points, got {}", data.len())));
    }
    let dt = data
        .uniform_spacing()
        .ok_or_else(|| Error::Spectrum("times are not evenly spaced".into()))?;
    let n = data.len();
    let series: Vec<f64> = data.view().p_s.iter().map(|p| 2.0 * p - 1.0).collect();
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let resolution = 2.0 * PI / (n as f64 * dt);
    let half = n / 2;
    let raw: Vec<f64> = buf[..=half].iter().map(|c| c.norm()).collect();
    let (peak_bin, peak) = raw
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, 0.0), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    if peak <= PEAK_FLOOR {
        return Err(Error::Spectrum("no non-zero frequency component".into()));
    }
    let omega_max = peak_bin as f64 * resolution;
    Ok(FftEstimate {
        omega_tg_rabi: SQRT_2 * omega_max,
        uncertainty: SQRT_2 * resolution / 4.0,
        omega_max,
        peak_bin,
        spectrum: Spectrum {
            frequencies: (0..=half).map(|k| k as f64 * resolution).collect(),
            magnitudes: raw.iter().map(|m| m / peak).collect(),
            resolution,
            coefficients: buf,
            series,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Residuals divided by the shot-noise σ_k.
    #[default]
    Shot,
    Unweighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Fitted parameters (rad/s).
    pub params: Vec<f64>,
    /// 1σ (68%) half-widths from the local curvature. Shot weighting
    /// trusts σ_k, (JᵀWJ)⁻¹; unweighted fits estimate the residual
    /// variance, s²(JᵀJ)⁻¹.
    pub ci: Vec<f64>,
    /// Always scaled by the reduced χ², s² = χ²/(N − p).
    pub ci_scaled: Vec<f64>,
    /// Unweighted Σ ε_k².
    pub residual_sum: f64,
    /// Objective actually minimised.
    pub chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub init: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub weighting: Weighting,
    pub max_iterations: usize,
    /// Relative step size that counts as convergence.
    pub tolerance: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions {
            weighting: Weighting::Shot,
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

fn weights(data: &Dataset, w: Weighting) -> Result<Vec<f64>> {
    data.x
        .iter()
        .map(|&x| match w {
            Weighting::Shot => Ok(1.0 / shot_uncertainty(x, data.n_m)?),
            Weighting::Unweighted => Ok(1.0),
        })
        .collect()
}

/// Solves the symmetric positive system `a x = b` in place by Gaussian
/// elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            let pivot = a[c].clone();
            for (v, q) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                *v -= f * q;
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        cols.push(solve(a.to_vec(), e)?);
    }
    Some((0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect())
}

struct LmOutcome {
    theta: Vec<f64>,
    ci: Vec<f64>,
    ci_unscaled: Vec<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg–Marquardt on weighted residuals r(θ) with Jacobian J(θ).
fn levenberg_marquardt<F>(init: &[f64], opts: &LsqOptions, mut eval: F) -> Result<LmOutcome>
where
    F: FnMut(&[f64], bool) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>)>,
{
    let np = init.len();
    let mut theta = init.to_vec();
    let (mut r, mut jac) = eval(&theta, true)?;
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iterations {
        it += 1;
        let j = jac.as_ref().expect("jacobian requested");
        let mut jtj = vec![vec![0.0; np]; np];
        let mut jtr = vec![0.0; np];
        for (k, rk) in r.iter().enumerate() {
            for a in 0..np {
                jtr[a] -= j[k][a] * rk;
                for b in 0..np {
                    jtj[a][b] += j[k][a] * j[k][b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut m = jtj.clone();
            for a in 0..np {
                m[a][a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve(m, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
            let (rc, _) = eval(&cand, false)?;
            let cc: f64 = rc.iter().map(|v| v * v).sum();
            if cc.is_finite() && cc <= cost {
                let small = step
                    .iter()
                    .zip(&theta)
                    .all(|(s, t)| s.abs() <= opts.tolerance * t.abs().max(1.0));
                theta = cand;
                let rel_drop = (cost - cc) / cost.max(1e-300);
                cost = cc;
                lambda = (lambda / 10.0).max(1e-12);
                let (r2, j2) = eval(&theta, true)?;
                r = r2;
                jac = j2;
                improved = true;
                if small || rel_drop < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let j = jac.expect("jacobian requested");
    let mut jtj = vec![vec![0.0; np]; np];
    for row in &j {
        for a in 0..np {
            for b in 0..np {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    let dof = (r.len() as f64 - np as f64).max(1.0);
    let s2 = cost / dof;
    let (ci, ci_unscaled) = match invert(&jtj) {
        Some(cov) => (
            (0..np).map(|a| (s2 * cov[a][a]).max(0.0).sqrt()).collect(),
            (0..np).map(|a| cov[a][a].max(0.0).sqrt()).collect(),
        ),
        None => (vec![f64::INFINITY; np], vec![f64::INFINITY; np]),
    };
    Ok(LmOutcome {
        theta,
        ci,
        ci_unscaled,
        cost,
        converged,
        iterations: it,
    })
}

/// cos²(Ω t/√8) and its Ω-derivative.
pub fn cos2_model(t: f64, omega: f64) -> (f64, f64) {
    let a = omega * t / 8f64.sqrt();
    (a.cos().powi(2), -(2.0 * a).sin() * t / 8f64.sqrt())
}

/// Fit P^s_k ≈ cos²(Ω t_k/√8) from the initial guess `init` (rad/s).
pub fn lsq_fit_cos2(data: &Dataset, init: f64, opts: &LsqOptions) -> Result<FitResult> {
    if !(init > 0.0 && init.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial guess must be > 0, got {init}")));
    }
    if data.is_empty() {
        return Err(Error::InvalidDataset("no data points".into()));
    }
    let w = weights(data, opts.weighting)?;
    let p_s = data.view().p_s;
    let lm = levenberg_marquardt(&[init], opts, |th, want_j| {
        let mut r = Vec::with_capacity(p_s.len());
        let mut j = Vec::with_capacity(p_s.len());
        for ((&t, &p), &wk) in data.times_s.iter().zip(&p_s).zip(&w) {
            let (m, dm) = cos2_model(t, th[0]);
            r.push(wk * (p - m));
            j.push(vec![-wk * dm]);
        }
        Ok((r, want_j.then_some(j)))
    })?;
    let residual_sum = residual_sum(data, &ParameterPoint::new(lm.theta[0], 0.0), &ForwardModel::Ideal)?;
    Ok(FitResult {
        params: lm.theta,
        ci: match opts.weighting {
            Weighting::Shot => lm.ci_unscaled,
            Weighting::Unweighted => lm.ci.clone(),
        },
        ci_scaled: lm.ci,
        residual_sum,
        chi2: lm.cost,
        converged: lm.converged,
        iterations: lm.iterations,
        init: vec![init],
    })
}

/// cos² fit started from the best point of an S scan over `scan`.
pub fn lsq_fit_cos2_scan(data: &Dataset, scan: &[f64], opts: &LsqOptions) -> Result<FitResult> {
    let w = weights(data, opts.weighting)?;
    let p_s = data.view().p_s;
    let best = scan
        .iter()
        .filter(|&&o| o > 0.0)
        .map(|&o| {
            let c: f64 = data
                .times_s
                .iter()
                .zip(&p_s)
                .zip(&w)
                .map(|((&t, &p), &wk)| (wk * (p - cos2_model(t, o).0)).powi(2))
                .sum();
            (o, c)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InvalidArgument("scan has no positive frequencies".into()))?;
    lsq_fit_cos2(data, best.0, opts)
}

/// Fit Θ = (Ω_tg, ξ) against refined-model populations with forward
/// finite-difference Jacobians. A non-converged fit is reported, not raised.
pub fn lsq_fit_refined(data: &Dataset, init: ParameterPoint, model: &ForwardModel, opts: &LsqOptions) -> Result<FitResult> {
    SignalConfig::new(init.omega_tg_rabi, init.xi)?;
    if data.is_empty() {
        return Err(Error::InvalidDataset("no data points".into()));
    }
    let w = weights(data, opts.weighting)?;
    let p_s = data.view().p_s;
    let residuals = |th: &[f64]| -> Result<Vec<f64>> {
        let th = ParameterPoint::new(th[0].abs(), th[1]);
        let p = model.predict(&data.times_s, &th)?;
        Ok(p_s.iter().zip(&p).zip(&w).map(|((a, b), wk)| wk * (a - b)).collect())
    };
    let lm = levenberg_marquardt(&[init.omega_tg_rabi, init.xi], opts, |th, want_j| {
        let r = residuals(th)?;
        if !want_j {
            return Ok((r, None));
        }
        let mut j = vec![vec![0.0; 2]; r.len()];
        for a in 0..2 {
            let h = 1e-6 * th[a].abs().max(2.0 * PI);
            let mut shifted = th.to_vec();
            shifted[a] += h;
            let rs = residuals(&shifted)?;
            for k in 0..r.len() {
                j[k][a] = (rs[k] - r[k]) / h;
            }
        }
        Ok((r, Some(j)))
    })?;
    let fitted = ParameterPoint::new(lm.theta[0].abs(), lm.theta[1]);
    Ok(FitResult {
        params: vec![fitted.omega_tg_rabi, fitted.xi],
        ci: match opts.weighting {
            Weighting::Shot => lm.ci_unscaled,
            Weighting::Unweighted => lm.ci.clone(),
        },
        ci_scaled: lm.ci,
        residual_sum: residual_sum(data, &fitted, model)?,
        chi2: lm.cost,
        converged: lm.converged,
        iterations: lm.iterations,
        init: vec![init.omega_tg_rabi, init.xi],
    })
}

/// S = Σ_k (P^s_k − P̃_k(t_k; Θ))², unweighted.
pub fn residual_sum(data: &Dataset, theta: &ParameterPoint, model: &ForwardModel) -> Result<f64> {
    let p = model.predict(&data.times_s, theta)?;
    Ok(data.view().p_s.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum())
}

/// One synthetic replay in the Bayes-vs-LSQ comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub bayes_mean: f64,
    pub bayes_sd: f64,
    pub lsq_est: f64,
    pub lsq_ci: f64,
}

impl ComparisonRow {
    pub fn ratio(&self) -> f64 {
        self.bayes_sd / self.lsq_ci
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonSetup {
    pub sensor: SensorConfig,
    pub omega_tg_rabi: f64,
    pub n_p: usize,
    pub n_m: u32,
    pub t_f: f64,
    pub prior: Prior,
    pub grid_points: usize,
    pub acquisition: Acquisition,
}

/// Simulate `replays` datasets and estimate each with the grid posterior
/// (ideal model) and the scan-started cos² fit. Replay `i` uses a seed drawn
/// from a generator seeded with `seed`.
pub fn compare_bayes_lsq(setup: &ComparisonSetup, replays: usize, seed: u64) -> Result<Vec<ComparisonRow>> {
    let plan = MeasurementPlan::evenly_spaced(setup.t_f, setup.n_p, setup.n_m)?;
    let signal = SignalConfig::new(setup.omega_tg_rabi, 0.0)?;
    let (lo, hi) = match setup.prior.omega {
        crate::inference::ParamPrior::Flat { lo, hi } => (lo, hi),
        _ => return Err(Error::InvalidConfig("comparison needs a flat Ω prior".into())),
    };
    let grid = uniform_grid(lo, hi, setup.grid_points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..replays).map(|_| rng.random()).collect();
    seeds
        .par_iter()
        .map(|&s| {
            let data = generate_dataset(&plan, &setup.sensor, &signal, &setup.acquisition, s)?;
            let post = grid_posterior(&data, &setup.prior, &grid, &ForwardModel::Ideal)?;
            let (bayes_mean, bayes_sd) = post.moments();
            let fit = lsq_fit_cos2_scan(&data, &grid, &LsqOptions::default())?;
            Ok(ComparisonRow {
                seed: s,
                bayes_mean,
                bayes_sd,
                lsq_est: fit.params[0],
                lsq_ci: fit.ci[0],
            })
        })
        .collect()
}

/// Mean of δΩ^Bayes/δΩ^LSQ over rows whose two estimates both fall in
/// [lo, hi], with the number of such rows.
pub fn mean_ratio_in(rows: &[ComparisonRow], lo: f64, hi: f64) -> (f64, usize) {
    let inside = |x: f64| (lo..=hi).contains(&x);
    let r: Vec<f64> = rows
        .iter()
        .filter(|r| inside(r.bayes_mean) && inside(r.lsq_est))
        .map(ComparisonRow::ratio)
        .collect();
    (r.iter().sum::<f64>() / r.len() as f64, r.len())
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> Result<()> {
    writeln!(w, "seed,bayes_mean_hz,bayes_sd_hz,lsq_hz,lsq_ci_hz,ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.seed,
            to_hz(r.bayes_mean),
            to_hz(r.bayes_sd),
            to_hz(r.lsq_est),
            to_hz(r.lsq_ci),
            r.ratio()
        )?;
    }
    Ok(())
}
