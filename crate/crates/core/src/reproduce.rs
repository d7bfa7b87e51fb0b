//! Reproduction recipes: each runs the estimators on the reference records
//! (or a seeded replay) and scores the results against reference values.

use serde::Serialize;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines::{
    compare_bayes_lsq, fft_estimate, lsq_fit_cos2, lsq_fit_cos2_scan, lsq_fit_refined, mean_ratio_in,
    residual_sum, write_comparison_csv, ComparisonSetup, LsqOptions,
};
use crate::dynamics::{ModelKind, StepControl};
use crate::error::Result;
use crate::fixtures::Reference;
use crate::inference::{
    grid_posterior, grid_posterior_2d, marginal_histogram, metropolis_run, separated_modes, uniform_grid, ForwardModel, McmcConfig,
    Param, ParamPrior, ParameterPoint, Prior,
};
use crate::measurement::{generate_dataset, Acquisition, MeasurementPlan};
use crate::physics::{nyquist_max_rabi, SensorConfig, SignalConfig};
use crate::run::{wide_detuning_prior, BUILD};
use crate::units::{hz, khz, to_hz, to_khz};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    CaseI,
    CaseIi,
    FigS5,
    FigS7,
    FigS8,
}

impl Case {
    pub const ALL: [Case; 5] = [Case::CaseI, Case::CaseIi, Case::FigS5, Case::FigS7, Case::FigS8];

    pub fn name(self) -> &'static str {
        match self {
            Case::CaseI => "case-i",
            Case::CaseIi => "case-ii",
            Case::FigS5 => "fig-s5",
            Case::FigS7 => "fig-s7",
            Case::FigS8 => "fig-s8",
        }
    }
}

/// Sampler effort. Reduced runs use 2×10³ steps per chain and doubled
/// tolerances on stochastic rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Options {
    pub full: bool,
    pub seed: u64,
}

impl Options {
    fn n_mc(&self) -> usize {
        if self.full {
            10_000
        } else {
            2_000
        }
    }

    fn widen(&self) -> f64 {
        if self.full {
            1.0
        } else {
            2.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Check {
    Within { reference: f64, tolerance: f64 },
    Above { threshold: f64 },
    Below { threshold: f64 },
}

impl Check {
    fn passes(&self, v: f64) -> bool {
        match *self {
            Check::Within { reference, tolerance } => (v - reference).abs() <= tolerance,
            Check::Above { threshold } => v > threshold,
            Check::Below { threshold } => v < threshold,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Check::Within { reference, tolerance } => write!(f, "{reference:.6} ± {tolerance:.6}"),
            Check::Above { threshold } => write!(f, "> {threshold}"),
            Check::Below { threshold } => write!(f, "< {threshold}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub value: f64,
    pub unit: &'static str,
    pub check: Check,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub case: Case,
    pub build: &'static str,
    pub options: Options,
    /// SHA-256 of the serialized options and case.
    pub config_hash: String,
    pub rows: Vec<Row>,
    pub files: Vec<PathBuf>,
}

impl Report {
    fn new(case: Case, options: Options) -> Self {
        use sha2::{Digest, Sha256};
        let key = serde_json::json!({ "case": case, "options": options, "build": BUILD });
        let digest = Sha256::digest(key.to_string().as_bytes());
        Report {
            case,
            build: BUILD,
            options,
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            rows: Vec::new(),
            files: Vec::new(),
        }
    }

    fn row(&mut self, label: impl Into<String>, value: f64, unit: &'static str, check: Check) {
        self.rows.push(Row {
            label: label.into(),
            value,
            unit,
            pass: check.passes(value),
            check,
        });
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    fn csv(&mut self, out: Option<&Path>, name: &str) -> Result<Option<BufWriter<File>>> {
        let Some(dir) = out else { return Ok(None) };
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}_{name}", self.case.name()));
        self.files.push(path.clone());
        Ok(Some(BufWriter::new(File::create(path)?)))
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (build {}, config {})", self.case.name(), self.build, &self.config_hash[..12])?;
        for r in &self.rows {
            writeln!(
                f,
                "  {:<4} {:<44} {:>14.6} {:<4} target {}",
                if r.pass { "PASS" } else { "FAIL" },
                r.label,
                r.value,
                r.unit,
                r.check
            )?;
        }
        Ok(())
    }
}

fn within(reference: f64, tolerance: f64) -> Check {
    Check::Within { reference, tolerance }
}

/// Grid posteriors, FFT and least squares on the Case I records.
pub fn case_one(options: Options, out: Option<&Path>) -> Result<Report> {
    let mut rep = Report::new(Case::CaseI, options);
    let grid = uniform_grid(0.0, khz(4.2), 2000);
    let start = Instant::now();
    for (r, n_m, est, sd) in [
        (Reference::CaseOneNm1, 1, 1.011, 0.042),
        (Reference::CaseOneNm4, 4, 0.988, 0.014),
        (Reference::CaseOneNm20, 20, 1.0048, 0.0076),
    ] {
        let post = grid_posterior(&r.load()?, &Prior::case_one(), &grid, &ForwardModel::Ideal)?;
        let (m, s) = post.moments();
        rep.row(format!("N_m={n_m} Omega_est"), to_khz(m), "kHz", within(est, 0.010));
        rep.row(format!("N_m={n_m} delta Omega_est"), to_khz(s), "kHz", within(sd, 0.2 * sd));
        if let Some(w) = rep.csv(out, &format!("posterior_nm{n_m}.csv"))? {
            post.write_csv(w)?;
        }
    }
    rep.row("grid runtime", start.elapsed().as_secs_f64(), "s", Check::Below { threshold: 5.0 });

    let data = Reference::CaseOneNm4.load()?;
    let start = Instant::now();
    let f = fft_estimate(&data)?;
    rep.row(
        "FFT omega_max",
        to_khz(f.omega_max),
        "kHz",
        within(0.6678, to_khz(f.spectrum.resolution) / 2.0),
    );
    rep.row("FFT Omega_est", to_khz(f.omega_tg_rabi), "kHz", within(0.94, 0.12));
    rep.row("FFT runtime", start.elapsed().as_secs_f64(), "s", Check::Below { threshold: 1.0 });
    if let Some(w) = rep.csv(out, "spectrum.csv")? {
        f.spectrum.write_csv(w)?;
    }

    let start = Instant::now();
    let fit = lsq_fit_cos2(&data, khz(1.0), &LsqOptions::default())?;
    rep.row("LSQ Omega_est", to_khz(fit.params[0]), "kHz", within(0.947, 0.05 * 0.947));
    rep.row("LSQ runtime", start.elapsed().as_secs_f64(), "s", Check::Below { threshold: 1.0 });
    Ok(rep)
}

/// Metropolis chains on the Case II records plus the refined least-squares
/// initialisation study.
pub fn case_two(options: Options, out: Option<&Path>) -> Result<Report> {
    let mut rep = Report::new(Case::CaseIi, options);
    let model = ForwardModel::refined(SensorConfig::with_field(0.5e-3)?);
    let prior = Prior::case_two();
    let cfg = McmcConfig {
        n_mc: options.n_mc(),
        seed: options.seed,
        ..Default::default()
    };
    let k = 3.0 * options.widen();
    for (r, n_m, (om, dom), (xi, dxi)) in [
        (Reference::CaseTwoNm20, 20, (11.90, 0.17), (0.169, 0.039)),
        (Reference::CaseTwoNm40, 40, (12.05, 0.12), (0.111, 0.027)),
        (Reference::CaseTwoNm4, 4, (12.91, 0.44), (-0.112, 0.090)),
    ] {
        let s = metropolis_run(&r.load()?, &prior, &cfg, &model)?;
        let (m, _) = s.moments(Param::Omega);
        let (x, _) = s.moments(Param::Xi);
        rep.row(format!("N_m={n_m} Omega_est"), to_khz(m), "kHz", within(om, k * dom));
        rep.row(format!("N_m={n_m} xi_est"), to_khz(x), "kHz", within(xi, k * dxi));
        for (c, chain) in s.chains.iter().enumerate() {
            if let Some(w) = rep.csv(out, &format!("nm{n_m}_chain{c}.csv"))? {
                chain.write_csv(w)?;
            }
        }
    }
    let s = metropolis_run(&Reference::CaseTwoNm1.load()?, &prior, &cfg, &model)?;
    rep.row("N_m=1 max split R-hat", s.max_r_hat()?, "", Check::Above { threshold: 1.2 });

    let data = Reference::CaseTwoNm20.load()?;
    let trapped = lsq_fit_refined(&data, ParameterPoint::new(khz(8.0), -khz(0.1)), &model, &LsqOptions::default())?;
    rep.row(
        "LSQ from (8, -0.1) kHz: |Omega - 12|",
        to_khz((trapped.params[0] - khz(12.0)).abs()),
        "kHz",
        Check::Above { threshold: 1.0 },
    );
    let good = lsq_fit_refined(&data, ParameterPoint::new(khz(15.0), khz(0.1)), &model, &LsqOptions::default())?;
    rep.row("LSQ from (15, 0.1) kHz: Omega", to_khz(good.params[0]), "kHz", within(12.73, 1.0));
    Ok(rep)
}

/// Aliasing: Ω_tg = 2π×7 Hz sampled every 25 ms, N_p = 21, N_m = 10.
pub fn fig_s5(options: Options, out: Option<&Path>) -> Result<Report> {
    let mut rep = Report::new(Case::FigS5, options);
    let dt = 25e-3;
    let plan = MeasurementPlan::evenly_spaced(20.0 * dt, 21, 10)?;
    let data = generate_dataset(
        &plan,
        &SensorConfig::with_field(1e-3)?,
        &SignalConfig::new(hz(7.0), 0.0)?,
        &Acquisition::noiseless(ModelKind::Ideal),
        options.seed,
    )?;
    let w_max = nyquist_max_rabi(dt)?;
    rep.row("Omega_max", to_hz(w_max), "Hz", within(40.0 / 2f64.sqrt(), 1e-9));

    let wide = Prior {
        omega: ParamPrior::flat(0.0, 2.5 * w_max)?,
        xi: None,
    };
    let post = grid_posterior(&data, &wide, &uniform_grid(0.0, 2.5 * w_max, 40_001), &ForwardModel::Ideal)?;
    let mut peaks: Vec<f64> = post.peaks().into_iter().take(3).map(to_hz).collect();
    peaks.sort_by(f64::total_cmp);
    let f = 7.0 / 2f64.sqrt();
    for (i, (label, want)) in [
        ("true peak", 7.0),
        ("alias near 50 Hz", (40.0 - f) * 2f64.sqrt()),
        ("alias near 63 Hz", (40.0 + f) * 2f64.sqrt()),
    ]
    .into_iter()
    .enumerate()
    {
        rep.row(label, peaks.get(i).copied().unwrap_or(f64::NAN), "Hz", within(want, 0.5));
    }
    if let Some(w) = rep.csv(out, "posterior_wide.csv")? {
        post.write_csv(w)?;
    }

    let truncated = Prior {
        omega: ParamPrior::flat(0.0, w_max)?,
        xi: None,
    };
    let post = grid_posterior(&data, &truncated, &uniform_grid(0.0, w_max, 20_001), &ForwardModel::Ideal)?;
    rep.row("truncated Omega_est", to_hz(post.moments().0), "Hz", within(7.147, 0.2));
    if let Some(w) = rep.csv(out, "posterior_truncated.csv")? {
        post.write_csv(w)?;
    }
    Ok(rep)
}

/// Least squares against the posterior on single-shot records, and the
/// averaged uncertainty ratio over seeded replays.
pub fn fig_s7(options: Options, out: Option<&Path>) -> Result<Report> {
    let mut rep = Report::new(Case::FigS7, options);
    let scan = uniform_grid(khz(0.01), khz(4.2), 4000);
    let grid = uniform_grid(0.0, khz(4.2), 4000);
    for (r, tag) in [(Reference::SingleShotA, "a"), (Reference::SingleShotB, "b")] {
        let data = r.load()?;
        let s: Vec<f64> = scan
            .iter()
            .map(|&w| residual_sum(&data, &ParameterPoint::new(w, 0.0), &ForwardModel::Ideal))
            .collect::<Result<_>>()?;
        let post = grid_posterior(&data, &Prior::case_one(), &grid, &ForwardModel::Ideal)?;
        let fit = lsq_fit_cos2_scan(&data, &scan, &LsqOptions::default())?;
        if tag == "a" {
            let (i, _) = s.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty scan");
            rep.row("(a) argmin S", to_khz(scan[i]), "kHz", within(0.76, 0.05));
            rep.row("(a) posterior argmax", to_khz(post.argmax()), "kHz", within(1.6, 0.15));
        } else {
            let (m, sd) = post.moments();
            rep.row("(b) Bayes Omega_est", to_khz(m), "kHz", within(1.695, 0.069));
            rep.row("(b) Bayes delta Omega_est", to_khz(sd), "kHz", within(0.069, 0.5 * 0.069));
            rep.row("(b) LSQ Omega_est", to_khz(fit.params[0]), "kHz", within(1.699, 0.057));
        }
        if let Some(mut w) = rep.csv(out, &format!("{tag}_scan.csv"))? {
            writeln!(w, "omega_tg_hz,inverse_s,posterior_density_per_hz")?;
            for (k, om) in scan.iter().enumerate() {
                let density = post.density[k.min(post.density.len() - 1)] * hz(1.0);
                writeln!(w, "{},{},{}", to_hz(*om), 1.0 / s[k], density)?;
            }
        }
    }

    let mut acquisition = Acquisition::noiseless(ModelKind::Refined);
    acquisition.control = StepControl::inference();
    let setup = ComparisonSetup {
        sensor: SensorConfig::with_field(1e-3)?,
        omega_tg_rabi: khz(1.6),
        n_p: 15,
        n_m: 1,
        t_f: 1.76e-3,
        prior: Prior::case_one(),
        grid_points: 2000,
        acquisition,
    };
    let rows = compare_bayes_lsq(&setup, 100, options.seed)?;
    let (ratio, _) = mean_ratio_in(&rows, khz(1.0), khz(2.0));
    rep.row("mean dOmega Bayes/LSQ (100 replays)", ratio, "", within(0.8, 0.1));
    if let Some(w) = rep.csv(out, "replays.csv")? {
        write_comparison_csv(&rows, w)?;
    }
    Ok(rep)
}

/// Seeded replay of the wide-detuning regime: B = 1 mT, Ω_tg = 2π×2 kHz,
/// ξ = −2π×1.5 kHz, N_m = 4, N_p = 20 over 0.25 ms.
pub fn fig_s8(options: Options, out: Option<&Path>) -> Result<Report> {
    let mut rep = Report::new(Case::FigS8, options);
    let sensor = SensorConfig::with_field(1e-3)?;
    let plan = MeasurementPlan::evenly_spaced(0.25e-3, 20, 4)?;
    let mut acq = Acquisition::noiseless(ModelKind::Refined);
    acq.control = StepControl::inference();
    let data = generate_dataset(&plan, &sensor, &SignalConfig::new(khz(2.0), -khz(1.5))?, &acq, FIG_S8_SEED)?;
    let model = ForwardModel::refined(sensor);
    let prior = wide_detuning_prior();

    let cfg = McmcConfig {
        n_mc: options.n_mc(),
        seed: options.seed,
        ..fig_s8_mcmc()
    };
    let s = metropolis_run(&data, &prior, &cfg, &model)?;
    let xi_hist = marginal_histogram(&s.pooled(Param::Xi), 30)?;
    let (m, _) = s.moments(Param::Omega);
    let interior = xi_hist.modes(0.5).into_iter().filter(|&i| i > 0 && i + 1 < xi_hist.counts.len()).count();
    rep.row("MCMC xi-marginal interior modes (dip >= 50%)", interior as f64, "", Check::Above { threshold: 1.5 });
    rep.row("MCMC Omega_est", to_khz(m), "kHz", within(1.97, 3.0 * 0.39));
    if let Some(w) = rep.csv(out, "hist_xi.csv")? {
        xi_hist.write_csv(w, to_hz(1.0))?;
    }

    let post = grid_posterior_2d(
        &data,
        &prior,
        &uniform_grid(khz(0.2), khz(5.0), 49),
        &uniform_grid(-khz(5.0), khz(5.0), 51),
        &model,
    )?;
    // Maxima on the grid boundary reflect truncation, not structure.
    let xm = post.marginal_xi();
    let interior = separated_modes(&xm.density, 0.5)
        .into_iter()
        .filter(|&i| i > 0 && i + 1 < xm.density.len())
        .count();
    rep.row("grid xi-marginal interior modes (dip >= 50%)", interior as f64, "", Check::Above { threshold: 1.5 });
    rep.row("grid Omega_est", to_khz(post.marginal_omega().moments().0), "kHz", within(1.97, 3.0 * 0.39));
    if let Some(w) = rep.csv(out, "posterior_2d.csv")? {
        post.write_csv(w)?;
    }
    Ok(rep)
}

/// Dataset seed of the wide-detuning replay.
pub const FIG_S8_SEED: u64 = 5;

/// Sampler settings for the wide-detuning regime. The ξ modes sit
/// kilohertz apart, so steps are widened to let chains cross between them.
pub fn fig_s8_mcmc() -> McmcConfig {
    McmcConfig {
        proposal_sigma_omega: khz(0.2),
        proposal_sigma_xi: khz(0.5),
        ..Default::default()
    }
}

pub fn run(case: Case, options: Options, out: Option<&Path>) -> Result<Report> {
    let mut rep = match case {
        Case::CaseI => case_one(options, out)?,
        Case::CaseIi => case_two(options, out)?,
        Case::FigS5 => fig_s5(options, out)?,
        Case::FigS7 => fig_s7(options, out)?,
        Case::FigS8 => fig_s8(options, out)?,
    };
    if let Some(dir) = out {
        let path = dir.join(format!("{}_report.json", case.name()));
        rep.files.push(path.clone());
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &rep)?;
        writeln!(w)?;
    }
    Ok(rep)
}
