//! Run configuration and the drivers behind each command-line mode.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::baselines::{fft_estimate, lsq_fit_cos2, lsq_fit_refined, LsqOptions, Weighting};
use crate::config::{IntegratorFile, McmcFile, NoiseFile, PlanFile, PriorFile, SensorFile, SignalFile};
use crate::dynamics::{propagate_with, ModelKind, RefinedModel, StateVector};
use crate::error::{Error, Result};
use crate::inference::{
    grid_posterior, grid_posterior_2d, metropolis_run, uniform_grid, ForwardModel, ParamPrior, ParameterPoint, Prior,
};
use crate::measurement::{generate_dataset, noisy_p_d, Acquisition, Dataset, NoiseGranularity};
use crate::units::{hz, khz, to_hz};

/// Build identity baked in at compile time.
pub const BUILD: &str = env!("QMAG_BUILD");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    InferGrid,
    InferMcmc,
    BaselineFft,
    BaselineLsq,
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CaseI,
    CaseIi,
}

/// Grid for `infer-grid`. Without `xi_points` the grid is one-dimensional
/// at ξ = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridFile {
    pub omega_lo_hz: f64,
    pub omega_hi_hz: f64,
    pub omega_points: usize,
    pub xi_lo_hz: f64,
    pub xi_hi_hz: f64,
    pub xi_points: usize,
}

impl Default for GridFile {
    fn default() -> Self {
        GridFile {
            omega_lo_hz: 0.0,
            omega_hi_hz: 4200.0,
            omega_points: 2000,
            xi_lo_hz: 0.0,
            xi_hi_hz: 0.0,
            xi_points: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsqFile {
    pub init_omega_hz: f64,
    pub init_xi_hz: f64,
    pub weighting: Weighting,
    pub max_iterations: usize,
}

impl Default for LsqFile {
    fn default() -> Self {
        LsqFile {
            init_omega_hz: 1000.0,
            init_xi_hz: 0.0,
            weighting: Weighting::Shot,
            max_iterations: LsqOptions::default().max_iterations,
        }
    }
}

/// Everything a run needs. Unknown keys are rejected; every field has a
/// default so a config file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub sensor: SensorFile,
    pub signal: SignalFile,
    /// Absent: noiseless acquisition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseFile>,
    pub noise_granularity: NoiseGranularity,
    /// Model that generates data.
    pub model: ModelKind,
    /// Model the estimators assume.
    pub inference_model: ModelKind,
    pub plan: PlanFile,
    pub prior: PriorFile,
    pub mcmc: McmcFile,
    pub integrator: IntegratorFile,
    pub grid: GridFile,
    pub lsq: LsqFile,
    /// Dataset for the inference and baseline modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Points in the optional trajectory CSV written by `simulate`; 0 skips it.
    pub trajectory_points: usize,
    /// Noise realisations averaged in the trajectory CSV.
    pub trajectory_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::CaseI)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let base = |b_z: f64, signal: SignalFile, plan: PlanFile, prior: &Prior, inference_model| RunConfig {
            mode: Mode::Simulate,
            seed: 0,
            sensor: SensorFile {
                b_z_tesla: b_z,
                omega_mw_hz: 37.27e3,
            },
            signal,
            noise: None,
            noise_granularity: NoiseGranularity::PerShot,
            model: ModelKind::Refined,
            inference_model,
            plan,
            prior: prior.into(),
            mcmc: McmcFile::default(),
            integrator: IntegratorFile::default(),
            grid: GridFile::default(),
            lsq: LsqFile::default(),
            data: None,
            trajectory_points: 0,
            trajectory_repeats: 100,
        };
        match p {
            Preset::CaseI => base(
                1e-3,
                SignalFile {
                    omega_tg_hz: 1000.0,
                    xi_hz: 0.0,
                    phi_tg_rad: 0.0,
                },
                PlanFile {
                    times_s: None,
                    t_f_s: 2.83e-3,
                    n_p: 18,
                    n_m: 4,
                    schedule: Default::default(),
                },
                &Prior::case_one(),
                ModelKind::Ideal,
            ),
            Preset::CaseIi => {
                let mut c = base(
                    0.5e-3,
                    SignalFile {
                        omega_tg_hz: 12e3,
                        xi_hz: 100.0,
                        phi_tg_rad: 0.0,
                    },
                    PlanFile {
                        times_s: None,
                        t_f_s: 0.236e-3,
                        n_p: 20,
                        n_m: 20,
                        schedule: Default::default(),
                    },
                    &Prior::case_two(),
                    ModelKind::Refined,
                );
                c.lsq.init_omega_hz = 15e3;
                c.lsq.init_xi_hz = 100.0;
                c.grid = GridFile {
                    omega_lo_hz: 8e3,
                    omega_hi_hz: 16e3,
                    omega_points: 81,
                    xi_lo_hz: -1e3,
                    xi_hi_hz: 1e3,
                    xi_points: 41,
                };
                c
            }
        }
    }

    /// Parses `s` as overrides on the Case I preset.
    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_over(Preset::CaseI, s)
    }

    /// Parses `s` as overrides on `base`: objects merge key by key, any
    /// other value replaces the preset's.
    pub fn from_json_over(base: Preset, s: &str) -> Result<Self> {
        let mut value = serde_json::to_value(Self::preset(base))?;
        merge(&mut value, serde_json::from_str(s)?);
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn forward_model(&self) -> Result<ForwardModel> {
        Ok(match self.inference_model {
            ModelKind::Ideal => ForwardModel::Ideal,
            ModelKind::Refined => ForwardModel::Refined {
                sensor: self.sensor.to_domain()?,
                control: self.integrator.inference()?,
            },
        })
    }

    pub fn acquisition(&self) -> Result<Acquisition> {
        let mut acq = match &self.noise {
            Some(n) => Acquisition::noisy(n.to_domain()?, self.noise_granularity),
            None => Acquisition::noiseless(self.model),
        };
        acq.model = self.model;
        acq.control = self.integrator.simulate()?;
        Ok(acq)
    }

    /// The dataset named by `data`.
    pub fn dataset(&self) -> Result<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("this mode needs a dataset (`data` or --data)".into()))?;
        Dataset::load(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.to_domain()?;
        self.signal.to_domain()?;
        if let Some(n) = &self.noise {
            n.to_domain()?;
        }
        self.plan.to_domain(self.seed)?;
        self.prior.to_domain()?;
        self.mcmc.to_domain(self.seed)?;
        self.integrator.simulate()?;
        self.integrator.inference()?;
        self.acquisition()?;
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    use serde_json::Value::Object;
    match (base, over) {
        // A tagged value whose tag changes is a different variant: replace it.
        (Object(b), Object(o)) if o.get("kind").is_none_or(|k| Some(k) == b.get("kind")) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Summary printed and saved by a driver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub build: &'static str,
    pub config_hash: String,
    pub results: serde_json::Value,
    pub files: Vec<PathBuf>,
}

fn create(out: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    files.push(path.clone());
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<serde_json::Value> {
    let sensor = cfg.sensor.to_domain()?;
    let signal = cfg.signal.to_domain()?;
    let plan = cfg.plan.to_domain(cfg.seed)?;
    let acq = cfg.acquisition()?;
    let data = generate_dataset(&plan, &sensor, &signal, &acq, cfg.seed)?;
    let path = out.join("dataset.json");
    fs::create_dir_all(out)?;
    data.save(&path)?;
    files.push(path);

    if cfg.trajectory_points >= 2 {
        let t_end = *plan.times().last().expect("plan is non-empty");
        let times = uniform_grid(0.0, t_end, cfg.trajectory_points);
        let model = RefinedModel::new(&sensor, &signal);
        let clean = propagate_with(&model, StateVector::dark(), &times, acq.control)?.p_d;
        let noisy = match &acq.noise {
            Some(noise) => {
                let mut rng = noise.rng();
                let mut avg = vec![0.0; times.len()];
                let reps = cfg.trajectory_repeats.max(1);
                for _ in 0..reps {
                    for (a, p) in avg.iter_mut().zip(noisy_p_d(&model, noise, &times, acq.control, &mut rng)?) {
                        *a += p / reps as f64;
                    }
                }
                Some(avg)
            }
            None => None,
        };
        let mut w = create(out, "trajectory.csv", files)?;
        writeln!(w, "t_s,p_d_noiseless,p_d_noisy_mean")?;
        for (k, t) in times.iter().enumerate() {
            let n = noisy.as_ref().map_or(String::new(), |v| v[k].to_string());
            writeln!(w, "{t},{},{n}", clean[k])?;
        }
    }
    Ok(serde_json::json!({ "x": data.x, "n_m": data.n_m }))
}

fn infer_grid(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<serde_json::Value> {
    let data = cfg.dataset()?;
    let prior = cfg.prior.to_domain()?;
    let model = cfg.forward_model()?;
    let g = &cfg.grid;
    let omega = uniform_grid(hz(g.omega_lo_hz), hz(g.omega_hi_hz), g.omega_points);
    if g.xi_points >= 2 {
        let xi = uniform_grid(hz(g.xi_lo_hz), hz(g.xi_hi_hz), g.xi_points);
        let post = grid_posterior_2d(&data, &prior, &omega, &xi, &model)?;
        post.write_csv(create(out, "posterior_2d.csv", files)?)?;
        let (om, xm) = (post.marginal_omega(), post.marginal_xi());
        om.write_csv(create(out, "marginal_omega.csv", files)?)?;
        xm.write_csv(create(out, "marginal_xi.csv", files)?)?;
        let (m, s) = om.moments();
        let (xmean, xs) = xm.moments();
        return Ok(serde_json::json!({
            "omega_tg_hz": to_hz(m), "omega_tg_sd_hz": to_hz(s),
            "xi_hz": to_hz(xmean), "xi_sd_hz": to_hz(xs),
        }));
    }
    let post = grid_posterior(&data, &prior, &omega, &model)?;
    post.write_csv(create(out, "posterior.csv", files)?)?;
    let (m, s) = post.moments();
    Ok(serde_json::json!({
        "omega_tg_hz": to_hz(m), "omega_tg_sd_hz": to_hz(s), "argmax_hz": to_hz(post.argmax()),
    }))
}

fn infer_mcmc(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<serde_json::Value> {
    let data = cfg.dataset()?;
    let prior = cfg.prior.to_domain()?;
    let mcmc = cfg.mcmc.to_domain(cfg.seed)?;
    let samples = metropolis_run(&data, &prior, &mcmc, &cfg.forward_model()?)?;
    for (c, chain) in samples.chains.iter().enumerate() {
        chain.write_csv(create(out, &format!("chain_{c}.csv"), files)?)?;
    }
    let summary = samples.summary(40)?;
    summary.omega_hist.write_csv(create(out, "hist_omega.csv", files)?, to_hz(1.0))?;
    if let Some(h) = &summary.xi_hist {
        h.write_csv(create(out, "hist_xi.csv", files)?, to_hz(1.0))?;
    }
    Ok(serde_json::json!({
        "omega_tg_hz": to_hz(summary.omega.0), "omega_tg_sd_hz": to_hz(summary.omega.1),
        "xi_hz": summary.xi.map(|x| to_hz(x.0)), "xi_sd_hz": summary.xi.map(|x| to_hz(x.1)),
        "acceptance": samples.acceptance(), "split_r_hat": samples.max_r_hat()?,
    }))
}

fn baseline_fft(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<serde_json::Value> {
    let f = fft_estimate(&cfg.dataset()?)?;
    f.spectrum.write_csv(create(out, "spectrum.csv", files)?)?;
    Ok(serde_json::json!({
        "omega_tg_hz": to_hz(f.omega_tg_rabi), "uncertainty_hz": to_hz(f.uncertainty),
        "omega_max_hz": to_hz(f.omega_max), "peak_bin": f.peak_bin,
    }))
}

fn baseline_lsq(cfg: &RunConfig, out: &Path, files: &mut Vec<PathBuf>) -> Result<serde_json::Value> {
    let data = cfg.dataset()?;
    let opts = LsqOptions {
        weighting: cfg.lsq.weighting,
        max_iterations: cfg.lsq.max_iterations,
        ..Default::default()
    };
    let fit = match cfg.inference_model {
        ModelKind::Ideal => lsq_fit_cos2(&data, hz(cfg.lsq.init_omega_hz), &opts)?,
        ModelKind::Refined => lsq_fit_refined(
            &data,
            ParameterPoint::new(hz(cfg.lsq.init_omega_hz), hz(cfg.lsq.init_xi_hz)),
            &cfg.forward_model()?,
            &opts,
        )?,
    };
    let mut w = create(out, "fit.csv", files)?;
    writeln!(w, "param,init_hz,value_hz,ci_hz")?;
    for (k, name) in ["omega_tg", "xi"].iter().enumerate().take(fit.params.len()) {
        writeln!(w, "{name},{},{},{}", to_hz(fit.init[k]), to_hz(fit.params[k]), to_hz(fit.ci[k]))?;
    }
    Ok(serde_json::json!({
        "params_hz": fit.params.iter().map(|v| to_hz(*v)).collect::<Vec<_>>(),
        "ci_hz": fit.ci.iter().map(|v| to_hz(*v)).collect::<Vec<_>>(),
        "residual_sum": fit.residual_sum, "converged": fit.converged, "iterations": fit.iterations,
    }))
}

/// Runs one non-reproduce mode, writing its files under `out` plus a
/// `summary.json`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let mut files = Vec::new();
    let results = match cfg.mode {
        Mode::Simulate => simulate(cfg, out, &mut files)?,
        Mode::InferGrid => infer_grid(cfg, out, &mut files)?,
        Mode::InferMcmc => infer_mcmc(cfg, out, &mut files)?,
        Mode::BaselineFft => baseline_fft(cfg, out, &mut files)?,
        Mode::BaselineLsq => baseline_lsq(cfg, out, &mut files)?,
        Mode::Reproduce => return Err(Error::InvalidConfig("reproduce is driven by `reproduce::run`".into())),
    };
    let summary = RunSummary {
        mode: cfg.mode,
        build: BUILD,
        config_hash: cfg.hash()?,
        results,
        files,
    };
    let mut w = create(out, "summary.json", &mut Vec::new())?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    Ok(summary)
}

/// Prior for the bimodal regime: flat Ω_tg on [0, 2π×50 kHz],
/// ξ ~ N(0, (2π×2 kHz)²).
pub fn wide_detuning_prior() -> Prior {
    Prior {
        omega: ParamPrior::Flat { lo: 0.0, hi: khz(50.0) },
        xi: Some(ParamPrior::Gaussian {
            mean: 0.0,
            sigma: khz(2.0),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::CaseI, Preset::CaseIi] {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        }
    }

    #[test]
    fn strict_parse() {
        assert!(RunConfig::from_json(r#"{"mode": "infer-grid", "seed": 3}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"mode": "infer-grid", "sead": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": {"points": 3}}"#).is_err());
        let c = RunConfig::from_json_over(Preset::CaseIi, r#"{"plan": {"n_m": 7}}"#).unwrap();
        assert_eq!((c.plan.n_m, c.plan.n_p), (7, 20));
        let c = RunConfig::from_json(r#"{"prior": {"omega": {"kind": "gaussian", "mean_hz": 1e3, "sigma_hz": 50}}}"#)
            .unwrap();
        assert_eq!(c.prior.omega.to_domain().unwrap(), ParamPrior::gaussian(khz(1.0), hz(50.0)).unwrap());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
