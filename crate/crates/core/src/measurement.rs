//! Simulated acquisition: interrogation schedules, projective readout of
//! |D⟩ with binomial shot noise, and the dataset file format.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::{NoiseFile, SignalFile};
use crate::dynamics::{
    integration_nodes, p_d_analytic, propagate_with, propagate_with_step, ModelKind, NoisyRefined,
    RefinedModel, StateVector, StepControl,
};
use crate::error::{Error, Result};
use crate::noise::{make_trace, NoiseConfig};
use crate::physics::{SensorConfig, SignalConfig};

pub const DATASET_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    EvenlySpaced,
    RandomInWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPlan {
    times: Vec<f64>,
    n_m: u32,
    schedule: ScheduleKind,
}

impl MeasurementPlan {
    pub fn new(times: Vec<f64>, n_m: u32, schedule: ScheduleKind) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidConfig("measurement plan has no times".into()));
        }
        if !(times[0] >= 0.0) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("measurement times must be finite and >= 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("measurement times must be strictly increasing".into()));
        }
        if n_m == 0 {
            return Err(Error::InvalidConfig("n_m must be at least 1".into()));
        }
        Ok(MeasurementPlan { times, n_m, schedule })
    }

    /// t_k = t_f (k−1)/(N_p−1), k = 1..N_p.
    pub fn evenly_spaced(t_f: f64, n_p: usize, n_m: u32) -> Result<Self> {
        if n_p < 2 || !(t_f > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "evenly spaced plan needs n_p >= 2 and t_f > 0, got n_p = {n_p}, t_f = {t_f}"
            )));
        }
        let times = (0..n_p).map(|k| t_f * k as f64 / (n_p - 1) as f64).collect();
        Self::new(times, n_m, ScheduleKind::EvenlySpaced)
    }

    /// N_p times drawn uniformly in [0, t_f], sorted.
    pub fn random_in_window<R: Rng + ?Sized>(t_f: f64, n_p: usize, n_m: u32, rng: &mut R) -> Result<Self> {
        if n_p == 0 || !(t_f > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "random plan needs n_p >= 1 and t_f > 0, got n_p = {n_p}, t_f = {t_f}"
            )));
        }
        loop {
            let mut times: Vec<f64> = (0..n_p).map(|_| rng.random_range(0.0..=t_f)).collect();
            times.sort_by(f64::total_cmp);
            if times.windows(2).all(|w| w[1] > w[0]) {
                return Self::new(times, n_m, ScheduleKind::RandomInWindow);
            }
        }
    }

    /// 18 points over 2.83 ms.
    pub fn case_one(n_m: u32) -> Result<Self> {
        Self::evenly_spaced(2.83e-3, 18, n_m)
    }

    /// 20 points over 0.236 ms.
    pub fn case_two(n_m: u32) -> Result<Self> {
        Self::evenly_spaced(0.236e-3, 20, n_m)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_m(&self) -> u32 {
        self.n_m
    }

    pub fn schedule(&self) -> ScheduleKind {
        self.schedule
    }
}

/// How often a fresh noise realisation is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseGranularity {
    #[default]
    PerShot,
    PerDataset,
}

/// Where a dataset came from. Frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// "simulated" or "reference".
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_z_tesla: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_mw_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_granularity: Option<NoiseGranularity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Counts X_k of |D⟩ outcomes out of N_m shots at each t_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub schema: u32,
    pub times_s: Vec<f64>,
    pub x: Vec<u32>,
    pub n_m: u32,
    pub provenance: Provenance,
}

/// Observed populations with their shot-noise uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetView {
    pub p_s: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Dataset {
    pub fn new(times_s: Vec<f64>, x: Vec<u32>, n_m: u32, provenance: Provenance) -> Result<Self> {
        let d = Dataset {
            schema: DATASET_SCHEMA,
            times_s,
            x,
            n_m,
            provenance,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != DATASET_SCHEMA {
            return Err(Error::InvalidDataset(format!(
                "unsupported schema {} (expected {DATASET_SCHEMA})",
                self.schema
            )));
        }
        if self.times_s.len() != self.x.len() {
            return Err(Error::InvalidDataset(format!(
                "{} times but {} counts",
                self.times_s.len(),
                self.x.len()
            )));
        }
        if self.n_m == 0 {
            return Err(Error::InvalidDataset("n_m must be at least 1".into()));
        }
        if let Some(&t) = self.times_s.first() {
            if !(t >= 0.0) {
                return Err(Error::InvalidDataset(format!("first time {t} is negative")));
            }
        }
        if self.times_s.iter().any(|t| !t.is_finite()) || self.times_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDataset("times must be finite and strictly increasing".into()));
        }
        if let Some(k) = self.x.iter().position(|&x| x > self.n_m) {
            return Err(Error::InvalidDataset(format!(
                "x[{k}] = {} exceeds n_m = {}",
                self.x[k], self.n_m
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn view(&self) -> DatasetView {
        let n = self.n_m as f64;
        DatasetView {
            p_s: self.x.iter().map(|&x| x as f64 / n).collect(),
            sigma: self.x.iter().map(|&x| shot_sigma(x, self.n_m)).collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Dataset = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Time spacing, if the schedule is uniform to within 1e-9 relative.
    pub fn uniform_spacing(&self) -> Option<f64> {
        if self.times_s.len() < 2 {
            return None;
        }
        let n = self.times_s.len() - 1;
        let dt = (self.times_s[n] - self.times_s[0]) / n as f64;
        let ok = self
            .times_s
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - (self.times_s[0] + k as f64 * dt)).abs() <= 1e-9 * dt.max(self.times_s[n]));
        ok.then_some(dt)
    }
}

fn shot_sigma(x: u32, n_m: u32) -> f64 {
    let n = n_m as f64;
    let p = x as f64 / n;
    (1.0 / n).max((p * (1.0 - p)).sqrt() / n.sqrt())
}

/// σ_k = max(1/N_m, σ_list/√N_m), σ_list the standard deviation of the
/// list of N_m binary outcomes.
pub fn shot_uncertainty(x: u32, n_m: u32) -> Result<f64> {
    if n_m == 0 || x > n_m {
        return Err(Error::InvalidArgument(format!("need 0 <= x <= n_m, n_m > 0 (x = {x}, n_m = {n_m})")));
    }
    Ok(shot_sigma(x, n_m))
}

/// How data are simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    pub model: ModelKind,
    pub noise: Option<NoiseConfig>,
    pub granularity: NoiseGranularity,
    pub control: StepControl,
}

impl Acquisition {
    pub fn noiseless(model: ModelKind) -> Self {
        Acquisition {
            model,
            noise: None,
            granularity: NoiseGranularity::PerShot,
            control: StepControl::default(),
        }
    }

    pub fn noisy(noise: NoiseConfig, granularity: NoiseGranularity) -> Self {
        Acquisition {
            model: ModelKind::Refined,
            noise: Some(noise),
            granularity,
            control: StepControl::default(),
        }
    }
}

/// Refined-model P_D at `times` under one fresh noise realisation sampled on
/// the integrator's nodes.
pub fn noisy_p_d<R: Rng + ?Sized>(
    model: &RefinedModel,
    noise: &NoiseConfig,
    times: &[f64],
    control: StepControl,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let h = control.max_step(model);
    let nodes = integration_nodes(times, h)?;
    let trace = make_trace(noise, &nodes, rng)?;
    let source = NoisyRefined {
        model: *model,
        times: &trace.times,
        mu: &trace.mu,
        eps: &trace.eps,
    };
    Ok(propagate_with_step(&source, StateVector::dark(), times, h)?.p_d)
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

fn draw_binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> Result<u32> {
    let b = Binomial::new(n as u64, clamp_probability(p))
        .map_err(|e| Error::InvalidArgument(format!("binomial({n}, {p}): {e}")))?;
    Ok(b.sample(rng) as u32)
}

/// Simulate X_k ~ Binomial(N_m, P_D(t_k)) for every point of `plan`.
pub fn generate_dataset(
    plan: &MeasurementPlan,
    sensor: &SensorConfig,
    signal: &SignalConfig,
    acq: &Acquisition,
    seed: u64,
) -> Result<Dataset> {
    sensor.validate()?;
    signal.validate()?;
    let times = plan.times();
    let n_m = plan.n_m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let x = match (acq.model, &acq.noise) {
        (ModelKind::Ideal, Some(_)) => {
            return Err(Error::InvalidConfig("the ideal model cannot be combined with noise".into()));
        }
        (ModelKind::Ideal, None) => times
            .iter()
            .map(|&t| draw_binomial(n_m, p_d_analytic(t, signal.omega_tg_rabi), &mut rng))
            .collect::<Result<Vec<_>>>()?,
        (ModelKind::Refined, None) => {
            let model = RefinedModel::new(sensor, signal);
            let p = propagate_with(&model, StateVector::dark(), times, acq.control)?.p_d;
            p.iter().map(|&p| draw_binomial(n_m, p, &mut rng)).collect::<Result<Vec<_>>>()?
        }
        (ModelKind::Refined, Some(noise)) => {
            noise.validate()?;
            let model = RefinedModel::new(sensor, signal);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
            noise_rng.set_stream(noise.seed.wrapping_add(1));
            match acq.granularity {
                NoiseGranularity::PerDataset => {
                    let p = noisy_p_d(&model, noise, times, acq.control, &mut noise_rng)?;
                    p.iter().map(|&p| draw_binomial(n_m, p, &mut rng)).collect::<Result<Vec<_>>>()?
                }
                NoiseGranularity::PerShot => {
                    let mut x = vec![0u32; times.len()];
                    for _ in 0..n_m {
                        let p = noisy_p_d(&model, noise, times, acq.control, &mut noise_rng)?;
                        for (xk, pk) in x.iter_mut().zip(&p) {
                            *xk += rng.random_bool(clamp_probability(*pk)) as u32;
                        }
                    }
                    x
                }
            }
        }
    };

    let provenance = Provenance {
        source: "simulated".into(),
        seed: Some(seed),
        model: Some(acq.model),
        b_z_tesla: Some(sensor.b_z),
        omega_mw_hz: Some(crate::units::to_hz(sensor.omega_mw)),
        signal: Some(signal.into()),
        noise: acq.noise.as_ref().map(Into::into),
        noise_granularity: acq.noise.map(|_| acq.granularity),
        schedule: Some(plan.schedule()),
        steps_per_period: (acq.model == ModelKind::Refined).then_some(acq.control.steps_per_period),
        note: None,
    };
    Dataset::new(times.to_vec(), x, n_m, provenance)
}
