//! Rotating-frame Hamiltonians of the dressed-state sensor and a fixed-step
//! RK4 Schrödinger propagator.
//!
//! States live in the dressed basis `{|u⟩, |d⟩, |D⟩, |0́⟩}`; see [`Level`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::ops::{Add, Index, IndexMut, Mul};

use crate::error::{Error, Result};
use crate::physics::{SensorConfig, SignalConfig};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Tolerance on |‖ψ‖ − 1| before a recorded state is renormalised.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Default integrator steps per period of the fastest rotation. At 50 the
/// RK4 norm drift over a few ms at 1 mT is ~1e-9; 80 keeps it near 3e-10.
pub const STEPS_PER_PERIOD: f64 = 80.0;
/// Steps per period for likelihood evaluations; P_D agrees with a
/// 200-step reference to ~4e-8.
pub const INFERENCE_STEPS_PER_PERIOD: f64 = 20.0;
/// Upper bound on ‖H‖·h for slowly varying Hamiltonians.
pub const MAX_PHASE_PER_STEP: f64 = 0.02;
const MAX_STEPS: usize = 2_000_000_000;
/// RK4 steps whose Hamiltonians are generated in one batch.
const CHUNK: usize = 128;

/// Forward model used to predict P_D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// cos²(Ω_tg t/√8)
    Ideal,
    /// Numerical propagation of the refined Hamiltonian.
    #[default]
    Refined,
}

/// Index of each dressed basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Level {
    Up = 0,
    Down = 1,
    Dark = 2,
    Clock = 3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix4(pub [[Complex64; 4]; 4]);

impl Matrix4 {
    pub const fn zeros() -> Self {
        Matrix4([[ZERO; 4]; 4])
    }

    /// `|row⟩⟨col|`
    pub fn ket_bra(row: Level, col: Level) -> Self {
        let mut m = Self::zeros();
        m[(row as usize, col as usize)] = Complex64::new(1.0, 0.0);
        m
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros();
        for r in 0..4 {
            for c in 0..4 {
                out.0[c][r] = self.0[r][c].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|z| *z *= s);
        out
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        let scale = self.norm().max(f64::MIN_POSITIVE);
        (0..4).all(|r| (0..4).all(|c| (self.0[r][c] - self.0[c][r].conj()).norm() <= rel_tol * scale))
    }

    #[inline(always)]
    fn apply(&self, v: &[Complex64; 4]) -> [Complex64; 4] {
        let m = &self.0;
        let mut out = [ZERO; 4];
        for (r, o) in out.iter_mut().enumerate() {
            *o = m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2] + m[r][3] * v[3];
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix4 {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.0[r][c]
    }
}

impl IndexMut<(usize, usize)> for Matrix4 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.0[r][c]
    }
}

impl Add for Matrix4 {
    type Output = Matrix4;
    fn add(mut self, rhs: Matrix4) -> Matrix4 {
        for r in 0..4 {
            for c in 0..4 {
                self.0[r][c] += rhs.0[r][c];
            }
        }
        self
    }
}

impl Mul<f64> for Matrix4 {
    type Output = Matrix4;
    fn mul(self, rhs: f64) -> Matrix4 {
        self.scale(Complex64::new(rhs, 0.0))
    }
}

/// Normalised amplitudes in the dressed basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [Complex64; 4]);

impl StateVector {
    pub fn basis(level: Level) -> Self {
        let mut a = [ZERO; 4];
        a[level as usize] = Complex64::new(1.0, 0.0);
        StateVector(a)
    }

    /// The dark state |D⟩, the sensor's initial state.
    pub fn dark() -> Self {
        Self::basis(Level::Dark)
    }

    pub fn new(amplitudes: [Complex64; 4]) -> Result<Self> {
        let n = Self(amplitudes).norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument("state vector has zero or non-finite norm".into()));
        }
        let mut s = Self(amplitudes);
        s.normalize();
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        self.0.iter_mut().for_each(|z| *z /= n);
    }

    pub fn population(&self, level: Level) -> f64 {
        self.0[level as usize].norm_sqr()
    }
}

/// A Hamiltonian evaluated at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianSample {
    pub matrix: Matrix4,
    pub time: f64,
}

/// Anything that can hand the integrator H(t).
pub trait HamiltonianSource {
    fn hamiltonian(&self, t: f64) -> Matrix4;

    /// Fastest explicit rotation (rad/s); sets the integrator step.
    fn max_frequency(&self) -> f64;

    /// Upper bound on ‖H(t)‖ (rad/s).
    fn norm_bound(&self) -> f64;

    /// Fills `out[j]` with H(t0 + (j+1)·dt). Sources with cheap phase
    /// recurrences override this.
    fn fill_uniform(&self, t0: f64, dt: f64, out: &mut [Matrix4]) {
        for (j, m) in out.iter_mut().enumerate() {
            *m = self.hamiltonian(t0 + (j + 1) as f64 * dt);
        }
    }

    fn sample(&self, t: f64) -> HamiltonianSample {
        HamiltonianSample {
            matrix: self.hamiltonian(t),
            time: t,
        }
    }
}

/// P_D(t) = cos²(πt/t_R) with t_R = 2π√2/Ω_tg.
pub fn p_d_analytic(t: f64, omega_tg_rabi: f64) -> f64 {
    let c = (omega_tg_rabi * t / (2.0 * SQRT_2)).cos();
    c * c
}

/// Rabi period t_R = 2π√2/Ω_tg of the ideal model.
pub fn rabi_period(omega_tg_rabi: f64) -> f64 {
    2.0 * PI * SQRT_2 / omega_tg_rabi
}

/// Two-level Rabi coupling between |D⟩ and |0́⟩ left after all rotating-wave
/// approximations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealHamiltonian {
    pub omega_tg_rabi: f64,
}

pub fn hamiltonian_ideal(omega_tg_rabi: f64) -> HamiltonianSample {
    IdealHamiltonian { omega_tg_rabi }.sample(0.0)
}

impl HamiltonianSource for IdealHamiltonian {
    fn hamiltonian(&self, _t: f64) -> Matrix4 {
        let g = Complex64::new(-self.omega_tg_rabi / (2.0 * SQRT_2), 0.0);
        let mut m = Matrix4::zeros();
        m[(Level::Dark as usize, Level::Clock as usize)] = g;
        m[(Level::Clock as usize, Level::Dark as usize)] = g;
        m
    }

    fn max_frequency(&self) -> f64 {
        0.0
    }

    fn norm_bound(&self) -> f64 {
        self.omega_tg_rabi / 2.0
    }
}

// Row vectors of the signal couplings into |0́⟩:
// column |·⟩⟨0́| for the e^{-iξt} family and row |0́⟩⟨·| for the |−1⟩ family.
const SIGNAL_COLUMN: [f64; 3] = [0.25, 0.25, -0.5 * FRAC_1_SQRT_2];
const SIGNAL_ROW: [f64; 3] = [0.25, 0.25, 0.5 * FRAC_1_SQRT_2];

/// Instantaneous noise values entering the refined Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSample {
    /// Field fluctuation μ(t) (rad/s).
    pub mu: f64,
    /// Relative drive-amplitude fluctuation ε(t).
    pub eps: f64,
}

/// Rotating-frame Hamiltonian beyond the rotating-wave approximations: the
/// two dressing drives with their counter-rotating γₑB_z sidebands, plus the
/// four frequency components of the target signal on the |1⟩↔|0́⟩ and
/// |0́⟩↔|−1⟩ transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedModel {
    omega_mw: f64,
    omega_tg: f64,
    /// γₑB_z
    larmor: f64,
    /// γₑ²B_z²/(2A), splitting between the two clock-state transitions.
    quadratic: f64,
    xi: f64,
    /// e^{iφ_tg}
    phase: Complex64,
}

impl RefinedModel {
    pub fn new(sensor: &SensorConfig, signal: &SignalConfig) -> Self {
        let ge = sensor.constants.gamma_e;
        let b = sensor.b_z;
        RefinedModel {
            omega_mw: sensor.omega_mw,
            omega_tg: signal.omega_tg_rabi,
            larmor: ge * b,
            quadratic: ge * ge * b * b / (2.0 * sensor.constants.hyperfine),
            xi: signal.xi,
            phase: Complex64::from_polar(1.0, signal.phi_tg),
        }
    }

    /// Same sensor, different signal parameters.
    pub fn with_signal(&self, omega_tg_rabi: f64, xi: f64) -> Self {
        RefinedModel {
            omega_tg: omega_tg_rabi,
            xi,
            ..*self
        }
    }

    pub fn hamiltonian_with_noise(&self, t: f64, noise: NoiseSample) -> Matrix4 {
        let (s_b, c_b) = (self.larmor * t).sin_cos();
        let p_b = Complex64::new(c_b, s_b);
        let p_xi = Complex64::from_polar(1.0, self.xi * t);
        let p_q = Complex64::from_polar(1.0, self.quadratic * t);
        self.assemble(c_b, s_b, p_b, p_xi, p_q, noise)
    }

    #[inline(always)]
    fn assemble(
        &self,
        cos_b: f64,
        sin_b: f64,
        p_b: Complex64,
        p_xi: Complex64,
        p_q: Complex64,
        noise: NoiseSample,
    ) -> Matrix4 {
        let w = self.omega_mw * (1.0 + noise.eps);
        let mut m = Matrix4::zeros();
        let diag = w * FRAC_1_SQRT_2 * (1.0 - cos_b);
        m.0[0][0] = Complex64::new(diag, 0.0);
        m.0[1][1] = Complex64::new(-diag, 0.0);
        let mu = -noise.mu * FRAC_1_SQRT_2;
        let side = 0.5 * w * sin_b;
        m.0[0][2] = Complex64::new(mu, -side);
        m.0[2][0] = Complex64::new(mu, side);
        m.0[1][2] = Complex64::new(mu, side);
        m.0[2][1] = Complex64::new(mu, -side);

        // Coefficients of |v⟩⟨0́| (e^{-iξt} and the 2(ω₁−ω₀́) sideband) and of
        // |0́⟩⟨w| (the ω₁−ω₋₁ sideband and the slow quadratic-shift term).
        let e_plus = self.phase;
        let e_minus = self.phase.conj();
        let c_col = self.omega_tg * (e_minus * p_xi.conj() + e_plus * p_b * p_q.conj() * p_xi);
        let c_row = self.omega_tg * (e_plus * p_b * p_xi + e_minus * p_q * p_xi.conj());
        let c_row_conj = c_row.conj();
        for r in 0..3 {
            let z = c_col * SIGNAL_COLUMN[r] + c_row_conj * SIGNAL_ROW[r];
            m.0[r][3] = z;
            m.0[3][r] = z.conj();
        }
        m
    }
}

impl HamiltonianSource for RefinedModel {
    fn hamiltonian(&self, t: f64) -> Matrix4 {
        self.hamiltonian_with_noise(t, NoiseSample::default())
    }

    fn fill_uniform(&self, t0: f64, dt: f64, out: &mut [Matrix4]) {
        // Phasors are advanced by multiplication; chunks are short enough
        // (CHUNK nodes) that the accumulated rounding stays at ~1e-14.
        let t1 = t0 + dt;
        let mut p_b = Complex64::from_polar(1.0, self.larmor * t1);
        let mut p_xi = Complex64::from_polar(1.0, self.xi * t1);
        let mut p_q = Complex64::from_polar(1.0, self.quadratic * t1);
        let step_b = Complex64::from_polar(1.0, self.larmor * dt);
        let step_xi = Complex64::from_polar(1.0, self.xi * dt);
        let step_q = Complex64::from_polar(1.0, self.quadratic * dt);
        for m in out.iter_mut() {
            *m = self.assemble(p_b.re, p_b.im, p_b, p_xi, p_q, NoiseSample::default());
            p_b *= step_b;
            p_xi *= step_xi;
            p_q *= step_q;
        }
    }

    fn max_frequency(&self) -> f64 {
        self.larmor.abs() + self.xi.abs()
    }

    fn norm_bound(&self) -> f64 {
        2.0 * self.omega_mw + 2.0 * self.omega_tg
    }
}

/// Refined Hamiltonian at one instant with explicit noise values.
pub fn hamiltonian_refined(
    t: f64,
    sensor: &SensorConfig,
    signal: &SignalConfig,
    mu_t: f64,
    eps_t: f64,
) -> HamiltonianSample {
    let model = RefinedModel::new(sensor, signal);
    HamiltonianSample {
        matrix: model.hamiltonian_with_noise(t, NoiseSample { mu: mu_t, eps: eps_t }),
        time: t,
    }
}

/// Refined model driven by a pre-sampled noise record. The record must
/// contain every node of [`integration_nodes`] for the same sample times.
pub struct NoisyRefined<'a> {
    pub model: RefinedModel,
    pub times: &'a [f64],
    pub mu: &'a [f64],
    pub eps: &'a [f64],
}

impl NoisyRefined<'_> {
    /// Index of the record node closest to `t`.
    fn node(&self, t: f64) -> usize {
        let i = self.times.partition_point(|&x| x < t);
        if i == 0 {
            0
        } else if i == self.times.len() || t - self.times[i - 1] < self.times[i] - t {
            i - 1
        } else {
            i
        }
    }

    fn noise_at(&self, i: usize) -> NoiseSample {
        NoiseSample {
            mu: self.mu[i],
            eps: self.eps[i],
        }
    }
}

impl HamiltonianSource for NoisyRefined<'_> {
    fn hamiltonian(&self, t: f64) -> Matrix4 {
        self.model.hamiltonian_with_noise(t, self.noise_at(self.node(t)))
    }

    fn fill_uniform(&self, t0: f64, dt: f64, out: &mut [Matrix4]) {
        // The noiseless batch holds only drive terms in the u/d/D block, so
        // ε rescales it and μ adds to the real part of the D couplings.
        self.model.fill_uniform(t0, dt, out);
        let mut i = self.node(t0 + dt);
        for (j, m) in out.iter_mut().enumerate() {
            let t = t0 + (j + 1) as f64 * dt;
            while i + 1 < self.times.len() && self.times[i + 1] - t < t - self.times[i] {
                i += 1;
            }
            let n = self.noise_at(i);
            let scale = 1.0 + n.eps;
            let mu = -n.mu * FRAC_1_SQRT_2;
            for r in 0..3 {
                for c in 0..3 {
                    m.0[r][c] *= scale;
                }
            }
            for (r, c) in [(0, 2), (2, 0), (1, 2), (2, 1)] {
                m.0[r][c].re += mu;
            }
        }
    }

    fn max_frequency(&self) -> f64 {
        self.model.max_frequency()
    }

    fn norm_bound(&self) -> f64 {
        let mu_max = self.mu.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let eps_max = self.eps.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        self.model.norm_bound() * (1.0 + eps_max) + 2.0 * mu_max
    }
}

/// Step-size rule for the fixed-step integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub steps_per_period: f64,
    pub max_phase_per_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            steps_per_period: STEPS_PER_PERIOD,
            max_phase_per_step: MAX_PHASE_PER_STEP,
        }
    }
}

impl StepControl {
    pub fn max_step<S: HamiltonianSource + ?Sized>(&self, source: &S) -> f64 {
        let by_freq = if source.max_frequency() > 0.0 {
            2.0 * PI / (self.steps_per_period * source.max_frequency())
        } else {
            f64::INFINITY
        };
        let by_norm = if source.norm_bound() > 0.0 {
            self.max_phase_per_step / source.norm_bound()
        } else {
            f64::INFINITY
        };
        by_freq.min(by_norm)
    }

    /// Coarser rule used inside likelihoods.
    pub fn inference() -> Self {
        StepControl {
            steps_per_period: INFERENCE_STEPS_PER_PERIOD,
            ..Default::default()
        }
    }

    /// Halve the step.
    pub fn refined(&self) -> Self {
        StepControl {
            steps_per_period: 2.0 * self.steps_per_period,
            max_phase_per_step: 0.5 * self.max_phase_per_step,
        }
    }
}

/// Number of equal RK4 steps used on an interval of length `span`.
fn steps_for(span: f64, h_max: f64) -> usize {
    if span <= 0.0 {
        0
    } else if h_max.is_infinite() {
        1
    } else {
        (span / h_max).ceil().max(1.0) as usize
    }
}

fn check_schedule(sample_times: &[f64]) -> Result<()> {
    if let Some(&first) = sample_times.first() {
        if !(first >= 0.0 && first.is_finite()) {
            return Err(Error::InvalidArgument(format!("first sample time {first} must be >= 0")));
        }
    }
    if sample_times.windows(2).any(|w| !(w[1] >= w[0]) || !w[1].is_finite()) {
        return Err(Error::InvalidArgument("sample times must be finite and ascending".into()));
    }
    Ok(())
}

/// Every time at which the integrator evaluates H: step boundaries and
/// midpoints, starting at 0. Noise records must be sampled on these nodes.
pub fn integration_nodes(sample_times: &[f64], h_max: f64) -> Result<Vec<f64>> {
    check_schedule(sample_times)?;
    let mut nodes = vec![0.0];
    let mut t0 = 0.0;
    for &t1 in sample_times {
        let n = steps_for(t1 - t0, h_max);
        let h = (t1 - t0) / n.max(1) as f64;
        for j in 0..n {
            let a = t0 + j as f64 * h;
            nodes.push(a + 0.5 * h);
            nodes.push(if j + 1 == n { t1 } else { a + h });
        }
        t0 = t1;
    }
    Ok(nodes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub p_d: Vec<f64>,
    pub final_state: StateVector,
    /// Recorded intervals whose norm drift exceeded [`NORM_TOLERANCE`].
    pub norm_corrections: usize,
    /// Largest |‖ψ‖ − 1| seen at a sample time, before renormalisation.
    pub max_norm_drift: f64,
}

#[inline(always)]
fn derivative(h: &Matrix4, psi: &[Complex64; 4]) -> [Complex64; 4] {
    let mut d = h.apply(psi);
    d.iter_mut().for_each(|z| *z = Complex64::new(z.im, -z.re)); // −i·z
    d
}

#[inline(always)]
fn axpy(psi: &[Complex64; 4], k: &[Complex64; 4], a: f64) -> [Complex64; 4] {
    [psi[0] + k[0] * a, psi[1] + k[1] * a, psi[2] + k[2] * a, psi[3] + k[3] * a]
}

/// Integrates i dψ/dt = H(t)ψ from t = 0, recording P_D at each sample time.
pub fn propagate<S: HamiltonianSource + ?Sized>(
    source: &S,
    psi0: StateVector,
    sample_times: &[f64],
) -> Result<PropagationResult> {
    propagate_with(source, psi0, sample_times, StepControl::default())
}

pub fn propagate_with<S: HamiltonianSource + ?Sized>(
    source: &S,
    psi0: StateVector,
    sample_times: &[f64],
    control: StepControl,
) -> Result<PropagationResult> {
    propagate_with_step(source, psi0, sample_times, control.max_step(source))
}

/// Propagate with an explicit maximum step, e.g. one shared with a noise
/// record built by [`integration_nodes`].
pub fn propagate_with_step<S: HamiltonianSource + ?Sized>(
    source: &S,
    psi0: StateVector,
    sample_times: &[f64],
    h_max: f64,
) -> Result<PropagationResult> {
    check_schedule(sample_times)?;
    if !(h_max > 0.0) || h_max.is_nan() {
        return Err(Error::Propagation(format!("step size underflow (h_max = {h_max:e})")));
    }
    let t_end = sample_times.last().copied().unwrap_or(0.0);
    let total_steps = if h_max.is_finite() { t_end / h_max } else { 0.0 };
    if total_steps > MAX_STEPS as f64 {
        return Err(Error::Propagation(format!(
            "requested accuracy needs {total_steps:.3e} steps (limit {MAX_STEPS:e})"
        )));
    }

    let mut psi = psi0.0;
    let mut t0 = 0.0;
    let mut h_start = source.hamiltonian(0.0);
    let mut p_d = Vec::with_capacity(sample_times.len());
    let mut norm_corrections = 0;
    let mut max_norm_drift = 0.0f64;
    let mut nodes = vec![Matrix4::zeros(); 2 * CHUNK];
    for &t1 in sample_times {
        let n = steps_for(t1 - t0, h_max);
        if n > 0 {
            let h = (t1 - t0) / n as f64;
            if t0 + h == t0 {
                return Err(Error::Propagation(format!("step size underflow at t = {t0:e}")));
            }
            let mut done = 0;
            while done < n {
                let m = CHUNK.min(n - done);
                let a = t0 + done as f64 * h;
                source.fill_uniform(a, 0.5 * h, &mut nodes[..2 * m]);
                for pair in nodes[..2 * m].chunks_exact(2) {
                    let (h_mid, h_end) = (&pair[0], &pair[1]);
                    let k1 = derivative(&h_start, &psi);
                    let k2 = derivative(h_mid, &axpy(&psi, &k1, 0.5 * h));
                    let k3 = derivative(h_mid, &axpy(&psi, &k2, 0.5 * h));
                    let k4 = derivative(h_end, &axpy(&psi, &k3, h));
                    for i in 0..4 {
                        psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
                    }
                    h_start = *h_end;
                }
                done += m;
            }
        }
        let mut state = StateVector(psi);
        let norm = state.norm();
        max_norm_drift = max_norm_drift.max((norm - 1.0).abs());
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            log::debug!("renormalising state at t = {t1:e} (|psi| = {norm})");
            state.normalize();
            psi = state.0;
            norm_corrections += 1;
        }
        p_d.push(state.population(Level::Dark));
        t0 = t1;
    }
    Ok(PropagationResult {
        times: sample_times.to_vec(),
        p_d,
        final_state: StateVector(psi),
        norm_corrections,
        max_norm_drift,
    })
}

/// Noiseless refined-model P_D at `times`, starting from |D⟩.
pub fn refined_p_d(sensor: &SensorConfig, signal: &SignalConfig, times: &[f64]) -> Result<Vec<f64>> {
    let model = RefinedModel::new(sensor, signal);
    Ok(propagate(&model, StateVector::dark(), times)?.p_d)
}
