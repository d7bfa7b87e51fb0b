use qmag::dynamics::{propagate_with, RefinedModel, StateVector, StepControl};
use qmag::measurement::noisy_p_d;
use qmag::noise::*;
use qmag::physics::{SensorConfig, SignalConfig};
use qmag::units::khz;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn stationary_moments_and_autocovariance() {
    let p = OUParams::new(2e-3, 1.5).unwrap();
    let lags = [0.5e-3, 2e-3, 6e-3];
    let n = 40_000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = NoiseConfig {
        tau_mu: p.tau,
        sigma_mu: Some(p.sigma),
        ..NoiseConfig::silent()
    };
    let grid = [0.0, lags[0], lags[1], lags[2]];
    let paths: Vec<Vec<f64>> = (0..n).map(|_| make_trace(&cfg, &grid, &mut rng).unwrap().mu).collect();
    let s2 = p.sigma * p.sigma;
    let nf = n as f64;

    for col in 0..grid.len() {
        let x: Vec<f64> = paths.iter().map(|v| v[col]).collect();
        let (m, v) = mean_var(&x);
        assert!(m.abs() < 3.0 * p.sigma / nf.sqrt(), "mean at {col}: {m}");
        assert!((v - s2).abs() < 3.0 * s2 * (2.0 / (nf - 1.0)).sqrt(), "variance at {col}: {v}");
    }
    for (i, &lag) in lags.iter().enumerate() {
        let rho = (-lag / p.tau).exp();
        let prod: Vec<f64> = paths.iter().map(|v| v[0] * v[i + 1]).collect();
        let (c, _) = mean_var(&prod);
        // Var(x y) = σ⁴(1 + ρ²) for jointly Gaussian x, y.
        let se = s2 * ((1.0 + rho * rho) / nf).sqrt();
        assert!((c - s2 * rho).abs() < 3.0 * se, "lag {lag}: {c} vs {}", s2 * rho);
    }
}

#[test]
fn exact_update_composes() {
    let p = OUParams::new(1e-3, 0.7).unwrap();
    let (x0, dt, n) = (1.3, 4e-4, 50_000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let one: Vec<f64> = (0..n).map(|_| ou_step(x0, 2.0 * dt, &p, &mut rng)).collect();
    let two: Vec<f64> = (0..n)
        .map(|_| {
            let h = ou_step(x0, dt, &p, &mut rng);
            ou_step(h, dt, &p, &mut rng)
        })
        .collect();
    let mean = x0 * (-2.0 * dt / p.tau).exp();
    let var = p.sigma * p.sigma * (1.0 - (-4.0 * dt / p.tau).exp());
    let nf = n as f64;
    for x in [&one, &two] {
        let (m, v) = mean_var(x);
        assert!((m - mean).abs() < 3.0 * (var / nf).sqrt(), "{m} vs {mean}");
        assert!((v - var).abs() < 3.0 * var * (2.0 / (nf - 1.0)).sqrt(), "{v} vs {var}");
    }
}

/// ζ(t) = ∫₀ᵗ μ by the trapezoid rule on `steps` exact OU updates.
fn zeta_samples(p: &OUParams, t: f64, steps: usize, n: usize, stationary: bool, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = t / steps as f64;
    (0..n)
        .map(|_| {
            let mut x = if stationary {
                p.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            } else {
                0.0
            };
            let mut z = 0.0;
            for _ in 0..steps {
                let next = ou_step(x, dt, p, &mut rng);
                z += 0.5 * dt * (x + next);
                x = next;
            }
            z
        })
        .collect()
}

#[test]
fn integrated_phase_variance_matches_both_initial_conditions() {
    let p = OUParams::new(1e-4, 3e3).unwrap();
    let n = 20_000;
    for (x, seed) in [(0.5, 1), (3.0, 2), (20.0, 3)] {
        let t = x * p.tau;
        for stationary in [false, true] {
            let z = zeta_samples(&p, t, 400, n, stationary, seed);
            let v = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let want = if stationary {
                zeta_variance_stationary(t, &p)
            } else {
                zeta_variance(t, &p)
            };
            // ζ is Gaussian: Var(ζ²) = 2⟨ζ²⟩².
            let se = want * (2.0 / n as f64).sqrt();
            assert!((v - want).abs() < 3.0 * se, "x = {x}, stationary = {stationary}: {v} vs {want}");
        }
    }
}

#[test]
fn calibration_matches_integrated_covariance() {
    // ⟨ζ²(T)⟩ = σ² ∫∫ [e^{−|s−s'|/τ} − e^{−(s+s')/τ}] ds ds' for an OU
    // process released from zero, by the midpoint rule.
    for (t2, tau) in [(5.3e-3, 5.3e-5), (1e-3, 2e-4), (2e-3, 1.5e-3)] {
        let midpoint = |n: usize| {
            let h = t2 / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let s = (i as f64 + 0.5) * h;
                for j in 0..n {
                    let u = (j as f64 + 0.5) * h;
                    acc += (-(s - u).abs() / tau).exp() - (-(s + u) / tau).exp();
                }
            }
            acc * h * h
        };
        // The diagonal kink leaves an O(h²) error; one Richardson step.
        let integral = (4.0 * midpoint(3000) - midpoint(1500)) / 3.0;
        let sigma = (2.0 / integral).sqrt();
        let got = calibrate_sigma_mu(t2, tau).unwrap();
        assert!((got / sigma - 1.0).abs() < 1e-5, "T2 = {t2}, tau = {tau}: {got} vs {sigma}");
        let p = OUParams::new(tau, got).unwrap();
        assert!((zeta_variance(t2, &p) - 2.0).abs() < 1e-12);
    }
}

#[test]
fn coherence_decays_to_inverse_e_at_t2() {
    let cfg = NoiseConfig::default();
    let p = cfg.mu_params().unwrap();
    let z = zeta_samples(&p, cfg.t2, 2000, 10_000, true, 77);
    let coherence = z.iter().map(|v| v.cos()).sum::<f64>() / z.len() as f64;
    assert!((coherence - (-1f64).exp()).abs() < 0.02, "⟨σx(T2)⟩ = {coherence}");
    // The same noise entering with the full |1⟩⟨1| − |−1⟩⟨−1| weight
    // doubles the relative phase, giving e^{−4} instead.
    let doubled = z.iter().map(|v| (2.0 * v).cos()).sum::<f64>() / z.len() as f64;
    assert!((doubled - (-4f64).exp()).abs() < 0.02, "doubled phase: {doubled}");
}

#[test]
fn noise_is_negligible_on_the_sensing_windows() {
    // (field, Ω_tg, ξ, window) for the three reference regimes.
    let sets = [
        (1e-3, khz(1.0), 0.0, 2.83e-3),
        (0.2e-3, khz(15.0), 0.0, 0.5e-3),
        (0.5e-3, khz(12.0), khz(0.1), 0.236e-3),
    ];
    let control = StepControl::inference();
    let cfg = NoiseConfig::default();
    for (b, omega, xi, window) in sets {
        let sensor = SensorConfig::with_field(b).unwrap();
        let model = RefinedModel::new(&sensor, &SignalConfig::new(omega, xi).unwrap());
        let times: Vec<f64> = (0..40).map(|k| window * k as f64 / 39.0).collect();
        let clean = propagate_with(&model, StateVector::dark(), &times, control).unwrap().p_d;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut avg = vec![0.0; times.len()];
        let reps = 100;
        for _ in 0..reps {
            let p = noisy_p_d(&model, &cfg, &times, control, &mut rng).unwrap();
            for (a, v) in avg.iter_mut().zip(p) {
                *a += v / reps as f64;
            }
        }
        let worst = avg.iter().zip(&clean).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.02, "B = {b}: max deviation {worst}");
    }
}
