use proptest::prelude::*;
use qmag::dynamics::p_d_analytic;
use qmag::fixtures::Reference;
use qmag::inference::*;
use qmag::measurement::{Dataset, Provenance};
use qmag::physics::{nyquist_max_rabi, SensorConfig};
use qmag::units::{hz, khz};
use qmag::Error;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn empty() -> Dataset {
    Dataset::new(vec![], vec![], 1, Provenance::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn binomial_pmf_normalised(n in 0u32..200, p in 0.0f64..=1.0) {
        let total: f64 = (0..=n).map(|x| log_binomial_pmf(x, n, p).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "n = {}, p = {}, sum = {}", n, p, total);
    }

    #[test]
    fn flat_prior_posterior_is_normalised_likelihood(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..12).map(|k| k as f64 * 1.5e-4).collect();
        let x: Vec<u32> = times.iter().map(|_| rng.random_range(0..=6)).collect();
        let data = Dataset::new(times, x, 6, Provenance::default()).unwrap();
        let grid = uniform_grid(0.0, khz(4.2), 301);
        let post = grid_posterior(&data, &Prior::case_one(), &grid, &ForwardModel::Ideal).unwrap();
        let ll: Vec<f64> = grid
            .iter()
            .map(|&w| log_likelihood(&data, &ParameterPoint::new(w, 0.0), &ForwardModel::Ideal).unwrap())
            .collect();
        // ln ∫ L by trapezoid, shifted by the maximum for range.
        let top = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = grid
            .windows(2)
            .zip(ll.windows(2))
            .map(|(g, l)| 0.5 * (g[1] - g[0]) * ((l[0] - top).exp() + (l[1] - top).exp()))
            .sum();
        let ln_z = top + z.ln();
        for (d, l) in post.density.iter().zip(&ll) {
            let ln_expect = l - ln_z;
            if ln_expect > -700.0 {
                prop_assert!((d / ln_expect.exp() - 1.0).abs() <= 1e-10, "{} vs {}", d, ln_expect.exp());
            }
        }
    }
}

#[test]
fn empty_data_grid_posterior_is_the_prior() {
    let prior = Prior::case_one();
    let grid = uniform_grid(0.0, khz(4.2), 101);
    let post = grid_posterior(&empty(), &prior, &grid, &ForwardModel::Ideal).unwrap();
    let flat = 1.0 / khz(4.2);
    assert!(post.density.iter().all(|d| (d - flat).abs() <= 1e-12 * flat));
}

#[test]
fn grid_outside_support_is_rejected() {
    let grid = uniform_grid(0.0, khz(5.0), 11);
    let data = Reference::CaseOneNm4.load().unwrap();
    let r = grid_posterior(&data, &Prior::case_one(), &grid, &ForwardModel::Ideal);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn probability_floor_keeps_impossible_data_finite() {
    // P_D(0) = 1 for every Ω, so no successes at t = 0 is impossible.
    let data = Dataset::new(vec![0.0, 1e-4], vec![0, 3], 1_000_000, Provenance::default()).unwrap();
    let grid = uniform_grid(0.0, khz(1.0), 11);
    let post = grid_posterior(&data, &Prior::case_one(), &grid, &ForwardModel::Ideal).unwrap();
    assert!(post.log_post.iter().all(|lp| lp.is_finite()));
    let one = log_likelihood(&data, &ParameterPoint::new(khz(1.0), 0.0), &ForwardModel::Ideal).unwrap();
    assert!(one.is_finite() && one < 1e6 * PROBABILITY_FLOOR.ln() * 0.99);
}

/// Piecewise-constant target on three unit cells of Ω with weights w.
struct ThreeCells([f64; 3]);

impl LogTarget for ThreeCells {
    fn log_prior(&self, theta: &ParameterPoint) -> f64 {
        let w = theta.omega_tg_rabi;
        if (0.0..3.0).contains(&w) {
            self.0[w as usize].ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn log_likelihood(&self, _: &ParameterPoint) -> qmag::Result<f64> {
        Ok(0.0)
    }
    fn sample_prior(&self, rng: &mut ChaCha8Rng) -> ParameterPoint {
        ParameterPoint::new(rng.random_range(0.0..3.0), 0.0)
    }
    fn fixed_xi(&self) -> bool {
        true
    }
}

/// Batch-means standard error for a correlated 0/1 series.
fn batch_se(x: &[f64], batches: usize) -> f64 {
    let m = x.len() / batches;
    let means: Vec<f64> = x.chunks(m).take(batches).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    let (_, sd) = sample_moments(&means);
    sd / (batches as f64).sqrt()
}

#[test]
fn metropolis_samples_discrete_target() {
    let target = [0.2f64, 0.5, 0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut state = 0usize;
    let n = 1_000_000;
    let mut visits = vec![[0.0f64; 3]; n];
    for v in visits.iter_mut() {
        let cand = (state + rng.random_range(1..3)) % 3;
        if metropolis_accept((target[cand] / target[state]).ln(), &mut rng) {
            state = cand;
        }
        v[state] = 1.0;
    }
    for s in 0..3 {
        let series: Vec<f64> = visits.iter().map(|v| v[s]).collect();
        let freq = series.iter().sum::<f64>() / n as f64;
        let se = batch_se(&series, 100);
        assert!((freq - target[s]).abs() < 3.0 * se, "state {s}: {freq} vs {} (se {se})", target[s]);
    }
}

#[test]
fn chain_runner_samples_piecewise_target() {
    let w = [0.2, 0.5, 0.3];
    let cfg = McmcConfig {
        n_mc: 1_000_200,
        n_chains: 1,
        burn_in: 200,
        proposal_sigma_omega: 1.0,
        memoize: false,
        seed: 3,
        ..Default::default()
    };
    let s = run_chains(&ThreeCells(w), &cfg).unwrap();
    let om = s.pooled(Param::Omega);
    for (c, &wc) in w.iter().enumerate() {
        let series: Vec<f64> = om.iter().map(|&v| (v as usize == c) as u8 as f64).collect();
        let freq = series.iter().sum::<f64>() / series.len() as f64;
        let se = batch_se(&series, 100);
        assert!((freq - wc).abs() < 3.0 * se, "cell {c}: {freq} vs {wc} (se {se})");
    }
    assert!(s.chains[0].states.iter().all(|p| p.xi == 0.0));
}

#[test]
fn empty_data_mcmc_recovers_prior_moments() {
    let prior = Prior::case_two();
    let cfg = McmcConfig {
        n_mc: 20_000,
        n_chains: 8,
        proposal_sigma_omega: khz(10.0),
        proposal_sigma_xi: khz(0.2),
        seed: 5,
        ..Default::default()
    };
    let model = ForwardModel::refined(SensorConfig::with_field(5e-4).unwrap());
    let s = metropolis_run(&empty(), &prior, &cfg, &model).unwrap();
    for (p, f) in [(Param::Omega, prior.omega), (Param::Xi, prior.xi.unwrap())] {
        let means: Vec<f64> = s.chains.iter().map(|c| sample_moments(&c.values(p, cfg.record)).0).collect();
        let (m, between) = sample_moments(&means);
        let se = between / (means.len() as f64).sqrt();
        assert!((m - f.mean()).abs() < 4.0 * se, "{p:?}: mean {m} vs {} (se {se})", f.mean());
        let (_, sd) = s.moments(p);
        assert!((sd / f.std() - 1.0).abs() < 0.05, "{p:?}: sd {sd} vs {}", f.std());
    }
}

#[test]
fn mcmc_is_seed_deterministic() {
    let data = Reference::CaseOneNm4.load().unwrap();
    let cfg = McmcConfig {
        n_mc: 1500,
        seed: 42,
        ..Default::default()
    };
    let a = metropolis_run(&data, &Prior::case_one(), &cfg, &ForwardModel::Ideal).unwrap();
    let b = metropolis_run(&data, &Prior::case_one(), &cfg, &ForwardModel::Ideal).unwrap();
    assert_eq!(a, b);
    let c = metropolis_run(&data, &Prior::case_one(), &McmcConfig { seed: 43, ..cfg }, &ForwardModel::Ideal).unwrap();
    assert_ne!(a, c);
    let mut buf = Vec::new();
    a.chains[0].write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("step,omega_tg_hz,xi_hz,log_post,accepted\n"));
    assert_eq!(text.lines().count(), cfg.n_mc - cfg.burn_in + 1);
}

#[test]
fn memo_matches_direct_evaluation() {
    let data = Reference::CaseOneNm20.load().unwrap();
    let memo = DatasetPosterior::new(&data, Prior::case_one(), ForwardModel::Ideal, true);
    let direct = DatasetPosterior::new(&data, Prior::case_one(), ForwardModel::Ideal, false);
    for w in [khz(0.9), khz(1.0) + 1e-4, khz(1.1)] {
        let t = ParameterPoint::new(w, 0.0);
        let a = memo.log_likelihood(&t).unwrap();
        let again = memo.log_likelihood(&ParameterPoint::new(w + 1e-4, 0.0)).unwrap();
        assert_eq!(a, again);
        let snapped = ParameterPoint::new((w / MEMO_QUANTUM).round() * MEMO_QUANTUM, 0.0);
        assert_eq!(a, direct.log_likelihood(&snapped).unwrap());
        assert!((a - direct.log_likelihood(&t).unwrap()).abs() < 1e-2);
    }
    assert_eq!(memo.memo_len(), 3);
}

#[test]
fn accepted_only_mode_drops_repeats() {
    let data = Reference::CaseOneNm4.load().unwrap();
    let cfg = McmcConfig {
        n_mc: 1200,
        n_chains: 2,
        record: RecordMode::AcceptedOnly,
        seed: 1,
        ..Default::default()
    };
    let s = metropolis_run(&data, &Prior::case_one(), &cfg, &ForwardModel::Ideal).unwrap();
    let kept = s.pooled(Param::Omega).len();
    let accepted: usize = s.chains.iter().map(|c| c.accepted.iter().filter(|&&a| a).count()).sum();
    assert_eq!(kept, accepted);
    assert!(s.acceptance() > 0.0 && s.acceptance() <= 1.0);
}

#[test]
fn hopeless_proposal_reports_low_acceptance() {
    let data = Reference::CaseOneNm20.load().unwrap();
    let cfg = McmcConfig {
        n_mc: 1200,
        n_chains: 1,
        proposal_sigma_omega: khz(1000.0),
        seed: 2,
        ..Default::default()
    };
    let r = metropolis_run(&data, &Prior::case_one(), &cfg, &ForwardModel::Ideal);
    assert!(matches!(r, Err(Error::LowAcceptance { chain: 0, .. })), "{r:?}");
}

#[test]
fn split_r_hat_detects_disagreeing_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let chains: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..2000).map(|_| rng.random::<f64>()).collect())
        .collect();
    let r = split_r_hat(&chains).unwrap();
    assert!(r < 1.01, "{r}");
    let shifted: Vec<Vec<f64>> = chains
        .iter()
        .enumerate()
        .map(|(i, c)| c.iter().map(|v| v + i as f64 * 5.0).collect())
        .collect();
    assert!(split_r_hat(&shifted).unwrap() > 1.2);
}

/// Aliasing regime: Ω = 2π×7 Hz sampled every 25 ms.
fn aliasing_data(seed: Option<u64>) -> Dataset {
    let (n_p, n_m, dt) = (21, 10u32, 25e-3);
    let times: Vec<f64> = (0..n_p).map(|k| k as f64 * dt).collect();
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let x = times
        .iter()
        .map(|&t| {
            let p = p_d_analytic(t, hz(7.0));
            match rng.as_mut() {
                Some(r) => (0..n_m).filter(|_| r.random_bool(p)).count() as u32,
                None => (p * n_m as f64).round() as u32,
            }
        })
        .collect();
    Dataset::new(times, x, n_m, Provenance::default()).unwrap()
}

#[test]
fn aliasing_peaks_and_nyquist_truncation() {
    let w_max = nyquist_max_rabi(25e-3).unwrap();
    assert!((w_max - hz(40.0 / 2f64.sqrt())).abs() < 1e-9);
    // Aliases of f = Ω/(2π√2) about the 40 Hz sampling rate.
    let f = 7.0 / 2f64.sqrt();
    let expected = [7.0, (40.0 - f) * 2f64.sqrt(), (40.0 + f) * 2f64.sqrt()];
    for seed in [Some(3), None] {
        let data = aliasing_data(seed);
        let wide = Prior {
            omega: ParamPrior::flat(0.0, 2.5 * w_max).unwrap(),
            xi: None,
        };
        let post = grid_posterior(&data, &wide, &uniform_grid(0.0, 2.5 * w_max, 40_001), &ForwardModel::Ideal).unwrap();
        let mut top: Vec<f64> = post.peaks().into_iter().take(3).map(qmag::units::to_hz).collect();
        top.sort_by(f64::total_cmp);
        for (got, want) in top.iter().zip(expected) {
            assert!((got - want).abs() < 0.2, "peaks {top:?} vs {expected:?}");
        }
        assert!(top[1] > qmag::units::to_hz(w_max));

        let truncated = Prior {
            omega: ParamPrior::flat(0.0, w_max).unwrap(),
            xi: None,
        };
        let post = grid_posterior(&data, &truncated, &uniform_grid(0.0, w_max, 20_001), &ForwardModel::Ideal).unwrap();
        let (m, sd) = post.moments();
        assert!((m - hz(7.147)).abs() < hz(0.2), "{seed:?}: {} ± {} Hz", qmag::units::to_hz(m), qmag::units::to_hz(sd));
    }
}
