use qmag::dynamics::{p_d_analytic, ModelKind, StepControl};
use qmag::fixtures::Reference;
use qmag::measurement::*;
use qmag::noise::NoiseConfig;
use qmag::physics::{SensorConfig, SignalConfig};
use qmag::units::khz;

#[test]
fn reference_records_load_and_round_trip() {
    let expect = [
        (Reference::CaseOneNm1, 18, 1, 2.83e-3),
        (Reference::CaseOneNm4, 18, 4, 2.83e-3),
        (Reference::CaseOneNm20, 18, 20, 2.83e-3),
        (Reference::CaseTwoNm1, 20, 1, 0.236e-3),
        (Reference::CaseTwoNm4, 20, 4, 0.236e-3),
        (Reference::CaseTwoNm20, 20, 20, 0.236e-3),
        (Reference::CaseTwoNm40, 20, 40, 0.236e-3),
        (Reference::SingleShotA, 15, 1, 1.76e-3),
        (Reference::SingleShotB, 15, 1, 1.76e-3),
    ];
    for (r, n_p, n_m, t_f) in expect {
        let d = r.load().unwrap();
        assert_eq!((d.len(), d.n_m), (n_p, n_m), "{}", r.name());
        assert!((d.times_s[n_p - 1] - t_f).abs() < 1e-15);
        let dt = d.uniform_spacing().unwrap();
        assert!((dt - t_f / (n_p - 1) as f64).abs() < 1e-15);
        let again = Dataset::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(d, again);
        assert_eq!(Reference::from_name(r.name()), Some(r));
    }
    assert_eq!(
        Reference::CaseOneNm20.load().unwrap().x,
        [20, 18, 11, 4, 0, 2, 11, 12, 18, 20, 12, 7, 0, 0, 7, 9, 18, 20]
    );
}

#[test]
fn save_and_load_preserve_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    let d = Reference::CaseTwoNm40.load().unwrap();
    d.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    Dataset::load(&path).unwrap().save(&path).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
}

#[test]
fn generation_is_seed_deterministic() {
    let plan = MeasurementPlan::case_one(4).unwrap();
    let sensor = SensorConfig::with_field(1e-3).unwrap();
    let signal = SignalConfig::new(khz(1.0), 0.0).unwrap();
    let mut acq = Acquisition::noisy(NoiseConfig::default(), NoiseGranularity::PerShot);
    acq.control = StepControl::inference();
    let a = generate_dataset(&plan, &sensor, &signal, &acq, 17).unwrap();
    let b = generate_dataset(&plan, &sensor, &signal, &acq, 17).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = generate_dataset(&plan, &sensor, &signal, &acq, 18).unwrap();
    assert_ne!(a.x, c.x);
    assert_eq!(a.provenance.seed, Some(17));
    assert_eq!(a.provenance.noise_granularity, Some(NoiseGranularity::PerShot));
}

#[test]
fn counts_are_binomial_about_the_model() {
    // Across seeds, X_k has mean N_m P_k and variance N_m P_k (1 − P_k).
    let plan = MeasurementPlan::case_one(20).unwrap();
    let sensor = SensorConfig::with_field(1e-3).unwrap();
    let signal = SignalConfig::new(khz(1.0), 0.0).unwrap();
    let acq = Acquisition::noiseless(ModelKind::Ideal);
    let seeds = 500;
    let runs: Vec<Dataset> = (0..seeds)
        .map(|s| generate_dataset(&plan, &sensor, &signal, &acq, s).unwrap())
        .collect();
    let n = 20.0;
    for (k, &t) in plan.times().iter().enumerate() {
        let p = p_d_analytic(t, signal.omega_tg_rabi);
        let xs: Vec<f64> = runs.iter().map(|d| d.x[k] as f64).collect();
        let mean = xs.iter().sum::<f64>() / seeds as f64;
        let var = n * p * (1.0 - p);
        let se = (var / seeds as f64).sqrt().max(1e-12);
        assert!((mean - n * p).abs() <= 3.5 * se + 1e-9, "t = {t}: {mean} vs {}", n * p);
        if var > 0.5 {
            let v = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (seeds as f64 - 1.0);
            assert!((v / var - 1.0).abs() < 0.35, "t = {t}: var {v} vs {var}");
        }
    }
}

#[test]
fn refined_preset_tracks_cos2_within_shot_noise() {
    let plan = MeasurementPlan::case_one(200).unwrap();
    let sensor = SensorConfig::with_field(1e-3).unwrap();
    let signal = SignalConfig::new(khz(1.0), 0.0).unwrap();
    let d = generate_dataset(&plan, &sensor, &signal, &Acquisition::noiseless(ModelKind::Refined), 3).unwrap();
    let view = d.view();
    for (k, &t) in d.times_s.iter().enumerate() {
        let p = p_d_analytic(t, signal.omega_tg_rabi);
        let envelope = 4.0 * (p * (1.0 - p) / 200.0).sqrt() + 0.05;
        assert!((view.p_s[k] - p).abs() <= envelope, "t = {t}: {} vs {p}", view.p_s[k]);
    }
}

#[test]
fn per_dataset_noise_uses_one_trace() {
    let plan = MeasurementPlan::case_two(10).unwrap();
    let sensor = SensorConfig::with_field(5e-4).unwrap();
    let signal = SignalConfig::new(khz(12.0), khz(0.1)).unwrap();
    let mut acq = Acquisition::noisy(NoiseConfig::default(), NoiseGranularity::PerDataset);
    acq.control = StepControl::inference();
    let d = generate_dataset(&plan, &sensor, &signal, &acq, 5).unwrap();
    assert_eq!(d.len(), 20);
    assert!(d.x.iter().all(|&x| x <= 10));
    assert_eq!(d.x[0], 10);
}
