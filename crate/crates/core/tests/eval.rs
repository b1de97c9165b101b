use repcate::dgp::{mimic_sample, Benchmark, MimicCovariates, Record};
use repcate::estimators::EstimatorKind;
use repcate::eval::{mean_ci, pehe, run_sweep, subgroup_report, SweepConfig};

/// MIMIC records whose representation is the covariate vector itself.
fn transparent_mimic(n: usize, seed: u64) -> (Vec<Record>, Vec<Vec<f64>>) {
    let draws = mimic_sample(n, seed);
    let xs: Vec<Vec<f64>> = draws.iter().map(|d| d.covariates.to_vector()).collect();
    let records = draws
        .iter()
        .zip(&xs)
        .map(|(d, x)| Record {
            t: d.t,
            y: d.y,
            phi: x.clone(),
            x: None,
            s: false,
            true_cate: d.true_cate,
        })
        .collect();
    (records, xs)
}

fn oracle(phi: &[f64]) -> f64 {
    MimicCovariates::from_vector(phi).cate()
}

#[test]
fn subgroup_means_of_an_oracle_are_the_stratum_effects() {
    let (records, xs) = transparent_mimic(2000, 3);
    let male_no_hyp = |x: &[f64]| x[0] > 0.5 && x[2] < 0.5;
    let (m, n) = subgroup_report(&oracle, &records, &xs, male_no_hyp).unwrap();
    assert!(n > 0);
    assert!((m - (-5.0)).abs() < 1e-12, "{m}");
    let (m, _) = subgroup_report(&oracle, &records, &xs, |x: &[f64]| x[0] < 0.5).unwrap();
    assert!((m - 1.3).abs() < 1e-12, "{m}");
}

#[test]
fn empty_subgroup_is_an_error() {
    let (records, xs) = transparent_mimic(50, 3);
    assert!(subgroup_report(&oracle, &records, &xs, |x: &[f64]| x[1] > 2.0).is_err());
}

#[test]
fn constant_ate_pehe_matches_the_two_point_closed_form() {
    // True effects take the values 1.3 and -5.0; predicting their mean gives
    // PEHE = 6.3 * sqrt(q (1 - q)) with q the share of the -5.0 stratum.
    let (records, _) = transparent_mimic(5000, 11);
    let truth: Vec<f64> = records.iter().map(|r| r.true_cate).collect();
    let ate = truth.iter().sum::<f64>() / truth.len() as f64;
    let q = truth.iter().filter(|c| **c < 0.0).count() as f64 / truth.len() as f64;
    let got = pehe(&vec![ate; truth.len()], &truth).unwrap();
    assert!((got - 6.3 * (q * (1.0 - q)).sqrt()).abs() < 1e-9, "{got}");
}

#[test]
fn oracle_has_zero_pehe_and_constant_offsets_shift_it_exactly() {
    let (records, _) = transparent_mimic(500, 2);
    let truth: Vec<f64> = records.iter().map(|r| r.true_cate).collect();
    let preds: Vec<f64> = records.iter().map(|r| oracle(&r.phi)).collect();
    assert_eq!(pehe(&preds, &truth).unwrap(), 0.0);
    let shifted: Vec<f64> = preds.iter().map(|p| p + 0.25).collect();
    assert!((pehe(&shifted, &truth).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn confidence_interval_of_known_values() {
    // Sample sd of 1..=5 is sqrt(2.5).
    let (m, ci) = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!(m, 3.0);
    assert!((ci.unwrap() - 1.96 * 2.5f64.sqrt() / 5f64.sqrt()).abs() < 1e-12);
    assert_eq!(mean_ci(&[7.0]), Some((7.0, None)));
    assert_eq!(mean_ci(&[]), None);
}

#[test]
fn default_synsum_sweep_plans_eight_levels() {
    let cfg = SweepConfig::default();
    assert_eq!(cfg.levels(), vec![4400, 2200, 1100, 730, 550, 400, 315, 220]);
    assert_eq!(cfg.levels().len() * cfg.methods.len() * cfg.n_runs, 160);
}

#[test]
fn sweep_is_deterministic_across_thread_counts() {
    let cfg = SweepConfig {
        benchmark: Benchmark::Mimic,
        dataset_size: 2000,
        annotation_levels: Some(vec![150, 400]),
        n_runs: 2,
        base_seed: 21,
        ..SweepConfig::default()
    };
    let a = run_sweep(&cfg, Some(1)).unwrap();
    let b = run_sweep(&cfg, Some(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), 2 * 2 * EstimatorKind::ALL.len());
    assert!(!a.has_failures(), "{:?}", a.failures().collect::<Vec<_>>());
    // The plug-in never sees annotations, so it scores the same at every level.
    assert_eq!(a.run_pehes(EstimatorKind::PlugIn, 150), a.run_pehes(EstimatorKind::PlugIn, 400));
}

#[test]
fn duplicate_levels_or_methods_are_rejected() {
    let dup_levels = SweepConfig {
        annotation_levels: Some(vec![220, 440, 220]),
        ..SweepConfig::default()
    };
    assert!(dup_levels.validate().is_err());
    let dup_methods = SweepConfig {
        methods: vec![EstimatorKind::PlugIn, EstimatorKind::PlugIn],
        ..SweepConfig::default()
    };
    assert!(dup_methods.validate().is_err());
    let tiny = SweepConfig {
        dataset_size: 20,
        ..SweepConfig::default()
    };
    assert!(tiny.validate().is_ok(), "{:?}", tiny.levels());
}
