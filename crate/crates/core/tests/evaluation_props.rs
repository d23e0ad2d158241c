mod common;

use proptest::prelude::*;
use rand::Rng as _;

use lrocsim::evaluation::{alroc, auc, empirical_lroc, empirical_roc, BootstrapConfig};
use lrocsim::observers::ObserverRecord;
use lrocsim::rng::stream;

use common::{pairwise_alroc, pairwise_auc};

const NO_BOOTSTRAP: BootstrapConfig = BootstrapConfig { resamples: 0, seed: 0 };

/// Per-location statistics on a coarse grid so ties are common.
fn arb_records(locations: usize) -> impl Strategy<Value = Vec<ObserverRecord>> {
    let one = (0..=locations, prop::collection::vec(0u8..6, locations)).prop_map(|(label, raw)| {
        let lambda: Vec<f64> = raw.iter().map(|&v| v as f64 * 0.5).collect();
        let r = ObserverRecord::from_statistics(lambda, label).unwrap();
        let t = r.statistic;
        r.with_binary(t)
    });
    prop::collection::vec(one, 2..120).prop_filter("both classes", |v| {
        v.iter().any(|r| r.true_label == 0) && v.iter().any(|r| r.true_label > 0)
    })
}

fn with_independent_binary(records: Vec<ObserverRecord>, seed: u64) -> Vec<ObserverRecord> {
    let mut rng = stream(seed, "binary");
    records
        .into_iter()
        .map(|r| {
            let b = (rng.random::<f64>() * 4.0).floor();
            r.with_binary(b)
        })
        .collect()
}

proptest! {
    #[test]
    fn sorted_estimators_match_pairwise(records in arb_records(4), seed in any::<u64>()) {
        let records = with_independent_binary(records, seed);
        let a = alroc(&records, &NO_BOOTSTRAP).unwrap().value;
        let u = auc(&records, &NO_BOOTSTRAP).unwrap().value;
        prop_assert!((a - pairwise_alroc(&records)).abs() < 1e-12);
        prop_assert!((u - pairwise_auc(&records)).abs() < 1e-12);
    }

    #[test]
    fn alroc_never_exceeds_auc_on_same_statistic(records in arb_records(5)) {
        let a = alroc(&records, &NO_BOOTSTRAP).unwrap().value;
        let u = auc(&records, &NO_BOOTSTRAP).unwrap().value;
        prop_assert!(a <= u + 1e-15);
    }

    #[test]
    fn invariant_under_increasing_transform(records in arb_records(3), slope in 0.1f64..5.0, shift in -10.0f64..10.0) {
        let mapped: Vec<ObserverRecord> = records
            .iter()
            .map(|r| {
                let l = r.per_location.iter().map(|v| (slope * v).exp() + shift).collect();
                let m = ObserverRecord::from_statistics(l, r.true_label).unwrap();
                let t = m.statistic;
                m.with_binary(t)
            })
            .collect();
        prop_assert_eq!(alroc(&records, &NO_BOOTSTRAP).unwrap().value, alroc(&mapped, &NO_BOOTSTRAP).unwrap().value);
        prop_assert_eq!(auc(&records, &NO_BOOTSTRAP).unwrap().value, auc(&mapped, &NO_BOOTSTRAP).unwrap().value);
    }

    #[test]
    fn trapezoid_area_tracks_estimator(records in arb_records(4)) {
        let lroc = empirical_lroc(&records).unwrap();
        let roc = empirical_roc(&records).unwrap();
        let bound = 1.0 / lroc.n_signal.min(lroc.n_absent) as f64;
        prop_assert!((lroc.area() - alroc(&records, &NO_BOOTSTRAP).unwrap().value).abs() <= bound);
        prop_assert!((roc.area() - auc(&records, &NO_BOOTSTRAP).unwrap().value).abs() <= bound);
    }

    #[test]
    fn curve_endpoints_and_monotonicity(records in arb_records(4)) {
        let curve = empirical_lroc(&records).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!((first.fpf, first.y), (0.0, 0.0));
        prop_assert_eq!(last.fpf, 1.0);
        let localized = records.iter().filter(|r| r.correctly_localized()).count() as f64;
        prop_assert!((last.y - localized / curve.n_signal as f64).abs() < 1e-12);
        for w in curve.points.windows(2) {
            prop_assert!(w[1].tau < w[0].tau);
            prop_assert!(w[1].fpf >= w[0].fpf && w[1].y >= w[0].y);
        }
    }
}

/// An observer that ignores the image picks a location at random and ranks
/// at chance: ALROC = (1/J)(1/2).
#[test]
fn random_observer_scores_one_eighteenth() {
    let mut rng = stream(7, "random-observer");
    let records: Vec<ObserverRecord> = (0..60_000)
        .map(|i| {
            let lambda: Vec<f64> = (0..9).map(|_| rng.random()).collect();
            ObserverRecord::from_statistics(lambda, i % 10).unwrap()
        })
        .collect();
    let a = alroc(&records, &NO_BOOTSTRAP).unwrap().value;
    assert!((a - 1.0 / 18.0).abs() < 0.005, "{a}");
}

/// Bootstrap SE against the spread of ALROC over independent repeat studies.
#[test]
fn bootstrap_standard_error_matches_monte_carlo() {
    let study = |seed: u64| -> Vec<ObserverRecord> {
        let mut rng = stream(seed, "study");
        (0..400)
            .map(|i| {
                let label = i % 5;
                let lambda: Vec<f64> = (1..=4)
                    .map(|j| {
                        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                        z + if j == label { 1.5 } else { 0.0 }
                    })
                    .collect();
                ObserverRecord::from_statistics(lambda, label).unwrap()
            })
            .collect()
    };
    let values: Vec<f64> = (0..400)
        .map(|s| alroc(&study(1000 + s), &NO_BOOTSTRAP).unwrap().value)
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mc_se = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
    let boot = alroc(&study(1), &BootstrapConfig::new(99)).unwrap();
    let rel = (boot.std_error - mc_se).abs() / mc_se;
    assert!(rel < 0.25, "bootstrap {} vs Monte Carlo {mc_se}", boot.std_error);
}

#[test]
fn bootstrap_is_deterministic_in_seed() {
    let mut rng = stream(3, "records");
    let records: Vec<ObserverRecord> = (0..200)
        .map(|i| ObserverRecord::from_statistics(vec![rng.random(), rng.random()], i % 3).unwrap())
        .collect();
    let a = alroc(&records, &BootstrapConfig::new(5)).unwrap();
    let b = alroc(&records, &BootstrapConfig::new(5)).unwrap();
    let c = alroc(&records, &BootstrapConfig::new(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.std_error, c.std_error);
}
