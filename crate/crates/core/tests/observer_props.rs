mod common;

use proptest::prelude::*;
use rand::Rng as _;
use statrs::distribution::{Continuous, Laplace, Normal};

use lrocsim::grid::ImageGrid;
use lrocsim::observers::{
    build_hotelling, laplacian_bke_log_lr, log_posterior_ratios, posteriors_from_lrs,
    presence_log_odds, read_records_csv, scanning_decision, write_records_csv, McmcConfig,
    ObserverRecord,
};
use lrocsim::rng::stream;

use common::EnumerableToy;

fn random_image(seed: u64, w: usize, h: usize, spread: f32) -> ImageGrid {
    let mut rng = stream(seed, "image");
    ImageGrid::from_vec(w, h, (0..w * h).map(|_| (rng.random::<f32>() - 0.5) * spread).collect()).unwrap()
}

fn arb_priors(j: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, j + 1).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn scanning_decision_picks_first_maximum(lambda in prop::collection::vec(-5i32..5, 1..12)) {
        let l: Vec<f64> = lambda.iter().map(|&v| v as f64).collect();
        let (t, j) = scanning_decision(&l).unwrap();
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(t, max);
        prop_assert_eq!(j, l.iter().position(|&v| v == max).unwrap() + 1);
    }

    #[test]
    fn posteriors_are_normalized_and_consistent(
        log_lr in prop::collection::vec(-30.0f64..30.0, 9),
        priors in arb_priors(9),
    ) {
        let post = posteriors_from_lrs(&log_lr, &priors).unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ratios = log_posterior_ratios(&log_lr, &priors).unwrap();
        for j in 1..=9 {
            let direct = log_lr[j - 1] + (priors[j] / priors[0]).ln();
            prop_assert!((ratios[j - 1] - direct).abs() < 1e-9);
        }
        let odds = presence_log_odds(&ratios);
        let p0 = post[0];
        if p0 > 1e-12 && p0 < 1.0 - 1e-12 {
            prop_assert!((odds - ((1.0 - p0) / p0).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_signal_priors_give_identical_decisions(
        log_lr in prop::collection::vec(-30.0f64..30.0, 9),
        p0 in 0.05f64..0.95,
    ) {
        let mut priors = vec![(1.0 - p0) / 9.0; 10];
        priors[0] = p0;
        let ratios = log_posterior_ratios(&log_lr, &priors).unwrap();
        let (t_lr, j_lr) = scanning_decision(&log_lr).unwrap();
        let (t_post, j_post) = scanning_decision(&ratios).unwrap();
        prop_assert_eq!(j_lr, j_post);
        // thresholds correspond one-to-one through a constant shift
        let shift = ((1.0 - p0) / 9.0 / p0).ln();
        prop_assert!((t_post - t_lr - shift).abs() < 1e-9);
    }

    #[test]
    fn laplacian_log_lr_matches_pdf(seed in any::<u64>(), c in 0.5f64..40.0, amp in 0.0f32..5.0) {
        let g = random_image(seed, 9, 7, 40.0);
        let b = random_image(seed ^ 1, 9, 7, 10.0);
        let s = random_image(seed ^ 2, 9, 7, amp);
        let pdf = Laplace::new(0.0, c).unwrap();
        let oracle: f64 = g.pixels().iter().zip(b.pixels()).zip(s.pixels())
            .map(|((&g, &b), &s)| {
                let r0 = g as f64 - b as f64;
                pdf.ln_pdf(r0 - s as f64) - pdf.ln_pdf(r0)
            })
            .sum();
        let got = laplacian_bke_log_lr(&g, &b, &s, c).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn records_csv_round_trips(
        rows in prop::collection::vec((0usize..=4, prop::collection::vec(-1e6f64..1e6, 4)), 1..30),
    ) {
        let records: Vec<ObserverRecord> = rows
            .into_iter()
            .map(|(label, l)| ObserverRecord::from_statistics(l, label).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records).unwrap();
        let back = read_records_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, records);
    }
}

/// Under white Gaussian noise with a known background the Hotelling
/// statistic is the exact log-likelihood ratio.
#[test]
fn hotelling_equals_gaussian_log_lr_without_background_variability() {
    let sigma = 2.5;
    let signals: Vec<ImageGrid> = (0..3).map(|k| random_image(10 + k, 8, 8, 3.0)).collect();
    let ho = build_hotelling(&[], &signals, sigma * sigma).unwrap();
    let normal = Normal::new(0.0, sigma).unwrap();
    for seed in 0..20 {
        let g = random_image(100 + seed, 8, 8, 12.0);
        let lambda = ho.statistics(&g).unwrap();
        for (j, s) in signals.iter().enumerate() {
            let oracle: f64 = g
                .pixels()
                .iter()
                .zip(s.pixels())
                .map(|(&g, &s)| normal.ln_pdf(g as f64 - s as f64) - normal.ln_pdf(g as f64))
                .sum();
            assert!((lambda[j] - oracle).abs() < 1e-3, "{} vs {oracle}", lambda[j]);
        }
    }
}

#[test]
fn mcmc_matches_enumeration_on_toy() {
    let toy = EnumerableToy::new();
    let io = toy.observer(McmcConfig::with_iterations(200_000));
    for seed in 0..3 {
        let g = toy.measurement(&mut stream(seed, "toy-measurement"));
        let exact = toy.exact_log_lr(&g);
        let run = io
            .run_chain(&g, &toy.proposal, Vec::new(), &mut stream(seed, "toy-chain"))
            .unwrap();
        for (e, m) in exact.iter().zip(&run.log_lr) {
            assert!(((m - e).exp() - 1.0).abs() < 0.02, "seed {seed}: {m} vs {e}");
        }
        let p = toy.exact_occupied_posterior(&g);
        let q = run.count_histogram[1];
        assert!((q - p).abs() < 0.02, "seed {seed}: occupancy {q} vs {p}");
    }
}

#[test]
fn mcmc_error_shrinks_with_chain_length() {
    let toy = EnumerableToy::new();
    let g = toy.measurement(&mut stream(21, "toy-measurement"));
    let exact = toy.exact_log_lr(&g);
    let mean_abs_error = |iterations: usize| -> f64 {
        let io = toy.observer(McmcConfig::with_iterations(iterations));
        let runs = 8;
        (0..runs)
            .map(|r| {
                let run = io
                    .run_chain(&g, &toy.proposal, Vec::new(), &mut lrocsim::rng::item_stream(21, "chain", r))
                    .unwrap();
                exact.iter().zip(&run.log_lr).map(|(e, m)| (e - m).abs()).sum::<f64>() / exact.len() as f64
            })
            .sum::<f64>()
            / runs as f64
    };
    let short = mean_abs_error(1_000);
    let long = mean_abs_error(100_000);
    assert!(long < short / 3.0, "1e3: {short}, 1e5: {long}");
}
