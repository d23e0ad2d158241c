//! Scanning observers: the max-statistic decision rule, posterior/likelihood
//! conversions, and the three reference observers.

mod hotelling;
mod laplacian;
pub mod mcmc;

pub use hotelling::{
    apply_covariance, build_hotelling, build_hotelling_diagonal, scanning_ho_statistics,
    HotellingObserverState,
};
pub use laplacian::{laplacian_bke_log_lr, AnalyticLaplacianObserver};
pub use mcmc::{mcmc_io_statistics, McmcConfig, McmcIoObserver};

use std::io::Write;

use crate::error::{invalid, Error, Result};

/// Output of a scanning observer on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverRecord {
    /// t = max_j λ_j
    pub statistic: f64,
    /// 1-based index of the chosen location.
    pub chosen_location: usize,
    /// 0 for signal absent, j for signal at location j.
    pub true_label: usize,
    pub per_location: Vec<f64>,
    /// Any strictly increasing transform of 1 - Pr(H_0|g), for ROC analysis.
    pub binary: Option<f64>,
}

impl ObserverRecord {
    pub fn from_statistics(per_location: Vec<f64>, true_label: usize) -> Result<Self> {
        let (statistic, chosen_location) = scanning_decision(&per_location)?;
        Ok(Self {
            statistic,
            chosen_location,
            true_label,
            per_location,
            binary: None,
        })
    }

    pub fn with_binary(mut self, binary: f64) -> Self {
        self.binary = Some(binary);
        self
    }

    pub fn is_present(&self) -> bool {
        self.true_label > 0
    }

    pub fn correctly_localized(&self) -> bool {
        self.true_label > 0 && self.chosen_location == self.true_label
    }
}

/// Max-statistic rule: returns `(max λ, smallest 1-based index attaining it)`.
pub fn scanning_decision(lambda: &[f64]) -> Result<(f64, usize)> {
    if lambda.is_empty() {
        return Err(invalid("lambda", "at least one location is required"));
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("per-location statistics"));
    }
    let mut best = 0;
    for (j, &v) in lambda.iter().enumerate() {
        if v > lambda[best] {
            best = j;
        }
    }
    Ok((lambda[best], best + 1))
}

fn validate_priors(priors: &[f64]) -> Result<()> {
    if priors.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(invalid("priors", "all priors must be positive"));
    }
    if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("priors", "must sum to 1"));
    }
    Ok(())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unnormalized log posteriors `ln Pr(H_j) + ln Λ_j` with `ln Λ_0 = 0`.
fn log_joint(log_lr: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    if priors.len() != log_lr.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: format!("{} priors", log_lr.len() + 1),
            got: format!("{}", priors.len()),
        });
    }
    validate_priors(priors)?;
    let mut out = Vec::with_capacity(priors.len());
    out.push(priors[0].ln());
    for (l, p) in log_lr.iter().zip(&priors[1..]) {
        out.push(p.ln() + l);
    }
    Ok(out)
}

/// Pr(H_j|g) for j = 0..=J from log likelihood ratios and priors.
pub fn posteriors_from_lrs(log_lr: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    let joint = log_joint(log_lr, priors)?;
    let norm = log_sum_exp(&joint);
    Ok(joint.iter().map(|v| (v - norm).exp()).collect())
}

/// Log posterior ratios ln[Pr(H_j|g)/Pr(H_0|g)] = ln Λ_j + ln Pr(H_j) - ln Pr(H_0).
pub fn log_posterior_ratios(log_lr: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    let joint = log_joint(log_lr, priors)?;
    Ok(joint[1..].iter().map(|v| v - joint[0]).collect())
}

/// 1 - Pr(H_0|g), the posterior probability that a signal is present.
pub fn binary_detection_statistic(posteriors: &[f64]) -> f64 {
    1.0 - posteriors[0]
}

/// ln[(1 - Pr(H_0|g)) / Pr(H_0|g)], an increasing transform of
/// [`binary_detection_statistic`] that does not saturate at 1.
pub fn presence_log_odds(log_ratios: &[f64]) -> f64 {
    log_sum_exp(log_ratios)
}

/// Writes records as CSV: `image_id,true_label,t,j_star,lambda_1..lambda_J`.
pub fn write_records_csv<W: Write>(out: &mut W, records: &[ObserverRecord]) -> Result<()> {
    let j = records.first().map_or(0, |r| r.per_location.len());
    let mut header = String::from("image_id,true_label,t,j_star");
    for k in 1..=j {
        header.push_str(&format!(",lambda_{k}"));
    }
    writeln!(out, "{header}")?;
    for (i, r) in records.iter().enumerate() {
        let mut line = format!("{i},{},{},{}", r.true_label, r.statistic, r.chosen_location);
        for v in &r.per_location {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parses the format written by [`write_records_csv`]. The binary statistic
/// is not stored, so it is left unset.
pub fn read_records_csv<R: std::io::BufRead>(input: R) -> Result<Vec<ObserverRecord>> {
    let bad = |line: usize, reason: String| Error::Config {
        key: format!("records line {line}"),
        reason,
    };
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..4] != ["image_id", "true_label", "t", "j_star"] {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    let j = cols.len() - 4;
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != j + 4 {
            return Err(bad(n + 2, format!("expected {} fields", j + 4)));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(n + 2, format!("field {}: {e}", cols[i])))
        };
        let true_label = fields[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(n + 2, format!("true_label: {e}")))?;
        let lambda: Result<Vec<f64>> = (4..j + 4).map(num).collect();
        let record = ObserverRecord::from_statistics(lambda?, true_label)?;
        if record.chosen_location.to_string() != fields[3].trim() {
            return Err(bad(n + 2, "j_star disagrees with lambdas".into()));
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(scanning_decision(&[0.0; 9]).unwrap(), (0.0, 1));
        let mut l = vec![0.0; 9];
        l[4] = 2.0;
        assert_eq!(scanning_decision(&l).unwrap(), (2.0, 5));
        assert!(scanning_decision(&[1.0, f64::NAN]).is_err());
        assert!(scanning_decision(&[]).is_err());
    }

    proptest! {
        #[test]
        fn decision_matches_brute_force(l in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let (t, j) = scanning_decision(&l).unwrap();
            let brute_t = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let brute_j = l.iter().position(|&v| v == brute_t).unwrap() + 1;
            prop_assert_eq!(t, brute_t);
            prop_assert_eq!(j, brute_j);
        }

        #[test]
        fn monotone_transform_keeps_choice(l in proptest::collection::vec(-5.0f64..5.0, 1..12)) {
            let mapped: Vec<f64> = l.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(scanning_decision(&l).unwrap().1, scanning_decision(&mapped).unwrap().1);
            let shifted: Vec<f64> = l.iter().map(|v| v + 7.5).collect();
            prop_assert_eq!(scanning_decision(&l).unwrap().1, scanning_decision(&shifted).unwrap().1);
        }

        #[test]
        fn posterior_ratios_match_identity(
            l in proptest::collection::vec(-20.0f64..20.0, 1..10),
            raw in proptest::collection::vec(0.05f64..1.0, 11),
        ) {
            let raw = &raw[..l.len() + 1];
            let total: f64 = raw.iter().sum();
            let priors: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let post = posteriors_from_lrs(&l, &priors).unwrap();
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..l.len() {
                let lhs = post[j + 1] / post[0];
                let rhs = priors[j + 1] * l[j].exp() / priors[0];
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0) * 10.0, "{} vs {}", lhs, rhs);
            }
            let b = binary_detection_statistic(&post);
            prop_assert!((b - post[1..].iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_posteriors() {
        let post = posteriors_from_lrs(&[0.0; 9], &[0.1; 10]).unwrap();
        for p in &post {
            assert!((p - 0.1).abs() < 1e-15);
        }
        assert!((binary_detection_statistic(&post) - 0.9).abs() < 1e-12);
        assert_eq!(binary_detection_statistic(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn single_location_with_ratio_e() {
        let post = posteriors_from_lrs(&[1.0], &[0.5, 0.5]).unwrap();
        let e = std::f64::consts::E;
        assert!((post[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((post[1] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn zero_prior_rejected() {
        assert!(posteriors_from_lrs(&[0.0], &[0.0, 1.0]).is_err());
        assert!(posteriors_from_lrs(&[0.0], &[0.5, 0.5, 0.0]).is_err());
    }

    #[test]
    fn huge_log_ratios_do_not_overflow() {
        let post = posteriors_from_lrs(&[5000.0, -5000.0], &[0.4, 0.3, 0.3]).unwrap();
        assert!(post.iter().all(|p| p.is_finite()));
        assert!((post[1] - 1.0).abs() < 1e-12);
        assert!(presence_log_odds(&[5000.0, 4999.0]).is_finite());
    }

    #[test]
    fn csv_layout() {
        let r = ObserverRecord::from_statistics(vec![0.5, 1.5], 2).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[r]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "image_id,true_label,t,j_star,lambda_1,lambda_2\n0,2,1.5,2,0.5,1.5\n");
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![
            ObserverRecord::from_statistics(vec![0.1 + 0.2, -1e-300, 7.0], 0).unwrap(),
            ObserverRecord::from_statistics(vec![3.0, 3.0, -2.5], 2).unwrap(),
        ];
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), records);
        assert!(read_records_csv("a,b\n".as_bytes()).is_err());
        let tampered = "image_id,true_label,t,j_star,lambda_1,lambda_2\n0,1,2,1,1,2\n";
        assert!(read_records_csv(tampered.as_bytes()).is_err());
    }
}
