//! Nonparametric LROC and ROC analysis with bootstrap standard errors.

use std::cmp::Ordering;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::observers::ObserverRecord;
use crate::rng::item_stream;

pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Records with statistic strictly above `tau` are called positive.
    pub tau: f64,
    pub fpf: f64,
    /// PCL for LROC curves, TPF for ROC curves.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    pub n_signal: usize,
    pub n_absent: usize,
}

impl Curve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpf - w[0].fpf) * (w[1].y + w[0].y) * 0.5)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FomEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_bootstrap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            resamples: DEFAULT_BOOTSTRAP,
            seed,
        }
    }
}

/// Present-class observations: (statistic, credited) where `credited` is
/// false for LROC cases that were mislocalized.
struct Split {
    present: Vec<(f64, bool)>,
    absent: Vec<f64>,
}

fn split(records: &[ObserverRecord], binary: bool) -> Result<Split> {
    let mut present = Vec::new();
    let mut absent = Vec::new();
    for r in records {
        let t = if binary {
            r.binary
                .ok_or_else(|| Error::Missing("binary detection statistic".into()))?
        } else {
            r.statistic
        };
        if !t.is_finite() {
            return Err(Error::NonFinite("observer statistic"));
        }
        if r.is_present() {
            present.push((t, binary || r.correctly_localized()));
        } else {
            absent.push(t);
        }
    }
    if present.is_empty() {
        return Err(Error::EmptyClass("signal-present"));
    }
    if absent.is_empty() {
        return Err(Error::EmptyClass("signal-absent"));
    }
    Ok(Split { present, absent })
}

fn curve(s: &Split) -> Curve {
    let mut taus: Vec<f64> = s
        .present
        .iter()
        .map(|p| p.0)
        .chain(s.absent.iter().copied())
        .collect();
    taus.sort_by(|a, b| b.total_cmp(a));
    taus.dedup();
    taus.push(f64::NEG_INFINITY);
    let mut absent = s.absent.clone();
    absent.sort_by(|a, b| b.total_cmp(a));
    let mut present: Vec<(f64, bool)> = s.present.clone();
    present.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (na, ns) = (absent.len() as f64, present.len() as f64);
    let (mut ia, mut ip, mut hits) = (0, 0, 0usize);
    let mut points = Vec::with_capacity(taus.len());
    for tau in taus {
        while ia < absent.len() && absent[ia] > tau {
            ia += 1;
        }
        while ip < present.len() && present[ip].0 > tau {
            hits += present[ip].1 as usize;
            ip += 1;
        }
        points.push(CurvePoint {
            tau,
            fpf: ia as f64 / na,
            y: hits as f64 / ns,
        });
    }
    Curve {
        points,
        n_signal: present.len(),
        n_absent: absent.len(),
    }
}

/// Pairwise 2AFC score with half credit for ties, by sorting.
fn pair_score(present: &[(f64, bool)], absent_sorted: &[f64]) -> f64 {
    let mut total = 0.0;
    for &(t, credited) in present {
        if !credited {
            continue;
        }
        let below = absent_sorted.partition_point(|&a| a < t);
        let equal = absent_sorted[below..].partition_point(|&a| a <= t);
        total += below as f64 + 0.5 * equal as f64;
    }
    total / (present.len() as f64 * absent_sorted.len() as f64)
}

fn point_estimate(s: &Split) -> f64 {
    let mut absent = s.absent.clone();
    absent.sort_by(f64::total_cmp);
    pair_score(&s.present, &absent)
}

fn bootstrap(s: &Split, cfg: &BootstrapConfig, purpose: &str) -> f64 {
    if cfg.resamples < 2 {
        return 0.0;
    }
    let values: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = item_stream(cfg.seed, purpose, b as u64);
            let present: Vec<(f64, bool)> = (0..s.present.len())
                .map(|_| s.present[rng.random_range(0..s.present.len())])
                .collect();
            let mut absent: Vec<f64> = (0..s.absent.len())
                .map(|_| s.absent[rng.random_range(0..s.absent.len())])
                .collect();
            absent.sort_by(f64::total_cmp);
            pair_score(&present, &absent)
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// LROC curve from records: one point per distinct statistic value, plus the
/// τ = -∞ endpoint.
pub fn empirical_lroc(records: &[ObserverRecord]) -> Result<Curve> {
    Ok(curve(&split(records, false)?))
}

/// ROC curve from the binary detection statistics.
pub fn empirical_roc(records: &[ObserverRecord]) -> Result<Curve> {
    Ok(curve(&split(records, true)?))
}

pub fn alroc(records: &[ObserverRecord], cfg: &BootstrapConfig) -> Result<FomEstimate> {
    let s = split(records, false)?;
    Ok(FomEstimate {
        value: point_estimate(&s),
        std_error: bootstrap(&s, cfg, "bootstrap-alroc"),
        n_bootstrap: cfg.resamples,
    })
}

/// Wilcoxon-Mann-Whitney AUC of the binary statistics.
pub fn auc(records: &[ObserverRecord], cfg: &BootstrapConfig) -> Result<FomEstimate> {
    let s = split(records, true)?;
    Ok(FomEstimate {
        value: point_estimate(&s),
        std_error: bootstrap(&s, cfg, "bootstrap-auc"),
        n_bootstrap: cfg.resamples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemFoms {
    pub system: String,
    pub alroc: FomEstimate,
    pub auc: FomEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// System ids, best first.
    pub by_alroc: Vec<String>,
    pub by_auc: Vec<String>,
    pub disagree: bool,
}

fn order(systems: &[SystemFoms], key: impl Fn(&SystemFoms) -> f64) -> Vec<String> {
    let mut idx: Vec<usize> = (0..systems.len()).collect();
    idx.sort_by(|&a, &b| {
        key(&systems[b])
            .partial_cmp(&key(&systems[a]))
            .unwrap_or(Ordering::Equal)
    });
    idx.into_iter().map(|i| systems[i].system.clone()).collect()
}

pub fn compare_systems(systems: &[SystemFoms]) -> Ranking {
    let by_alroc = order(systems, |s| s.alroc.value);
    let by_auc = order(systems, |s| s.auc.value);
    let disagree = by_alroc != by_auc;
    Ranking {
        by_alroc,
        by_auc,
        disagree,
    }
}

pub fn write_curve_csv<W: Write>(out: &mut W, curve: &Curve) -> Result<()> {
    writeln!(out, "tau,fpf,pcl")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.tau, p.fpf, p.y)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub observer: String,
    pub task: String,
    pub system: String,
    pub alroc: FomEstimate,
    pub auc: Option<FomEstimate>,
    pub n_records: usize,
}

pub fn write_report_csv<W: Write>(out: &mut W, rows: &[ReportRow]) -> Result<()> {
    writeln!(out, "observer,task,system,alroc,alroc_se,auc,auc_se,n_records")?;
    for r in rows {
        for field in [&r.observer, &r.task, &r.system] {
            if field.contains(',') || field.contains('\n') {
                return Err(invalid("report", format!("field {field:?} contains a separator")));
            }
        }
        let (auc, auc_se) = match r.auc {
            Some(a) => (format!("{:.6}", a.value), format!("{:.6}", a.std_error)),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{},{}",
            r.observer, r.task, r.system, r.alroc.value, r.alroc.std_error, auc, auc_se, r.n_records
        )?;
    }
    Ok(())
}

/// Parses a report written by [`write_report_csv`].
pub fn read_report_csv<R: std::io::BufRead>(input: R) -> Result<Vec<ReportRow>> {
    let bad = |line: usize, reason: String| Error::Config {
        key: format!("report line {line}"),
        reason,
    };
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty report".into()))??;
    if header != "observer,task,system,alroc,alroc_se,auc,auc_se,n_records" {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(n + 2, "expected 8 fields".into()));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|e| bad(n + 2, format!("field {i}: {e}")))
        };
        let auc = if f[5].is_empty() {
            None
        } else {
            Some(FomEstimate {
                value: num(5)?,
                std_error: num(6)?,
                n_bootstrap: 0,
            })
        };
        rows.push(ReportRow {
            observer: f[0].into(),
            task: f[1].into(),
            system: f[2].into(),
            alroc: FomEstimate {
                value: num(3)?,
                std_error: num(4)?,
                n_bootstrap: 0,
            },
            auc,
            n_records: f[7]
                .parse()
                .map_err(|e| bad(n + 2, format!("n_records: {e}")))?,
        });
    }
    Ok(rows)
}
