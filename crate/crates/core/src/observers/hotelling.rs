//! Scanning Hotelling observer with a matrix-free covariance.
//!
//! K = K_b + K_n where K_b is the sample covariance of the training
//! backgrounds and K_n is a diagonal noise covariance. K is never formed: it is applied through the centered samples,
//! and each template K⁻¹s_j comes from conjugate gradients.

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::observers::ObserverRecord;

const CG_TOLERANCE: f64 = 1e-6;

/// Implicit K_b + diag(noise_var).
struct Covariance {
    /// Centered samples, row per sample, stored single precision.
    centered: Vec<f32>,
    samples: usize,
    pixels: usize,
    noise_var: Vec<f64>,
}

impl Covariance {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for ((o, x), n) in out.iter_mut().zip(v).zip(&self.noise_var) {
            *o = n * x;
        }
        if self.samples < 2 {
            return;
        }
        let norm = 1.0 / (self.samples - 1) as f64;
        for row in self.centered.chunks(self.pixels) {
            let proj: f64 = row.iter().zip(v).map(|(&d, &x)| d as f64 * x).sum();
            let k = proj * norm;
            for (o, &d) in out.iter_mut().zip(row) {
                *o += k * d as f64;
            }
        }
    }

    /// Solves K·x = b by conjugate gradients to relative residual `CG_TOLERANCE`.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = b_norm * b_norm;
        let max_iter = 10 * n.max(100);
        for _ in 0..max_iter {
            if rr.sqrt() <= CG_TOLERANCE * b_norm {
                return Ok(x);
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::Singular(format!("p·Kp = {pap}")));
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        Err(Error::Singular("conjugate gradients did not converge".into()))
    }
}

/// Per-location templates and the mean background. Immutable once built.
#[derive(Debug, Clone)]
pub struct HotellingObserverState {
    pub templates: Vec<ImageGrid>,
    pub mean_background: ImageGrid,
    pub signals: Vec<ImageGrid>,
    /// w_jᵀ(b̄ + s_j/2), precomputed.
    offsets: Vec<f64>,
}

impl HotellingObserverState {
    pub fn new(
        templates: Vec<ImageGrid>,
        mean_background: ImageGrid,
        signals: Vec<ImageGrid>,
    ) -> Result<Self> {
        if templates.len() != signals.len() || templates.is_empty() {
            return Err(invalid("templates", "need one template per signal location"));
        }
        for t in templates.iter().chain(&signals) {
            mean_background.ensure_same_shape(t)?;
        }
        let offsets = templates
            .iter()
            .zip(&signals)
            .map(|(w, s)| {
                w.pixels()
                    .iter()
                    .zip(mean_background.pixels())
                    .zip(s.pixels())
                    .map(|((&w, &b), &s)| w as f64 * (b as f64 + 0.5 * s as f64))
                    .sum()
            })
            .collect();
        Ok(Self {
            templates,
            mean_background,
            signals,
            offsets,
        })
    }

    pub fn location_count(&self) -> usize {
        self.templates.len()
    }

    /// λ_j = w_jᵀ(g - b̄ - s_j/2).
    pub fn statistics(&self, g: &ImageGrid) -> Result<Vec<f64>> {
        g.ensure_same_shape(&self.mean_background)?;
        Ok(self
            .templates
            .iter()
            .zip(&self.offsets)
            .map(|(w, off)| w.dot(g) - off)
            .collect())
    }
}

/// Builds templates w_j = K⁻¹s_j from noiseless training backgrounds.
///
/// An empty background list means no background variability (K = σ²·I).
pub fn build_hotelling(
    backgrounds: &[ImageGrid],
    signals: &[ImageGrid],
    noise_var: f64,
) -> Result<HotellingObserverState> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(invalid("noise_var", "must be non-negative"));
    }
    let m = signals.first().map_or(0, |s| s.len());
    build_hotelling_diagonal(backgrounds, signals, &vec![noise_var; m])
}

/// As [`build_hotelling`] with a per-pixel noise variance, for noise whose
/// variance depends on the mean image.
pub fn build_hotelling_diagonal(
    backgrounds: &[ImageGrid],
    signals: &[ImageGrid],
    noise_var: &[f64],
) -> Result<HotellingObserverState> {
    let first = signals
        .first()
        .ok_or_else(|| invalid("signals", "need at least one signal"))?;
    let (w, h) = (first.width(), first.height());
    let m = w * h;
    if backgrounds.len() == 1 {
        return Err(invalid("backgrounds", "need 0 or at least 2 background samples"));
    }
    if noise_var.len() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m} noise variances"),
            got: noise_var.len().to_string(),
        });
    }
    if noise_var.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(invalid("noise_var", "must be non-negative"));
    }
    let min_var = noise_var.iter().copied().fold(f64::INFINITY, f64::min);
    if min_var == 0.0 && backgrounds.len() <= m {
        return Err(Error::Singular(format!(
            "zero noise with {} samples for {m} pixels",
            backgrounds.len()
        )));
    }
    let mut mean = vec![0.0f64; m];
    for b in backgrounds {
        first.ensure_same_shape(b)?;
        for (acc, &v) in mean.iter_mut().zip(b.pixels()) {
            *acc += v as f64;
        }
    }
    if !backgrounds.is_empty() {
        let n = backgrounds.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
    }
    let mut centered = Vec::with_capacity(backgrounds.len() * m);
    for b in backgrounds {
        centered.extend(b.pixels().iter().zip(&mean).map(|(&v, &mu)| (v as f64 - mu) as f32));
    }
    let cov = Covariance {
        centered,
        samples: backgrounds.len(),
        pixels: m,
        noise_var: noise_var.to_vec(),
    };
    let mut templates = Vec::with_capacity(signals.len());
    for s in signals {
        first.ensure_same_shape(s)?;
        let x = if backgrounds.is_empty() {
            s.pixels().iter().zip(noise_var).map(|(&v, n)| v as f64 / n).collect()
        } else {
            cov.solve(&s.to_f64())?
        };
        templates.push(ImageGrid::from_f64(w, h, &x)?);
    }
    HotellingObserverState::new(templates, ImageGrid::from_f64(w, h, &mean)?, signals.to_vec())
}

/// Applies K = K_b + σ²I built from `backgrounds` to `v`. Exposed for
/// residual checks on computed templates.
pub fn apply_covariance(backgrounds: &[ImageGrid], noise_var: f64, v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let n = backgrounds.len();
    let mut mean = vec![0.0f64; m];
    for b in backgrounds {
        for (acc, &x) in mean.iter_mut().zip(b.pixels()) {
            *acc += x as f64 / n as f64;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| noise_var * x).collect();
    if n >= 2 {
        for b in backgrounds {
            let d: Vec<f64> = b.pixels().iter().zip(&mean).map(|(&x, mu)| x as f64 - mu).collect();
            let proj: f64 = d.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (n - 1) as f64;
            for (o, di) in out.iter_mut().zip(&d) {
                *o += proj * di;
            }
        }
    }
    out
}

pub fn scanning_ho_statistics(
    g: &ImageGrid,
    state: &HotellingObserverState,
    true_label: usize,
) -> Result<ObserverRecord> {
    let lambda = state.statistics(g)?;
    let record = ObserverRecord::from_statistics(lambda, true_label)?;
    let t = record.statistic;
    Ok(record.with_binary(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::sample_background;
    use crate::rng::stream;
    use crate::task::TaskConfig;

    #[test]
    fn bke_templates_are_scaled_signals() {
        let task = TaskConfig::bke_system1();
        let signals = task.signal_images().unwrap();
        let state = build_hotelling(&[], &signals, 400.0).unwrap();
        for (w, s) in state.templates.iter().zip(&signals) {
            for (&a, &b) in w.pixels().iter().zip(s.pixels()) {
                assert!((a as f64 - b as f64 / 400.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_pixel_template_matches_direct_inverse() {
        let samples = [[1.0f32, 2.0], [3.0, 1.0], [2.0, 5.0], [0.0, 0.5]];
        let backgrounds: Vec<ImageGrid> = samples
            .iter()
            .map(|p| ImageGrid::from_vec(2, 1, p.to_vec()).unwrap())
            .collect();
        let s = ImageGrid::from_vec(2, 1, vec![1.0, -0.5]).unwrap();
        let sigma2 = 0.7;
        // hand-computed sample covariance
        let n = samples.len() as f64;
        let mx = samples.iter().map(|p| p[0] as f64).sum::<f64>() / n;
        let my = samples.iter().map(|p| p[1] as f64).sum::<f64>() / n;
        let mut k = [[0.0f64; 2]; 2];
        for p in &samples {
            let d = [p[0] as f64 - mx, p[1] as f64 - my];
            for i in 0..2 {
                for j in 0..2 {
                    k[i][j] += d[i] * d[j] / (n - 1.0);
                }
            }
        }
        k[0][0] += sigma2;
        k[1][1] += sigma2;
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        let w0 = (k[1][1] * 1.0 - k[0][1] * -0.5) / det;
        let w1 = (-k[1][0] * 1.0 + k[0][0] * -0.5) / det;
        let state = build_hotelling(&backgrounds, &[s], sigma2).unwrap();
        let w = state.templates[0].pixels();
        assert!((w[0] as f64 - w0).abs() < 1e-5 * w0.abs().max(1.0));
        assert!((w[1] as f64 - w1).abs() < 1e-5 * w1.abs().max(1.0));
    }

    #[test]
    fn singular_covariance_rejected() {
        let b = vec![ImageGrid::zeros(4, 4), ImageGrid::zeros(4, 4)];
        let s = vec![ImageGrid::zeros(4, 4)];
        assert!(matches!(build_hotelling(&b, &s, 0.0), Err(Error::Singular(_))));
        assert!(build_hotelling(&b[..1], &s, 1.0).is_err());
    }

    #[test]
    fn lumpy_templates_satisfy_normal_equations() {
        let task = TaskConfig::lb();
        let signals = task.signal_images().unwrap();
        let mut rng = stream(21, "ho-lb");
        let backgrounds: Vec<ImageGrid> = (0..300)
            .map(|_| sample_background(&task, &mut rng).unwrap())
            .collect();
        let state = build_hotelling(&backgrounds, &signals[..2], 400.0).unwrap();
        for (w, s) in state.templates.iter().zip(&signals) {
            let kw = apply_covariance(&backgrounds, 400.0, &w.to_f64());
            let s = s.to_f64();
            let err: f64 = kw.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / norm < 1e-5, "relative residual {}", err / norm);
        }
    }

    #[test]
    fn centered_input_scores_zero() {
        let task = TaskConfig::bke_system1();
        let signals = task.signal_images().unwrap();
        let state = build_hotelling(&[], &signals, 400.0).unwrap();
        let mut g = state.mean_background.clone();
        g.add_scaled(&signals[3], 0.5).unwrap();
        let lambda = state.statistics(&g).unwrap();
        assert!(lambda[3].abs() < 1e-6);
    }

    #[test]
    fn two_location_inner_products() {
        let s1 = ImageGrid::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let s2 = ImageGrid::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let state = build_hotelling(&[], &[s1, s2], 2.0).unwrap();
        let g = ImageGrid::from_vec(2, 1, vec![3.0, 1.0]).unwrap();
        // w1 = (0.5, 0), w2 = (0, 1); λ1 = 0.5·(3 - 0.5) ; λ2 = 1·(1 - 1)
        let rec = scanning_ho_statistics(&g, &state, 1).unwrap();
        assert!((rec.per_location[0] - 1.25).abs() < 1e-12);
        assert!(rec.per_location[1].abs() < 1e-12);
        assert_eq!(rec.chosen_location, 1);
    }

    #[test]
    fn diagonal_noise_without_backgrounds() {
        let s = ImageGrid::from_vec(2, 1, vec![2.0, 3.0]).unwrap();
        let state = build_hotelling_diagonal(&[], &[s], &[4.0, 0.5]).unwrap();
        assert_eq!(state.templates[0].pixels(), &[0.5, 6.0]);
        let s = ImageGrid::from_vec(2, 1, vec![2.0, 3.0]).unwrap();
        assert!(build_hotelling_diagonal(&[], &[s], &[1.0]).is_err());
    }
}
