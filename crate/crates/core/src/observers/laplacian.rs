use crate::error::{invalid, Result};
use crate::grid::ImageGrid;
use crate::observers::{
    log_posterior_ratios, presence_log_odds, ObserverRecord,
};

/// ln Λ_j for i.i.d. Laplacian noise with scale `c` and known background:
/// (1/c)·Σ_m (|g_m - b_m| - |g_m - b_m - s_jm|).
pub fn laplacian_bke_log_lr(g: &ImageGrid, b: &ImageGrid, s: &ImageGrid, c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("c", "Laplacian scale must be positive"));
    }
    g.ensure_same_shape(b)?;
    g.ensure_same_shape(s)?;
    let sum: f64 = g
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(s.pixels())
        .map(|((&g, &b), &s)| {
            let d = g as f64 - b as f64;
            d.abs() - (d - s as f64).abs()
        })
        .sum();
    Ok(sum / c)
}

/// Scanning Ideal Observer for background-known-exactly tasks with
/// Laplacian noise, where the likelihood ratio is available in closed form.
#[derive(Debug, Clone)]
pub struct AnalyticLaplacianObserver {
    pub background: ImageGrid,
    pub signals: Vec<ImageGrid>,
    pub scale: f64,
    pub priors: Vec<f64>,
}

impl AnalyticLaplacianObserver {
    pub fn log_lrs(&self, g: &ImageGrid) -> Result<Vec<f64>> {
        self.signals
            .iter()
            .map(|s| laplacian_bke_log_lr(g, &self.background, s, self.scale))
            .collect()
    }

    /// λ_j = ln[Pr(H_j|g)/Pr(H_0|g)]; the binary statistic is the log-odds
    /// of signal presence.
    pub fn evaluate(&self, g: &ImageGrid, true_label: usize) -> Result<ObserverRecord> {
        let ratios = log_posterior_ratios(&self.log_lrs(g)?, &self.priors)?;
        let binary = presence_log_odds(&ratios);
        Ok(ObserverRecord::from_statistics(ratios, true_label)?.with_binary(binary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{apply_noise, NoiseModel};
    use crate::rng::stream;
    use crate::task::TaskConfig;

    fn laplace_pdf(x: f64, c: f64) -> f64 {
        (-(x.abs()) / c).exp() / (2.0 * c)
    }

    #[test]
    fn identical_hypotheses_give_zero() {
        let g = ImageGrid::from_vec(2, 2, vec![1.0, -3.0, 2.0, 0.5]).unwrap();
        let z = ImageGrid::zeros(2, 2);
        assert_eq!(laplacian_bke_log_lr(&g, &z, &z, 2.0).unwrap(), 0.0);
        assert!(laplacian_bke_log_lr(&g, &z, &z, 0.0).is_err());
    }

    #[test]
    fn background_and_signal_substitutions() {
        let b = ImageGrid::from_vec(2, 2, vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let s = ImageGrid::from_vec(2, 2, vec![1.0, 2.0, 0.5, 0.0]).unwrap();
        let c = 3.0;
        let abs_sum = 3.5;
        assert!((laplacian_bke_log_lr(&b, &b, &s, c).unwrap() + abs_sum / c).abs() < 1e-12);
        let mut gs = b.clone();
        gs.add_scaled(&s, 1.0).unwrap();
        assert!((laplacian_bke_log_lr(&gs, &b, &s, c).unwrap() - abs_sum / c).abs() < 1e-12);
    }

    #[test]
    fn matches_per_pixel_density_ratio() {
        let task = TaskConfig::bke_system1();
        let signals = task.signal_images().unwrap();
        let c = 20.0 / 2f64.sqrt();
        let b = ImageGrid::zeros(64, 64);
        let mut rng = stream(11, "lap-oracle");
        for trial in 0..5 {
            let mut mean = b.clone();
            mean.add_scaled(&signals[trial], 1.0).unwrap();
            let g = apply_noise(&mean, &NoiseModel::Laplacian { scale: c }, &mut rng).unwrap();
            for s in &signals {
                let oracle: f64 = g
                    .pixels()
                    .iter()
                    .zip(s.pixels())
                    .map(|(&gv, &sv)| {
                        let gv = gv as f64;
                        (laplace_pdf(gv - sv as f64, c) / laplace_pdf(gv, c)).ln()
                    })
                    .sum();
                let got = laplacian_bke_log_lr(&g, &b, s, c).unwrap();
                assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
            }
        }
    }
}
