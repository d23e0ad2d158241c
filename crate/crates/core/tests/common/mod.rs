//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use lrocsim::grid::ImageGrid;
use lrocsim::imaging::PrfSpec;
use lrocsim::observers::mcmc::{LumpMove, LumpProposal};
use lrocsim::observers::{McmcConfig, McmcIoObserver, ObserverRecord};
use lrocsim::phantoms::{LumpyParams, SignalSpec};
use lrocsim::rng::Rng;
use rand::Rng as _;

/// ∫ h_m(r) f(r) dr by the midpoint rule on a grid ten times finer than the
/// pixel grid, over the rectangle `[lo, hi]`.
pub fn quadrature_pixel(
    prf: &PrfSpec,
    pixel_center: [f64; 2],
    object: impl Fn([f64; 2]) -> f64,
    lo: [f64; 2],
    hi: [f64; 2],
) -> f64 {
    let step = 0.1;
    let nx = ((hi[0] - lo[0]) / step).ceil() as usize;
    let ny = ((hi[1] - lo[1]) / step).ceil() as usize;
    let norm = prf.height / (2.0 * std::f64::consts::PI * prf.width * prf.width);
    let mut total = 0.0;
    for iy in 0..ny {
        let y = lo[1] + (iy as f64 + 0.5) * step;
        let dy = y - pixel_center[1];
        let mut row = 0.0;
        for ix in 0..nx {
            let x = lo[0] + (ix as f64 + 0.5) * step;
            let dx = x - pixel_center[0];
            let h = norm * (-(dx * dx + dy * dy) / (2.0 * prf.width * prf.width)).exp();
            row += h * object([x, y]);
        }
        total += row;
    }
    total * step * step
}

/// Oriented anisotropic Gaussian in the object domain.
pub fn gaussian_object(spec: &SignalSpec) -> impl Fn([f64; 2]) -> f64 + '_ {
    move |r| {
        let (s, c) = spec.rotation.sin_cos();
        let dx = r[0] - spec.center[0];
        let dy = r[1] - spec.center[1];
        let u = c * dx - s * dy;
        let v = s * dx + c * dy;
        spec.amplitude
            * (-(u * u) / (2.0 * spec.width_1 * spec.width_1) - (v * v) / (2.0 * spec.width_2 * spec.width_2)).exp()
    }
}

/// O(n_s·n_a) 2AFC definitions with half credit for ties.
pub fn pairwise_alroc(records: &[ObserverRecord]) -> f64 {
    pairwise(records, |r| r.statistic, true)
}

pub fn pairwise_auc(records: &[ObserverRecord]) -> f64 {
    pairwise(records, |r| r.binary.unwrap(), false)
}

fn pairwise(records: &[ObserverRecord], stat: impl Fn(&ObserverRecord) -> f64, localize: bool) -> f64 {
    let present: Vec<_> = records.iter().filter(|r| r.true_label > 0).collect();
    let absent: Vec<_> = records.iter().filter(|r| r.true_label == 0).collect();
    let mut total = 0.0;
    for p in &present {
        let credited = !localize || p.chosen_location == p.true_label;
        if !credited {
            continue;
        }
        for a in &absent {
            let (tp, ta) = (stat(p), stat(a));
            if tp > ta {
                total += 1.0;
            } else if tp == ta {
                total += 0.5;
            }
        }
    }
    total / (present.len() * absent.len()) as f64
}

/// Lump prior restricted to at most one lump at one of a few fixed sites.
///
/// State 0 has probability `p_empty`; each site has (1 - p_empty)/K. From the
/// empty state a birth picks a site uniformly; from a one-lump state a death
/// or a jump to another site is proposed with equal probability.
pub struct DiscreteLumpProposal {
    pub sites: Vec<[f64; 2]>,
    pub p_empty: f64,
}

impl LumpProposal for DiscreteLumpProposal {
    fn propose(&self, centers: &[[f64; 2]], rng: &mut Rng) -> Option<(LumpMove, f64)> {
        let k = self.sites.len() as f64;
        let occupied = (1.0 - self.p_empty) / k;
        match centers.len() {
            0 => {
                let site = self.sites[rng.random_range(0..self.sites.len())];
                // prior ratio occupied/p_empty, Hastings (1/2)/(1/K)
                let log_ratio = (occupied / self.p_empty).ln() + (0.5 * k).ln();
                Some((LumpMove::Birth(site), log_ratio))
            }
            1 => {
                if rng.random::<f64>() < 0.5 {
                    let log_ratio = (self.p_empty / occupied).ln() - (0.5 * k).ln();
                    Some((LumpMove::Death(0), log_ratio))
                } else {
                    let here = self.sites.iter().position(|s| *s == centers[0]).unwrap();
                    let mut other = rng.random_range(0..self.sites.len() - 1);
                    if other >= here {
                        other += 1;
                    }
                    Some((LumpMove::Shift(0, self.sites[other]), 0.0))
                }
            }
            _ => unreachable!("discrete prior allows at most one lump"),
        }
    }
}

/// 8×8 Gaussian-noise toy with an enumerable background prior.
pub struct EnumerableToy {
    pub params: LumpyParams,
    pub signals: Vec<SignalSpec>,
    pub sigma: f64,
    pub proposal: DiscreteLumpProposal,
}

fn sampled_gaussian(center: [f64; 2], amp: f64, width: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let dx = x as f64 + 0.5 - center[0];
            let dy = y as f64 + 0.5 - center[1];
            out[y * n + x] = amp * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp();
        }
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl EnumerableToy {
    pub fn new() -> Self {
        let params = LumpyParams {
            mean_lump_count: 1.0,
            lump_amplitude: 2.0,
            lump_width: 1.2,
            width: 8,
            height: 8,
        };
        let signals = vec![
            SignalSpec {
                location_index: 1,
                center: [2.5, 2.5],
                amplitude: 1.5,
                width_1: 1.0,
                width_2: 1.0,
                rotation: 0.0,
            },
            SignalSpec {
                location_index: 2,
                center: [5.5, 5.0],
                amplitude: 1.5,
                width_1: 1.0,
                width_2: 1.0,
                rotation: 0.0,
            },
        ];
        let proposal = DiscreteLumpProposal {
            sites: vec![[2.0, 2.0], [6.0, 2.0], [2.0, 6.0], [5.0, 5.5]],
            p_empty: 0.4,
        };
        Self {
            params,
            signals,
            sigma: 1.5,
            proposal,
        }
    }

    pub fn observer(&self, config: McmcConfig) -> McmcIoObserver {
        McmcIoObserver::new(
            self.params,
            None,
            &self.signals,
            self.sigma,
            vec![1.0 / 3.0; 3],
            config,
        )
        .unwrap()
    }

    /// Background states with their prior probabilities and mean images.
    fn states(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out = vec![(self.proposal.p_empty, vec![0.0; 64])];
        let occupied = (1.0 - self.proposal.p_empty) / self.proposal.sites.len() as f64;
        for &s in &self.proposal.sites {
            out.push((
                occupied,
                sampled_gaussian(s, self.params.lump_amplitude, self.params.lump_width, 8),
            ));
        }
        out
    }

    fn log_like(&self, g: &ImageGrid, mean: &[f64]) -> f64 {
        -g.pixels()
            .iter()
            .zip(mean)
            .map(|(&x, m)| (x as f64 - m).powi(2))
            .sum::<f64>()
            / (2.0 * self.sigma * self.sigma)
    }

    /// Exact ln Λ_j(g) by enumeration over background states.
    pub fn exact_log_lr(&self, g: &ImageGrid) -> Vec<f64> {
        let states = self.states();
        let h0: Vec<f64> = states.iter().map(|(p, b)| p.ln() + self.log_like(g, b)).collect();
        let l0 = log_sum_exp(&h0);
        self.signals
            .iter()
            .map(|s| {
                let sig = sampled_gaussian(s.center, s.amplitude, s.width_1, 8);
                let terms: Vec<f64> = states
                    .iter()
                    .map(|(p, b)| {
                        let mean: Vec<f64> = b.iter().zip(&sig).map(|(x, y)| x + y).collect();
                        p.ln() + self.log_like(g, &mean)
                    })
                    .collect();
                log_sum_exp(&terms) - l0
            })
            .collect()
    }

    /// Exact Pr(one lump | g, H_0).
    pub fn exact_occupied_posterior(&self, g: &ImageGrid) -> f64 {
        let states = self.states();
        let terms: Vec<f64> = states.iter().map(|(p, b)| p.ln() + self.log_like(g, b)).collect();
        let total = log_sum_exp(&terms);
        1.0 - (terms[0] - total).exp()
    }

    /// Pr(lump at site k | g, one lump, H_0).
    #[allow(dead_code)]
    pub fn site_posterior(&self, g: &ImageGrid) -> Vec<f64> {
        let terms: Vec<f64> = self.states()[1..]
            .iter()
            .map(|(_, b)| self.log_like(g, b))
            .collect();
        let total = log_sum_exp(&terms);
        terms.iter().map(|t| (t - total).exp()).collect()
    }

    /// Noisy image with a lump at site 1 and the signal at location 1.
    pub fn measurement(&self, rng: &mut Rng) -> ImageGrid {
        let b = sampled_gaussian(self.proposal.sites[1], self.params.lump_amplitude, self.params.lump_width, 8);
        let s = sampled_gaussian(self.signals[0].center, self.signals[0].amplitude, 1.0, 8);
        let normal = rand_distr::Normal::new(0.0, self.sigma).unwrap();
        let px: Vec<f32> = b
            .iter()
            .zip(&s)
            .map(|(x, y)| (x + y + rand_distr::Distribution::sample(&normal, rng)) as f32)
            .collect();
        ImageGrid::from_vec(8, 8, px).unwrap()
    }
}
