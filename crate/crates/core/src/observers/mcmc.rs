//! Markov-chain Monte Carlo Ideal Observer for lumpy backgrounds with
//! Gaussian noise.
//!
//! The chain targets p(θ | g, H_0) over lump configurations θ. For every
//! retained state it evaluates the background-known-exactly likelihood ratio
//! Λ_BKE,j(g | b(θ)) = exp[(g - b - s_j/2)ᵀ s_j / σ²] and keeps a running
//! log-mean, so λ_j = ln of the Monte Carlo average of Λ_BKE,j.
//!
//! The residual `g - b(θ)` and its projections onto every signal are updated
//! incrementally; lumps are rank-one images, so each move costs one dense
//! dot product plus O(J·(width + height)).

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::imaging::{lump_image, render_signal_f64, signal_separable, NoiseModel, Separable};
use crate::observers::{log_posterior_ratios, presence_log_odds, ObserverRecord};
use crate::phantoms::{sample_lumpy, LumpyParams};
use crate::rng::Rng;
use crate::task::{ObjectModel, TaskConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub move_prob: f64,
    pub birth_prob: f64,
    pub death_prob: f64,
    /// Standard deviation of the lump displacement, pixels.
    pub move_std: f64,
}

impl McmcConfig {
    /// `iterations` total steps with 5% burn-in and the default move mix.
    pub fn with_iterations(iterations: usize) -> Self {
        Self {
            iterations,
            burn_in: iterations / 20,
            move_prob: 0.5,
            birth_prob: 0.25,
            death_prob: 0.25,
            move_std: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(invalid("mcmc", "need iterations > burn_in"));
        }
        let probs = [self.move_prob, self.birth_prob, self.death_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(invalid("mcmc", "move/birth/death probabilities must sum to 1"));
        }
        if self.birth_prob > 0.0 && self.death_prob == 0.0
            || self.death_prob > 0.0 && self.birth_prob == 0.0
        {
            return Err(invalid("mcmc", "birth and death must both be enabled or both disabled"));
        }
        if !(self.move_std > 0.0) {
            return Err(invalid("mcmc", "move_std must be positive"));
        }
        Ok(())
    }
}

impl Default for McmcConfig {
    /// 200,000 iterations per image.
    fn default() -> Self {
        Self::with_iterations(200_000)
    }
}

/// A proposed change to the lump configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LumpMove {
    Birth([f64; 2]),
    Death(usize),
    Shift(usize, [f64; 2]),
}

/// Proposal kernel plus prior over lump configurations.
///
/// `propose` returns the move and ln[p(θ')q(θ|θ')/(p(θ)q(θ'|θ))], the prior
/// times Hastings ratio, or `None` when the step is a no-op (e.g. a death
/// proposed from the empty state).
pub trait LumpProposal {
    fn propose(&self, centers: &[[f64; 2]], rng: &mut Rng) -> Option<(LumpMove, f64)>;
}

/// Reversible-jump birth/death/shift kernel for a Poisson number of lumps
/// placed uniformly over the field of view.
#[derive(Debug, Clone)]
pub struct PoissonLumpProposal {
    pub mean_count: f64,
    pub width: f64,
    pub height: f64,
    pub config: McmcConfig,
    step: Normal<f64>,
}

impl PoissonLumpProposal {
    pub fn new(params: &LumpyParams, config: McmcConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        Ok(Self {
            mean_count: params.mean_lump_count,
            width: params.width as f64,
            height: params.height as f64,
            config,
            step: Normal::new(0.0, config.move_std).expect("validated move_std"),
        })
    }
}

/// Folds `x` into `[0, len)` by mirror reflection at both ends.
fn reflect(x: f64, len: f64) -> f64 {
    let period = 2.0 * len;
    let y = x.rem_euclid(period);
    let r = if y >= len { period - y } else { y };
    if r >= len {
        // y == len exactly
        len * (1.0 - f64::EPSILON)
    } else {
        r
    }
}

impl LumpProposal for PoissonLumpProposal {
    fn propose(&self, centers: &[[f64; 2]], rng: &mut Rng) -> Option<(LumpMove, f64)> {
        let c = &self.config;
        let n = centers.len();
        let u: f64 = rng.random();
        if u < c.move_prob {
            if n == 0 {
                return None;
            }
            let i = rng.random_range(0..n);
            let [x, y] = centers[i];
            let to = [
                reflect(x + self.step.sample(rng), self.width),
                reflect(y + self.step.sample(rng), self.height),
            ];
            Some((LumpMove::Shift(i, to), 0.0))
        } else if u < c.move_prob + c.birth_prob {
            let at = [
                rng.random::<f64>() * self.width,
                rng.random::<f64>() * self.height,
            ];
            let log_ratio =
                (c.death_prob / c.birth_prob).ln() + (self.mean_count / (n + 1) as f64).ln();
            Some((LumpMove::Birth(at), log_ratio))
        } else {
            if n == 0 {
                return None;
            }
            let i = rng.random_range(0..n);
            let log_ratio =
                (c.birth_prob / c.death_prob).ln() + (n as f64 / self.mean_count).ln();
            Some((LumpMove::Death(i), log_ratio))
        }
    }
}

enum SignalImage {
    Separable(Separable),
    Dense(Vec<f64>),
}

impl SignalImage {
    fn dot_lump(&self, lump: &Separable) -> f64 {
        match self {
            SignalImage::Separable(s) => s.dot(lump),
            SignalImage::Dense(d) => lump.dot_dense(d),
        }
    }

    fn dot_dense(&self, v: &[f64]) -> f64 {
        match self {
            SignalImage::Separable(s) => s.dot_dense(v),
            SignalImage::Dense(d) => d.iter().zip(v).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Running ln-mean of exp(v) without overflow.
#[derive(Debug, Clone, Copy)]
struct LogMeanExp {
    shift: f64,
    sum: f64,
    count: u64,
}

impl LogMeanExp {
    fn new() -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, v: f64) {
        if v > self.shift {
            self.sum = self.sum * (self.shift - v).exp() + 1.0;
            self.shift = v;
        } else {
            self.sum += (v - self.shift).exp();
        }
        self.count += 1;
    }

    fn value(&self) -> f64 {
        self.shift + self.sum.ln() - (self.count as f64).ln()
    }
}

/// Result of one chain.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    /// ln of the Monte Carlo mean of Λ_BKE,j, per location.
    pub log_lr: Vec<f64>,
    pub acceptance_rate: f64,
    /// Lump count of the final state.
    pub final_count: usize,
    /// Fraction of retained states with each lump count (index = count).
    pub count_histogram: Vec<f64>,
}

/// Chain machinery shared by all lump priors.
pub struct McmcIoObserver {
    width: usize,
    height: usize,
    lump: LumpyParams,
    prf: Option<crate::imaging::PrfSpec>,
    signals: Vec<SignalImage>,
    signal_energy: Vec<f64>,
    noise_var: f64,
    pub priors: Vec<f64>,
    pub config: McmcConfig,
}

struct ChainState {
    centers: Vec<[f64; 2]>,
    lumps: Vec<Separable>,
    lump_energy: Vec<f64>,
    residual: Vec<f64>,
    /// residual · s_j
    projections: Vec<f64>,
}

impl McmcIoObserver {
    pub fn new(
        lump: LumpyParams,
        prf: Option<crate::imaging::PrfSpec>,
        signal_specs: &[crate::phantoms::SignalSpec],
        noise_sigma: f64,
        priors: Vec<f64>,
        config: McmcConfig,
    ) -> Result<Self> {
        lump.validate()?;
        config.validate()?;
        if !(noise_sigma > 0.0) {
            return Err(invalid("noise.sigma", "must be positive"));
        }
        let (w, h) = (lump.width, lump.height);
        let mut signals = Vec::with_capacity(signal_specs.len());
        let mut signal_energy = Vec::with_capacity(signal_specs.len());
        for spec in signal_specs {
            let img = match signal_separable(spec, prf.as_ref(), w, h) {
                Some(s) => SignalImage::Separable(s),
                None => SignalImage::Dense(render_signal_f64(spec, prf.as_ref(), w, h)?),
            };
            let energy = match &img {
                SignalImage::Separable(s) => s.dot(s),
                SignalImage::Dense(d) => d.iter().map(|v| v * v).sum(),
            };
            signals.push(img);
            signal_energy.push(energy);
        }
        if priors.len() != signals.len() + 1 {
            return Err(invalid("priors", "need J + 1 priors"));
        }
        Ok(Self {
            width: w,
            height: h,
            lump,
            prf,
            signals,
            signal_energy,
            noise_var: noise_sigma * noise_sigma,
            priors,
            config,
        })
    }

    /// Observer for a lumpy-background task with Gaussian noise.
    pub fn for_task(task: &TaskConfig, config: McmcConfig) -> Result<Self> {
        let lump = match &task.object {
            ObjectModel::Lumpy(p) => *p,
            _ => {
                return Err(Error::Unsupported(format!(
                    "MCMC observer needs a lumpy background (task `{}`)",
                    task.name
                )))
            }
        };
        let sigma = match task.noise {
            NoiseModel::Gaussian { sigma } => sigma,
            _ => {
                return Err(Error::Unsupported(format!(
                    "MCMC observer needs Gaussian noise (task `{}`)",
                    task.name
                )))
            }
        };
        Self::new(lump, task.prf, &task.signals()?, sigma, task.priors.clone(), config)
    }

    pub fn location_count(&self) -> usize {
        self.signals.len()
    }

    fn lump(&self, center: [f64; 2]) -> Separable {
        lump_image(center, &self.lump, self.prf.as_ref(), self.width, self.height)
    }

    fn init_state(&self, g: &ImageGrid, centers: Vec<[f64; 2]>) -> ChainState {
        let lumps: Vec<Separable> = centers.iter().map(|&c| self.lump(c)).collect();
        let lump_energy = lumps.iter().map(|l| l.dot(l)).collect();
        let mut state = ChainState {
            centers,
            lumps,
            lump_energy,
            residual: Vec::new(),
            projections: Vec::new(),
        };
        self.refresh(g, &mut state);
        state
    }

    /// Recomputes the residual and projections from scratch.
    fn refresh(&self, g: &ImageGrid, state: &mut ChainState) {
        let mut residual = g.to_f64();
        for l in &state.lumps {
            l.accumulate(&mut residual, -1.0);
        }
        state.projections = self.signals.iter().map(|s| s.dot_dense(&residual)).collect();
        state.residual = residual;
    }

    fn log_bke_lr(&self, projection: f64, j: usize) -> f64 {
        (projection - 0.5 * self.signal_energy[j]) / self.noise_var
    }

    /// Runs one chain on `g` starting from `initial` lump centers.
    pub fn run_chain<P: LumpProposal>(
        &self,
        g: &ImageGrid,
        proposal: &P,
        initial: Vec<[f64; 2]>,
        rng: &mut Rng,
    ) -> Result<ChainSummary> {
        if g.width() != self.width || g.height() != self.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                got: format!("{}x{}", g.width(), g.height()),
            });
        }
        g.ensure_finite("measurement")?;
        let cfg = self.config;
        let mut state = self.init_state(g, initial);
        let mut means = vec![LogMeanExp::new(); self.signals.len()];
        let mut histogram: Vec<u64> = Vec::new();
        let mut accepted = 0u64;
        let two_var = 2.0 * self.noise_var;
        for it in 0..cfg.iterations {
            if let Some((mv, log_prior_q)) = proposal.propose(&state.centers, rng) {
                // ln p(g|θ') - ln p(g|θ) for Gaussian noise, from the residual
                let (log_like, new_lump) = match mv {
                    LumpMove::Birth(c) => {
                        let l = self.lump(c);
                        let e = l.dot(&l);
                        let rl = l.dot_dense(&state.residual);
                        ((2.0 * rl - e) / two_var, Some((l, e)))
                    }
                    LumpMove::Death(i) => {
                        let l = &state.lumps[i];
                        let rl = l.dot_dense(&state.residual);
                        ((-2.0 * rl - state.lump_energy[i]) / two_var, None)
                    }
                    LumpMove::Shift(i, c) => {
                        let old = &state.lumps[i];
                        let l = self.lump(c);
                        let e = l.dot(&l);
                        let rd = l.dot_dense(&state.residual) - old.dot_dense(&state.residual);
                        let dd = e + state.lump_energy[i] - 2.0 * l.dot(old);
                        ((2.0 * rd - dd) / two_var, Some((l, e)))
                    }
                };
                let log_alpha = log_like + log_prior_q;
                if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
                    accepted += 1;
                    self.apply_move(&mut state, mv, new_lump);
                }
            }
            if it % 10_000 == 9_999 {
                self.refresh(g, &mut state);
            }
            if it >= cfg.burn_in {
                for (j, acc) in means.iter_mut().enumerate() {
                    acc.push(self.log_bke_lr(state.projections[j], j));
                }
                let n = state.centers.len();
                if histogram.len() <= n {
                    histogram.resize(n + 1, 0);
                }
                histogram[n] += 1;
            }
        }
        let retained = (cfg.iterations - cfg.burn_in) as f64;
        Ok(ChainSummary {
            log_lr: means.iter().map(|m| m.value()).collect(),
            acceptance_rate: accepted as f64 / cfg.iterations as f64,
            final_count: state.centers.len(),
            count_histogram: histogram.iter().map(|&c| c as f64 / retained).collect(),
        })
    }

    fn apply_move(&self, state: &mut ChainState, mv: LumpMove, new_lump: Option<(Separable, f64)>) {
        let shift_projections = |state: &mut ChainState, l: &Separable, sign: f64| {
            for (p, s) in state.projections.iter_mut().zip(&self.signals) {
                *p += sign * s.dot_lump(l);
            }
        };
        match mv {
            LumpMove::Birth(c) => {
                let (l, e) = new_lump.expect("birth carries a lump");
                l.accumulate(&mut state.residual, -1.0);
                shift_projections(state, &l, -1.0);
                state.centers.push(c);
                state.lumps.push(l);
                state.lump_energy.push(e);
            }
            LumpMove::Death(i) => {
                let l = state.lumps.swap_remove(i);
                state.centers.swap_remove(i);
                state.lump_energy.swap_remove(i);
                l.accumulate(&mut state.residual, 1.0);
                shift_projections(state, &l, 1.0);
            }
            LumpMove::Shift(i, c) => {
                let (l, e) = new_lump.expect("shift carries a lump");
                let old = std::mem::replace(&mut state.lumps[i], l);
                old.accumulate(&mut state.residual, 1.0);
                shift_projections(state, &old, 1.0);
                state.lumps[i].accumulate(&mut state.residual, -1.0);
                let new = state.lumps[i].clone();
                shift_projections(state, &new, -1.0);
                state.centers[i] = c;
                state.lump_energy[i] = e;
            }
        }
    }

    /// Full observer: chain from a prior draw, then the scanning decision on
    /// λ_j = ln[Pr(H_j|g)/Pr(H_0|g)].
    pub fn evaluate(&self, g: &ImageGrid, true_label: usize, rng: &mut Rng) -> Result<ObserverRecord> {
        let proposal = PoissonLumpProposal::new(&self.lump, self.config)?;
        let initial = sample_lumpy(&self.lump, rng)?.centers;
        let summary = self.run_chain(g, &proposal, initial, rng)?;
        let ratios = log_posterior_ratios(&summary.log_lr, &self.priors)?;
        let binary = presence_log_odds(&ratios);
        Ok(ObserverRecord::from_statistics(ratios, true_label)?.with_binary(binary))
    }
}

pub fn mcmc_io_statistics(
    g: &ImageGrid,
    task: &TaskConfig,
    cfg: &McmcConfig,
    true_label: usize,
    rng: &mut Rng,
) -> Result<ObserverRecord> {
    McmcIoObserver::for_task(task, *cfg)?.evaluate(g, true_label, rng)
}
