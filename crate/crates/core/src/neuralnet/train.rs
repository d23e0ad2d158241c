//! Semi-online training: stored noiseless images, fresh noise per mini-batch.

use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::imaging::{compose_measurement, NoiseModel};
use crate::neuralnet::adam::{adam_step, AdamHyper};
use crate::neuralnet::network::{loss_and_gradient, mean_cross_entropy, NetworkState};
use crate::neuralnet::real::Real;
use crate::rng::{item_stream, stream, Rng};
use crate::task::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    /// Images of each class in every mini-batch.
    pub per_class: usize,
    pub total_minibatches: u64,
    pub hyper: AdamHyper,
    pub validation_period: u64,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn new(per_class: usize, total_minibatches: u64, seed: u64) -> Self {
        Self {
            per_class,
            total_minibatches,
            hyper: AdamHyper::default(),
            validation_period: 1000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 || self.total_minibatches == 0 || self.validation_period == 0 {
            return Err(invalid("schedule", "counts must be positive"));
        }
        self.hyper.validate()
    }
}

/// Noiseless training material for one task.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub backgrounds: Vec<ImageGrid>,
    pub signals: Vec<ImageGrid>,
    pub task: TaskConfig,
}

impl TrainingSet {
    pub fn new(task: TaskConfig, backgrounds: Vec<ImageGrid>) -> Result<Self> {
        task.validate()?;
        if backgrounds.is_empty() {
            return Err(Error::EmptyClass("training backgrounds"));
        }
        for b in &backgrounds {
            if b.width() != task.width || b.height() != task.height {
                return Err(Error::DimensionMismatch {
                    expected: format!("{}x{}", task.width, task.height),
                    got: format!("{}x{}", b.width(), b.height()),
                });
            }
        }
        let signals = task.signal_images()?;
        Ok(Self {
            backgrounds,
            signals,
            task,
        })
    }

    pub fn classes(&self) -> usize {
        self.signals.len() + 1
    }

    /// One balanced noisy mini-batch, labels cycling 0..=J within each round.
    pub fn minibatch(&self, per_class: usize, rng: &mut Rng) -> Result<Vec<(ImageGrid, usize)>> {
        let mut out = Vec::with_capacity(per_class * self.classes());
        for _ in 0..per_class {
            for label in 0..self.classes() {
                let b = &self.backgrounds[rng.random_range(0..self.backgrounds.len())];
                out.push((compose_measurement(&self.task, b, &self.signals, label, rng)?, label));
            }
        }
        Ok(out)
    }

    /// Global pixel mean and standard deviation of noisy training images,
    /// estimated from `samples` draws per class.
    pub fn normalization(&self, samples: usize, seed: u64) -> Result<(f64, f64)> {
        let mut rng = stream(seed, "normalization");
        let batch = self.minibatch(samples.max(1), &mut rng)?;
        let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for (g, _) in &batch {
            for &p in g.pixels() {
                n += 1.0;
                let d = p as f64 - mean;
                mean += d / n;
                m2 += d * (p as f64 - mean);
            }
        }
        let std = (m2 / (n - 1.0).max(1.0)).sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        Ok((mean, std))
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.task.noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    /// Mean mini-batch loss since the previous validation.
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn write_training_log<W: std::io::Write>(out: &mut W, log: &[LogEntry]) -> Result<()> {
    writeln!(out, "step,train_loss,val_loss")?;
    for e in log {
        writeln!(out, "{},{:.9},{:.9}", e.step, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub best: NetworkState<T>,
    pub best_val_loss: f64,
    pub last: NetworkState<T>,
    pub log: Vec<LogEntry>,
}

/// Progress hook invoked after every validation with the log entry, the
/// current state, and whether it became the new best.
pub type ValidationHook<'a, T> = dyn FnMut(&LogEntry, &NetworkState<T>, bool) -> Result<()> + 'a;

/// Trains `state` from its current step up to `schedule.total_minibatches`.
///
/// Mini-batch `k` is drawn from its own seed-derived stream, so a run resumed
/// from a saved state (with its best-so-far record) replays exactly.
pub fn train<T: Real>(
    mut state: NetworkState<T>,
    mut best: Option<(NetworkState<T>, f64)>,
    data: &TrainingSet,
    validation: &[(ImageGrid, usize)],
    schedule: &TrainSchedule,
    hook: &mut ValidationHook<'_, T>,
) -> Result<TrainOutcome<T>> {
    schedule.validate()?;
    if data.classes() != state.arch.classes {
        return Err(Error::DimensionMismatch {
            expected: format!("{} classes", state.arch.classes),
            got: data.classes().to_string(),
        });
    }
    if validation.is_empty() {
        return Err(Error::EmptyClass("validation set"));
    }
    let mut log = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    while state.step < schedule.total_minibatches {
        let step = state.step;
        let mut rng = item_stream(schedule.seed, "minibatch", step);
        let batch = data.minibatch(schedule.per_class, &mut rng)?;
        let refs: Vec<(&ImageGrid, usize)> = batch.iter().map(|(g, y)| (g, *y)).collect();
        let (loss, grad) = loss_and_gradient(&refs, &state)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        adam_step(&mut state, &grad, &schedule.hyper).map_err(|_| Error::Diverged { step, loss })?;
        loss_sum += loss;
        loss_n += 1;
        if state.step.is_multiple_of(schedule.validation_period) || state.step == schedule.total_minibatches {
            let val_loss = mean_cross_entropy(validation, &state)?;
            if !val_loss.is_finite() {
                return Err(Error::Diverged {
                    step: state.step,
                    loss: val_loss,
                });
            }
            let entry = LogEntry {
                step: state.step,
                train_loss: loss_sum / loss_n as f64,
                val_loss,
            };
            (loss_sum, loss_n) = (0.0, 0);
            let improved = best.as_ref().is_none_or(|(_, v)| val_loss < *v);
            if improved {
                best = Some((state.clone(), val_loss));
            }
            hook(&entry, &state, improved)?;
            log.push(entry);
        }
    }
    let (best, best_val_loss) = match best {
        Some(b) => b,
        None => {
            let v = mean_cross_entropy(validation, &state)?;
            (state.clone(), v)
        }
    };
    Ok(TrainOutcome {
        best,
        best_val_loss,
        last: state,
        log,
    })
}
