//! Convolutional approximation of the Ideal Observer: network, optimizer,
//! semi-online training, depth selection, and the checkpoint format.

mod adam;
mod checkpoint;
mod network;
mod real;
mod select;
mod train;

pub use adam::{adam_step, AdamHyper};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{
    log_softmax_at, logit_gradient, loss_and_gradient, mean_cross_entropy, softmax,
    weighted_loss_and_gradient, Architecture, Layout, NetworkState, ALLOWED_DEPTHS,
};
pub use real::{gemm, Real};
pub use select::{select_depth, DepthSelection, MIN_RELATIVE_IMPROVEMENT};
pub use train::{
    train, write_training_log, LogEntry, TrainOutcome, TrainSchedule, TrainingSet, ValidationHook,
};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::observers::{presence_log_odds, ObserverRecord};

/// Scanning record from network logits.
///
/// Training batches are class-balanced, so `z_j - z_0` estimates the log
/// likelihood ratio; the task priors are applied on top of it. With uniform
/// priors λ_j is exactly ln Pr(H_j|g) - ln Pr(H_0|g).
pub fn cnn_io_statistics<T: Real>(
    g: &ImageGrid,
    state: &NetworkState<T>,
    priors: &[f64],
    true_label: usize,
) -> Result<ObserverRecord> {
    if priors.len() != state.arch.classes {
        return Err(Error::DimensionMismatch {
            expected: format!("{} priors", state.arch.classes),
            got: priors.len().to_string(),
        });
    }
    let (z, _) = state.forward(g)?;
    let lambda: Vec<f64> = (1..z.len())
        .map(|j| z[j] - z[0] + (priors[j] / priors[0]).ln())
        .collect();
    let binary = presence_log_odds(&lambda);
    Ok(ObserverRecord::from_statistics(lambda, true_label)?.with_binary(binary))
}
