//! Simulation and evaluation toolkit for joint signal detection-localization
//! tasks.
//!
//! The pipeline is: sample a background ([`phantoms`]), image it and add noise
//! ([`imaging`]), score each image with a scanning observer ([`observers`],
//! [`neuralnet`]), then summarize with LROC/ROC analysis ([`evaluation`]).
//! [`runner`] ties the stages together behind config files and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod grid;
pub mod imaging;
pub mod neuralnet;
pub mod observers;
pub mod phantoms;
pub mod rng;
pub mod runner;
pub mod task;

pub use error::{Error, Result};
pub use grid::ImageGrid;
pub use task::{TaskConfig, TaskKind};
