//! Dual-head objective, dynamic loss balancing and the training loop.

pub mod config;
pub mod data;
pub mod loss;
pub mod output;
pub mod train;

pub use config::{Normalization, TrainConfig};
pub use data::{Dataset, Example};
pub use loss::{
    focal_loss, focal_loss_grad, inverse_frequency_weights, mse_loss, multitask_loss, total_loss, update_alpha,
    BatchLoss, FocalConfig, LossWeights,
};
pub use output::{predict, MultiTaskOutput};
pub use train::{
    checkpoint_modality, checkpoint_norm_stats, topology_for, train, train_with, EarlyStopping, EpochRecord, TrainHistory, HISTORY_HEADER};

use crate::nnet::NnError;
use crate::preproc::PreprocError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training labels contain no {0:?} samples")]
    MissingClass(crate::dataman::AgeGroup),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: cls {cls}, reg {reg}")]
    DivergedLoss { epoch: u32, batch: usize, cls: f64, reg: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error("i/o: {0}")]
    Io(String),
}
