use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dataman::Modality;
use crate::nnet::Widths;

/// Source of the standardization constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Mean and deviation of the training split.
    Computed,
    /// Fixed reference constants for the modality.
    Preset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: u32,
    pub alpha0: f64,
    pub label_smoothing: f64,
    pub focal_gamma: f64,
    pub seed: u64,
    pub modality: Modality,
    pub min_lr: f64,
    pub cycle_len: f64,
    pub cycle_mult: f64,
    pub class_weighting: bool,
    pub augment: bool,
    pub normalization: Normalization,
    pub widths: Widths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            patience: 5,
            alpha0: 0.25,
            label_smoothing: 0.05,
            focal_gamma: 2.0,
            seed: 42,
            modality: Modality::Eye,
            min_lr: 1e-5,
            cycle_len: 10.0,
            cycle_mult: 2.0,
            class_weighting: true,
            augment: true,
            normalization: Normalization::Computed,
            widths: Widths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return fail("epochs, batch_size and patience must be positive".into());
        }
        for (name, v) in [("lr", self.lr), ("alpha0", self.alpha0), ("cycle_len", self.cycle_len)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return fail(format!("min_lr {} must lie in [0, lr]", self.min_lr));
        }
        if !(self.weight_decay >= 0.0) || !(self.focal_gamma >= 0.0) || !(self.cycle_mult >= 1.0) {
            return fail("weight_decay and focal_gamma must be non-negative, cycle_mult at least 1".into());
        }
        if !(0.0..=0.2).contains(&self.label_smoothing) {
            return fail(format!("label_smoothing {} outside [0, 0.2]", self.label_smoothing));
        }
        if self.widths.stem == 0 || self.widths.neck == 0 || self.widths.stages.contains(&0) {
            return fail("network widths must be positive".into());
        }
        Ok(())
    }
}
