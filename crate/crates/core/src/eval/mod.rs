//! Metrics, grouped analyses, the cross-sensor protocol, Grad-CAM saliency
//! and report emission.

pub mod cross_sensor;
pub mod metrics;
pub mod report;
pub mod saliency;
pub mod svg;

pub use cross_sensor::{check_leakage, cross_sensor_eval, evaluate, evaluate_outputs, CrossSensorReport, EvalReport, SensorDelta};
pub use metrics::{
    age_bin_report, classification_metrics, confidence_curve, regression_metrics, AgeBin, AgeBinReport, ClassMetrics,
    ClassReport, ConfidenceCurve, ConfidencePoint, RegReport, AGE_BINS,
};
pub use report::{EvalDocument, SCHEMA_VERSION};
pub use saliency::{grad_cam, saliency_map};

use crate::multitask::TrainError;
use crate::nnet::NnError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("metrics need at least one sample")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("subject {0} appears in both the training and the test data")]
    SubjectLeakage(String),
    #[error("network has no convolutional feature maps before pooling")]
    NoConvLayer,
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(String),
}
