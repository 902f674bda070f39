use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::{
    age_bin_report, classification_metrics, confidence_curve, regression_metrics, AgeBinReport, ClassReport,
    ConfidenceCurve, RegReport,
};
use super::EvalError;
use crate::dataman::Modality;
use crate::multitask::{checkpoint_modality, checkpoint_norm_stats, predict, Dataset, MultiTaskOutput};
use crate::nnet::Checkpoint;
use crate::preproc::NormStats;

const EVAL_BATCH: usize = 32;

/// Every metric for one evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub classification: ClassReport,
    pub regression: RegReport,
    pub age_bins: AgeBinReport,
    pub confidence: ConfidenceCurve,
}

/// Other-sensor minus same-sensor changes; positive means degradation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorDelta {
    pub accuracy_drop: f64,
    pub macro_f1_drop: f64,
    pub mae_increase: f64,
    pub rmse_increase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSensorReport {
    pub same_sensor: EvalReport,
    pub other_sensor: EvalReport,
    pub delta: SensorDelta,
}

pub fn evaluate_outputs(outputs: &[MultiTaskOutput], ages: &[u32]) -> Result<EvalReport, EvalError> {
    if outputs.len() != ages.len() {
        return Err(EvalError::LengthMismatch(outputs.len(), ages.len()));
    }
    let truth_groups: Vec<_> = ages
        .iter()
        .map(|&a| crate::dataman::assign_age_group(a).map_err(|_| EvalError::InvalidReport(format!("age {a}"))))
        .collect::<Result<_, _>>()?;
    let pred_groups: Vec<_> = outputs.iter().map(MultiTaskOutput::predicted_group).collect();
    let pred_ages: Vec<f64> = outputs.iter().map(|o| o.age_estimate).collect();
    let true_ages: Vec<f64> = ages.iter().map(|&a| f64::from(a)).collect();
    Ok(EvalReport {
        classification: classification_metrics(&pred_groups, &truth_groups)?,
        regression: regression_metrics(&pred_ages, &true_ages)?,
        age_bins: age_bin_report(&pred_ages, ages),
        confidence: confidence_curve(outputs, ages),
    })
}

pub fn check_leakage<'a>(
    train_subjects: &BTreeSet<String>,
    test_subjects: impl IntoIterator<Item = &'a str>,
) -> Result<(), EvalError> {
    match test_subjects.into_iter().find(|s| train_subjects.contains(*s)) {
        Some(s) => Err(EvalError::SubjectLeakage(s.to_string())),
        None => Ok(()),
    }
}

fn stats_for(ckpt: &Checkpoint, data: &Dataset) -> NormStats {
    checkpoint_norm_stats(ckpt).unwrap_or(match checkpoint_modality(ckpt).unwrap_or(data.modality) {
        Modality::Eye => NormStats::EYE,
        Modality::Iris => NormStats::IRIS,
    })
}

/// Evaluates a checkpoint on a test set whose subjects must not appear in
/// `train_subjects`.
pub fn evaluate(ckpt: &Checkpoint, test: &Dataset, train_subjects: &BTreeSet<String>) -> Result<EvalReport, EvalError> {
    check_leakage(train_subjects, test.examples.iter().map(|e| e.subject_id.as_str()))?;
    let outputs = predict(&ckpt.net, test, stats_for(ckpt, test), EVAL_BATCH)?;
    let ages: Vec<u32> = test.examples.iter().map(|e| e.age).collect();
    evaluate_outputs(&outputs, &ages)
}

/// Runs the same metric pipeline on a same-sensor and an other-sensor test set.
pub fn cross_sensor_eval(
    ckpt: &Checkpoint,
    same_sensor: &Dataset,
    other_sensor: &Dataset,
    train_subjects: &BTreeSet<String>,
) -> Result<CrossSensorReport, EvalError> {
    let same = evaluate(ckpt, same_sensor, train_subjects)?;
    let other = evaluate(ckpt, other_sensor, train_subjects)?;
    let delta = SensorDelta {
        accuracy_drop: same.classification.accuracy - other.classification.accuracy,
        macro_f1_drop: same.classification.macro_f1 - other.classification.macro_f1,
        mae_increase: other.regression.mae - same.regression.mae,
        rmse_increase: other.regression.rmse - same.regression.rmse,
    };
    Ok(CrossSensorReport {
        same_sensor: same,
        other_sensor: other,
        delta,
    })
}
