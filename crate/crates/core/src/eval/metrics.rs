use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataman::{AgeGroup, MAX_AGE, MIN_AGE};
use crate::multitask::MultiTaskOutput;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassReport {
    pub n: usize,
    pub accuracy: f64,
    pub young: ClassMetrics,
    pub old: ClassMetrics,
    pub macro_f1: f64,
    /// `confusion[truth][predicted]`, young first.
    pub confusion: [[usize; 2]; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub within_1yr: f64,
    pub within_2yr: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_metrics(pred: &[AgeGroup], truth: &[AgeGroup]) -> Result<ClassReport, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let class = |c: usize| {
        let tp = confusion[c][c];
        let predicted = confusion[0][c] + confusion[1][c];
        let actual = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics { precision, recall, f1 }
    };
    let (young, old) = (class(0), class(1));
    Ok(ClassReport {
        n: pred.len(),
        accuracy: ratio(confusion[0][0] + confusion[1][1], pred.len()),
        young,
        old,
        macro_f1: (young.f1 + old.f1) / 2.0,
        confusion,
    })
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegReport, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq, mut w1, mut w2) = (0.0, 0.0, 0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        let d = (p - t).abs();
        abs += d;
        sq += d * d;
        w1 += usize::from(d <= 1.0);
        w2 += usize::from(d <= 2.0);
    }
    let mae = abs / n;
    // sqrt can land one ulp below mae.
    let rmse = (sq / n).sqrt().max(mae);
    Ok(RegReport {
        n: pred.len(),
        mae,
        rmse,
        within_1yr: ratio(w1, pred.len()),
        within_2yr: ratio(w2, pred.len()),
    })
}

pub const AGE_BINS: [(u32, u32); 4] = [(4, 6), (7, 9), (10, 12), (13, 16)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBin {
    pub label: String,
    pub min_age: u32,
    pub max_age: u32,
    pub n: usize,
    /// Absent when the bin holds no samples.
    pub metrics: Option<RegReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBinReport {
    pub bins: Vec<AgeBin>,
}

pub fn age_bin_report(pred: &[f64], truth: &[u32]) -> AgeBinReport {
    let bins = AGE_BINS
        .iter()
        .map(|&(lo, hi)| {
            let (p, t): (Vec<f64>, Vec<f64>) = pred
                .iter()
                .zip(truth)
                .filter(|(_, &a)| (lo..=hi).contains(&a))
                .map(|(&p, &a)| (p, f64::from(a)))
                .unzip();
            AgeBin {
                label: format!("{lo}-{hi}"),
                min_age: lo,
                max_age: hi,
                n: p.len(),
                metrics: regression_metrics(&p, &t).ok(),
            }
        })
        .collect();
    AgeBinReport { bins }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidencePoint {
    pub age: u32,
    pub count: usize,
    pub mean_confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceCurve {
    pub points: Vec<ConfidencePoint>,
}

pub fn confidence_curve(outputs: &[MultiTaskOutput], truth: &[u32]) -> ConfidenceCurve {
    let points = (MIN_AGE..=MAX_AGE)
        .map(|age| {
            let c: Vec<f64> = outputs
                .iter()
                .zip(truth)
                .filter(|(_, &a)| a == age)
                .map(|(o, _)| o.confidence)
                .collect();
            ConfidencePoint {
                age,
                count: c.len(),
                mean_confidence: (!c.is_empty()).then(|| c.iter().sum::<f64>() / c.len() as f64),
            }
        })
        .collect();
    ConfidenceCurve { points }
}
