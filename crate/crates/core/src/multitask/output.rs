use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::TrainError;
use crate::dataman::AgeGroup;
use crate::nnet::OcularNet;
use crate::preproc::NormStats;

/// Per-sample network output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskOutput {
    pub class_logits: [f64; 2],
    pub age_estimate: f64,
    /// Largest softmax probability over the two classes.
    pub confidence: f64,
}

impl MultiTaskOutput {
    pub fn new(class_logits: [f64; 2], age_estimate: f64) -> Self {
        let m = class_logits[0].max(class_logits[1]);
        let e = class_logits.map(|z| (z - m).exp());
        let confidence = e[0].max(e[1]) / (e[0] + e[1]);
        Self {
            class_logits,
            age_estimate,
            confidence,
        }
    }

    /// Argmax class; ties go to the young group.
    pub fn predicted_group(&self) -> AgeGroup {
        if self.class_logits[1] > self.class_logits[0] {
            AgeGroup::Old
        } else {
            AgeGroup::Young
        }
    }
}

/// Evaluation-mode predictions for every example, in dataset order.
pub fn predict(
    net: &OcularNet<f32>,
    data: &Dataset,
    stats: NormStats,
    batch_size: usize,
) -> Result<Vec<MultiTaskOutput>, TrainError> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = data.batch(chunk, stats, None)?;
        let h = net.infer(x)?;
        for i in 0..chunk.len() {
            let l = &h.logits.data()[2 * i..2 * i + 2];
            out.push(MultiTaskOutput::new(
                [f64::from(l[0]), f64::from(l[1])],
                f64::from(h.ages.data()[i]),
            ));
        }
    }
    Ok(out)
}
