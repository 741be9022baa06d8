use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::head::Verdict;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Verdict, label: u8) {
        match (predicted == Verdict::Vulnerable, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

pub fn confusion(predictions: &[Verdict], labels: &[u8]) -> Result<ConfusionMatrix, TrainError> {
    if predictions.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            preds: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        cm.record(p, l);
    }
    Ok(cm)
}

/// Metric values, the matrix they came from, and the names of metrics
/// whose denominator was zero (reported as 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub recall: f64,
    #[serde(flatten)]
    pub cm: ConfusionMatrix,
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: ConfusionMatrix) -> Result<MetricsReport, TrainError> {
    let total = cm.total();
    if total == 0 {
        return Err(TrainError::EmptyData);
    }
    let mut undefined = Vec::new();
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut undefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut undefined);
    let f1 = if precision + recall == 0.0 {
        undefined.push("f1".into());
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    Ok(MetricsReport {
        accuracy,
        precision,
        f1,
        recall,
        cm,
        undefined,
    })
}
