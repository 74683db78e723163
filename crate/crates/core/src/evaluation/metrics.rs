use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Label;

/// Confusion counts with single-source as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Single, Label::Single) => self.tp += 1,
            (Label::Single, Label::Multi) => self.fp += 1,
            (Label::Multi, Label::Multi) => self.tn += 1,
            (Label::Multi, Label::Single) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics_from_confusion(c: Confusion) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::Evaluation("no predictions to score".into()));
    }
    let mut zero = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut zero);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut zero);
    if precision + recall == 0.0 {
        zero = true;
    }
    Ok(Metrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        zero_division: zero,
        confusion: c,
    })
}

/// Precision, recall, F1 and accuracy of `p >= threshold` decisions.
pub fn classify_metrics(preds: &[(f64, Label)], threshold: f64) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(Error::Evaluation("classify_metrics needs at least one prediction".into()));
    }
    let mut c = Confusion::default();
    for &(p, truth) in preds {
        c.add(Label::from_probability(p, threshold), truth);
    }
    metrics_from_confusion(c)
}

/// Mean and twice the sample standard deviation.
pub fn aggregate_scores(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Evaluation(format!(
            "need at least 2 values to aggregate, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 2.0 * var.sqrt()))
}
