use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// One-vs-rest scores of one class, in percent. A ratio with a zero
/// denominator is reported as 0 and flagged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Plain sample accuracy.
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

pub fn evaluate_metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(shape_err!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        ));
    }
    if labels.is_empty() {
        return Err(Error::Domain("metrics need at least one sample".into()));
    }
    if let Some(v) = predictions.iter().chain(labels).find(|&&v| v >= num_classes) {
        return Err(Error::Domain(format!(
            "class {v} out of range for {num_classes} classes"
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let (precision, pu) = ratio(tp[c], tp[c] + fp[c]);
            let (recall, ru) = ratio(tp[c], tp[c] + fn_[c]);
            let (f1, fu) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                precision_undefined: pu,
                recall_undefined: ru,
                f1_undefined: fu,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / num_classes as f64;
    let correct: usize = tp.iter().sum();
    Ok(Metrics {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: 100.0 * correct as f64 / labels.len() as f64,
        per_class,
    })
}
