use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsMetrics {
    pub accuracy: f64,
    /// F1 per class; 0 where precision or recall is undefined.
    pub f1: Vec<f64>,
}

pub fn classification_metrics(predictions: &[usize], labels: &[usize], class_count: usize) -> Result<ClsMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(c) = predictions.iter().chain(labels).find(|&&c| c >= class_count) {
        return Err(Error::invalid(format!("class {c} out of range for {class_count} classes")));
    }
    let mut tp = vec![0usize; class_count];
    let mut predicted = vec![0usize; class_count];
    let mut actual = vec![0usize; class_count];
    for (&p, &l) in predictions.iter().zip(labels) {
        predicted[p] += 1;
        actual[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let accuracy = if labels.is_empty() {
        0.0
    } else {
        correct as f64 / labels.len() as f64
    };
    let f1 = (0..class_count)
        .map(|c| {
            if predicted[c] == 0 || actual[c] == 0 || tp[c] == 0 {
                return 0.0;
            }
            let prec = tp[c] as f64 / predicted[c] as f64;
            let rec = tp[c] as f64 / actual[c] as f64;
            2.0 * prec * rec / (prec + rec)
        })
        .collect();
    Ok(ClsMetrics { accuracy, f1 })
}
