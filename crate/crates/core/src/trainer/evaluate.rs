use super::config::Method;
use crate::data::{Mask, Sample};
use crate::error::{Error, Result};
use crate::metrics::{segmentation_metrics, MetricsRow, MetricsTable};
use crate::models::{
    classifier_forward, discriminator_forward, generator_forward, images_to_tensor, tensor_to_masks, umtl_forward,
    ModelParams, Mode, Network,
};
use crate::nn::Tensor;

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 16;
/// Foreground probability at which predictions are binarized.
pub const MASK_THRESHOLD: f64 = 0.5;

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per row, over the first `class_count` logits (the fake
/// class of a discriminator is ignored).
fn predicted_classes(logits: &Tensor, class_count: usize) -> Vec<usize> {
    let (n, c) = logits.dims2();
    (0..n)
        .map(|i| argmax(&logits.data()[i * c..i * c + class_count]))
        .collect()
}

fn theta(models: &ModelParams) -> Result<&Network> {
    models
        .theta
        .as_ref()
        .ok_or_else(|| Error::invalid("method needs generator parameters"))
}

fn psi(models: &ModelParams) -> Result<&Network> {
    models
        .psi
        .as_ref()
        .ok_or_else(|| Error::invalid("method needs discriminator or classifier parameters"))
}

/// Per-sample metrics of a trained model on annotated samples, in input
/// order. Inference runs without dropout.
pub fn evaluate(models: &ModelParams, method: Method, samples: &[Sample], class_count: usize) -> Result<MetricsTable> {
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| s.image()).collect();
        let x = images_to_tensor(&images)?;
        let (masks, logits): (Option<Vec<Mask>>, Option<Tensor>) = match method {
            Method::Unet => (Some(tensor_to_masks(&generator_forward(theta(models)?, &x, &mut Mode::Eval)?)?), None),
            Method::Umtl => {
                let (m, l) = umtl_forward(theta(models)?, &x, &mut Mode::Eval)?;
                (Some(tensor_to_masks(&m)?), Some(l))
            }
            Method::S4mtl | Method::S2mtl => {
                let probs = generator_forward(theta(models)?, &x, &mut Mode::Eval)?;
                let (main, _) = discriminator_forward(psi(models)?, &x, &probs)?;
                (Some(tensor_to_masks(&probs)?), Some(main))
            }
            Method::Convnet => (None, Some(classifier_forward(psi(models)?, &x)?)),
        };
        let preds = logits.map(|l| predicted_classes(&l, class_count));
        for (i, s) in chunk.iter().enumerate() {
            let (truth_mask, truth_label) = match (s.mask(), s.label()) {
                (Some(m), Some(l)) => (m, l),
                _ => {
                    return Err(Error::SampleValidation {
                        id: s.id().to_string(),
                        message: "evaluation needs an annotated sample".into(),
                    })
                }
            };
            let mut row = MetricsRow::new(s.id());
            if let Some(masks) = &masks {
                let m = segmentation_metrics(truth_mask, &masks[i], MASK_THRESHOLD)?;
                let truth_px = truth_mask.binarize(0.5).iter().filter(|v| **v).count();
                let pred_px = masks[i].binarize(MASK_THRESHOLD).iter().filter(|v| **v).count();
                row = row.with_segmentation(m, truth_px, pred_px);
            }
            match &preds {
                Some(p) => row = row.with_class(truth_label.index(), p[i]),
                None => row.true_class = Some(truth_label.index()),
            }
            rows.push(row);
        }
    }
    Ok(MetricsTable::new(rows))
}
