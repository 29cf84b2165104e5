use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{classify, encode, QueryModel};
use crate::par::{self, Exec};
use crate::text::{DomainDataset, Example};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub count: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, macro-F1 and per-class precision/recall. Undefined ratios
/// (no predictions or no support for a class) count as zero.
pub fn classification_metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<EvalMetrics> {
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(Error::IndexOutOfRange {
                op: "metrics class",
                index: p.max(y),
                bound: num_classes,
            });
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = (0..num_classes).map(|y| confusion[y][c]).sum();
            let support: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics { precision, recall, f1, support }
        })
        .collect();
    Ok(EvalMetrics {
        accuracy: ratio(correct, labels.len()),
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / num_classes as f64,
        per_class,
        count: labels.len(),
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of every example, encoded in chunks.
pub fn predict(model: &QueryModel, examples: &[Example], chunk: usize, exec: Exec) -> Result<Vec<usize>> {
    let chunks: Vec<&[Example]> = examples.chunks(chunk.max(1)).collect();
    let preds = par::try_map(exec, &chunks, |ch| {
        let toks: Vec<Vec<usize>> = ch.iter().map(|e| e.tokens.clone()).collect();
        let logits = classify(&model.classifier, &encode(&model.encoder, &toks)?)?;
        Ok::<_, Error>((0..logits.rows()).map(|i| argmax(logits.row(i))).collect::<Vec<_>>())
    })?;
    Ok(preds.into_iter().flatten().collect())
}

pub fn evaluate(model: &QueryModel, dataset: &DomainDataset, chunk: usize, exec: Exec) -> Result<EvalMetrics> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("domain {} has no examples to evaluate", dataset.domain())));
    }
    let preds = predict(model, dataset.examples(), chunk, exec)?;
    let labels: Vec<usize> = dataset.examples().iter().map(|e| e.label).collect();
    classification_metrics(&preds, &labels, dataset.num_classes())
}
