use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Branch, Mode, YNetwork};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Diagonal over row sum of the confusion counts; 0 for a class with no
    /// samples.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Scores predictions against labels.
pub fn score_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::invalid(format!("class index out of range for {classes} classes")));
        }
        confusion[l][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        per_class_accuracy,
        confusion,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_max(row: &[f64]) -> (usize, f64) {
    let best = argmax(row);
    let denom: f64 = row.iter().map(|v| (v - row[best]).exp()).sum();
    (best, 1.0 / denom)
}

/// Eval-mode logits `[N, k]` for a whole dataset, row-major.
pub fn logits(net: &mut YNetwork, ds: &Dataset, branch: Branch) -> Result<Vec<f64>> {
    let images = ds.images().to_dtype(net.dtype);
    let n = ds.len();
    let mut out = Vec::with_capacity(n * net.classes);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let mut tape = Tape::new();
        let x = tape.constant(images.select_rows(&idx)?);
        let z = net.encode(&mut tape, x, branch, Mode::Eval)?;
        let l = net.classify(&mut tape, z)?;
        out.extend_from_slice(tape.value(l).data());
        start = end;
    }
    Ok(out)
}

pub fn predict(net: &mut YNetwork, ds: &Dataset, branch: Branch) -> Result<Vec<usize>> {
    let k = net.classes;
    Ok(logits(net, ds, branch)?.chunks(k).map(argmax).collect())
}

/// Argmax predictions of `net` on `ds` through `branch`, in eval mode.
pub fn evaluate(net: &mut YNetwork, ds: &Dataset, branch: Branch) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    if ds.classes() != net.classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, network {}",
            ds.classes(),
            net.classes
        )));
    }
    let preds = predict(net, ds, branch)?;
    score_predictions(&preds, ds.labels(), net.classes)
}

/// Target-branch argmax per sample when its softmax probability reaches
/// `threshold`.
pub fn pseudo_labels(net: &mut YNetwork, ds: &Dataset, threshold: f64) -> Result<Vec<Option<usize>>> {
    let k = net.classes;
    Ok(logits(net, ds, Branch::Target)?
        .chunks(k)
        .map(|row| {
            let (c, p) = softmax_max(row);
            (p >= threshold).then_some(c)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let e = score_predictions(&labels, &labels, 4).unwrap();
        assert_eq!(e.accuracy, 1.0);
        for c in 0..4 {
            for p in 0..4 {
                assert_eq!(e.confusion[c][p], if c == p { 10 } else { 0 });
            }
        }
        let e = score_predictions(&[2; 40], &labels, 4).unwrap();
        assert_eq!(e.accuracy, 0.25);
        let mean: f64 = e.per_class_accuracy.iter().sum::<f64>() / 4.0;
        assert_eq!(mean, e.accuracy);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(score_predictions(&[], &[], 3).is_err());
    }
}
