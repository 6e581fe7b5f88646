use serde::{Deserialize, Serialize};
use crate::error::{Error, Result};

/// Term weights in force when a record was produced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermWeights {
    pub alpha: f64,
    pub cond_weight: f64,
    pub supcon_weight: f64,
}

/// One line of `metrics.jsonl`. Training records carry step-averaged losses;
/// evaluation records carry accuracies. A term that was not evaluated is
/// `null`; a class-conditional term skipped on some steps counts as 0 on
/// those steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: String,
    pub epoch: usize,
    pub split: String,
    pub total_loss: Option<f64>,
    pub ce_src: Option<f64>,
    pub ce_tgt: Option<f64>,
    pub swd: Option<f64>,
    pub cond_swd: Option<f64>,
    pub supcon: Option<f64>,
    pub weights: TermWeights,
    pub steps: usize,
    pub cond_skipped_steps: usize,
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn new(phase: &str, epoch: usize, split: &str) -> Self {
        MetricsRecord {
            phase: phase.to_string(),
            epoch,
            split: split.to_string(),
            total_loss: None,
            ce_src: None,
            ce_tgt: None,
            swd: None,
            cond_swd: None,
            supcon: None,
            weights: TermWeights::default(),
            steps: 0,
            cond_skipped_steps: 0,
            accuracy: None,
            per_class_accuracy: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn weighted_sum(&self) -> f64 {
        let w = &self.weights;
        self.ce_src.unwrap_or(0.0)
            + self.ce_tgt.unwrap_or(0.0)
            + w.alpha * self.swd.unwrap_or(0.0)
            + w.cond_weight * self.cond_swd.unwrap_or(0.0)
            + w.supcon_weight * self.supcon.unwrap_or(0.0)
    }

    /// The logged total matches the weighted terms to `rel_tol` relative to
    /// `max(1, |total|)`. Records without a total pass trivially.
    pub fn is_consistent(&self, rel_tol: f64) -> bool {
        match self.total_loss {
            Some(t) => (t - self.weighted_sum()).abs() <= rel_tol * t.abs().max(1.0),
            None => true,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Running per-step sums for one epoch.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpochAccumulator {
    steps: usize,
    total: f64,
    ce_src: Option<f64>,
    ce_tgt: Option<f64>,
    swd: Option<f64>,
    cond_swd: Option<f64>,
    supcon: Option<f64>,
    cond_skipped: usize,
    correct: usize,
    seen: usize,
}

fn add(slot: &mut Option<f64>, v: Option<f64>) {
    if let Some(v) = v {
        *slot = Some(slot.unwrap_or(0.0) + v);
    }
}

pub(crate) struct StepTerms {
    pub total: f64,
    pub ce_src: Option<f64>,
    pub ce_tgt: Option<f64>,
    pub swd: Option<f64>,
    pub cond_swd: Option<f64>,
    pub supcon: Option<f64>,
    pub cond_skipped: bool,
}

impl StepTerms {
    /// Errors naming the first non-finite term, or the total.
    pub fn check_finite(&self, phase: &str) -> Result<()> {
        let named = [
            ("ce_src", self.ce_src),
            ("ce_tgt", self.ce_tgt),
            ("swd", self.swd),
            ("cond_swd", self.cond_swd),
            ("supcon", self.supcon),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| v.is_some_and(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("{phase} loss term {name} diverged")));
        }
        if !self.total.is_finite() {
            return Err(Error::NonFinite(format!("{phase} total loss diverged")));
        }
        Ok(())
    }
}

impl EpochAccumulator {
    pub fn add_step(&mut self, t: &StepTerms) {
        self.steps += 1;
        self.total += t.total;
        add(&mut self.ce_src, t.ce_src);
        add(&mut self.ce_tgt, t.ce_tgt);
        add(&mut self.swd, t.swd);
        add(&mut self.supcon, t.supcon);
        if t.cond_skipped {
            self.cond_skipped += 1;
            add(&mut self.cond_swd, Some(0.0));
        } else {
            add(&mut self.cond_swd, t.cond_swd);
        }
    }

    pub fn add_predictions(&mut self, correct: usize, seen: usize) {
        self.correct += correct;
        self.seen += seen;
    }

    pub fn finish(&self, phase: &str, epoch: usize, weights: TermWeights, seconds: f64) -> MetricsRecord {
        let n = self.steps.max(1) as f64;
        let avg = |v: Option<f64>| v.map(|s| s / n);
        MetricsRecord {
            total_loss: Some(self.total / n),
            ce_src: avg(self.ce_src),
            ce_tgt: avg(self.ce_tgt),
            swd: avg(self.swd),
            cond_swd: avg(self.cond_swd),
            supcon: avg(self.supcon),
            weights,
            steps: self.steps,
            cond_skipped_steps: self.cond_skipped,
            accuracy: (self.seen > 0).then(|| self.correct as f64 / self.seen as f64),
            seconds,
            ..MetricsRecord::new(phase, epoch, "train")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_consistency() {
        let mut r = MetricsRecord::new("transfer", 3, "train");
        r.weights = TermWeights {
            alpha: 0.5,
            cond_weight: 2.0,
            supcon_weight: 0.0,
        };
        r.ce_src = Some(1.0);
        r.ce_tgt = Some(2.0);
        r.swd = Some(4.0);
        r.cond_swd = Some(0.25);
        r.total_loss = Some(5.5);
        assert!(r.is_consistent(1e-12));
        let back: MetricsRecord = serde_json::from_str(&r.to_json_line()).unwrap();
        assert_eq!(back, r);
        r.total_loss = Some(5.6);
        assert!(!r.is_consistent(1e-6));
    }
}
