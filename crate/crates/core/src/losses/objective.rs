use rand::Rng;

use super::cross_entropy::{cross_entropy_with, Reduction};
use super::projections::ProjectionSet;
use super::swd::{class_conditional_terms, equalize_counts, swd_distance};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Branch, Mode, YNetwork};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferWeights {
    pub alpha: f64,
    pub cond_weight: f64,
    /// Average the target CE over its batch instead of summing it.
    pub normalize_target_ce: bool,
}

impl Default for TransferWeights {
    fn default() -> Self {
        TransferWeights {
            alpha: 1.0,
            cond_weight: 1.0,
            normalize_target_ce: false,
        }
    }
}

/// One optimization step's worth of inputs.
#[derive(Debug, Clone, Copy)]
pub struct TransferBatch<'a> {
    pub source_x: &'a Tensor,
    pub source_y: &'a [usize],
    pub target_x: &'a Tensor,
    pub target_y: &'a [usize],
    /// Unlabeled target images for the alignment terms.
    pub unlabeled_x: Option<&'a Tensor>,
    /// Confident pseudo-label per unlabeled image, `None` when below threshold.
    pub pseudo_labels: &'a [Option<usize>],
}

/// Unweighted term values. `swd` / `cond_swd` are `None` when the term was
/// not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermBreakdown {
    pub ce_src: f64,
    pub ce_tgt: f64,
    pub swd: Option<f64>,
    pub cond_swd: Option<f64>,
    /// The class-conditional term was requested but had nothing to align.
    pub cond_skipped: bool,
    pub total: f64,
}

impl TermBreakdown {
    pub fn weighted_sum(&self, w: &TransferWeights) -> f64 {
        self.ce_src + self.ce_tgt + w.alpha * self.swd.unwrap_or(0.0) + w.cond_weight * self.cond_swd.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TransferLoss {
    pub total: Var,
    pub terms: TermBreakdown,
    /// Labeled-target logits `[O, k]`.
    pub target_logits: Var,
}

/// `CE_src + CE_tgt + alpha * SWD(phi(source), psi(unlabeled))
///  + cond_weight * sum_j SWD(class j of source, pseudo-class j of unlabeled)`.
///
/// The target branch runs once over labeled and unlabeled images together.
/// Terms with zero weight are not evaluated.
pub fn transfer_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    net: &mut YNetwork,
    batch: &TransferBatch<'_>,
    proj: &ProjectionSet,
    weights: &TransferWeights,
    mode: Mode,
    rng: &mut R,
) -> Result<TransferLoss> {
    let n_tgt = batch.target_y.len();
    if batch.source_y.is_empty() || n_tgt == 0 {
        return Err(Error::invalid("transfer_objective: labeled batches must be non-empty"));
    }
    if batch.target_x.shape().first() != Some(&n_tgt) {
        return Err(Error::shape(
            "transfer_objective",
            format!("{n_tgt} target labels for images {:?}", batch.target_x.shape()),
        ));
    }
    let unlabeled = batch.unlabeled_x.filter(|u| u.shape().first().is_some_and(|&n| n > 0));
    if let Some(u) = unlabeled {
        if batch.pseudo_labels.len() != u.shape()[0] && weights.cond_weight > 0.0 {
            return Err(Error::shape(
                "transfer_objective",
                format!("{} pseudo-labels for {} unlabeled images", batch.pseudo_labels.len(), u.shape()[0]),
            ));
        }
    }

    let xs = tape.constant(batch.source_x.clone());
    let zs = net.encode(tape, xs, Branch::Source, mode)?;
    let logits_s = net.classify(tape, zs)?;
    let ce_src = cross_entropy_with(tape, logits_s, batch.source_y, Reduction::Mean)?;

    let xt = match unlabeled {
        Some(u) => tape.constant(Tensor::concat_rows(&[batch.target_x, u])?),
        None => tape.constant(batch.target_x.clone()),
    };
    let zt_all = net.encode(tape, xt, Branch::Target, mode)?;
    let total_rows = tape.shape(zt_all)[0];
    let zt = if unlabeled.is_some() {
        tape.index_select(zt_all, &(0..n_tgt).collect::<Vec<_>>())?
    } else {
        zt_all
    };
    let logits_t = net.classify(tape, zt)?;
    let reduction = if weights.normalize_target_ce {
        Reduction::Mean
    } else {
        Reduction::Sum
    };
    let ce_tgt = cross_entropy_with(tape, logits_t, batch.target_y, reduction)?;

    let mut terms = TermBreakdown {
        ce_src: tape.item(ce_src)?,
        ce_tgt: tape.item(ce_tgt)?,
        ..TermBreakdown::default()
    };
    let mut total = tape.add(ce_src, ce_tgt)?;

    let zu = match unlabeled {
        Some(_) => Some(tape.index_select(zt_all, &(n_tgt..total_rows).collect::<Vec<_>>())?),
        None => None,
    };

    if weights.alpha > 0.0 {
        if let Some(zu) = zu {
            let (is, iu) = equalize_counts(tape.shape(zs)[0], tape.shape(zu)[0], rng);
            let a = tape.index_select(zs, &is)?;
            let b = tape.index_select(zu, &iu)?;
            let d = swd_distance(tape, a, b, proj)?;
            terms.swd = Some(tape.item(d)?);
            let w = tape.scale(d, weights.alpha)?;
            total = tape.add(total, w)?;
        }
    }

    if weights.cond_weight > 0.0 {
        let confident: Vec<usize> = (0..batch.pseudo_labels.len())
            .filter(|&i| batch.pseudo_labels[i].is_some())
            .collect();
        let cond = match zu {
            Some(zu) if !confident.is_empty() => {
                let labels: Vec<usize> = confident.iter().map(|&i| batch.pseudo_labels[i].unwrap()).collect();
                let zc = tape.index_select(zu, &confident)?;
                class_conditional_terms(tape, zs, batch.source_y, zc, &labels, proj, net.classes, rng)?
            }
            _ => None,
        };
        match cond {
            Some(c) => {
                terms.cond_swd = Some(tape.item(c)?);
                let w = tape.scale(c, weights.cond_weight)?;
                total = tape.add(total, w)?;
            }
            None => terms.cond_skipped = true,
        }
    }

    terms.total = tape.item(total)?;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("transfer_objective total".into()));
    }
    Ok(TransferLoss {
        total,
        terms,
        target_logits: logits_t,
    })
}
