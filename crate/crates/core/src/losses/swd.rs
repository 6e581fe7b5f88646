//! Sliced Wasserstein distance between two embedded sample sets.

use rand::Rng;

use super::projections::ProjectionSet;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// `(1/L) * sum_l sum_i (sort(<g_l, source>)_i - sort(<g_l, target>)_i)^2`.
///
/// Each projected set is sorted independently (stable sort); the backward pass
/// routes gradients through the chosen permutation. There is deliberately no
/// `1/M` factor, so the value grows with the sample count.
pub fn swd_distance(tape: &mut Tape, source: Var, target: Var, proj: &ProjectionSet) -> Result<Var> {
    let (ss, ts) = (tape.shape(source).to_vec(), tape.shape(target).to_vec());
    if ss.len() != 2 || ts.len() != 2 {
        return Err(Error::shape("swd", format!("expected [M, d] inputs, got {ss:?} and {ts:?}")));
    }
    if ss[0] != ts[0] {
        return Err(Error::shape(
            "swd",
            format!("sample counts differ ({} vs {}); equalize them first", ss[0], ts[0]),
        ));
    }
    if ss[0] == 0 {
        return Err(Error::shape("swd", "empty sample sets"));
    }
    if ss[1] != ts[1] || ss[1] != proj.dim() {
        return Err(Error::shape(
            "swd",
            format!(
                "embedding dims {} and {} must match projection dim {}",
                ss[1],
                ts[1],
                proj.dim()
            ),
        ));
    }
    let dtype = tape.value(source).dtype();
    let cols = tape.constant(proj.as_columns(dtype));
    let sorted = |tape: &mut Tape, x: Var| -> Result<Var> {
        let p = tape.matmul(x, cols)?;
        let p = tape.transpose(p)?;
        Ok(tape.sort_rows(p)?.0)
    };
    let a = sorted(tape, source)?;
    let b = sorted(tape, target)?;
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    let out = tape.scale(total, 1.0 / proj.count() as f64)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("swd".into()));
    }
    Ok(out)
}

/// Index sets that reconcile unequal sample counts: the larger side is
/// subsampled without replacement down to the smaller count.
pub fn equalize_counts<R: Rng + ?Sized>(source: usize, target: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let m = source.min(target);
    let pick = |n: usize, rng: &mut R| -> Vec<usize> {
        if n == m {
            (0..n).collect()
        } else {
            let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let s = pick(source, rng);
    let t = pick(target, rng);
    (s, t)
}

fn check_labels(labels: &[usize], k: usize, rows: usize, side: &str) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(
            "class_conditional_swd",
            format!("{side}: {} labels for {rows} embeddings", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("{side} label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// Sum over classes present on both sides of the per-class distance; `None`
/// when no class is shared.
pub(crate) fn class_conditional_terms<R: Rng + ?Sized>(
    tape: &mut Tape,
    source: Var,
    source_labels: &[usize],
    target: Var,
    target_labels: &[usize],
    proj: &ProjectionSet,
    classes: usize,
    rng: &mut R,
) -> Result<Option<Var>> {
    check_labels(source_labels, classes, tape.shape(source)[0], "source")?;
    check_labels(target_labels, classes, tape.shape(target)[0], "target")?;
    let mut total: Option<Var> = None;
    for class in 0..classes {
        let si: Vec<usize> = (0..source_labels.len()).filter(|&i| source_labels[i] == class).collect();
        let ti: Vec<usize> = (0..target_labels.len()).filter(|&i| target_labels[i] == class).collect();
        if si.is_empty() || ti.is_empty() {
            continue;
        }
        let (ps, pt) = equalize_counts(si.len(), ti.len(), rng);
        let si: Vec<usize> = ps.iter().map(|&p| si[p]).collect();
        let ti: Vec<usize> = pt.iter().map(|&p| ti[p]).collect();
        let s = tape.index_select(source, &si)?;
        let t = tape.index_select(target, &ti)?;
        let d = swd_distance(tape, s, t, proj)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, d)?,
            None => d,
        });
    }
    Ok(total)
}

/// Sum over classes `j` of the distance between the class-`j` subsets of each
/// side. Classes missing from either side are skipped; per-class counts are
/// reconciled with [`equalize_counts`].
#[allow(clippy::too_many_arguments)]
pub fn class_conditional_swd<R: Rng + ?Sized>(
    tape: &mut Tape,
    source: Var,
    source_labels: &[usize],
    target: Var,
    target_labels: &[usize],
    proj: &ProjectionSet,
    classes: usize,
    rng: &mut R,
) -> Result<Var> {
    class_conditional_terms(tape, source, source_labels, target, target_labels, proj, classes, rng)?
        .ok_or_else(|| Error::invalid("class_conditional_swd: no overlapping classes between the two sides"))
}

/// Estimator settings. Ties under projection are broken by a stable sort and
/// unequal counts are reconciled by [`equalize_counts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwdConfig {
    pub projections: usize,
}

impl Default for SwdConfig {
    fn default() -> Self {
        SwdConfig { projections: 50 }
    }
}

impl SwdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projections == 0 {
            return Err(Error::invalid("swd needs at least one projection"));
        }
        Ok(())
    }

    pub fn sample(&self, dim: usize, seed: u64) -> Result<ProjectionSet> {
        self.validate()?;
        super::projections::sample_projections(self.projections, dim, seed)
    }
}
