//! Limiting the labeled target data to a budget.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetSize {
    Count(usize),
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FewShotBudget {
    pub size: BudgetSize,
    pub balanced: bool,
}

impl FewShotBudget {
    pub fn count(n: usize) -> Self {
        FewShotBudget {
            size: BudgetSize::Count(n),
            balanced: true,
        }
    }

    pub fn full() -> Self {
        FewShotBudget {
            size: BudgetSize::Full,
            balanced: true,
        }
    }

    /// `32`, `128`, ... or `full`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "full" {
            return Ok(FewShotBudget::full());
        }
        s.parse::<usize>()
            .map(FewShotBudget::count)
            .map_err(|_| Error::invalid(format!("budget must be a count or 'full', got '{s}'")))
    }
}

impl fmt::Display for FewShotBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.size {
            BudgetSize::Count(n) => write!(f, "{n}"),
            BudgetSize::Full => write!(f, "full"),
        }
    }
}

/// The labeled subset and the remaining pool. Pool labels are kept only so
/// callers can score pseudo-labels; training must not read them.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    pub labeled: Dataset,
    pub labeled_indices: Vec<usize>,
    pub unlabeled: Option<Dataset>,
    pub unlabeled_indices: Vec<usize>,
}

/// Per-class quotas for a balanced draw of `n` over `counts`: `n / k` each,
/// with the remainder spread over randomly chosen classes.
fn quotas(counts: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let k = counts.len();
    if n < k {
        return Err(Error::invalid(format!("a balanced budget of {n} cannot cover {k} classes")));
    }
    let mut q = vec![n / k; k];
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    for &c in order.iter().take(n % k) {
        q[c] += 1;
    }
    if let Some(c) = (0..k).find(|&c| q[c] > counts[c]) {
        return Err(Error::invalid(format!(
            "class {c} has {} samples but the balanced budget needs {}",
            counts[c], q[c]
        )));
    }
    Ok(q)
}

pub fn subsample_labeled(ds: &Dataset, budget: FewShotBudget, seed: u64) -> Result<FewShotSplit> {
    let n_all = ds.len();
    let n = match budget.size {
        BudgetSize::Full => n_all,
        BudgetSize::Count(n) => n,
    };
    if n == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if n > n_all {
        return Err(Error::invalid(format!("budget {n} exceeds the {n_all} available samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = if n == n_all {
        (0..n_all).collect::<Vec<_>>()
    } else if budget.balanced {
        let q = quotas(&ds.class_counts(), n, &mut rng)?;
        let mut chosen = Vec::with_capacity(n);
        for (c, &want) in q.iter().enumerate() {
            let mut members: Vec<usize> = (0..n_all).filter(|&i| ds.labels()[i] == c).collect();
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..want]);
        }
        chosen
    } else {
        rand::seq::index::sample(&mut rng, n_all, n).into_vec()
    };
    chosen.sort_unstable();
    let mut taken = vec![false; n_all];
    chosen.iter().for_each(|&i| taken[i] = true);
    let rest: Vec<usize> = (0..n_all).filter(|&i| !taken[i]).collect();
    Ok(FewShotSplit {
        labeled: ds.subset(&chosen, ds.split)?,
        labeled_indices: chosen,
        unlabeled: if rest.is_empty() {
            None
        } else {
            Some(ds.subset(&rest, ds.split)?)
        },
        unlabeled_indices: rest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Modality, Split};
    use crate::{DType, Tensor};

    fn ds(k: usize, per: usize) -> Dataset {
        let n = k * per;
        let labels = (0..n).map(|i| i % k).collect();
        Dataset::new(Tensor::zeros(&[n, 1, 2, 2], DType::F32), labels, k, Split::Train, Modality::B).unwrap()
    }

    #[test]
    fn divisible_budget() {
        let s = subsample_labeled(&ds(4, 50), FewShotBudget::count(32), 1).unwrap();
        assert_eq!(s.labeled.class_counts(), vec![8; 4]);
        assert_eq!(s.unlabeled.unwrap().len(), 168);
    }

    #[test]
    fn remainder_spread() {
        let s = subsample_labeled(&ds(17, 100), FewShotBudget::count(1024), 2).unwrap();
        let counts = s.labeled.class_counts();
        assert!(counts.iter().all(|&c| c == 60 || c == 61));
        assert_eq!(counts.iter().sum::<usize>(), 1024);
    }

    #[test]
    fn full_is_identity() {
        let d = ds(3, 10);
        let s = subsample_labeled(&d, FewShotBudget::full(), 3).unwrap();
        assert_eq!(s.labeled, d);
        assert!(s.unlabeled.is_none());
    }

    #[test]
    fn errors() {
        assert!(subsample_labeled(&ds(4, 10), FewShotBudget::count(3), 0).is_err());
        assert!(subsample_labeled(&ds(4, 10), FewShotBudget::count(41), 0).is_err());
    }

    #[test]
    fn deterministic() {
        let d = ds(4, 30);
        assert_eq!(
            subsample_labeled(&d, FewShotBudget::count(20), 7).unwrap(),
            subsample_labeled(&d, FewShotBudget::count(20), 7).unwrap()
        );
    }
}
