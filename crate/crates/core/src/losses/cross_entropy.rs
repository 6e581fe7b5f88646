use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Mean over samples of `-log softmax(logits)[label]`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    cross_entropy_with(tape, logits, labels, Reduction::Mean)
}

pub fn cross_entropy_with(tape: &mut Tape, logits: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::shape(
            "cross_entropy",
            format!("expected [N,k] logits with N = {} > 0, got {s:?}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::invalid(format!("cross_entropy: label {bad} out of range for {} classes", s[1])));
    }
    let logp = tape.log_softmax(logits)?;
    let picked = tape.gather(logp, labels)?;
    let total = match reduction {
        Reduction::Mean => tape.mean(picked)?,
        Reduction::Sum => tape.sum(picked)?,
    };
    let out = tape.neg(total)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("cross_entropy".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{DType, Tensor};

    fn ce(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[logits.len() / k, k], logits.to_vec(), DType::F64).unwrap());
        let l = cross_entropy(&mut tape, x, labels).unwrap();
        tape.item(l).unwrap()
    }

    #[test]
    fn reference_values() {
        assert!(ce(&[40.0, 0.0, 0.0], 3, &[0]) < 1e-10);
        assert!((ce(&[0.0; 4], 4, &[2]) - 4f64.ln()).abs() < 1e-12);
        let e = 2f64.exp();
        let want = -(e / (e + 1f64.exp() + 1.0)).ln();
        assert!((ce(&[2.0, 1.0, 0.0], 3, &[0]) - want).abs() < 1e-12);
        assert!((want - 0.407606).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3], DType::F64));
        assert!(cross_entropy(&mut tape, x, &[3]).is_err());
    }

    #[test]
    fn sum_is_n_times_mean() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2, 2], vec![0.3, -1.0, 2.0, 0.5], DType::F64).unwrap());
        let m = cross_entropy(&mut tape, x, &[0, 1]).unwrap();
        let s = cross_entropy_with(&mut tape, x, &[0, 1], Reduction::Sum).unwrap();
        assert!((2.0 * tape.item(m).unwrap() - tape.item(s).unwrap()).abs() < 1e-12);
    }
}
