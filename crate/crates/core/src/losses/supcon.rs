use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupConConfig {
    pub temperature: f64,
    pub normalize: bool,
}

impl Default for SupConConfig {
    fn default() -> Self {
        SupConConfig {
            temperature: 0.1,
            normalize: true,
        }
    }
}

impl SupConConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("supcon temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Supervised contrastive loss, summed over anchors:
/// `-sum_i 1/|P(i)| sum_{p in P(i)} log(exp(s_ip) / sum_{a != i} exp(s_ia))`
/// with `s = z z^T / tau`. Minimizing it pulls same-label embeddings together.
pub fn supcon_loss(tape: &mut Tape, embeddings: Var, labels: &[usize], cfg: &SupConConfig) -> Result<Var> {
    cfg.validate()?;
    let s = tape.shape(embeddings).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape(
            "supcon_loss",
            format!("expected [{}, d] embeddings, got {s:?}", labels.len()),
        ));
    }
    let n = s[0];
    if n < 2 {
        return Err(Error::invalid("supcon_loss needs at least two embeddings"));
    }
    let mut positives = vec![0usize; n];
    for i in 0..n {
        positives[i] = (0..n).filter(|&p| p != i && labels[p] == labels[i]).count();
        if positives[i] == 0 {
            return Err(Error::invalid(format!(
                "supcon_loss: anchor {i} (label {}) has no positive; sample class-complete batches \
                 with at least two samples per present class",
                labels[i]
            )));
        }
    }
    let dtype = tape.value(embeddings).dtype();

    let z = if cfg.normalize {
        let sq = tape.square(embeddings)?;
        let norms = tape.sum_last_axis(sq)?;
        if tape.value(norms).data().iter().any(|&v| v == 0.0) {
            return Err(Error::invalid("supcon_loss: zero embedding cannot be normalized"));
        }
        let norms = tape.sqrt(norms)?;
        let norms = tape.expand_trailing(norms, &[s[1]])?;
        tape.div(embeddings, norms)?
    } else {
        embeddings
    };
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let sim = tape.scale(sim, 1.0 / cfg.temperature)?;

    // Per-row shift by the largest off-diagonal similarity. It cancels between
    // the two terms because each anchor's positive weights sum to one.
    let sv = tape.value(sim).data().to_vec();
    let mut shift = vec![0.0; n * n];
    let mut mask = vec![0.0; n * n];
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        let row = &sv[i * n..(i + 1) * n];
        let mx = (0..n).filter(|&a| a != i).map(|a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        for a in 0..n {
            shift[i * n + a] = mx;
            if a != i {
                mask[i * n + a] = 1.0;
                if labels[a] == labels[i] {
                    weights[i * n + a] = 1.0 / positives[i] as f64;
                }
            }
        }
    }
    let shift = tape.constant(Tensor::new(&[n, n], shift, dtype)?);
    let mask = tape.constant(Tensor::new(&[n, n], mask, dtype)?);
    let weights = tape.constant(Tensor::new(&[n, n], weights, dtype)?);

    let shifted = tape.sub(sim, shift)?;
    let e = tape.exp(shifted)?;
    let e = tape.mul(e, mask)?;
    let den = tape.sum_last_axis(e)?;
    let logden = tape.log(den)?;
    let first = tape.sum(logden)?;
    let pos = tape.mul(shifted, weights)?;
    let second = tape.sum(pos)?;
    let out = tape.sub(first, second)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("supcon_loss".into()));
    }
    Ok(out)
}
