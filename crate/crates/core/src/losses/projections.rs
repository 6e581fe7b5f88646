use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// `L` unit vectors in `R^d`, stored as the rows of an `[L, d]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: Tensor,
    seed: u64,
}

impl ProjectionSet {
    /// Builds a set from explicit directions, normalizing each row.
    pub fn from_directions(directions: Tensor, seed: u64) -> Result<Self> {
        let s = directions.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(Error::shape("projections", format!("expected non-empty [L, d], got {s:?}")));
        }
        let d = s[1];
        let mut data = directions.data().to_vec();
        for row in data.chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::invalid("projection direction has zero or non-finite norm"));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(ProjectionSet {
            directions: Tensor::new(s, data, DType::F64)?,
            seed,
        })
    }

    pub fn count(&self) -> usize {
        self.directions.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.directions.shape()[1]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn directions(&self) -> &Tensor {
        &self.directions
    }

    /// Directions as columns, `[d, L]`, in the requested dtype.
    pub(crate) fn as_columns(&self, dtype: DType) -> Tensor {
        let (l, d) = (self.count(), self.dim());
        let src = self.directions.data();
        let mut data = vec![0.0; l * d];
        for i in 0..l {
            for j in 0..d {
                data[j * l + i] = src[i * d + j];
            }
        }
        Tensor::from_parts(vec![d, l], data, dtype)
    }
}

/// Draws `count` directions uniformly on the unit sphere in `R^dim`
/// (normalized standard-normal vectors).
pub fn sample_projections(count: usize, dim: usize, seed: u64) -> Result<ProjectionSet> {
    if dim == 0 {
        return Err(Error::invalid("projection dimension must be at least 1"));
    }
    if count == 0 {
        return Err(Error::invalid("need at least one projection"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                data.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }
    Ok(ProjectionSet {
        directions: Tensor::new(&[count, dim], data, DType::F64)?,
        seed,
    })
}
