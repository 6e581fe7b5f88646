//! Paired two-modality synthetic images.
//!
//! Each class owns a latent prototype (a scaled simplex vertex). A sample is
//! its prototype plus Gaussian jitter, rendered through a fixed set of smooth
//! oriented gratings. Modality A squashes the rendering with `tanh`;
//! modality B multiplies it by a per-sample log-uniform gain and optional
//! speckle, then compresses with a signed square root.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::dataset::{Dataset, Modality, Split};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    /// Height and width.
    pub size: usize,
    /// Raised to `classes` when smaller.
    pub latent_dim: usize,
    pub separation: f64,
    pub jitter: f64,
    pub a_gain: f64,
    pub b_gain_min: f64,
    pub b_gain_max: f64,
    /// Log-normal speckle sigma; 0 disables it.
    pub b_speckle: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            per_class: 200,
            channels: 1,
            size: 16,
            latent_dim: 8,
            separation: 3.0,
            jitter: 1.0,
            a_gain: 0.5,
            b_gain_min: 0.1,
            b_gain_max: 10.0,
            b_speckle: 0.3,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(format!("synthetic spec: {msg}")));
        if self.classes < 2 {
            return bad(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.size < 8 {
            return bad(format!("size must be >= 8, got {}", self.size));
        }
        if self.per_class < 4 {
            return bad(format!("per_class must be >= 4, got {}", self.per_class));
        }
        if self.channels == 0 || self.latent_dim == 0 {
            return bad("channels and latent_dim must be positive".into());
        }
        let finite = [
            self.separation,
            self.jitter,
            self.a_gain,
            self.b_gain_min,
            self.b_gain_max,
            self.b_speckle,
            self.noise,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.separation <= 0.0 || self.a_gain <= 0.0 {
            return bad("separation and a_gain must be > 0".into());
        }
        if self.jitter < 0.0 || self.noise < 0.0 || self.b_speckle < 0.0 {
            return bad("jitter, noise and b_speckle must be >= 0".into());
        }
        if !(self.b_gain_min > 0.0 && self.b_gain_min <= self.b_gain_max) {
            return bad(format!(
                "gain range must satisfy 0 < min <= max, got [{}, {}]",
                self.b_gain_min, self.b_gain_max
            ));
        }
        Ok(())
    }

    pub fn canonical_text(&self) -> String {
        format!(
            "classes = {}\nper_class = {}\nchannels = {}\nsize = {}\nlatent_dim = {}\nseparation = {:?}\n\
             jitter = {:?}\na_gain = {:?}\nb_gain_min = {:?}\nb_gain_max = {:?}\nb_speckle = {:?}\n\
             noise = {:?}\nseed = {}\n",
            self.classes,
            self.per_class,
            self.channels,
            self.size,
            self.latent_dim,
            self.separation,
            self.jitter,
            self.a_gain,
            self.b_gain_min,
            self.b_gain_max,
            self.b_speckle,
            self.noise,
            self.seed
        )
    }

    /// Hex SHA-256 of [`canonical_text`](Self::canonical_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn effective_latent_dim(&self) -> usize {
        self.latent_dim.max(self.classes)
    }
}

fn gratings(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (c, s) = (spec.channels, spec.size);
    (0..spec.effective_latent_dim())
        .map(|_| {
            let mut pattern = Vec::with_capacity(c * s * s);
            for _ in 0..c {
                let freq = rng.random_range(0.5..3.0);
                let theta = rng.random_range(0.0..PI);
                let phase = rng.random_range(0.0..2.0 * PI);
                let (fx, fy) = (freq * theta.cos(), freq * theta.sin());
                for h in 0..s {
                    for w in 0..s {
                        let arg = 2.0 * PI * (fx * w as f64 + fy * h as f64) / s as f64 + phase;
                        pattern.push(arg.cos());
                    }
                }
            }
            let rms = (pattern.iter().map(|v| v * v).sum::<f64>() / pattern.len() as f64).sqrt();
            pattern.iter().map(|v| v / rms).collect()
        })
        .collect()
}

fn prototypes(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let (k, d) = (spec.classes, spec.effective_latent_dim());
    let norm = ((k - 1) as f64 / k as f64).sqrt();
    (0..k)
        .map(|j| {
            (0..d)
                .map(|m| {
                    let v = if m == j { 1.0 } else { 0.0 } - if m < k { 1.0 / k as f64 } else { 0.0 };
                    spec.separation * v / norm
                })
                .collect()
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the full paired datasets (split tag [`Split::Full`]). Sample `i`
/// has label `i % classes` in both modalities.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut basis_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    basis_rng.set_stream(1);
    let basis = gratings(spec, &mut basis_rng);
    let protos = prototypes(spec);
    let d = spec.effective_latent_dim();
    let pixels = spec.channels * spec.size * spec.size;
    let n = spec.classes * spec.per_class;

    let mut latent_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    latent_rng.set_stream(2);
    let mut a_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    a_rng.set_stream(3);
    let mut b_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    b_rng.set_stream(4);

    let scale = 1.0 / (d as f64).sqrt();
    let (log_lo, log_hi) = (spec.b_gain_min.ln(), spec.b_gain_max.ln());
    let mut a_data = Vec::with_capacity(n * pixels);
    let mut b_data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    let mut raw = vec![0.0; pixels];
    for i in 0..n {
        let label = i % spec.classes;
        labels.push(label);
        raw.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..d {
            let z = (protos[label][m] + spec.jitter * normal(&mut latent_rng)) * scale;
            for (r, b) in raw.iter_mut().zip(&basis[m]) {
                *r += z * b;
            }
        }
        for &r in &raw {
            a_data.push((spec.a_gain * r).tanh() + spec.noise * normal(&mut a_rng));
        }
        let gain = if log_hi > log_lo {
            b_rng.random_range(log_lo..=log_hi).exp()
        } else {
            spec.b_gain_min
        };
        for &r in &raw {
            let speckle = if spec.b_speckle > 0.0 {
                (spec.b_speckle * normal(&mut b_rng) - 0.5 * spec.b_speckle * spec.b_speckle).exp()
            } else {
                1.0
            };
            let v = gain * r * speckle;
            b_data.push(v.signum() * v.abs().sqrt() + spec.noise * normal(&mut b_rng));
        }
    }
    let shape = [n, spec.channels, spec.size, spec.size];
    let a = Dataset::new(
        Tensor::new(&shape, a_data, DType::F32)?,
        labels.clone(),
        spec.classes,
        Split::Full,
        Modality::A,
    )?;
    let b = Dataset::new(Tensor::new(&shape, b_data, DType::F32)?, labels, spec.classes, Split::Full, Modality::B)?;
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, split: Split) -> Option<&Dataset> {
        match split {
            Split::Train => Some(&self.train),
            Split::Val => Some(&self.val),
            Split::Test => Some(&self.test),
            Split::Full => None,
        }
    }
}

/// Row indices of a stratified 70/15/15 split. Depends only on the labels and
/// the seed, so paired datasets split identically.
pub fn stratified_indices(labels: &[usize], classes: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<usize>; 3] = Default::default();
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 3 {
            return Err(Error::invalid(format!(
                "class {class} has {} samples; a stratified split needs at least 3",
                idx.len()
            )));
        }
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let held = ((idx.len() as f64 * 0.15).floor() as usize).max(1);
        let train = idx.len() - 2 * held;
        out[0].extend_from_slice(&idx[..train]);
        out[1].extend_from_slice(&idx[train..train + held]);
        out[2].extend_from_slice(&idx[train + held..]);
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

pub fn stratified_split(ds: &Dataset, seed: u64) -> Result<Splits> {
    let [train, val, test] = stratified_indices(ds.labels(), ds.classes(), seed)?;
    Ok(Splits {
        train: ds.subset(&train, Split::Train)?,
        val: ds.subset(&val, Split::Val)?,
        test: ds.subset(&test, Split::Test)?,
    })
}
