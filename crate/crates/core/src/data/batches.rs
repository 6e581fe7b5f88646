//! Batch construction: shuffled minibatches, class-paired batches for the
//! contrastive loss, and two-view augmented batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{apply, AugmentPolicy};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shuffled index batches covering `0..n` once. A trailing batch of one is
/// folded into the previous batch so batch statistics stay defined.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    chunk(idx, batch.max(1))
}

fn chunk(idx: Vec<usize>, batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = idx.chunks(batch).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Batches in which every class present appears at least twice. Indices of
/// each class are shuffled and cut into pairs (a leftover joins the last pair
/// as a triple); the groups are shuffled and packed into batches of about
/// `batch` samples.
#[derive(Debug, Clone)]
pub struct ClassPairedSampler {
    by_class: Vec<Vec<usize>>,
    batch: usize,
}

impl ClassPairedSampler {
    pub fn new(labels: &[usize], classes: usize, batch: usize) -> Result<Self> {
        if batch < 2 {
            return Err(Error::invalid("class-paired batches need a batch size of at least 2"));
        }
        let mut by_class = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
            }
            by_class[l].push(i);
        }
        if let Some(c) = by_class.iter().position(|v| v.len() == 1) {
            return Err(Error::invalid(format!("class {c} has a single sample and cannot be paired")));
        }
        if by_class.iter().all(|v| v.is_empty()) {
            return Err(Error::invalid("no samples to batch"));
        }
        Ok(ClassPairedSampler { by_class, batch })
    }

    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for members in &self.by_class {
            if members.is_empty() {
                continue;
            }
            let mut m = members.clone();
            m.shuffle(rng);
            let mut class_groups: Vec<Vec<usize>> = m.chunks(2).map(|c| c.to_vec()).collect();
            if class_groups.last().is_some_and(|g| g.len() == 1) {
                let last = class_groups.pop().unwrap();
                class_groups.last_mut().unwrap().extend(last);
            }
            groups.extend(class_groups);
        }
        groups.shuffle(rng);
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut cur = Vec::new();
        for g in groups {
            if !cur.is_empty() && cur.len() + g.len() > self.batch {
                out.push(std::mem::take(&mut cur));
            }
            cur.extend(g);
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
}

/// `2B` augmented views of a batch of `B` images.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewedBatch {
    /// `[2B, C, H, W]`; rows `2i` and `2i+1` are views of origin sample `i`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub origin: Vec<usize>,
}

/// Two independent augmentations of every image in `images [B, C, H, W]`.
pub fn make_multiviewed_batch(
    images: &Tensor,
    labels: &[usize],
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<MultiviewedBatch> {
    let s = images.shape();
    if s.len() != 4 || s[0] != labels.len() {
        return Err(Error::shape(
            "make_multiviewed_batch",
            format!("expected [{}, C, H, W] images, got {s:?}", labels.len()),
        ));
    }
    let b = s[0];
    if b < 2 {
        return Err(Error::invalid("a multiviewed batch needs at least 2 samples"));
    }
    for (i, &l) in labels.iter().enumerate() {
        if !labels.iter().enumerate().any(|(j, &m)| j != i && m == l) {
            return Err(Error::invalid(format!(
                "sample {i} is the only one of class {l} in the batch; use class-complete (paired) batch sampling"
            )));
        }
    }
    let shape = [s[1], s[2], s[3]];
    let per = shape.iter().product::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * b * per);
    let mut out_labels = Vec::with_capacity(2 * b);
    let mut origin = Vec::with_capacity(2 * b);
    for i in 0..b {
        let img = &images.data()[i * per..(i + 1) * per];
        for _ in 0..2 {
            let mut view_rng = ChaCha8Rng::seed_from_u64(rng.random());
            data.extend(apply(img, shape, policy, &mut view_rng)?);
            out_labels.push(labels[i]);
            origin.push(i);
        }
    }
    let mut out_shape = s.to_vec();
    out_shape[0] = 2 * b;
    Ok(MultiviewedBatch {
        images: Tensor::new(&out_shape, data, images.dtype())?,
        labels: out_labels,
        origin,
    })
}
