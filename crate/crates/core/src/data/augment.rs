//! Label-preserving image augmentations on `[C, H, W]` images.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    /// A random multiple of 90 degrees (square images only).
    Rotate90,
    /// Mirror left-right with probability 1/2.
    HorizontalFlip,
    /// Random integer shift in `[-max, max]` on each axis, zero fill.
    Translate(usize),
    GaussianNoise(f64),
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentOp::Rotate90 => write!(f, "rotate90"),
            AugmentOp::HorizontalFlip => write!(f, "hflip"),
            AugmentOp::Translate(m) => write!(f, "translate({m})"),
            AugmentOp::GaussianNoise(s) => write!(f, "noise({s})"),
        }
    }
}

/// Ordered list of ops, e.g. `translate(2),noise(0.05)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentPolicy {
    pub ops: Vec<AugmentOp>,
}

impl AugmentPolicy {
    pub fn new(ops: Vec<AugmentOp>) -> Self {
        AugmentPolicy { ops }
    }

    /// `translate(2)` followed by `noise(0.05)`.
    pub fn standard() -> Self {
        AugmentPolicy::new(vec![AugmentOp::Translate(2), AugmentOp::GaussianNoise(0.05)])
    }

    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }

    /// Parses a comma-separated policy. `none` or an empty string is the
    /// identity policy.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "none" {
            return Ok(AugmentPolicy::default());
        }
        let mut ops = Vec::new();
        for raw in split_top_level(text) {
            let item = raw.trim();
            let (name, arg) = match item.split_once('(') {
                Some((name, rest)) => {
                    let arg = rest
                        .strip_suffix(')')
                        .ok_or_else(|| Error::invalid(format!("augmentation '{item}': missing ')'")))?;
                    (name.trim(), Some(arg.trim()))
                }
                None => (item, None),
            };
            let op = match (name, arg) {
                ("rotate90", None) => AugmentOp::Rotate90,
                ("hflip" | "horizontal-flip", None) => AugmentOp::HorizontalFlip,
                ("translate", a) => AugmentOp::Translate(match a {
                    Some(a) => a
                        .parse()
                        .map_err(|_| Error::invalid(format!("augmentation '{item}': bad shift")))?,
                    None => 2,
                }),
                ("noise" | "gaussian-noise", Some(a)) => {
                    let sigma: f64 = a
                        .parse()
                        .map_err(|_| Error::invalid(format!("augmentation '{item}': bad sigma")))?;
                    if !(sigma >= 0.0 && sigma.is_finite()) {
                        return Err(Error::invalid(format!("augmentation '{item}': sigma must be >= 0")));
                    }
                    AugmentOp::GaussianNoise(sigma)
                }
                _ => return Err(Error::invalid(format!("unknown augmentation '{item}'"))),
            };
            ops.push(op);
        }
        Ok(AugmentPolicy { ops })
    }
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ops.is_empty() {
            return write!(f, "none");
        }
        let parts: Vec<String> = self.ops.iter().map(|o| o.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

fn split_top_level(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

/// Quarter turn counter-clockwise of each channel of a square image.
pub fn rotate90(img: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    debug_assert_eq!(h, w);
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                out[base + (w - 1 - j) * w + i] = img[base + i * w + j];
            }
        }
    }
    out
}

pub fn hflip(img: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for i in 0..h {
            let row = (ch * h + i) * w;
            for j in 0..w {
                out[row + w - 1 - j] = img[row + j];
            }
        }
    }
    out
}

/// `out[y, x] = img[y - dy, x - dx]`, zero where the source is outside.
pub fn translate(img: &[f64], c: usize, h: usize, w: usize, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..h as isize {
            let sy = y - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let sx = x - dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h) * w + (y as usize) * w + x as usize] = img[(ch * h) * w + (sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

pub(crate) fn apply<R: Rng + ?Sized>(img: &[f64], shape: [usize; 3], policy: &AugmentPolicy, rng: &mut R) -> Result<Vec<f64>> {
    let [c, h, w] = shape;
    let mut cur = img.to_vec();
    for op in &policy.ops {
        cur = match *op {
            AugmentOp::Rotate90 => {
                if h != w {
                    return Err(Error::invalid(format!("rotate90 needs a square image, got {h}x{w}")));
                }
                let turns = rng.random_range(0..4);
                for _ in 0..turns {
                    cur = rotate90(&cur, c, h, w);
                }
                cur
            }
            AugmentOp::HorizontalFlip => {
                if rng.random_bool(0.5) {
                    hflip(&cur, c, h, w)
                } else {
                    cur
                }
            }
            AugmentOp::Translate(m) => {
                let m = m as i64;
                let dx = rng.random_range(-m..=m) as isize;
                let dy = rng.random_range(-m..=m) as isize;
                translate(&cur, c, h, w, dx, dy)
            }
            AugmentOp::GaussianNoise(sigma) => {
                if sigma == 0.0 {
                    cur
                } else {
                    let dist = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
                    cur.iter().map(|v| v + dist.sample(rng)).collect()
                }
            }
        };
    }
    Ok(cur)
}

/// Augments one `[C, H, W]` image.
pub fn augment(image: &Tensor, policy: &AugmentPolicy, seed: u64) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("augment", format!("expected [C,H,W], got {s:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = apply(image.data(), [s[0], s[1], s[2]], policy, &mut rng)?;
    Tensor::new(s, data, image.dtype())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DType;

    fn ramp(c: usize, h: usize, w: usize) -> Vec<f64> {
        (0..c * h * w).map(|v| v as f64).collect()
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = ramp(2, 5, 5);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate90(&cur, 2, 5, 5);
        }
        assert_eq!(cur, img);
        assert_ne!(rotate90(&img, 2, 5, 5), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(1, 3, 4);
        assert_eq!(hflip(&hflip(&img, 1, 3, 4), 1, 3, 4), img);
    }

    #[test]
    fn translate_zero_fills_left_band() {
        let img: Vec<f64> = (1..=36).map(|v| v as f64).collect();
        let out = translate(&img, 1, 6, 6, 2, 0);
        for y in 0..6 {
            for x in 0..6 {
                let want = if x < 2 { 0.0 } else { img[y * 6 + x - 2] };
                assert_eq!(out[y * 6 + x], want);
            }
        }
    }

    #[test]
    fn policy_parsing() {
        let p = AugmentPolicy::parse("rotate90, hflip,translate(3),noise(0.1)").unwrap();
        assert_eq!(
            p.ops,
            vec![
                AugmentOp::Rotate90,
                AugmentOp::HorizontalFlip,
                AugmentOp::Translate(3),
                AugmentOp::GaussianNoise(0.1)
            ]
        );
        assert_eq!(AugmentPolicy::parse(&p.to_string()).unwrap(), p);
        assert!(AugmentPolicy::parse("shear").is_err());
        assert!(AugmentPolicy::parse("none").unwrap().is_identity());
    }

    #[test]
    fn seeded_and_shape_preserving() {
        let img = Tensor::new(&[1, 4, 4], ramp(1, 4, 4), DType::F64).unwrap();
        let p = AugmentPolicy::parse("rotate90,translate(1),noise(0.1)").unwrap();
        let a = augment(&img, &p, 9).unwrap();
        assert_eq!(a, augment(&img, &p, 9).unwrap());
        assert_eq!(a.shape(), &[1, 4, 4]);
    }
}
