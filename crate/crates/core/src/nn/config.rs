use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Instance,
    None,
}

impl NormKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(NormKind::Batch),
            "instance" => Ok(NormKind::Instance),
            "none" => Ok(NormKind::None),
            other => Err(Error::invalid(format!(
                "unknown normalization '{other}' (expected batch, instance or none)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Instance => "instance",
            NormKind::None => "none",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
}

impl StageConfig {
    /// "Same"-style zero padding for odd kernels.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding();
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// Shape of one encoder branch. Both branches of a [`super::YNetwork`] are
/// built from the same config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stages: Vec<StageConfig>,
    pub norm: NormKind,
    pub embed_dim: usize,
}

impl EncoderConfig {
    /// Three 3x3 stride-2 stages with 16/32/64 channels, embedding size 64.
    pub fn desk_scale(in_channels: usize, size: usize, norm: NormKind) -> Self {
        EncoderConfig {
            in_channels,
            height: size,
            width: size,
            stages: [16, 32, 64]
                .into_iter()
                .map(|channels| StageConfig {
                    kernel: 3,
                    channels,
                    stride: 2,
                })
                .collect(),
            norm,
            embed_dim: 64,
        }
    }

    /// Spatial extent `(h, w)` after every stage, in order.
    pub fn stage_extents(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel == 0 || s.stride == 0 || s.channels == 0 {
                return Err(Error::invalid(format!("stage {i}: kernel, stride and channels must be positive")));
            }
            match (s.output_extent(h), s.output_extent(w)) {
                (Some(nh), Some(nw)) if nh >= 1 && nw >= 1 => {
                    h = nh;
                    w = nw;
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "stage {i}: kernel {} does not fit a {h}x{w} input",
                        s.kernel
                    )))
                }
            }
            out.push((h, w));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("input channels and extents must be positive"));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid("encoder needs at least one convolution stage"));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        let extents = self.stage_extents()?;
        if self.norm == NormKind::Instance {
            if let Some((i, _)) = extents.iter().enumerate().find(|(_, (h, w))| h * w < 2) {
                return Err(Error::invalid(format!(
                    "instance normalization needs >= 2 spatial positions, stage {i} has 1"
                )));
            }
        }
        Ok(())
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.height, self.width]
    }

    pub fn last_channels(&self) -> usize {
        self.stages.last().map_or(self.in_channels, |s| s.channels)
    }
}
