//! The Y-shaped network: two identically shaped convolutional encoders (one
//! per modality) feeding a single shared classifier head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, NormKind};
use super::norm::{batch_norm_forward, instance_norm_forward, BatchNormState, InstanceNormParams, Mode};
use crate::autodiff::{Parameter, ParameterSet, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Source,
    Target,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Source => "source",
            Branch::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Branch::Source),
            "target" => Ok(Branch::Target),
            other => Err(Error::invalid(format!("unknown branch '{other}' (expected source or target)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Norm {
    Batch(BatchNormState),
    Instance(InstanceNormParams),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub weight: Parameter,
    /// Only present without normalization; a norm layer's shift subsumes it.
    pub bias: Option<Parameter>,
    pub norm: Norm,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Dense {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    pub fn in_features(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value().shape()[1]
    }
}

impl ParameterSet for Dense {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// conv -> norm -> ReLU per stage, then global average pooling and a dense
/// projection to the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub stages: Vec<ConvStage>,
    pub projection: Dense,
}

impl Encoder {
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let mut h = x;
        for stage in &mut self.stages {
            let w = tape.param(&stage.weight);
            let b = stage.bias.as_ref().map(|b| tape.param(b));
            h = tape.conv2d(h, w, b, stage.stride, stage.padding)?;
            h = match &mut stage.norm {
                Norm::Batch(state) => batch_norm_forward(tape, h, state, mode)?,
                Norm::Instance(params) => instance_norm_forward(tape, h, params)?,
                Norm::None => h,
            };
            h = tape.relu(h)?;
        }
        let s = tape.shape(h).to_vec();
        let (n, c, area) = (s[0], s[1], s[2] * s[3]);
        let flat = tape.reshape(h, &[n, c, area])?;
        let pooled = tape.sum_last_axis(flat)?;
        let pooled = tape.scale(pooled, 1.0 / area as f64)?;
        self.projection.forward(tape, pooled)
    }

    fn copy_from(&mut self, other: &Encoder) {
        let mut values = Vec::new();
        other.for_each_param(&mut |p| values.push(p.value().clone()));
        let mut it = values.into_iter();
        self.for_each_param_mut(&mut |p| {
            p.set_value(it.next().expect("identical architectures"))
                .expect("identical shapes");
        });
        for (dst, src) in self.stages.iter_mut().zip(&other.stages) {
            if let (Norm::Batch(d), Norm::Batch(s)) = (&mut dst.norm, &src.norm) {
                d.running_mean = s.running_mean.clone();
                d.running_var = s.running_var.clone();
            }
        }
    }
}

impl ParameterSet for Encoder {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        for s in &self.stages {
            f(&s.weight);
            if let Some(b) = &s.bias {
                f(b);
            }
            match &s.norm {
                Norm::Batch(st) => {
                    f(&st.scale);
                    f(&st.shift);
                }
                Norm::Instance(p) => {
                    f(&p.scale);
                    f(&p.shift);
                }
                Norm::None => {}
            }
        }
        self.projection.for_each_param(f);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for s in &mut self.stages {
            f(&mut s.weight);
            if let Some(b) = &mut s.bias {
                f(b);
            }
            match &mut s.norm {
                Norm::Batch(st) => {
                    f(&mut st.scale);
                    f(&mut st.shift);
                }
                Norm::Instance(p) => {
                    f(&mut p.scale);
                    f(&mut p.shift);
                }
                Norm::None => {}
            }
        }
        self.projection.for_each_param_mut(f);
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64, dtype: DType) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data, dtype)
}

/// Weight bound `sqrt(6 / fan_in)` for layers followed by a rectifier.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn build_encoder(prefix: &str, cfg: &EncoderConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Encoder {
    let mut stages = Vec::with_capacity(cfg.stages.len());
    let mut in_ch = cfg.in_channels;
    for (i, s) in cfg.stages.iter().enumerate() {
        let fan_in = in_ch * s.kernel * s.kernel;
        let weight = Parameter::new(
            format!("{prefix}.conv{i}.weight"),
            uniform_tensor(rng, &[s.channels, in_ch, s.kernel, s.kernel], he_bound(fan_in), dtype),
        );
        let norm_prefix = format!("{prefix}.norm{i}");
        let (bias, norm) = match cfg.norm {
            NormKind::Batch => (None, Norm::Batch(BatchNormState::new(&norm_prefix, s.channels, dtype))),
            NormKind::Instance => (None, Norm::Instance(InstanceNormParams::new(&norm_prefix, s.channels, dtype))),
            NormKind::None => (
                Some(Parameter::new(format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[s.channels], dtype))),
                Norm::None,
            ),
        };
        stages.push(ConvStage {
            weight,
            bias,
            norm,
            stride: s.stride,
            padding: s.padding(),
        });
        in_ch = s.channels;
    }
    let projection = Dense {
        weight: Parameter::new(
            format!("{prefix}.proj.weight"),
            uniform_tensor(rng, &[in_ch, cfg.embed_dim], he_bound(in_ch), dtype),
        ),
        bias: Parameter::new(format!("{prefix}.proj.bias"), Tensor::zeros(&[cfg.embed_dim], dtype)),
    };
    Encoder { stages, projection }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YNetwork {
    pub config: EncoderConfig,
    pub classes: usize,
    pub dtype: DType,
    pub source: Encoder,
    pub target: Encoder,
    pub head: Dense,
}

impl YNetwork {
    /// Deterministic initialization: conv and dense weights uniform in
    /// `+-sqrt(6/fan_in)` (head: `+-1/sqrt(fan_in)`), biases and shifts 0,
    /// norm scales 1. The target encoder gets its own draws unless `tied`.
    pub fn init(config: EncoderConfig, classes: usize, dtype: DType, seed: u64, tied: bool) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::invalid("classifier needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = build_encoder("source", &config, dtype, &mut rng);
        let mut target = build_encoder("target", &config, dtype, &mut rng);
        if tied {
            target.copy_from(&source);
        }
        let d = config.embed_dim;
        let head = Dense {
            weight: Parameter::new("head.weight", uniform_tensor(&mut rng, &[d, classes], 1.0 / (d as f64).sqrt(), dtype)),
            bias: Parameter::new("head.bias", Tensor::zeros(&[classes], dtype)),
        };
        Ok(YNetwork {
            config,
            classes,
            dtype,
            source,
            target,
            head,
        })
    }

    pub fn encoder(&self, branch: Branch) -> &Encoder {
        match branch {
            Branch::Source => &self.source,
            Branch::Target => &self.target,
        }
    }

    pub fn encoder_mut(&mut self, branch: Branch) -> &mut Encoder {
        match branch {
            Branch::Source => &mut self.source,
            Branch::Target => &mut self.target,
        }
    }

    /// Embeds `x [N,C,H,W]` with the chosen branch, returning `[N, d]`.
    pub fn encode(&mut self, tape: &mut Tape, x: Var, branch: Branch, mode: Mode) -> Result<Var> {
        let s = tape.shape(x);
        let expected = self.config.input_shape(s.first().copied().unwrap_or(0));
        if s != expected || s[0] == 0 {
            return Err(Error::shape(
                "encode",
                format!(
                    "{} encoder expects [N,{},{},{}] with N >= 1, got {s:?}",
                    branch.as_str(),
                    expected[1],
                    expected[2],
                    expected[3]
                ),
            ));
        }
        if tape.value(x).dtype() != self.dtype {
            return Err(Error::DType {
                op: "encode",
                lhs: tape.value(x).dtype(),
                rhs: self.dtype,
            });
        }
        self.encoder_mut(branch).forward(tape, x, mode)
    }

    /// Unnormalized logits `[N, k]` for embeddings `[N, d]`.
    pub fn classify(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let s = tape.shape(z);
        if s.len() != 2 || s[1] != self.config.embed_dim {
            return Err(Error::shape(
                "classify",
                format!("expected [N,{}] embeddings, got {s:?}", self.config.embed_dim),
            ));
        }
        self.head.forward(tape, z)
    }

    /// Overwrites the target encoder with the source encoder (parameters and
    /// running statistics).
    pub fn copy_source_to_target(&mut self) {
        let src = self.source.clone();
        self.target.copy_from(&src);
    }

    /// `(name, shape)` per parameter of one branch, with the branch prefix removed.
    pub fn branch_signature(&self, branch: Branch) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.encoder(branch).for_each_param(&mut |p| {
            let local = p.name().split_once('.').map_or(p.name(), |(_, rest)| rest);
            out.push((local.to_string(), p.value().shape().to_vec()));
        });
        out
    }

    pub fn groups_mut(&mut self, groups: Groups) -> GroupView<'_> {
        GroupView { net: self, groups }
    }
}

impl ParameterSet for YNetwork {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        self.source.for_each_param(f);
        self.target.for_each_param(f);
        self.head.for_each_param(f);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.source.for_each_param_mut(f);
        self.target.for_each_param_mut(f);
        self.head.for_each_param_mut(f);
    }
}

/// Which parameter groups an optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Groups {
    pub source: bool,
    pub target: bool,
    pub head: bool,
}

impl Groups {
    pub const ALL: Groups = Groups {
        source: true,
        target: true,
        head: true,
    };
    pub const SOURCE_AND_HEAD: Groups = Groups {
        source: true,
        target: false,
        head: true,
    };
    pub const TARGET_AND_HEAD: Groups = Groups {
        source: false,
        target: true,
        head: true,
    };
}

pub struct GroupView<'a> {
    net: &'a mut YNetwork,
    groups: Groups,
}

impl ParameterSet for GroupView<'_> {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        if self.groups.source {
            self.net.source.for_each_param(f);
        }
        if self.groups.target {
            self.net.target.for_each_param(f);
        }
        if self.groups.head {
            self.net.head.for_each_param(f);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        if self.groups.source {
            self.net.source.for_each_param_mut(f);
        }
        if self.groups.target {
            self.net.target.for_each_param_mut(f);
        }
        if self.groups.head {
            self.net.head.for_each_param_mut(f);
        }
    }
}
