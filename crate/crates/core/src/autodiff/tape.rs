//! Reverse-mode tape over dense tensors.
//!
//! Every forward method validates shapes, computes the output eagerly and
//! appends a node. Nodes only ever reference earlier nodes, so the tape is
//! topologically ordered by construction and `backward` is a single reverse
//! sweep.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::param::{Parameter, ParameterSet};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tape: u64,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Param(String),
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Matmul,
    Transpose,
    Conv2d { geom: ConvGeom, cols: Vec<f64>, bias: bool },
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Sum,
    Mean,
    SumLastAxis,
    MaxPool2d { argmax: Vec<usize> },
    Reshape,
    Concat,
    IndexSelect { indices: Vec<usize> },
    SortRows { perm: Vec<usize> },
    Inner,
    ExpandLeading,
    ExpandTrailing { repeat: usize },
    LogSoftmax,
    Gather { indices: Vec<usize> },
    Norm { groups: NormGroups, xhat: Vec<f64>, inv_std: Vec<f64> },
    NormEval { xhat: Vec<f64>, inv_std: Vec<f64> },
}

/// Layout of normalization statistics over `[N, C, S]` (S = spatial size).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NormGroups {
    pub n: usize,
    pub c: usize,
    pub s: usize,
    /// true: one group per (sample, channel); false: one group per channel.
    pub per_instance: bool,
}

impl NormGroups {
    fn count(&self) -> usize {
        if self.per_instance {
            self.n * self.c
        } else {
            self.c
        }
    }

    fn group_size(&self) -> usize {
        if self.per_instance {
            self.s
        } else {
            self.n * self.s
        }
    }

    /// Calls `f(group, flat_index)` for every element.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for n in 0..self.n {
            for c in 0..self.c {
                let group = if self.per_instance { n * self.c + c } else { c };
                let base = (n * self.c + c) * self.s;
                for i in base..base + self.s {
                    f(group, i);
                }
            }
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(Vec<usize>, DType)>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` did not influence the loss.
    pub fn get(&self, var: Var) -> Result<Tensor> {
        if var.tape != self.tape || var.id >= self.shapes.len() {
            return Err(Error::Tape("variable is not part of this backward pass".into()));
        }
        let (shape, dtype) = &self.shapes[var.id];
        Ok(match &self.grads[var.id] {
            Some(g) => Tensor::from_parts(shape.clone(), g.clone(), *dtype),
            None => Tensor::zeros(shape, *dtype),
        })
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn same_dtype(op: &'static str, a: &Tensor, b: &Tensor) -> Result<DType> {
    if a.dtype() != b.dtype() {
        return Err(Error::DType {
            op,
            lhs: a.dtype(),
            rhs: b.dtype(),
        });
    }
    Ok(a.dtype())
}

/// rhs may equal lhs in shape or be a suffix of it (a scalar is the empty suffix).
fn broadcast_ok(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    let nb: usize = b.iter().product();
    if a == b || nb == 1 || (b.len() < a.len() && a.ends_with(b)) {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("cannot combine {a:?} with {b:?} (rhs must match or be a trailing suffix)"),
        ))
    }
}

fn reduce_to(contrib: &[f64], nb: usize) -> Vec<f64> {
    if contrib.len() == nb {
        return contrib.to_vec();
    }
    let mut out = vec![0.0; nb];
    for (i, v) in contrib.iter().enumerate() {
        out[i % nb] += v;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::Tape("variable does not belong to this tape".into()));
        }
        Ok(&self.nodes[v.id])
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var {
        let requires_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad: true,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    /// A non-differentiable input (data, masks, fixed projections).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad: false,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    /// Records a parameter; `backward` routes its gradient back by name.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push(Op::Param(p.name().to_string()), Vec::new(), p.value().clone())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.id].value.shape()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.check(v)?.value.item()
    }

    fn binary(&mut self, op: Op, name: &'static str, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.check(a)?.value, &self.check(b)?.value);
        let dtype = same_dtype(name, av, bv)?;
        broadcast_ok(name, av.shape(), bv.shape())?;
        let nb = bv.numel();
        let (ad, bd) = (av.data(), bv.data());
        let f: fn(f64, f64) -> f64 = match op {
            Op::Add => |x, y| x + y,
            Op::Sub => |x, y| x - y,
            Op::Mul => |x, y| x * y,
            Op::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        let data = ad
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data, dtype);
        Ok(self.push(op, vec![a.id, b.id], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Div, "div", a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = &self.check(a)?.value;
        let out = av.map(|x| x * c);
        Ok(self.push(Op::Scale(c), vec![a.id], out))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let dtype = self.check(a)?.value.dtype();
        let cv = self.constant(Tensor::scalar(c, dtype));
        self.add(a, cv)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.check(a)?.value, &self.check(b)?.value);
        let dtype = same_dtype("matmul", av, bv)?;
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("expected [m,k] x [k,n], got {sa:?} x {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(av.data(), bv.data(), m, k, n);
        let out = Tensor::from_parts(vec![m, n], data, dtype);
        Ok(self.push(Op::Matmul, vec![a.id, b.id], out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        let s = av.shape();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let d = av.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = d[i * c + j];
            }
        }
        let out = Tensor::from_parts(vec![c, r], data, av.dtype());
        Ok(self.push(Op::Transpose, vec![a.id], out))
    }

    /// 2-D convolution of `x [N,C,H,W]` with `weight [O,C,KH,KW]`, zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, wv) = (&self.check(x)?.value, &self.check(weight)?.value);
        let dtype = same_dtype("conv2d", xv, wv)?;
        let (sx, sw) = (xv.shape(), wv.shape());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::shape(
                "conv2d",
                format!("expected input [N,C,H,W] and weight [O,C,KH,KW], got {sx:?} and {sw:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        let (hp, wp) = (sx[2] + 2 * pad, sx[3] + 2 * pad);
        if hp < sw[2] || wp < sw[3] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {:?} larger than padded input {hp}x{wp}", &sw[2..]),
            ));
        }
        let geom = ConvGeom {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            oh: (hp - sw[2]) / stride + 1,
            ow: (wp - sw[3]) / stride + 1,
        };
        let bias_data = match bias {
            Some(b) => {
                let bv = &self.check(b)?.value;
                same_dtype("conv2d", xv, bv)?;
                if bv.shape() != [geom.o] {
                    return Err(Error::shape(
                        "conv2d",
                        format!("bias must be [{}], got {:?}", geom.o, bv.shape()),
                    ));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (data, cols) = kernels::conv2d_forward(xv.data(), wv.data(), bias_data, &geom);
        let out = Tensor::from_parts(vec![geom.n, geom.o, geom.oh, geom.ow], data, dtype);
        let mut inputs = vec![x.id, weight.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        Ok(self.push(
            Op::Conv2d {
                geom,
                cols,
                bias: bias.is_some(),
            },
            inputs,
            out,
        ))
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.check(a)?.value.map(f);
        Ok(self.push(op, vec![a.id], out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Relu, a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Exp, a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Log, a, f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Square, a, |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Sqrt, a, f64::sqrt)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        let out = Tensor::scalar(av.data().iter().sum(), av.dtype());
        Ok(self.push(Op::Sum, vec![a.id], out))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        if av.numel() == 0 {
            return Err(Error::shape("mean", "mean of an empty tensor"));
        }
        let out = Tensor::scalar(av.data().iter().sum::<f64>() / av.numel() as f64, av.dtype());
        Ok(self.push(Op::Mean, vec![a.id], out))
    }

    /// Sums over the last axis: `[.., m] -> [..]`.
    pub fn sum_last_axis(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        let s = av.shape();
        let Some((&m, lead)) = s.split_last() else {
            return Err(Error::shape("sum_last_axis", "input is a scalar"));
        };
        let data = if m == 0 {
            vec![0.0; lead.iter().product()]
        } else {
            av.data().chunks(m).map(|r| r.iter().sum()).collect()
        };
        let out = Tensor::from_parts(lead.to_vec(), data, av.dtype());
        Ok(self.push(Op::SumLastAxis, vec![a.id], out))
    }

    /// Non-overlapping-or-strided max pooling on `[N,C,H,W]`, no padding.
    pub fn max_pool2d(&mut self, a: Var, kernel: usize, stride: usize) -> Result<Var> {
        let av = &self.check(a)?.value;
        let s = av.shape();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[2] < kernel || s[3] < kernel {
            return Err(Error::shape(
                "max_pool2d",
                format!("input {s:?} incompatible with kernel {kernel} stride {stride}"),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let d = av.data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ki in 0..kernel {
                        for kj in 0..kernel {
                            let idx = base + (oy * stride + ki) * w + ox * stride + kj;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    data.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, oh, ow], data, av.dtype());
        Ok(self.push(Op::MaxPool2d { argmax }, vec![a.id], out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.check(a)?.value.reshape(shape)?;
        Ok(self.push(Op::Reshape, vec![a.id], out))
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let fv = &self.check(first)?.value;
        if fv.ndim() == 0 {
            return Err(Error::shape("concat", "cannot concatenate scalars"));
        }
        let trailing = fv.shape()[1..].to_vec();
        let dtype = fv.dtype();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = &self.check(p)?.value;
            same_dtype("concat", fv, pv)?;
            if pv.ndim() == 0 || pv.shape()[1..] != trailing[..] {
                return Err(Error::shape(
                    "concat",
                    format!("trailing shapes differ: {:?} vs {:?}", fv.shape(), pv.shape()),
                ));
            }
            rows += pv.shape()[0];
            data.extend_from_slice(pv.data());
        }
        let mut shape = vec![rows];
        shape.extend(trailing);
        let out = Tensor::from_parts(shape, data, dtype);
        Ok(self.push(Op::Concat, parts.iter().map(|p| p.id).collect(), out))
    }

    /// Selects rows along the leading axis (repeats allowed).
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.check(a)?.value.select_rows(indices)?;
        Ok(self.push(
            Op::IndexSelect {
                indices: indices.to_vec(),
            },
            vec![a.id],
            out,
        ))
    }

    /// Sorts each row (last axis) ascending with a stable sort. The returned
    /// permutation maps sorted position to source column, row by row. The
    /// backward pass treats it as fixed.
    pub fn sort_rows(&mut self, a: Var) -> Result<(Var, Vec<usize>)> {
        let av = &self.check(a)?.value;
        let s = av.shape();
        if s.is_empty() || s.len() > 2 {
            return Err(Error::shape("sort_rows", format!("expected 1-D or 2-D, got {s:?}")));
        }
        let m = *s.last().unwrap();
        let d = av.data();
        let mut perm = Vec::with_capacity(d.len());
        let mut data = Vec::with_capacity(d.len());
        if m > 0 {
            for (r, row) in d.chunks(m).enumerate() {
                let mut idx: Vec<usize> = (0..m).collect();
                idx.sort_by(|&i, &j| row[i].total_cmp(&row[j]));
                data.extend(idx.iter().map(|&i| row[i]));
                perm.extend(idx.iter().map(|&i| r * m + i));
            }
        }
        let out = Tensor::from_parts(s.to_vec(), data, av.dtype());
        let local = perm.iter().map(|&p| if m > 0 { p % m } else { 0 }).collect();
        Ok((self.push(Op::SortRows { perm }, vec![a.id], out), local))
    }

    /// Dot product of two 1-D tensors.
    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.check(a)?.value, &self.check(b)?.value);
        let dtype = same_dtype("inner", av, bv)?;
        if av.ndim() != 1 || av.shape() != bv.shape() {
            return Err(Error::shape(
                "inner",
                format!("expected equal 1-D shapes, got {:?} and {:?}", av.shape(), bv.shape()),
            ));
        }
        let v = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let out = Tensor::scalar(v, dtype);
        Ok(self.push(Op::Inner, vec![a.id, b.id], out))
    }

    /// Repeats `a` along new leading axes: `[s..] -> [lead.., s..]`.
    pub fn expand_leading(&mut self, a: Var, lead: &[usize]) -> Result<Var> {
        let av = &self.check(a)?.value;
        let reps: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.extend_from_slice(av.shape());
        let mut data = Vec::with_capacity(reps * av.numel());
        for _ in 0..reps {
            data.extend_from_slice(av.data());
        }
        let out = Tensor::from_parts(shape, data, av.dtype());
        Ok(self.push(Op::ExpandLeading, vec![a.id], out))
    }

    /// Repeats each element along new trailing axes: `[s..] -> [s.., trail..]`.
    pub fn expand_trailing(&mut self, a: Var, trail: &[usize]) -> Result<Var> {
        let av = &self.check(a)?.value;
        let repeat: usize = trail.iter().product();
        let mut shape = av.shape().to_vec();
        shape.extend_from_slice(trail);
        let data = av
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, repeat))
            .collect();
        let out = Tensor::from_parts(shape, data, av.dtype());
        Ok(self.push(Op::ExpandTrailing { repeat }, vec![a.id], out))
    }

    /// Row-wise log-softmax over the last axis, max-shifted.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        let s = av.shape();
        let Some(&k) = s.last() else {
            return Err(Error::shape("log_softmax", "input is a scalar"));
        };
        if k == 0 {
            return Err(Error::shape("log_softmax", "empty class axis"));
        }
        let mut data = Vec::with_capacity(av.numel());
        for row in av.data().chunks(k) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::from_parts(s.to_vec(), data, av.dtype());
        Ok(self.push(Op::LogSoftmax, vec![a.id], out))
    }

    /// `out[i] = a[i, indices[i]]` for `a [N,k]`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = &self.check(a)?.value;
        let s = av.shape();
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::shape(
                "gather",
                format!("expected [N,k] with N = {}, got {s:?}", indices.len()),
            ));
        }
        let k = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::shape("gather", format!("index {bad} out of range for k = {k}")));
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(i, &j)| av.data()[i * k + j])
            .collect();
        let out = Tensor::from_parts(vec![indices.len()], data, av.dtype());
        Ok(self.push(
            Op::Gather {
                indices: indices.to_vec(),
            },
            vec![a.id],
            out,
        ))
    }

    fn norm_layout(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xv = &self.check(x)?.value;
        let (gv, bv) = (&self.check(gamma)?.value, &self.check(beta)?.value);
        same_dtype(op, xv, gv)?;
        same_dtype(op, xv, bv)?;
        let s = xv.shape();
        if s.len() < 2 {
            return Err(Error::shape(op, format!("expected [N,C,...], got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape(
                op,
                format!(
                    "scale/shift must be [{c}], got {:?} and {:?}",
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        Ok((n, c, s[2..].iter().product()))
    }

    fn standardize(
        &mut self,
        name: &'static str,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: NormGroups,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = &self.nodes[x.id].value;
        let (g, b) = (self.nodes[gamma.id].value.data(), self.nodes[beta.id].value.data());
        let d = xv.data();
        let count = groups.count();
        let m = groups.group_size() as f64;
        let mut mean = vec![0.0; count];
        groups.for_each(|grp, i| mean[grp] += d[i]);
        mean.iter_mut().for_each(|v| *v /= m);
        // Second pass removes the rounding error of the first, so constant
        // groups get their exact value as mean.
        let mut fix = vec![0.0; count];
        groups.for_each(|grp, i| fix[grp] += d[i] - mean[grp]);
        mean.iter_mut().zip(&fix).for_each(|(v, f)| *v += f / m);
        let mut var = vec![0.0; count];
        groups.for_each(|grp, i| {
            let dv = d[i] - mean[grp];
            var[grp] += dv * dv;
        });
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; d.len()];
        let mut data = vec![0.0; d.len()];
        groups.for_each(|grp, i| {
            let c = (i / groups.s) % groups.c;
            xhat[i] = (d[i] - mean[grp]) * inv_std[grp];
            data[i] = g[c] * xhat[i] + b[c];
        });
        let out = Tensor::from_parts(xv.shape().to_vec(), data, xv.dtype());
        if !out.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let v = self.push(
            Op::Norm {
                groups,
                xhat,
                inv_std,
            },
            vec![x.id, gamma.id, beta.id],
            out,
        );
        Ok((v, mean, var))
    }

    /// Training-mode batch normalization over `[N,C,...]`. Returns the output
    /// plus the per-channel batch mean and (biased) variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, c, s) = self.norm_layout("batch_norm", x, gamma, beta)?;
        if n < 2 {
            return Err(Error::invalid(
                "batch_norm: training mode needs at least 2 samples per batch",
            ));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("batch_norm: epsilon must be positive"));
        }
        let groups = NormGroups {
            n,
            c,
            s,
            per_instance: false,
        };
        self.standardize("batch_norm", x, gamma, beta, groups, eps)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, c, s) = self.norm_layout("batch_norm", x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics length != channels"));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("batch_norm: epsilon must be positive"));
        }
        let xv = &self.nodes[x.id].value;
        let (g, b) = (self.nodes[gamma.id].value.data(), self.nodes[beta.id].value.data());
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.numel()];
        let mut data = vec![0.0; xv.numel()];
        for (i, &v) in xv.data().iter().enumerate() {
            let ch = (i / s) % c;
            xhat[i] = (v - running_mean[ch]) * inv_std[ch];
            data[i] = g[ch] * xhat[i] + b[ch];
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data, xv.dtype());
        if !out.is_finite() {
            return Err(Error::NonFinite("batch_norm".into()));
        }
        Ok(self.push(
            Op::NormEval { xhat, inv_std },
            vec![x.id, gamma.id, beta.id],
            out,
        ))
    }

    /// Instance normalization: per-sample, per-channel spatial statistics.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, s) = self.norm_layout("instance_norm", x, gamma, beta)?;
        if s < 2 {
            return Err(Error::invalid(
                "instance_norm: needs at least 2 spatial positions (H*W >= 2)",
            ));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("instance_norm: epsilon must be positive"));
        }
        let groups = NormGroups {
            n,
            c,
            s,
            per_instance: true,
        };
        Ok(self.standardize("instance_norm", x, gamma, beta, groups, eps)?.0)
    }

    fn raw_gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = &self.check(loss)?.value;
        if lv.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contribs = super::backward::input_grads(self, node, &g);
            for (slot, contrib) in node.inputs.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                if !self.nodes[*slot].requires_grad {
                    continue;
                }
                match &mut grads[*slot] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, v)| *a += v),
                    empty @ None => *empty = Some(c),
                }
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    /// Gradients of `loss` with respect to every recorded node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let grads = self.raw_gradients(loss)?;
        let shapes = self.nodes[..grads.len()]
            .iter()
            .map(|n| (n.value.shape().to_vec(), n.value.dtype()))
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    /// Accumulates `dloss/dparam` into every parameter of `params` that was
    /// recorded on this tape. Parameters the loss does not reach are left as is.
    pub fn backward<P: ParameterSet + ?Sized>(&self, loss: Var, params: &mut P) -> Result<()> {
        let grads = self.raw_gradients(loss)?;
        let mut by_name: HashMap<&str, Vec<f64>> = HashMap::new();
        for (id, g) in grads.iter().enumerate() {
            let (Op::Param(name), Some(g)) = (&self.nodes[id].op, g) else {
                continue;
            };
            match by_name.get_mut(name.as_str()) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
                None => {
                    by_name.insert(name.as_str(), g.clone());
                }
            }
        }
        let mut result = Ok(());
        params.for_each_param_mut(&mut |p| {
            if let Some(g) = by_name.get(p.name()) {
                if let Err(e) = p.accumulate_grad(g) {
                    result = Err(e);
                }
            }
        });
        result
    }

    pub(crate) fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }
}

pub(crate) fn reduce_broadcast(contrib: &[f64], nb: usize) -> Vec<f64> {
    reduce_to(contrib, nb)
}
