//! Local gradient rules, one arm per op kind.

use super::kernels;
use super::tape::{reduce_broadcast, Node, Op, Tape};

fn want(tape: &Tape, id: usize) -> bool {
    tape.node(id).requires_grad
}

/// Returns the contribution of `g = dL/d(node)` to each input, in input order.
pub(crate) fn input_grads(tape: &Tape, node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let val = |i: usize| tape.node(node.inputs[i]).value.data();
    let shape = |i: usize| tape.node(node.inputs[i]).value.shape();
    let needs = |i: usize| want(tape, node.inputs[i]);
    let out = node.value.data();

    match &node.op {
        Op::Leaf | Op::Param(_) => Vec::new(),
        Op::Add | Op::Sub => {
            let nb = val(1).len();
            let gb = needs(1).then(|| {
                let r = reduce_broadcast(g, nb);
                if matches!(node.op, Op::Sub) {
                    r.into_iter().map(|v| -v).collect()
                } else {
                    r
                }
            });
            vec![needs(0).then(|| g.to_vec()), gb]
        }
        Op::Mul => {
            let (a, b) = (val(0), val(1));
            let nb = b.len();
            let ga = needs(0).then(|| g.iter().enumerate().map(|(i, gv)| gv * b[i % nb]).collect());
            let gb = needs(1).then(|| {
                let c: Vec<f64> = g.iter().zip(a).map(|(gv, av)| gv * av).collect();
                reduce_broadcast(&c, nb)
            });
            vec![ga, gb]
        }
        Op::Div => {
            let (a, b) = (val(0), val(1));
            let nb = b.len();
            let ga = needs(0).then(|| g.iter().enumerate().map(|(i, gv)| gv / b[i % nb]).collect());
            let gb = needs(1).then(|| {
                let c: Vec<f64> = g
                    .iter()
                    .zip(a)
                    .enumerate()
                    .map(|(i, (gv, av))| {
                        let bv = b[i % nb];
                        -gv * av / (bv * bv)
                    })
                    .collect();
                reduce_broadcast(&c, nb)
            });
            vec![ga, gb]
        }
        Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        Op::Matmul => {
            let (sa, sb) = (shape(0), shape(1));
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let ga = needs(0).then(|| kernels::matmul_a_bt(g, val(1), m, n, k));
            let gb = needs(1).then(|| kernels::matmul_at_b(val(0), g, m, k, n));
            vec![ga, gb]
        }
        Op::Transpose => {
            let s = shape(0);
            let (r, c) = (s[0], s[1]);
            // g is [c, r]
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        }
        Op::Conv2d { geom, cols, bias } => {
            let gx = needs(0).then(|| kernels::conv2d_backward_input(g, val(1), geom));
            let gw = needs(1).then(|| kernels::conv2d_backward_weight(g, cols, geom));
            let mut v = vec![gx, gw];
            if *bias {
                v.push(needs(2).then(|| kernels::conv2d_backward_bias(g, geom)));
            }
            v
        }
        Op::Relu => vec![Some(
            g.iter()
                .zip(val(0))
                .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                .collect(),
        )],
        Op::Exp => vec![Some(g.iter().zip(out).map(|(gv, y)| gv * y).collect())],
        Op::Log => vec![Some(g.iter().zip(val(0)).map(|(gv, x)| gv / x).collect())],
        Op::Square => vec![Some(g.iter().zip(val(0)).map(|(gv, x)| 2.0 * gv * x).collect())],
        Op::Sqrt => vec![Some(g.iter().zip(out).map(|(gv, y)| gv * 0.5 / y).collect())],
        Op::Sum => vec![Some(vec![g[0]; val(0).len()])],
        Op::Mean => {
            let n = val(0).len();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Op::SumLastAxis => {
            let m = *shape(0).last().unwrap();
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect())]
        }
        Op::MaxPool2d { argmax } => {
            let mut gx = vec![0.0; val(0).len()];
            for (gv, &src) in g.iter().zip(argmax) {
                gx[src] += gv;
            }
            vec![Some(gx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Concat => {
            let mut offset = 0;
            node.inputs
                .iter()
                .map(|&id| {
                    let n = tape.node(id).value.numel();
                    let part = g[offset..offset + n].to_vec();
                    offset += n;
                    Some(part)
                })
                .collect()
        }
        Op::IndexSelect { indices } => {
            let src = val(0);
            let rows = shape(0)[0];
            let stride = if rows == 0 { 0 } else { src.len() / rows };
            let mut gx = vec![0.0; src.len()];
            for (k, &i) in indices.iter().enumerate() {
                for j in 0..stride {
                    gx[i * stride + j] += g[k * stride + j];
                }
            }
            vec![Some(gx)]
        }
        Op::SortRows { perm } => {
            let mut gx = vec![0.0; g.len()];
            for (gv, &src) in g.iter().zip(perm) {
                gx[src] += gv;
            }
            vec![Some(gx)]
        }
        Op::Inner => {
            let (a, b) = (val(0), val(1));
            vec![
                needs(0).then(|| b.iter().map(|v| v * g[0]).collect()),
                needs(1).then(|| a.iter().map(|v| v * g[0]).collect()),
            ]
        }
        Op::ExpandLeading => vec![Some(reduce_broadcast(g, val(0).len()))],
        Op::ExpandTrailing { repeat } => {
            vec![Some(g.chunks(*repeat).map(|c| c.iter().sum()).collect())]
        }
        Op::LogSoftmax => {
            let k = *shape(0).last().unwrap();
            let mut gx = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(k).zip(out.chunks(k)) {
                let total: f64 = gr.iter().sum();
                gx.extend(gr.iter().zip(yr).map(|(gv, y)| gv - y.exp() * total));
            }
            vec![Some(gx)]
        }
        Op::Gather { indices } => {
            let k = shape(0)[1];
            let mut gx = vec![0.0; val(0).len()];
            for (i, (&j, gv)) in indices.iter().zip(g).enumerate() {
                gx[i * k + j] += gv;
            }
            vec![Some(gx)]
        }
        Op::Norm {
            groups,
            xhat,
            inv_std,
        } => {
            let gamma = val(1);
            let c = groups.c;
            let s = groups.s;
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let count = inv_std.len();
            let mut sum_dxhat = vec![0.0; count];
            let mut sum_dxhat_xhat = vec![0.0; count];
            for n in 0..groups.n {
                for ch in 0..c {
                    let grp = if groups.per_instance { n * c + ch } else { ch };
                    let base = (n * c + ch) * s;
                    for i in base..base + s {
                        ggamma[ch] += g[i] * xhat[i];
                        gbeta[ch] += g[i];
                        let dxh = g[i] * gamma[ch];
                        sum_dxhat[grp] += dxh;
                        sum_dxhat_xhat[grp] += dxh * xhat[i];
                    }
                }
            }
            let gx = needs(0).then(|| {
                let m = if groups.per_instance { s } else { groups.n * s } as f64;
                let mut gx = vec![0.0; g.len()];
                for n in 0..groups.n {
                    for ch in 0..c {
                        let grp = if groups.per_instance { n * c + ch } else { ch };
                        let base = (n * c + ch) * s;
                        for i in base..base + s {
                            let dxh = g[i] * gamma[ch];
                            gx[i] = inv_std[grp] / m
                                * (m * dxh - sum_dxhat[grp] - xhat[i] * sum_dxhat_xhat[grp]);
                        }
                    }
                }
                gx
            });
            vec![gx, needs(1).then_some(ggamma), needs(2).then_some(gbeta)]
        }
        Op::NormEval { xhat, inv_std } => {
            let gamma = val(1);
            let c = gamma.len();
            let s = if shape(0).len() > 2 {
                shape(0)[2..].iter().product()
            } else {
                1
            };
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let mut gx = vec![0.0; g.len()];
            for (i, gv) in g.iter().enumerate() {
                let ch = (i / s) % c;
                ggamma[ch] += gv * xhat[i];
                gbeta[ch] += gv;
                gx[i] = gv * gamma[ch] * inv_std[ch];
            }
            vec![
                needs(0).then_some(gx),
                needs(1).then_some(ggamma),
                needs(2).then_some(gbeta),
            ]
        }
    }
}
