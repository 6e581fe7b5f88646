//! Raw numeric kernels on row-major slices. No shape checking here; the tape
//! validates shapes before calling in.

use crate::parallel;

/// `out[m,n] = a[m,k] * b[k,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[k,n] = a[m,k]^T * b[m,n]`
pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m,k] = a[m,n] * b[k,n]^T`
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one sample `[C,H,W]` into `[C*KH*KW, OH*OW]`.
fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.h
                            && (ix as usize) < g.w
                        {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        x[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns `(output [N,O,OH,OW], unfolded columns per sample)`.
pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let ckk = g.ckk();
    let p = g.positions();
    let in_stride = g.c * g.h * g.w;
    let mut cols = vec![0.0; g.n * ckk * p];
    parallel::for_each_chunk_mut(&mut cols, ckk * p, |n, chunk| {
        im2col(&x[n * in_stride..(n + 1) * in_stride], g, chunk);
    });
    let mut out = vec![0.0; g.n * g.o * p];
    parallel::for_each_chunk_mut(&mut out, g.o * p, |n, chunk| {
        let y = matmul(weight, &cols[n * ckk * p..(n + 1) * ckk * p], g.o, ckk, p);
        chunk.copy_from_slice(&y);
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                for v in &mut chunk[o * p..(o + 1) * p] {
                    *v += bv;
                }
            }
        }
    });
    (out, cols)
}

pub(crate) fn conv2d_backward_input(dy: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ckk = g.ckk();
    let p = g.positions();
    let in_stride = g.c * g.h * g.w;
    let mut dx = vec![0.0; g.n * in_stride];
    parallel::for_each_chunk_mut(&mut dx, in_stride, |n, chunk| {
        let dcols = matmul_at_b(weight, &dy[n * g.o * p..(n + 1) * g.o * p], g.o, ckk, p);
        col2im(&dcols, g, chunk);
    });
    dx
}

/// Weight gradient, one output channel per task; samples summed in order.
pub(crate) fn conv2d_backward_weight(dy: &[f64], cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ckk = g.ckk();
    let p = g.positions();
    let mut dw = vec![0.0; g.o * ckk];
    parallel::for_each_chunk_mut(&mut dw, ckk, |o, row| {
        for n in 0..g.n {
            let dyo = &dy[(n * g.o + o) * p..(n * g.o + o + 1) * p];
            let cn = &cols[n * ckk * p..(n + 1) * ckk * p];
            for (q, r) in row.iter_mut().enumerate() {
                let cq = &cn[q * p..(q + 1) * p];
                *r += dyo.iter().zip(cq).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    });
    dw
}

pub(crate) fn conv2d_backward_bias(dy: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let mut db = vec![0.0; g.o];
    for n in 0..g.n {
        for (o, d) in db.iter_mut().enumerate() {
            *d += dy[(n * g.o + o) * p..(n * g.o + o + 1) * p].iter().sum::<f64>();
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        // a^T as 3x2
        let at: Vec<f64> = vec![a[0], a[3], a[1], a[4], a[2], a[5]];
        let ab2 = matmul_at_b(&at, &b, 3, 2, 4);
        assert_eq!(ab, ab2);
        // b^T as 4x3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let ab3 = matmul_a_bt(&a, &bt, 2, 3, 4);
        assert_eq!(ab, ab3);
    }
}
