//! Slice-level forward and backward kernels shared by the eager functions and
//! the tape.

use super::BCE_EPS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
    out_shape: [usize; 3],
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernels: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let &[c_in, h, w] = input else {
            return Err(Error::Shape(format!("conv2d input must be [C, H, W], got {input:?}")));
        };
        let &[c_out, k_in, kh, kw] = kernels else {
            return Err(Error::Shape(format!(
                "conv2d kernels must be [C_out, C_in, kH, kW], got {kernels:?}"
            )));
        };
        if k_in != c_in {
            return Err(Error::Shape(format!(
                "conv2d kernel expects {k_in} input channels, input has {c_in} channels"
            )));
        }
        if bias != [c_out] {
            return Err(Error::Shape(format!("conv2d bias must be [{c_out}], got {bias:?}")));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            out_shape: [c_out, oh, ow],
        })
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.out_shape
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose sample `ox * stride + offset - pad` lands inside
    /// `[0, extent)`.
    fn valid_range(&self, offset: usize, extent: usize, out_extent: usize) -> std::ops::Range<usize> {
        let lo = if offset >= self.pad {
            0
        } else {
            (self.pad - offset).div_ceil(self.stride)
        };
        if extent + self.pad <= offset {
            return 0..0;
        }
        let hi = ((extent - 1 + self.pad - offset) / self.stride + 1).min(out_extent);
        lo.min(hi)..hi
    }
}

/// Unfolds every receptive field into a `[C_in*kH*kW, oH*oW]` matrix.
fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let mut cols = vec![0.0; g.patch_len() * p];
    for c in 0..g.c_in {
        for i in 0..g.kh {
            let ys = g.valid_range(i, g.h, g.oh);
            for j in 0..g.kw {
                let xs = g.valid_range(j, g.w, g.ow);
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in ys.clone() {
                    let iy = oy * g.stride + i - g.pad;
                    let src = c * g.h * g.w + iy * g.w;
                    let dst = row + oy * g.ow;
                    for ox in xs.clone() {
                        cols[dst + ox] = input[src + ox * g.stride + j - g.pad];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(g: &ConvGeom, cols: &[f64], dinput: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for i in 0..g.kh {
            let ys = g.valid_range(i, g.h, g.oh);
            for j in 0..g.kw {
                let xs = g.valid_range(j, g.w, g.ow);
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in ys.clone() {
                    let iy = oy * g.stride + i - g.pad;
                    let dst = c * g.h * g.w + iy * g.w;
                    let src = row + oy * g.ow;
                    for ox in xs.clone() {
                        dinput[dst + ox * g.stride + j - g.pad] += cols[src + ox];
                    }
                }
            }
        }
    }
}

/// `c = a · b + beta · c` with row-major `c: [m, n]`; `a` is `[m, k]` (or its
/// transpose stored as `[k, m]`), `b` is `[k, n]` (or `[n, k]`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Returns the output and the unfolded input, which the backward pass reuses.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = g.positions();
    let cols = im2col(g, input);
    let mut out = vec![0.0; g.c_out * p];
    for (row, &b) in out.chunks_exact_mut(p).zip(bias) {
        row.fill(b);
    }
    gemm(g.c_out, g.patch_len(), p, kernels, false, &cols, false, 1.0, &mut out);
    (out, cols)
}

pub(crate) struct ConvGrads<'a> {
    pub input: Option<&'a mut [f64]>,
    pub kernels: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    cols: &[f64],
    kernels: &[f64],
    dout: &[f64],
    grads: ConvGrads<'_>,
) {
    let p = g.positions();
    let k = g.patch_len();
    if let Some(dk) = grads.kernels {
        gemm(g.c_out, p, k, dout, false, cols, true, 1.0, dk);
    }
    if let Some(db) = grads.bias {
        for (d, row) in db.iter_mut().zip(dout.chunks_exact(p)) {
            *d += row.iter().sum::<f64>();
        }
    }
    if let Some(dx) = grads.input {
        let mut dcols = vec![0.0; k * p];
        gemm(k, g.c_out, p, kernels, true, dout, false, 0.0, &mut dcols);
        col2im_add(g, &dcols, dx);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    out_shape: [usize; 3],
}

impl PoolGeom {
    pub fn new(input: &[usize], window: usize) -> Result<Self> {
        let &[c, h, w] = input else {
            return Err(Error::Shape(format!("maxpool2d input must be [C, H, W], got {input:?}")));
        };
        if window == 0 {
            return Err(Error::Shape("maxpool2d window must be positive".into()));
        }
        if h % window != 0 || w % window != 0 {
            return Err(Error::Shape(format!(
                "maxpool2d window {window} does not divide spatial size {h}x{w}"
            )));
        }
        Ok(PoolGeom {
            c,
            h,
            w,
            window,
            out_shape: [c, h / window, w / window],
        })
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.out_shape
    }
}

/// Returns pooled values and, per output, the flat input index of the first
/// row-major maximum in its window.
pub(crate) fn maxpool_forward(g: &PoolGeom, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let [_, oh, ow] = g.out_shape;
    let mut out = Vec::with_capacity(g.c * oh * ow);
    let mut argmax = Vec::with_capacity(g.c * oh * ow);
    for c in 0..g.c {
        let plane = c * g.h * g.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = plane + oy * g.window * g.w + ox * g.window;
                let mut best = input[best_idx];
                for dy in 0..g.window {
                    let row = plane + (oy * g.window + dy) * g.w + ox * g.window;
                    for dx in 0..g.window {
                        let v = input[row + dx];
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn dense_dims(input: &[usize], weights: &[usize], bias: &[usize]) -> Result<(usize, usize)> {
    let &[n] = input else {
        return Err(Error::Shape(format!("dense input must be 1-D, got {input:?}")));
    };
    let &[m, wn] = weights else {
        return Err(Error::Shape(format!("dense weights must be [M, N], got {weights:?}")));
    };
    if wn != n {
        return Err(Error::Shape(format!(
            "dense weights expect input length {wn}, got {n}"
        )));
    }
    if bias != [m] {
        return Err(Error::Shape(format!("dense bias must be [{m}], got {bias:?}")));
    }
    Ok((m, n))
}

pub(crate) fn dense_forward(m: usize, n: usize, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let row = &weights[i * n..(i + 1) * n];
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias[i]
        })
        .collect()
}

pub(crate) fn check_bce(n: usize, targets: &[f64]) -> Result<()> {
    if targets.len() != n {
        return Err(Error::Shape(format!(
            "binary cross-entropy: {n} predictions but {} targets",
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "binary cross-entropy target must be 0 or 1, got {bad}"
        )));
    }
    Ok(())
}

pub(crate) fn bce_single(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_single`] in `p`; zero where the clamp is active.
pub(crate) fn bce_single_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}
