//! Dense primitives with hand-written backward passes.
//!
//! Tensors are flat `f64` slices. Feature maps are channel-first
//! `(channels, height, width)`; matrices are row-major.

use alloc::vec;
use alloc::vec::Vec;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Out-of-range taps read the nearest edge pixel.
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_height(&self) -> usize {
        (self.height - 1) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - 1) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * KERNEL * KERNEL
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }
}

#[inline]
fn tap(pos: usize, k: usize, stride: usize, extent: usize, padding: Padding) -> Option<usize> {
    let p = (pos * stride + k) as isize - 1;
    if p >= 0 && (p as usize) < extent {
        Some(p as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Replicate => Some(p.clamp(0, extent as isize - 1) as usize),
        }
    }
}

/// 3x3 convolution with one pixel of padding.
pub fn conv3x3(shape: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64], padding: Padding) -> Vec<f64> {
    let (oh, ow) = (shape.out_height(), shape.out_width());
    let (h, w) = (shape.height, shape.width);
    debug_assert_eq!(input.len(), shape.in_channels * h * w);
    debug_assert_eq!(weight.len(), shape.weight_len());
    let mut out = vec![0.0; shape.out_len()];
    for oc in 0..shape.out_channels {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..shape.in_channels {
            let src = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = weight[((oc * shape.in_channels + ic) * KERNEL + ky) * KERNEL + kx];
                    for oy in 0..oh {
                        let Some(iy) = tap(oy, ky, shape.stride, h, padding) else {
                            continue;
                        };
                        let row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = tap(ox, kx, shape.stride, w, padding) {
                                *d += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of a zero-padded [`conv3x3`]. Gradients are accumulated
/// into the provided buffers; `grad_input` may be skipped.
pub fn conv3x3_backward(
    shape: &ConvShape,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let (oh, ow) = (shape.out_height(), shape.out_width());
    let (h, w) = (shape.height, shape.width);
    let mut grad_input = grad_input;
    for oc in 0..shape.out_channels {
        let g = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        grad_bias[oc] += g.iter().sum::<f64>();
        for ic in 0..shape.in_channels {
            let src = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((oc * shape.in_channels + ic) * KERNEL + ky) * KERNEL + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let Some(iy) = tap(oy, ky, shape.stride, h, Padding::Zero) else {
                            continue;
                        };
                        for ox in 0..ow {
                            if let Some(ix) = tap(ox, kx, shape.stride, w, Padding::Zero) {
                                let go = g[oy * ow + ox];
                                acc += go * src[iy * w + ix];
                                if let Some(gi) = grad_input.as_deref_mut() {
                                    gi[ic * h * w + iy * w + ix] += go * wv;
                                }
                            }
                        }
                    }
                    grad_weight[widx] += acc;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `out[m x n] = a[m x k] * b[k x n]`, all row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[k x n] += a^T * b` for `a[m x k]`, `b[m x n]`.
pub fn matmul_at_b_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x k] += a * b^T` for `a[m x n]`, `b[k x n]`.
pub fn matmul_a_bt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(values: &mut [f64], cols: usize) {
    for row in values.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub fn transpose(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = values[r * cols + c];
        }
    }
    out
}
