//! Forward kernels and their adjoints. These are plain functions over
//! [`Tensor`]s; the tape in [`super::Graph`] composes them.

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    /// Softmax over the last axis.
    Softmax,
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Sigmoid => input.map(sigmoid_scalar),
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Softmax => softmax_last(input),
    }
}

pub fn softmax_last(input: &Tensor) -> Tensor {
    let n = *input.shape().last().expect("tensor has rank >= 1");
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Output index range `[lo, hi)` whose input position `o*stride + k - pad`
/// falls inside `[0, in_len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv_output_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::Shape("stride must be >= 1".into()));
    }
    if k > len + 2 * pad {
        return Err(TensorError::Shape(format!(
            "kernel extent {k} exceeds padded input {}",
            len + 2 * pad
        )));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<ConvDims> {
    let (cin, h, w) = input.dims3()?;
    let [cout, kcin, kh, kw] = kernel.shape()[..] else {
        return Err(TensorError::Shape(format!(
            "kernel must be [C_out,C_in,kH,kW], got {:?}",
            kernel.shape()
        )));
    };
    if kcin != cin {
        return Err(TensorError::Shape(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    let oh = conv_output_len(h, kh, stride, pad)?;
    let ow = conv_output_len(w, kw, stride, pad)?;
    Ok(ConvDims {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Unfolds receptive fields into a `[C_in·kH·kW, H'·W']` row-major matrix.
fn im2col(x: &[f64], d: &ConvDims, stride: usize, pad: usize) -> Vec<f64> {
    let p = d.oh * d.ow;
    let mut col = vec![0.0; d.cin * d.kh * d.kw * p];
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            let (ylo, yhi) = valid_range(ky, pad, stride, d.h, d.oh);
            for kx in 0..d.kw {
                let (xlo, xhi) = valid_range(kx, pad, stride, d.w, d.ow);
                let r = (ci * d.kh + ky) * d.kw + kx;
                let row = &mut col[r * p..(r + 1) * p];
                for oy in ylo..yhi {
                    let src = &plane[(oy * stride + ky - pad) * d.w..];
                    let dst = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    for (ox, v) in dst.iter_mut().enumerate().take(xhi).skip(xlo) {
                        *v = src[ox * stride + kx - pad];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(col: &[f64], d: &ConvDims, stride: usize, pad: usize) -> Vec<f64> {
    let p = d.oh * d.ow;
    let mut x = vec![0.0; d.cin * d.h * d.w];
    for ci in 0..d.cin {
        let plane = &mut x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            let (ylo, yhi) = valid_range(ky, pad, stride, d.h, d.oh);
            for kx in 0..d.kw {
                let (xlo, xhi) = valid_range(kx, pad, stride, d.w, d.ow);
                let r = (ci * d.kh + ky) * d.kw + kx;
                let row = &col[r * p..(r + 1) * p];
                for oy in ylo..yhi {
                    let dst = &mut plane[(oy * stride + ky - pad) * d.w..];
                    let src = &row[oy * d.ow..(oy + 1) * d.ow];
                    for (ox, v) in src.iter().enumerate().take(xhi).skip(xlo) {
                        dst[ox * stride + kx - pad] += v;
                    }
                }
            }
        }
    }
    x
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with four interleaved partial sums, which lets the compiler
/// vectorize the loop.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Zero-padded 2-D cross-correlation.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let d = conv_dims(input, kernel, stride, pad)?;
    let p = d.oh * d.ow;
    let kk = d.cin * d.kh * d.kw;
    let col = im2col(input.data(), &d, stride, pad);
    let k = kernel.data();
    let mut out = vec![0.0; d.cout * p];
    for (co, out_row) in out.chunks_exact_mut(p.max(1)).enumerate().take(d.cout) {
        for (r, &wv) in k[co * kk..(co + 1) * kk].iter().enumerate() {
            axpy(out_row, wv, &col[r * p..(r + 1) * p]);
        }
    }
    Tensor::new(vec![d.cout, d.oh, d.ow], out)
}

/// Gradients of [`conv2d`] with respect to its kernel and, when
/// `need_input` is set, its input.
pub fn conv2d_grads(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let d = conv_dims(input, kernel, stride, pad)?;
    if grad_out.shape() != [d.cout, d.oh, d.ow] {
        return Err(TensorError::Shape(format!(
            "conv output gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [d.cout, d.oh, d.ow]
        )));
    }
    let p = d.oh * d.ow;
    let kk = d.cin * d.kh * d.kw;
    let col = im2col(input.data(), &d, stride, pad);
    let k = kernel.data();
    let g = grad_out.data();
    let mut gk = vec![0.0; k.len()];
    for co in 0..d.cout {
        let g_row = &g[co * p..(co + 1) * p];
        for (r, gv) in gk[co * kk..(co + 1) * kk].iter_mut().enumerate() {
            *gv = dot(g_row, &col[r * p..(r + 1) * p]);
        }
    }
    let gx = if need_input {
        let mut gcol = vec![0.0; col.len()];
        for co in 0..d.cout {
            let g_row = &g[co * p..(co + 1) * p];
            for r in 0..kk {
                axpy(&mut gcol[r * p..(r + 1) * p], k[co * kk + r], g_row);
            }
        }
        Some(Tensor::new(input.shape().to_vec(), col2im(&gcol, &d, stride, pad))?)
    } else {
        None
    };
    Ok((gx, Tensor::new(kernel.shape().to_vec(), gk)?))
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let (gx, gk) = conv2d_grads(input, kernel, grad_out, stride, pad, true)?;
    Ok((gx.expect("input gradient requested"), gk))
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias(input: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if bias.len() != c {
        return Err(TensorError::Shape(format!(
            "bias has {} entries for {c} channels",
            bias.len()
        )));
    }
    let mut out = input.clone();
    for (plane, &b) in out.data_mut().chunks_exact_mut(h * w).zip(bias.data()) {
        for v in plane {
            *v += b;
        }
    }
    Ok(out)
}

/// Per-channel sum of a `[C,H,W]` gradient.
pub fn channel_sums(grad: &Tensor) -> Result<Tensor> {
    let (c, h, w) = grad.dims3()?;
    let sums = grad
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().sum())
        .collect();
    Tensor::new(vec![c], sums)
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 {
        return Err(TensorError::Shape("upsampling factor must be >= 1".into()));
    }
    let (fh, fw) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(c * fh * fw);
    for ch in 0..c {
        for y in 0..fh {
            let row = &x[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
            for xx in 0..fw {
                out.push(row[xx / factor]);
            }
        }
    }
    Tensor::new(vec![c, fh, fw], out)
}

/// Adjoint of [`upsample_nearest`]: sums each `factor`x`factor` block.
pub fn upsample_nearest_backward(grad: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, fh, fw) = grad.dims3()?;
    if factor == 0 || fh % factor != 0 || fw % factor != 0 {
        return Err(TensorError::Shape(format!(
            "gradient {:?} not divisible by factor {factor}",
            grad.shape()
        )));
    }
    let (h, w) = (fh / factor, fw / factor);
    let g = grad.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..fh {
            for x in 0..fw {
                out[(ch * h + y / factor) * w + x / factor] += g[(ch * fh + y) * fw + x];
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let n = (h * w) as f64;
    let means = input
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().sum::<f64>() / n)
        .collect();
    Tensor::new(vec![c], means)
}

/// `weight [N, C] · x [C] + bias [N]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c] = weight.shape()[..] else {
        return Err(TensorError::Shape(format!(
            "linear weight must be [N,C], got {:?}",
            weight.shape()
        )));
    };
    if x.len() != c || bias.len() != n {
        return Err(TensorError::Shape(format!(
            "linear [{n},{c}] applied to {:?} with bias {:?}",
            x.shape(),
            bias.shape()
        )));
    }
    let out = weight
        .data()
        .chunks_exact(c)
        .zip(bias.data())
        .map(|(row, b)| row.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect();
    Tensor::new(vec![n], out)
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> Result<Tensor> {
    if target >= logits.len() {
        return Err(TensorError::Index {
            index: target,
            len: logits.len(),
        });
    }
    Ok(Tensor::scalar(
        log_sum_exp(logits.data()) - logits.data()[target],
    ))
}

/// Mean binary cross-entropy over labels, evaluated from logits as
/// `max(z,0) - z*t + ln(1 + exp(-|z|))`.
pub fn binary_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    logits.expect_same_shape(targets)?;
    let n = logits.len() as f64;
    let total: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum();
    Ok(Tensor::scalar(total / n))
}
