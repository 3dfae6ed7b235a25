//! Tape-free kernels. Every differentiable primitive on [`Tape`](super::Tape)
//! calls the forward function here and the matching `*_backward` helper.

use rand::Rng;

use super::tensor::axis_split;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = input.dims4("conv2d")?;
        let (cout, kcin, kh, kw) = kernel.dims4("conv2d")?;
        if kcin != cin {
            return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel extents must be odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "input {:?} with kernel {:?}, stride {stride}, padding {pad} does not tile evenly",
                    input.shape(),
                    kernel.shape()
                ),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (ph - kh) / stride + 1,
            wo: (pw - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_area(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1, stride-1, unpadded convolution reads its input directly as the
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let area = g.out_area();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * area..(row + 1) * area];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let area = g.out_area();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * area..(row + 1) * area];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] = line[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an `N×Cin×H×W` input with a `Cout×Cin×kh×kw` kernel.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, kernel, stride, padding)?;
    Ok(conv2d_forward(input, kernel, &g, false).0)
}

/// Returns the output and, when `keep_cols`, the per-sample column matrices
/// needed by the kernel gradient.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Tensor<T>, Option<Vec<T>>) {
    let (patch, area) = (g.patch(), g.out_area());
    let in_stride = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * area];
    let pointwise = g.is_pointwise();
    let mut saved = if keep_cols && !pointwise { Some(vec![T::zero(); g.n * patch * area]) } else { None };
    let mut scratch = if pointwise { Vec::new() } else { vec![T::zero(); patch * area] };
    for b in 0..g.n {
        let x = &input.data()[b * in_stride..(b + 1) * in_stride];
        let cols: &[T] = if pointwise {
            x
        } else {
            let buf = match saved.as_mut() {
                Some(all) => &mut all[b * patch * area..(b + 1) * patch * area],
                None => &mut scratch[..],
            };
            im2col(x, g, buf);
            buf
        };
        let y = &mut out[b * g.cout * area..(b + 1) * g.cout * area];
        T::gemm(g.cout, patch, area, kernel.data(), false, cols, false, T::zero(), y);
    }
    (Tensor::from_parts(vec![g.n, g.cout, g.ho, g.wo], out), saved)
}

/// Gradients w.r.t. input and kernel; either may be skipped.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    cols: Option<&[T]>,
    g: &ConvGeom,
    dout: &Tensor<T>,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (patch, area) = (g.patch(), g.out_area());
    let in_stride = g.cin * g.h * g.w;
    let mut dx = want_input.then(|| vec![T::zero(); input.numel()]);
    let mut dk = want_kernel.then(|| vec![T::zero(); kernel.numel()]);
    let mut scratch = vec![T::zero(); if g.is_pointwise() { 0 } else { patch * area }];
    let mut dcols = vec![T::zero(); patch * area];
    for b in 0..g.n {
        let dy = &dout.data()[b * g.cout * area..(b + 1) * g.cout * area];
        if let Some(dk) = dk.as_mut() {
            let x = &input.data()[b * in_stride..(b + 1) * in_stride];
            let cols_b: &[T] = if g.is_pointwise() {
                x
            } else if let Some(all) = cols {
                &all[b * patch * area..(b + 1) * patch * area]
            } else {
                im2col(x, g, &mut scratch);
                &scratch
            };
            T::gemm(g.cout, area, patch, dy, false, cols_b, true, T::one(), dk);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_stride..(b + 1) * in_stride];
            if g.is_pointwise() {
                T::gemm(patch, g.cout, area, kernel.data(), true, dy, false, T::one(), dxb);
            } else {
                T::gemm(patch, g.cout, area, kernel.data(), true, dy, false, T::zero(), &mut dcols);
                col2im_add(&dcols, g, dxb);
            }
        }
    }
    (
        dx.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        dk.map(|d| Tensor::from_parts(kernel.shape().to_vec(), d)),
    )
}

/// Adds a per-channel bias to an NCHW tensor.
pub fn add_channel_bias<T: Scalar>(input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("add_channel_bias")?;
    if bias.numel() != c {
        return Err(Error::shape("add_channel_bias", input.shape(), bias.shape()));
    }
    let mut out = input.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * h * w;
            let v = bias.data()[ch];
            for x in &mut out[off..off + h * w] {
                *x = *x + v;
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

pub(crate) fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let (n, c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    let mut s = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in s.iter_mut().enumerate() {
            let off = (b * c + ch) * h * w;
            *acc = *acc + t.data()[off..off + h * w].iter().copied().sum::<T>();
        }
    }
    s
}

// ---------------------------------------------------------------------------
// Resampling and pooling
// ---------------------------------------------------------------------------

/// Source taps `(i0, i1, weight of i1)` for half-pixel-center interpolation.
fn linear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling to an arbitrary size (align-corners = false).
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear", "output extents must be positive"));
    }
    if out_h == h && out_w == w {
        return Ok(Tensor::from_parts(input.shape().to_vec(), input.data().to_vec()));
    }
    let ty = linear_taps(out_h, h);
    let tx = linear_taps(out_w, w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, ly) in &ty {
            let (ly, hy) = (T::lit(ly), T::lit(1.0 - ly));
            for &(x0, x1, lx) in &tx {
                let (lx, hx) = (T::lit(lx), T::lit(1.0 - lx));
                let top = plane[y0 * w + x0] * hx + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * hx + plane[y1 * w + x1] * lx;
                out.push(top * hy + bot * ly);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], out))
}

pub(crate) fn resize_bilinear_backward<T: Scalar>(in_shape: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (out_h, out_w) = (dout.shape()[2], dout.shape()[3]);
    if out_h == h && out_w == w {
        return dout.clone();
    }
    let ty = linear_taps(out_h, h);
    let tx = linear_taps(out_w, w);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (plane, dplane) in dx.chunks_mut(h * w).zip(dout.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, hy) = (T::lit(ly), T::lit(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, hx) = (T::lit(lx), T::lit(1.0 - lx));
                let g = dplane[oy * out_w + ox];
                plane[y0 * w + x0] = plane[y0 * w + x0] + g * hy * hx;
                plane[y0 * w + x1] = plane[y0 * w + x1] + g * hy * lx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + g * ly * hx;
                plane[y1 * w + x1] = plane[y1 * w + x1] + g * ly * lx;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// Integer-factor bilinear upsampling; factor 1 is the identity.
pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = input.dims4("bilinear_upsample")?;
    if factor == 0 {
        return Err(Error::invalid("bilinear_upsample", "factor must be at least 1"));
    }
    resize_bilinear(input, h * factor, w * factor)
}

fn pool_windows(out: usize, inp: usize) -> Vec<(usize, usize)> {
    (0..out).map(|i| (i * inp / out, ((i + 1) * inp).div_ceil(out))).collect()
}

/// Average pooling onto a `grid_h × grid_w` grid of (possibly overlapping)
/// windows.
pub fn adaptive_avg_pool<T: Scalar>(input: &Tensor<T>, grid_h: usize, grid_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("adaptive_avg_pool")?;
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::invalid("adaptive_avg_pool", "grid extents must be positive"));
    }
    let wy = pool_windows(grid_h, h);
    let wx = pool_windows(grid_w, w);
    let mut out = Vec::with_capacity(n * c * grid_h * grid_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1) in &wy {
            for &(x0, x1) in &wx {
                let mut acc = T::zero();
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc = acc + plane[y * w + x];
                    }
                }
                out.push(acc / T::lit(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, grid_h, grid_w], out))
}

pub(crate) fn adaptive_avg_pool_backward<T: Scalar>(in_shape: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (gh, gw) = (dout.shape()[2], dout.shape()[3]);
    let wy = pool_windows(gh, h);
    let wx = pool_windows(gw, w);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (plane, dplane) in dx.chunks_mut(h * w).zip(dout.data().chunks(gh * gw)) {
        for (i, &(y0, y1)) in wy.iter().enumerate() {
            for (j, &(x0, x1)) in wx.iter().enumerate() {
                let g = dplane[i * gw + j] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for x in x0..x1 {
                        plane[y * w + x] = plane[y * w + x] + g;
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

pub(crate) struct BatchNormTrain<T> {
    pub out: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Unbiased batch variance, the value folded into running statistics.
    pub var_unbiased: Vec<T>,
}

fn check_bn<T: Scalar>(input: &Tensor<T>, params: &[&Tensor<T>]) -> Result<usize> {
    let (_, c, _, _) = input.dims4("batch_norm")?;
    for p in params {
        if p.numel() != c {
            return Err(Error::shape("batch_norm", input.shape(), p.shape()));
        }
    }
    Ok(c)
}

pub(crate) fn batch_norm_train<T: Scalar>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<BatchNormTrain<T>> {
    let c = check_bn(input, &[gamma, beta])?;
    let (n, hw) = (input.shape()[0], input.shape()[2] * input.shape()[3]);
    let m = (n * hw) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            mean[ch] = mean[ch] + input.data()[off..off + hw].iter().copied().sum::<T>();
        }
    }
    for v in &mut mean {
        *v = *v / T::lit(m);
    }
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let mu = mean[ch];
            var[ch] = var[ch] + input.data()[off..off + hw].iter().map(|&x| (x - mu) * (x - mu)).sum::<T>();
        }
    }
    for v in &mut var {
        *v = *v / T::lit(m);
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(BN_EPS)).sqrt()).collect();
    let mut xhat = vec![T::zero(); input.numel()];
    let mut out = vec![T::zero(); input.numel()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (mu, is, g, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let xh = (input.data()[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + be;
            }
        }
    }
    let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
    Ok(BatchNormTrain {
        out: Tensor::from_parts(input.shape().to_vec(), out),
        xhat,
        inv_std,
        mean,
        var_unbiased: var.iter().map(|&v| v * T::lit(unbias)).collect(),
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_train_backward<T: Scalar>(
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = (dout.shape()[0], dout.shape()[1], dout.shape()[2], dout.shape()[3]);
    let hw = h * w;
    let m = T::lit((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dbeta[ch] = dbeta[ch] + dout.data()[i];
                dgamma[ch] = dgamma[ch] + dout.data()[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dout.numel()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let scale = gamma.data()[ch] * inv_std[ch] / m;
            for i in off..off + hw {
                dx[i] = scale * (m * dout.data()[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
            }
        }
    }
    (
        Tensor::from_parts(dout.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

/// Per-channel `(scale, shift)` of batch normalization with fixed statistics.
pub(crate) fn batch_norm_eval_affine<T: Scalar>(
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
) -> (Vec<T>, Vec<T>) {
    let scale: Vec<T> = gamma
        .data()
        .iter()
        .zip(var.data())
        .map(|(&g, &v)| g / (v + T::lit(BN_EPS)).sqrt())
        .collect();
    let shift = beta
        .data()
        .iter()
        .zip(mean.data())
        .zip(&scale)
        .map(|((&b, &mu), &s)| b - mu * s)
        .collect();
    (scale, shift)
}

/// Batch normalization with running statistics (inference form).
pub fn batch_norm_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_bn(input, &[gamma, beta, mean, var])?;
    let (scale, shift) = batch_norm_eval_affine(gamma, beta, mean, var);
    Ok(channel_affine(input, &scale, &shift))
}

pub(crate) fn channel_affine<T: Scalar>(input: &Tensor<T>, scale: &[T], shift: &[T]) -> Tensor<T> {
    let (c, hw) = (input.shape()[1], input.shape()[2] * input.shape()[3]);
    let mut out = input.data().to_vec();
    for (i, chunk) in out.chunks_mut(hw).enumerate() {
        let ch = i % c;
        for x in chunk {
            *x = *x * scale[ch] + shift[ch];
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

// ---------------------------------------------------------------------------
// Activations and axis-wise operations
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log σ(x)` without overflow for large `|x|`.
#[inline]
pub(crate) fn log_sigmoid_scalar<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

fn check_axis<T: Scalar>(op: &'static str, t: &Tensor<T>, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for shape {:?}", t.shape())));
    }
    Ok(())
}

/// Softmax along `axis`, with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", logits, axis)?;
    let (outer, len, inner) = axis_split(logits.shape(), axis);
    let x = logits.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mx = (0..len).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..len {
                let e = (x[idx(k)] - mx).exp();
                out[idx(k)] = e;
                z = z + e;
            }
            for k in 0..len {
                out[idx(k)] = out[idx(k)] / z;
            }
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Log-softmax along `axis` via a stabilized log-sum-exp.
pub fn log_softmax<T: Scalar>(logits: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("log_softmax", logits, axis)?;
    let (outer, len, inner) = axis_split(logits.shape(), axis);
    let x = logits.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mx = (0..len).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let lse = mx + (0..len).map(|k| (x[idx(k)] - mx).exp()).sum::<T>().ln();
            for k in 0..len {
                out[idx(k)] = x[idx(k)] - lse;
            }
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| dy.data()[idx(k)] * y.data()[idx(k)]).sum();
            for k in 0..len {
                dx[idx(k)] = y.data()[idx(k)] * (dy.data()[idx(k)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

pub(crate) fn log_softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let mut dx = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let total: T = (0..len).map(|k| dy.data()[idx(k)]).sum();
            for k in 0..len {
                dx[idx(k)] = dy.data()[idx(k)] - y.data()[idx(k)].exp() * total;
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

/// Sum along `axis`, keeping it with extent 1.
pub fn sum_axis<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("sum_axis", input, axis)?;
    let (outer, len, inner) = axis_split(input.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[o * inner + i] = out[o * inner + i] + input.data()[(o * len + k) * inner + i];
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}

/// Max along `axis` (keepdim) with the winning index; ties go to the lowest
/// index.
pub fn max_axis<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    check_axis("max_axis", input, axis)?;
    let (outer, len, inner) = axis_split(input.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    let mut arg = vec![0usize; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            let mut bv = input.data()[o * len * inner + i];
            for k in 1..len {
                let v = input.data()[(o * len + k) * inner + i];
                if v > bv {
                    bv = v;
                    best = k;
                }
            }
            out[o * inner + i] = bv;
            arg[o * inner + i] = best;
        }
    }
    let mut shape = input.shape().to_vec();
    shape[axis] = 1;
    Ok((Tensor::from_parts(shape, out), arg))
}

/// Repeats an extent-1 `axis` `times` times.
pub fn expand_axis<T: Scalar>(input: &Tensor<T>, axis: usize, times: usize) -> Result<Tensor<T>> {
    check_axis("expand_axis", input, axis)?;
    if input.shape()[axis] != 1 || times == 0 {
        return Err(Error::invalid(
            "expand_axis",
            format!("axis {axis} of {:?} must have extent 1", input.shape()),
        ));
    }
    let (outer, _, inner) = axis_split(input.shape(), axis);
    let mut out = Vec::with_capacity(outer * times * inner);
    for o in 0..outer {
        for _ in 0..times {
            out.extend_from_slice(&input.data()[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = input.shape().to_vec();
    shape[axis] = times;
    Ok(Tensor::from_parts(shape, out))
}

/// Concatenation along `axis`.
pub fn concat<T: Scalar>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    check_axis("concat", first, axis)?;
    for t in inputs {
        let same_rank = t.rank() == first.rank();
        if !same_rank || t.shape().iter().enumerate().any(|(d, &e)| d != axis && e != first.shape()[d]) {
            return Err(Error::shape("concat", first.shape(), t.shape()));
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let block = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn concat_backward<T: Scalar>(shapes: &[Vec<usize>], axis: usize, dout: &Tensor<T>) -> Vec<Tensor<T>> {
    let (outer, total, inner) = axis_split(dout.shape(), axis);
    let mut grads: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (g, s) in grads.iter_mut().zip(shapes) {
            let block = s[axis] * inner;
            let start = o * total * inner + offset;
            g.extend_from_slice(&dout.data()[start..start + block]);
            offset += block;
        }
    }
    grads
        .into_iter()
        .zip(shapes)
        .map(|(g, s)| Tensor::from_parts(s.clone(), g))
        .collect()
}

/// `x · wᵀ + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin, fout) = linear_dims(x, w, b)?;
    let mut out = Vec::with_capacity(n * fout);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    T::gemm(n, fin, fout, x.data(), false, w.data(), true, T::one(), &mut out);
    Ok(Tensor::from_parts(vec![n, fout], out))
}

pub(crate) fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape()) {
        (&[n, fin], &[fout, win]) if fin == win && b.numel() == fout => Ok((n, fin, fout)),
        _ => Err(Error::shape("linear", x.shape(), w.shape())),
    }
}

/// Inverted dropout. Returns the output and the scaled keep mask.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(input: &Tensor<T>, p: f64, rng: &mut R) -> Result<(Tensor<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid("dropout", format!("probability must lie in [0, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok((input.clone(), vec![T::one(); input.numel()]));
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..input.numel())
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_parts(input.shape().to_vec(), out), mask))
}
