//! Forward kernels and their adjoints.
//!
//! All spatial operators take `C×H×W` tensors. Adjoint helpers return the
//! gradient with respect to each differentiable input given the gradient of
//! the output; [`super::Tape`] wires them together.

use rayon::prelude::*;

use super::{Real, Result, Tensor, TensorError};

/// Output pixels per convolution work unit. Fixed so that the reduction
/// order of weight gradients does not depend on the thread count.
const CONV_BAND_PIXELS: usize = 2048;

// ---------------------------------------------------------------------------
// convolution

fn check_conv<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (cin, h, w) = input.dims3("conv2d")?;
    let (cout, wcin, k) = match weight.shape()[..] {
        [co, ci, kh, kw] if kh == kw => (co, ci, kh),
        _ => {
            return Err(TensorError::shape(
                "conv2d",
                "square weight C_out×C_in×k×k",
                weight.shape(),
            ))
        }
    };
    if wcin != cin {
        return Err(TensorError::shape(
            "conv2d",
            format!("weight with {cin} input channels to match input {:?}", input.shape()),
            weight.shape(),
        ));
    }
    if k % 2 == 0 {
        return Err(TensorError::invalid("conv2d", format!("kernel size {k} must be odd")));
    }
    if stride == 0 {
        return Err(TensorError::invalid("conv2d", "stride must be at least 1"));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(TensorError::invalid(
            "conv2d",
            format!("kernel {k} larger than padded input {h}×{w} (padding {padding})"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias of shape [{cout}]"),
                b.shape(),
            ));
        }
    }
    Ok(ConvGeom {
        cin,
        h,
        w,
        cout,
        k,
        stride,
        padding,
        ho: (h + 2 * padding - k) / stride + 1,
        wo: (w + 2 * padding - k) / stride + 1,
    })
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn bands(&self) -> Vec<(usize, usize)> {
        let rows = (CONV_BAND_PIXELS / self.wo).max(1);
        (0..self.ho)
            .step_by(rows)
            .map(|r0| (r0, (r0 + rows).min(self.ho)))
            .collect()
    }

    /// Lower output rows `oy0..oy1` into a `(C_in·k·k) × pixels` matrix.
    fn im2col<T: Real>(&self, input: &[T], oy0: usize, oy1: usize) -> Vec<T> {
        let bp = (oy1 - oy0) * self.wo;
        let mut cols = vec![T::zero(); self.patch_len() * bp];
        let (h, w, s, p) = (self.h as isize, self.w as isize, self.stride, self.padding as isize);
        for c in 0..self.cin {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (c * self.k + ky) * self.k + kx;
                    let row = &mut cols[r * bp..(r + 1) * bp];
                    for (j, oy) in (oy0..oy1).enumerate() {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let dst = &mut row[j * self.wo..(j + 1) * self.wo];
                        let off = kx as isize - p;
                        if s == 1 {
                            let lo = (-off).clamp(0, self.wo as isize) as usize;
                            let hi = (w - off).clamp(0, self.wo as isize) as usize;
                            if lo < hi {
                                let a = (lo as isize + off) as usize;
                                dst[lo..hi].copy_from_slice(&src[a..a + (hi - lo)]);
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * s) as isize + off;
                                if ix >= 0 && ix < w {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }
}

/// 2-D cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k`
/// kernel, zero padding on all sides.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = check_conv(input, weight, bias, stride, padding)?;
    let kk = g.patch_len();
    let plane = g.ho * g.wo;
    let bands: Vec<(usize, usize, Vec<T>)> = g
        .bands()
        .into_par_iter()
        .map(|(oy0, oy1)| {
            let bp = (oy1 - oy0) * g.wo;
            let cols = g.im2col(input.data(), oy0, oy1);
            let mut out = vec![T::zero(); g.cout * bp];
            T::gemm(
                g.cout,
                kk,
                bp,
                weight.data(),
                (kk, 1),
                &cols,
                (bp, 1),
                &mut out,
                (bp, 1),
                false,
            );
            (oy0, oy1, out)
        })
        .collect();
    let mut out = vec![T::zero(); g.cout * plane];
    for (oy0, oy1, band) in bands {
        let bp = (oy1 - oy0) * g.wo;
        for co in 0..g.cout {
            let dst = &mut out[co * plane + oy0 * g.wo..co * plane + oy1 * g.wo];
            dst.copy_from_slice(&band[co * bp..(co + 1) * bp]);
        }
    }
    if let Some(b) = bias {
        for (co, &bv) in b.data().iter().enumerate() {
            for v in &mut out[co * plane..(co + 1) * plane] {
                *v = *v + bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.cout, g.ho, g.wo], out))
}

/// `(d input, d weight, d bias)` of a convolution.
pub type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

/// Gradients of [`conv2d`]: `(d input, d weight, d bias)`. The input
/// gradient is skipped when `want_input` is false.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = check_conv(input, weight, None, stride, padding)?;
    if grad_out.shape() != [g.cout, g.ho, g.wo] {
        return Err(TensorError::shape(
            "conv2d_backward",
            format!("gradient of shape [{}, {}, {}]", g.cout, g.ho, g.wo),
            grad_out.shape(),
        ));
    }
    let kk = g.patch_len();
    let plane = g.ho * g.wo;
    let gout = grad_out.data();

    let partials: Vec<Vec<T>> = g
        .bands()
        .into_par_iter()
        .map(|(oy0, oy1)| {
            let bp = (oy1 - oy0) * g.wo;
            let cols = g.im2col(input.data(), oy0, oy1);
            let mut part = vec![T::zero(); g.cout * kk];
            T::gemm(
                g.cout,
                bp,
                kk,
                &gout[oy0 * g.wo..],
                (plane, 1),
                &cols,
                (1, bp),
                &mut part,
                (kk, 1),
                false,
            );
            part
        })
        .collect();
    let mut gw = vec![T::zero(); g.cout * kk];
    for part in partials {
        for (a, b) in gw.iter_mut().zip(part) {
            *a = *a + b;
        }
    }

    let gb: Vec<T> = (0..g.cout)
        .map(|co| gout[co * plane..(co + 1) * plane].iter().copied().sum())
        .collect();

    let gin = if !want_input {
        None
    } else if stride == 1 && padding < g.k {
        // Transposed convolution of a stride-1 correlation is a correlation
        // with the spatially flipped, channel-transposed kernel.
        let k = g.k;
        let flipped = Tensor::from_fn(&[g.cin, g.cout, k, k], |i| {
            let kx = i % k;
            let ky = (i / k) % k;
            let co = (i / (k * k)) % g.cout;
            let ci = i / (k * k * g.cout);
            weight.data()[((co * g.cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)]
        })?;
        Some(conv2d(grad_out, &flipped, None, 1, k - 1 - padding)?)
    } else {
        Some(conv_input_grad_direct(&g, weight.data(), gout))
    };

    Ok((
        gin,
        Tensor::from_parts(weight.shape().to_vec(), gw),
        Tensor::from_parts(vec![g.cout], gb),
    ))
}

fn conv_input_grad_direct<T: Real>(g: &ConvGeom, weight: &[T], gout: &[T]) -> Tensor<T> {
    let hw = g.h * g.w;
    let mut gin = vec![T::zero(); g.cin * hw];
    gin.par_chunks_mut(hw).enumerate().for_each(|(ci, dst)| {
        for co in 0..g.cout {
            let gplane = &gout[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = weight[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let d = &mut dst[iy as usize * g.w + ix as usize];
                                *d = *d + wv * gplane[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_parts(vec![g.cin, g.h, g.w], gin)
}

// ---------------------------------------------------------------------------
// pooling

/// Number of ceil-mode pooling windows along an axis of length `len`.
/// Windows are clipped at the border; a window never starts past the end.
pub fn pool_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    if len <= kernel {
        return 1;
    }
    let n = (len - kernel).div_ceil(stride) + 1;
    if (n - 1) * stride >= len {
        n - 1
    } else {
        n
    }
}

/// Max pooling with ceil-mode windows. Returns the pooled tensor and, per
/// output cell, the flat input index of its maximum (first in scan order on
/// ties).
pub fn maxpool2d_indexed<T: Real>(input: &Tensor<T>, kernel: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.dims3("maxpool2d")?;
    if kernel == 0 || stride == 0 {
        return Err(TensorError::invalid(
            "maxpool2d",
            format!("kernel {kernel} and stride {stride} must be positive"),
        ));
    }
    let (ho, wo) = (pool_out_len(h, kernel, stride), pool_out_len(w, kernel, stride));
    let src = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            let (y0, y1) = (oy * stride, (oy * stride + kernel).min(h));
            for ox in 0..wo {
                let (x0, x1) = (ox * stride, (ox * stride + kernel).min(w));
                let mut best = (ch * h + y0) * w + x0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = (ch * h + y) * w + x;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, ho, wo], out), idx))
}

pub fn maxpool2d<T: Real>(input: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool2d_indexed(input, kernel, stride).map(|(t, _)| t)
}

/// Non-overlapping mean pooling over `region×region` blocks; trailing rows
/// and columns that do not fill a block are dropped.
pub fn avgpool2d<T: Real>(input: &Tensor<T>, region: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("avgpool2d")?;
    if region == 0 || region > h || region > w {
        return Err(TensorError::invalid(
            "avgpool2d",
            format!("region {region} must be in 1..={}", h.min(w)),
        ));
    }
    let (ho, wo) = (h / region, w / region);
    let norm = T::lit(1.0 / (region * region) as f64);
    let src = input.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for y in oy * region..(oy + 1) * region {
                    let row = &src[(ch * h + y) * w + ox * region..(ch * h + y) * w + (ox + 1) * region];
                    acc = acc + row.iter().copied().sum::<T>();
                }
                out[(ch * ho + oy) * wo + ox] = acc * norm;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

pub fn avgpool2d_backward<T: Real>(grad_out: &Tensor<T>, in_shape: &[usize], region: usize) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (h / region, w / region);
    let norm = T::lit(1.0 / (region * region) as f64);
    let mut gin = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..ho * region {
            for x in 0..wo * region {
                gin[(ch * h + y) * w + x] = grad_out.data()[(ch * ho + y / region) * wo + x / region] * norm;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), gin)
}

/// Scatter `grad_out[i]` into position `index[i]` of a zero tensor.
pub fn route_backward<T: Real>(grad_out: &Tensor<T>, index: &[usize], in_shape: &[usize]) -> Tensor<T> {
    let mut gin = vec![T::zero(); in_shape.iter().product()];
    for (&g, &i) in grad_out.data().iter().zip(index) {
        gin[i] = gin[i] + g;
    }
    Tensor::from_parts(in_shape.to_vec(), gin)
}

// ---------------------------------------------------------------------------
// min / max filters

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline]
    fn beats<T: Real>(self, candidate: T, incumbent: T) -> bool {
        match self {
            Extremum::Min => candidate < incumbent,
            Extremum::Max => candidate > incumbent,
        }
    }
}

/// Per-pixel extremum across channels: `C×H×W → 1×H×W`.
pub fn channel_extremum<T: Real>(input: &Tensor<T>, kind: Extremum) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.dims3("channel_extremum")?;
    let hw = h * w;
    let src = input.data();
    let mut idx: Vec<usize> = (0..hw).collect();
    for ch in 1..c {
        for (p, best) in idx.iter_mut().enumerate() {
            if kind.beats(src[ch * hw + p], src[*best]) {
                *best = ch * hw + p;
            }
        }
    }
    let out = idx.iter().map(|&i| src[i]).collect();
    Ok((Tensor::from_parts(vec![1, h, w], out), idx))
}

/// Sliding `patch×patch` extremum per channel with edge replication.
///
/// Replicated borders never introduce new values, so the window is simply
/// clipped to the image. Ties resolve to the first source pixel in scan
/// order.
pub fn window_extremum<T: Real>(input: &Tensor<T>, patch: usize, kind: Extremum) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.dims3("window_extremum")?;
    if patch == 0 || patch.is_multiple_of(2) {
        return Err(TensorError::invalid(
            "window_extremum",
            format!("patch {patch} must be odd and positive"),
        ));
    }
    let r = patch / 2;
    let hw = h * w;
    let src = input.data();
    // Horizontal pass: best source index per pixel over its row window.
    let mut row_best = vec![0usize; c * hw];
    for ch in 0..c {
        for y in 0..h {
            let base = ch * hw + y * w;
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let mut best = base + x0;
                for i in base + x0 + 1..base + x1 {
                    if kind.beats(src[i], src[best]) {
                        best = i;
                    }
                }
                row_best[base + x] = best;
            }
        }
    }
    // Vertical pass over the horizontal winners.
    let mut idx = vec![0usize; c * hw];
    for ch in 0..c {
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let mut best = row_best[ch * hw + y0 * w + x];
                for yy in y0 + 1..y1 {
                    let cand = row_best[ch * hw + yy * w + x];
                    if kind.beats(src[cand], src[best]) {
                        best = cand;
                    }
                }
                idx[ch * hw + y * w + x] = best;
            }
        }
    }
    let out = idx.iter().map(|&i| src[i]).collect();
    Ok((Tensor::from_parts(vec![c, h, w], out), idx))
}

/// Minimum over channels, then over a `patch×patch` neighbourhood.
pub fn dark_channel<T: Real>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (m, _) = channel_extremum(img, Extremum::Min)?;
    window_extremum(&m, patch, Extremum::Min).map(|(t, _)| t)
}

/// Maximum over channels, then over a `patch×patch` neighbourhood.
pub fn bright_channel<T: Real>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let (m, _) = channel_extremum(img, Extremum::Max)?;
    window_extremum(&m, patch, Extremum::Max).map(|(t, _)| t)
}

// ---------------------------------------------------------------------------
// activations

pub fn prelu<T: Real>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { slope * x })
}

/// `(d input, d slope)` of [`prelu`].
pub fn prelu_backward<T: Real>(input: &Tensor<T>, slope: T, grad_out: &Tensor<T>) -> (Tensor<T>, T) {
    let mut dslope = T::zero();
    let gin = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| {
            if x >= T::zero() {
                g
            } else {
                dslope = dslope + g * x;
                g * slope
            }
        })
        .collect();
    (Tensor::from_parts(input.shape().to_vec(), gin), dslope)
}

// ---------------------------------------------------------------------------
// bilinear resampling

/// Source taps for one axis under half-pixel-centre sampling:
/// `(lower index, upper index, fraction toward upper)`. Coordinates outside
/// the input clamp to the border sample.
pub fn bilinear_taps<T: Real>(out_len: usize, in_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, T::lit(frac))
        })
        .collect()
}

#[inline]
pub(crate) fn lerp<T: Real>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Resize every channel of a `C×H×W` tensor to `out_h×out_w`.
pub fn bilinear_resize<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::invalid(
            "bilinear_resize",
            format!("output size {out_h}×{out_w} must be positive"),
        ));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(input.clone());
    }
    let ty = bilinear_taps::<T>(out_h, h);
    let tx = bilinear_taps::<T>(out_w, w);
    let mut out = vec![T::zero(); c * out_h * out_w];
    out.par_chunks_mut(out_h * out_w)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
                for (d, &(x0, x1, fx)) in dst[oy * out_w..(oy + 1) * out_w].iter_mut().zip(&tx) {
                    *d = lerp(lerp(r0[x0], r0[x1], fx), lerp(r1[x0], r1[x1], fx), fy);
                }
            }
        });
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

pub fn bilinear_resize_backward<T: Real>(grad_out: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let (c, out_h, out_w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    if (out_h, out_w) == (in_h, in_w) {
        return grad_out.clone();
    }
    let ty = bilinear_taps::<T>(out_h, in_h);
    let tx = bilinear_taps::<T>(out_w, in_w);
    let one = T::one();
    let mut gin = vec![T::zero(); c * in_h * in_w];
    gin.par_chunks_mut(in_h * in_w)
        .zip(grad_out.data().par_chunks(out_h * out_w))
        .for_each(|(dst, g)| {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let gv = g[oy * out_w + ox];
                    let (top, bottom) = (gv * (one - fy), gv * fy);
                    dst[y0 * in_w + x0] = dst[y0 * in_w + x0] + top * (one - fx);
                    dst[y0 * in_w + x1] = dst[y0 * in_w + x1] + top * fx;
                    dst[y1 * in_w + x0] = dst[y1 * in_w + x0] + bottom * (one - fx);
                    dst[y1 * in_w + x1] = dst[y1 * in_w + x1] + bottom * fx;
                }
            }
        });
    Tensor::from_parts(vec![c, in_h, in_w], gin)
}

// ---------------------------------------------------------------------------
// channel and reduction helpers

/// Arithmetic mean over channels: `C×H×W → 1×H×W`.
pub fn channel_mean<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("channel_mean")?;
    let norm = T::lit(1.0 / c as f64);
    let out = (0..h * w)
        .map(|p| (0..c).map(|ch| input.data()[ch * h * w + p]).sum::<T>() * norm)
        .collect();
    Ok(Tensor::from_parts(vec![1, h, w], out))
}

/// Mean of each channel: `C×H×W → [C]`.
pub fn spatial_mean<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, _, _) = input.dims3("spatial_mean")?;
    let out = (0..c).map(|ch| mean_of(input.plane(ch))).collect();
    Ok(Tensor::from_parts(vec![c], out))
}

/// Mean accumulated in double precision, in index order.
pub fn mean_of<T: Real>(values: &[T]) -> T {
    let acc: f64 = values.iter().map(|v| v.as_f64()).sum();
    T::lit(acc / values.len() as f64)
}

pub fn sum_of<T: Real>(values: &[T]) -> T {
    T::lit(values.iter().map(|v| v.as_f64()).sum())
}

/// Forward difference along the width axis: `C×H×W → C×H×(W−1)`.
pub fn diff_x<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("diff_x")?;
    if w < 2 {
        return Err(TensorError::shape("diff_x", "width ≥ 2", input.shape()));
    }
    let src = input.data();
    let mut out = Vec::with_capacity(c * h * (w - 1));
    for row in src.chunks(w) {
        out.extend(row.windows(2).map(|p| p[1] - p[0]));
    }
    Ok(Tensor::from_parts(vec![c, h, w - 1], out))
}

pub fn diff_x_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, h, wm) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let w = wm + 1;
    let mut gin = vec![T::zero(); c * h * w];
    for (dst, g) in gin.chunks_mut(w).zip(grad_out.data().chunks(wm)) {
        for (x, &gv) in g.iter().enumerate() {
            dst[x + 1] = dst[x + 1] + gv;
            dst[x] = dst[x] - gv;
        }
    }
    Tensor::from_parts(vec![c, h, w], gin)
}

/// Forward difference along the height axis: `C×H×W → C×(H−1)×W`.
pub fn diff_y<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("diff_y")?;
    if h < 2 {
        return Err(TensorError::shape("diff_y", "height ≥ 2", input.shape()));
    }
    let src = input.data();
    let mut out = Vec::with_capacity(c * (h - 1) * w);
    for ch in 0..c {
        for y in 0..h - 1 {
            let (a, b) = ((ch * h + y) * w, (ch * h + y + 1) * w);
            out.extend((0..w).map(|x| src[b + x] - src[a + x]));
        }
    }
    Ok(Tensor::from_parts(vec![c, h - 1, w], out))
}

pub fn diff_y_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, hm, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let h = hm + 1;
    let mut gin = vec![T::zero(); c * h * w];
    let g = grad_out.data();
    for ch in 0..c {
        for y in 0..hm {
            for x in 0..w {
                let gv = g[(ch * hm + y) * w + x];
                gin[(ch * h + y + 1) * w + x] = gin[(ch * h + y + 1) * w + x] + gv;
                gin[(ch * h + y) * w + x] = gin[(ch * h + y) * w + x] - gv;
            }
        }
    }
    Tensor::from_parts(vec![c, h, w], gin)
}

/// Channels `start..start+len` of a `C×H×W` tensor.
pub fn narrow_channels<T: Real>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3("narrow_channels")?;
    if len == 0 || start + len > c {
        return Err(TensorError::invalid(
            "narrow_channels",
            format!("channel range {start}..{} outside 0..{c}", start + len),
        ));
    }
    let hw = h * w;
    Ok(Tensor::from_parts(
        vec![len, h, w],
        input.data()[start * hw..(start + len) * hw].to_vec(),
    ))
}

/// Stack two `C×H×W` tensors along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, ha, wa) = a.dims3("concat_channels")?;
    let (cb, hb, wb) = b.dims3("concat_channels")?;
    if (ha, wa) != (hb, wb) {
        return Err(TensorError::shape(
            "concat_channels",
            format!("spatial size {ha}×{wa}"),
            b.shape(),
        ));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_parts(vec![ca + cb, ha, wa], data))
}

// ---------------------------------------------------------------------------
// smoothing slicing

/// Expand a `12×H×W` coefficient field against a `3×H×W` image into twelve
/// feature maps: `F[4c+j] = G[4c+j]·I[j]` for `j < 3`, `F[4c+3] = G[4c+3]`.
pub fn s_slice<T: Real>(grid: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let (gc, gh, gw) = grid.dims3("s_slice")?;
    let (ic, ih, iw) = image.dims3("s_slice")?;
    if gc != 12 {
        return Err(TensorError::shape("s_slice", "12-channel grid", grid.shape()));
    }
    if ic != 3 || (gh, gw) != (ih, iw) {
        return Err(TensorError::shape(
            "s_slice",
            format!("3×{gh}×{gw} image matching the grid"),
            image.shape(),
        ));
    }
    let hw = gh * gw;
    let mut out = grid.data().to_vec();
    for c in 0..3 {
        for j in 0..3 {
            let m = 4 * c + j;
            for (f, &x) in out[m * hw..(m + 1) * hw].iter_mut().zip(image.plane(j)) {
                *f = *f * x;
            }
        }
    }
    Ok(Tensor::from_parts(vec![12, gh, gw], out))
}

/// `(d grid, d image)` of [`s_slice`].
pub fn s_slice_backward<T: Real>(grid: &Tensor<T>, image: &Tensor<T>, grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let hw = image.shape()[1] * image.shape()[2];
    let g = grad_out.data();
    let mut ggrid = g.to_vec();
    let mut gimg = vec![T::zero(); 3 * hw];
    for c in 0..3 {
        for j in 0..3 {
            let m = 4 * c + j;
            let xs = image.plane(j);
            let gs = grid.plane(m);
            for p in 0..hw {
                ggrid[m * hw + p] = g[m * hw + p] * xs[p];
                gimg[j * hw + p] = gimg[j * hw + p] + g[m * hw + p] * gs[p];
            }
        }
    }
    (
        Tensor::from_parts(grid.shape().to_vec(), ggrid),
        Tensor::from_parts(image.shape().to_vec(), gimg),
    )
}

pub fn clamp01<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()).min(T::one()))
}
