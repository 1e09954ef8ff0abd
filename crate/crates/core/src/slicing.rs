//! Full-resolution half of the pipeline: upsample the low-rank grid to the
//! raw image size, expand it against the image into twelve feature maps and
//! squeeze those back to RGB with the 3×3 decompress convolution.
//!
//! [`enhance`] never materializes the `12×H×W` intermediates. It walks the
//! output in row bands, rebuilding three rows of feature maps at a time, so
//! memory stays `O(W)` per band and the cost is `O(H·W)` regardless of the
//! network depth. [`enhance_composed`] is the literal composition of the
//! stage functions and serves as the reference.

use rayon::prelude::*;

use crate::gridnet::{self, AffineGrid, GridNetParams, ModelError, ParamVars, PoolKernel, GRID_CHANNELS};
use crate::image::{make_proxy_sized, ImageRGB};
use crate::tensor::{ops, Real, Tape, Tensor, TensorError, Var};

const BAND_ROWS: usize = 32;

/// Channel-wise bilinear resize of all 12 coefficient maps to `height×width`.
pub fn grid_upsample<T: Real>(
    lowrank: &AffineGrid<T>,
    height: usize,
    width: usize,
) -> Result<AffineGrid<T>, ModelError> {
    AffineGrid::new(ops::bilinear_resize(lowrank.coeffs(), height, width)?)
}

/// Twelve feature maps `F[4c+j] = G[4c+j]·raw[j]`, `F[4c+3] = G[4c+3]`.
pub fn s_slice<T: Real>(full_grid: &AffineGrid<T>, raw: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    Ok(ops::s_slice(full_grid.coeffs(), raw)?)
}

/// Decompress convolution (padding 1) without the final clamp.
pub fn decompress_unclamped<T: Real>(features: &Tensor<T>, params: &GridNetParams<T>) -> Result<Tensor<T>, ModelError> {
    Ok(ops::conv2d(
        features,
        params.decompress_weight(),
        Some(params.decompress_bias()),
        1,
        1,
    )?)
}

pub fn decompress(features: &Tensor<f32>, params: &GridNetParams<f32>) -> Result<ImageRGB, ModelError> {
    let out = decompress_unclamped(features, params)?;
    ImageRGB::new(ops::clamp01(&out)).map_err(|e| TensorError::invalid("decompress", e.to_string()).into())
}

/// Proxy → grid network → low-rank pooling for a `3×H×W` image.
pub fn predict_grid<T: Real>(
    raw: &Tensor<T>,
    params: &GridNetParams<T>,
    kernel: PoolKernel,
) -> Result<AffineGrid<T>, ModelError> {
    let proxy = make_proxy_sized(raw, params.config().proxy_size);
    let grid = gridnet::grid_forward(&proxy, params)?;
    gridnet::low_rank(&grid, kernel, params)
}

/// The full pipeline with the output clamped to `[0, 1]`.
pub fn enhance(raw: &ImageRGB, params: &GridNetParams<f32>, kernel: PoolKernel) -> Result<ImageRGB, ModelError> {
    let out = enhance_unclamped(raw.pixels(), params, kernel)?;
    ImageRGB::new(ops::clamp01(&out)).map_err(|e| TensorError::invalid("enhance", e.to_string()).into())
}

/// The full pipeline before the final clamp, through the streaming path.
pub fn enhance_unclamped<T: Real>(
    raw: &Tensor<T>,
    params: &GridNetParams<T>,
    kernel: PoolKernel,
) -> Result<Tensor<T>, ModelError> {
    let lowrank = predict_grid(raw, params, kernel)?;
    apply_grid(&lowrank, raw, params)
}

/// Reference pipeline built from the stage functions, materializing every
/// intermediate. Output is unclamped.
pub fn enhance_composed<T: Real>(
    raw: &Tensor<T>,
    params: &GridNetParams<T>,
    kernel: PoolKernel,
) -> Result<Tensor<T>, ModelError> {
    let (_, h, w) = raw.dims3("enhance")?;
    let lowrank = predict_grid(raw, params, kernel)?;
    let full = grid_upsample(&lowrank, h, w)?;
    let features = s_slice(&full, raw)?;
    decompress_unclamped(&features, params)
}

/// Upsample, slice and decompress `raw` with a given low-rank grid, one
/// row band at a time. Equivalent to `decompress_unclamped(s_slice(
/// grid_upsample(lowrank, H, W), raw))`.
pub fn apply_grid<T: Real>(
    lowrank: &AffineGrid<T>,
    raw: &Tensor<T>,
    params: &GridNetParams<T>,
) -> Result<Tensor<T>, ModelError> {
    let (c, h, w) = raw.dims3("apply_grid")?;
    if c != 3 {
        return Err(TensorError::shape("apply_grid", "3-channel image", raw.shape()).into());
    }
    let (gh, gw) = (lowrank.height(), lowrank.width());
    let grid = lowrank.coeffs().data();

    // Horizontal pass of the upsample, shared by every band.
    let tx = ops::bilinear_taps::<T>(w, gw);
    let ty = ops::bilinear_taps::<T>(h, gh);
    let mut grid_h = vec![T::zero(); GRID_CHANNELS * gh * w];
    for (m_row, dst) in grid_h.chunks_mut(w).enumerate() {
        let src = &grid[m_row * gw..(m_row + 1) * gw];
        for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&tx) {
            *d = ops::lerp(src[x0], src[x1], fx);
        }
    }

    let weight = params.decompress_weight().data();
    let bias = params.decompress_bias().data();
    let img = raw.data();
    let ctx = BandCtx {
        grid_h: &grid_h,
        ty: &ty,
        img,
        gh,
        h,
        w,
    };

    let bands: Vec<Vec<T>> = (0..h.div_ceil(BAND_ROWS))
        .into_par_iter()
        .map(|b| {
            let y_start = b * BAND_ROWS;
            let y_end = (y_start + BAND_ROWS).min(h);
            let rows = y_end - y_start;
            let mut out = vec![T::zero(); 3 * rows * w];
            // ring of three padded feature rows: y-1, y, y+1
            let stride = w + 2;
            let mut ring = vec![vec![T::zero(); GRID_CHANNELS * stride]; 3];
            for (slot, y) in ring.iter_mut().zip([y_start as isize - 1, y_start as isize]) {
                ctx.feature_row(y, slot);
            }
            let mut acc = vec![T::zero(); w];
            for y in y_start..y_end {
                ctx.feature_row(y as isize + 1, &mut ring[(y - y_start + 2) % 3]);
                let rows3 = [
                    &ring[(y - y_start) % 3],
                    &ring[(y - y_start + 1) % 3],
                    &ring[(y - y_start + 2) % 3],
                ];
                for oc in 0..3 {
                    acc.fill(bias[oc]);
                    for m in 0..GRID_CHANNELS {
                        for (dy, row) in rows3.iter().enumerate() {
                            let frow = &row[m * stride..(m + 1) * stride];
                            for dx in 0..3 {
                                let wv = weight[((oc * GRID_CHANNELS + m) * 3 + dy) * 3 + dx];
                                if wv == T::zero() {
                                    continue;
                                }
                                for (a, &f) in acc.iter_mut().zip(&frow[dx..dx + w]) {
                                    *a = *a + wv * f;
                                }
                            }
                        }
                    }
                    let r = y - y_start;
                    out[(oc * rows + r) * w..(oc * rows + r + 1) * w].copy_from_slice(&acc);
                }
            }
            out
        })
        .collect();

    let mut data = vec![T::zero(); 3 * h * w];
    for (b, band) in bands.iter().enumerate() {
        let y_start = b * BAND_ROWS;
        let rows = band.len() / (3 * w);
        for oc in 0..3 {
            let dst = (oc * h + y_start) * w;
            data[dst..dst + rows * w].copy_from_slice(&band[oc * rows * w..(oc + 1) * rows * w]);
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

struct BandCtx<'a, T> {
    grid_h: &'a [T],
    ty: &'a [(usize, usize, T)],
    img: &'a [T],
    gh: usize,
    h: usize,
    w: usize,
}

impl<T: Real> BandCtx<'_, T> {
    /// Feature maps of image row `y` into `dst` (12 rows of `w + 2` with a
    /// zero column on each side). Rows outside the image are all zero.
    fn feature_row(&self, y: isize, dst: &mut [T]) {
        let (w, stride) = (self.w, self.w + 2);
        if y < 0 || y as usize >= self.h {
            dst.fill(T::zero());
            return;
        }
        let y = y as usize;
        let (y0, y1, fy) = self.ty[y];
        for m in 0..GRID_CHANNELS {
            let r0 = &self.grid_h[(m * self.gh + y0) * w..(m * self.gh + y0 + 1) * w];
            let r1 = &self.grid_h[(m * self.gh + y1) * w..(m * self.gh + y1 + 1) * w];
            let row = &mut dst[m * stride..(m + 1) * stride];
            row[0] = T::zero();
            row[stride - 1] = T::zero();
            let j = m % 4;
            if j == 3 {
                for ((d, &a), &b) in row[1..=w].iter_mut().zip(r0).zip(r1) {
                    *d = ops::lerp(a, b, fy);
                }
            } else {
                let px = &self.img[(j * self.h + y) * w..(j * self.h + y + 1) * w];
                for (((d, &a), &b), &p) in row[1..=w].iter_mut().zip(r0).zip(r1).zip(px) {
                    *d = ops::lerp(a, b, fy) * p;
                }
            }
        }
    }
}

/// Handles produced by [`enhance_on`].
#[derive(Debug, Clone, Copy)]
pub struct TapedEnhance {
    /// Pre-clamp `3×H×W` output.
    pub output: Var,
    /// Full-proxy-resolution grid `T` before pooling.
    pub grid: Var,
    pub lowrank: Var,
}

/// Record the whole pipeline on `tape` for training. `image` is `3×H×W`; the
/// proxy is derived from its value and treated as a constant.
pub fn enhance_on<T: Real>(
    tape: &mut Tape<T>,
    image: Var,
    vars: &ParamVars,
    proxy_size: usize,
    kernel: PoolKernel,
) -> Result<TapedEnhance, ModelError> {
    let raw = tape.value(image).clone();
    let (_, h, w) = raw.dims3("enhance")?;
    let proxy = tape.constant(make_proxy_sized(&raw, proxy_size));
    let grid = gridnet::grid_forward_on(tape, proxy, vars)?;
    let lowrank = gridnet::low_rank_on(tape, grid, kernel, vars.lowrank_slope)?;
    let full = tape.bilinear_resize(lowrank, h, w)?;
    let features = tape.s_slice(full, image)?;
    let output = tape.conv2d(features, vars.decompress_weight, Some(vars.decompress_bias), 1, 1)?;
    Ok(TapedEnhance { output, grid, lowrank })
}
