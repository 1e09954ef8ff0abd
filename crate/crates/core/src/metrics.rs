//! Full-reference quality metrics: PSNR and Gaussian-window SSIM.

use thiserror::Error;

use crate::image::ImageRGB;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall(usize, usize),
}

fn check_sizes(a: &ImageRGB, b: &ImageRGB) -> Result<(), MetricError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(MetricError::SizeMismatch(a.height(), a.width(), b.height(), b.width()));
    }
    Ok(())
}

pub fn mse(a: &ImageRGB, b: &ImageRGB) -> Result<f64, MetricError> {
    check_sizes(a, b)?;
    let (pa, pb) = (a.pixels().data(), b.pixels().data());
    let sum: f64 = pa
        .iter()
        .zip(pb)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / pa.len() as f64)
}

/// Peak signal-to-noise ratio in dB with peak 1.0; identical images give
/// [`PSNR_CAP`].
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Gaussian-weighted sum over every valid window position.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(k, &gk)| gk * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, &gk)| gk * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11×11 Gaussian windows
/// (σ = 1.5), averaged over the three channels.
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> Result<f64, MetricError> {
    check_sizes(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall(h, w));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().plane(c).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.pixels().plane(c).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|s| filter_valid(s, h, w, &g));
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            acc += num / den;
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(amp: f32) -> ImageRGB {
        ImageRGB::from_fn(24, 20, |c, y, x| {
            let base = ((c * 7 + y * 3 + x * 5) % 13) as f32 / 26.0 + 0.25;
            let sign = if (c + y + x) % 2 == 0 { 1.0 } else { -1.0 };
            base + sign * amp
        })
        .unwrap()
    }

    #[test]
    fn self_comparison() {
        let a = noisy(0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn uniform_shift_is_twenty_db() {
        let a = ImageRGB::filled(16, 16, [0.25, 0.5, 0.75]).unwrap();
        let b = ImageRGB::new(a.pixels().map(|v| v + 0.1)).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let clean = noisy(0.0);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let p = psnr(&clean, &noisy(amp)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_constant_images_and_symmetry() {
        let zero = ImageRGB::filled(16, 16, [0.0; 3]).unwrap();
        let one = ImageRGB::filled(16, 16, [1.0; 3]).unwrap();
        assert!(ssim(&zero, &one).unwrap() < 0.01);
        let (a, b) = (noisy(0.0), noisy(0.1));
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn errors() {
        let a = ImageRGB::filled(16, 16, [0.0; 3]).unwrap();
        let b = ImageRGB::filled(16, 17, [0.0; 3]).unwrap();
        assert!(matches!(psnr(&a, &b), Err(MetricError::SizeMismatch(..))));
        let s = ImageRGB::filled(10, 30, [0.0; 3]).unwrap();
        assert_eq!(ssim(&s, &s), Err(MetricError::TooSmall(10, 30)));
    }
}
