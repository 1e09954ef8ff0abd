//! Dark-channel-prior dehazing followed by gamma correction: the classical
//! baseline, and a source of known-answer cases for the learned losses.

use thiserror::Error;

use crate::image::ImageRGB;
use crate::tensor::{ops, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum DehazeError {
    #[error("invalid dehaze config: {0}")]
    Config(String),
    #[error("gamma must be positive, got {0}")]
    Gamma(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DehazeConfig {
    /// Side of the dark-channel window; odd.
    pub window: usize,
    /// Fraction of haze removed, in `(0, 1]`.
    pub omega: f32,
    /// Lower bound on the transmission, in `(0, 1)`.
    pub t_floor: f32,
    /// Fraction of pixels, ranked by dark channel, averaged into the airlight.
    pub airlight_quantile: f32,
    pub gamma: f32,
}

impl Default for DehazeConfig {
    fn default() -> Self {
        DehazeConfig {
            window: 45,
            omega: 0.95,
            t_floor: 0.1,
            airlight_quantile: 0.001,
            gamma: 0.7,
        }
    }
}

impl DehazeConfig {
    pub fn validate(&self) -> Result<(), DehazeError> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(DehazeError::Config(format!(
                "window {} must be odd and positive",
                self.window
            )));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(DehazeError::Config(format!("omega {} must be in (0, 1]", self.omega)));
        }
        if !(self.t_floor > 0.0 && self.t_floor < 1.0) {
            return Err(DehazeError::Config(format!(
                "t_floor {} must be in (0, 1)",
                self.t_floor
            )));
        }
        if !(self.airlight_quantile > 0.0 && self.airlight_quantile <= 1.0) {
            return Err(DehazeError::Config(format!(
                "airlight quantile {} must be in (0, 1]",
                self.airlight_quantile
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(DehazeError::Gamma(self.gamma));
        }
        Ok(())
    }
}

/// Mean colour of the pixels with the largest dark channel, taking the top
/// `max(1, ceil(q·N))`. Ties keep scan order.
pub fn estimate_airlight(img: &ImageRGB, cfg: &DehazeConfig) -> Result<[f32; 3], DehazeError> {
    cfg.validate()?;
    let dark = ops::dark_channel(img.pixels(), cfg.window).expect("validated image and window");
    let n = dark.numel();
    let take = ((cfg.airlight_quantile as f64 * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let d = dark.data();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut acc = [0.0f64; 3];
    for &p in &order[..take] {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += img.pixels().plane(c)[p] as f64;
        }
    }
    Ok(acc.map(|v| (v / take as f64) as f32))
}

/// Invert the haze model with the dark-channel transmission estimate and the
/// estimated airlight.
pub fn dehaze(img: &ImageRGB, cfg: &DehazeConfig) -> Result<ImageRGB, DehazeError> {
    let a = estimate_airlight(img, cfg)?;
    dehaze_with_airlight(img, a, cfg)
}

pub fn dehaze_with_airlight(img: &ImageRGB, airlight: [f32; 3], cfg: &DehazeConfig) -> Result<ImageRGB, DehazeError> {
    cfg.validate()?;
    if airlight.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(DehazeError::Config(format!("airlight {airlight:?} must be positive")));
    }
    let (h, w) = (img.height(), img.width());
    let hw = h * w;
    let src = img.pixels().data();
    let normalized = Tensor::from_fn(&[3, h, w], |i| src[i] / airlight[i / hw]).expect("image shape");
    let dark = ops::dark_channel(&normalized, cfg.window).expect("validated window");
    let t: Vec<f32> = dark
        .data()
        .iter()
        .map(|&d| (1.0 - cfg.omega * d).max(cfg.t_floor))
        .collect();
    let out = Tensor::from_fn(&[3, h, w], |i| {
        let a = airlight[i / hw];
        (src[i] - a) / t[i % hw] + a
    })
    .expect("image shape");
    Ok(ImageRGB::from_tensor_clamped(&out).expect("image shape"))
}

/// Per-channel `v → v^gamma`.
pub fn gamma_correct(img: &ImageRGB, gamma: f32) -> Result<ImageRGB, DehazeError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DehazeError::Gamma(gamma));
    }
    let t = img.pixels().map(|v| if gamma == 1.0 { v } else { v.powf(gamma) });
    Ok(ImageRGB::new(t).expect("powers of [0, 1] stay in range"))
}

/// `gamma_correct(dehaze(img))`.
pub fn baseline(img: &ImageRGB, cfg: &DehazeConfig) -> Result<ImageRGB, DehazeError> {
    gamma_correct(&dehaze(img, cfg)?, cfg.gamma)
}
