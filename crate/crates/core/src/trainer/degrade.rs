//! Synthetic degradations (blur, veiling haze, vignetting) and a generator
//! of clean, colourful scenes to degrade.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageRGB;
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeConfig {
    /// Maximum haze density; the transmission stays `≥ 1 − haze`.
    pub haze: f32,
    pub airlight: [f32; 3],
    /// Brightness loss at the image corners.
    pub vignette: f32,
    pub blur_sigma: f32,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            haze: 0.5,
            airlight: [1.0, 1.0, 1.0],
            vignette: 0.3,
            blur_sigma: 1.0,
            seed: 0,
        }
    }
}

impl DegradeConfig {
    pub fn identity() -> Self {
        DegradeConfig {
            haze: 0.0,
            vignette: 0.0,
            blur_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("haze", self.haze), ("vignette", self.vignette)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} strength {v} must be in [0, 1]"));
            }
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(format!("blur sigma {} must be non-negative", self.blur_sigma));
        }
        if self.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(format!("airlight {:?} must lie in [0, 1]", self.airlight));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with clamped borders; `sigma = 0` is a no-op.
pub fn gaussian_blur(img: &ImageRGB, sigma: f32) -> ImageRGB {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-r..=r)
        .map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let src = img.pixels().data();
    let mut tmp = vec![0.0f32; src.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x + i as isize - r).clamp(0, w - 1);
                    acc += kv * src[((c * h + y) * w + xx) as usize];
                }
                tmp[((c * h + y) * w + x) as usize] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y + i as isize - r).clamp(0, h - 1);
                    acc += kv * tmp[((c * h + yy) * w + x) as usize];
                }
                out[((c * h + y) * w + x) as usize] = acc;
            }
        }
    }
    let t = Tensor::new(img.pixels().shape(), out).expect("same shape");
    ImageRGB::from_tensor_clamped(&t).expect("same shape")
}

/// Smooth random field in `[0, 1]`: a coarse `cells×cells` lattice of
/// uniform samples, bilinearly upsampled.
pub fn smooth_field(rng: &mut impl Rng, h: usize, w: usize, cells: usize) -> Vec<f32> {
    let coarse = Tensor::from_fn(&[1, cells, cells], |_| rng.random::<f32>()).expect("positive size");
    ops::bilinear_resize(&coarse, h, w).expect("positive size").into_data()
}

/// `I = t·J + (1 − t)·A` with a per-pixel transmission map.
pub fn apply_haze(img: &ImageRGB, t: &[f32], airlight: [f32; 3]) -> ImageRGB {
    let hw = img.height() * img.width();
    assert_eq!(t.len(), hw, "transmission map size");
    let src = img.pixels().data();
    let out = Tensor::from_fn(img.pixels().shape(), |i| {
        let tv = t[i % hw];
        tv * src[i] + (1.0 - tv) * airlight[i / hw]
    })
    .expect("same shape");
    ImageRGB::from_tensor_clamped(&out).expect("same shape")
}

/// Radial multiplier `1 − v·r²` with `r = 1` at the corners.
pub fn vignette(img: &ImageRGB, strength: f32) -> ImageRGB {
    if strength == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let norm = cy * cy + cx * cx;
    let src = img.pixels().data();
    let out = Tensor::from_fn(img.pixels().shape(), |i| {
        let (y, x) = ((i / w) % h, i % w);
        let (dy, dx) = (y as f32 - cy, x as f32 - cx);
        let r2 = if norm > 0.0 { (dy * dy + dx * dx) / norm } else { 0.0 };
        src[i] * (1.0 - strength * r2)
    })
    .expect("same shape");
    ImageRGB::from_tensor_clamped(&out).expect("same shape")
}

/// Blur, then haze with a smooth random transmission, then vignette.
/// Deterministic for a given seed.
pub fn degrade(img: &ImageRGB, cfg: &DegradeConfig) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let blurred = gaussian_blur(img, cfg.blur_sigma);
    let hazy = if cfg.haze > 0.0 {
        let field = smooth_field(&mut rng, img.height(), img.width(), 4);
        let t: Vec<f32> = field.iter().map(|u| 1.0 - cfg.haze * u).collect();
        apply_haze(&blurred, &t, cfg.airlight)
    } else {
        blurred
    };
    vignette(&hazy, cfg.vignette)
}

/// A clean scene of saturated shapes over a two-colour gradient. Every
/// colour has one near-zero channel, so the dark channel is low.
pub fn synthesize_scene(height: usize, width: usize, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| -> [f32; 3] {
        let low = rng.random_range(0..3);
        let mut c = [0.0; 3];
        for (i, v) in c.iter_mut().enumerate() {
            *v = if i == low {
                rng.random_range(0.0..0.06)
            } else {
                rng.random_range(0.25..0.95)
            };
        }
        c
    };
    let (top, bottom) = (colour(&mut rng), colour(&mut rng));
    let shapes: Vec<([f32; 3], f32, f32, f32, f32)> = (0..rng.random_range(4..8))
        .map(|_| {
            (
                colour(&mut rng),
                rng.random_range(0.0..height as f32),
                rng.random_range(0.0..width as f32),
                rng.random_range(0.1..0.35) * height as f32,
                rng.random_range(0.1..0.35) * width as f32,
            )
        })
        .collect();
    let shade = smooth_field(&mut rng, height, width, 5);
    ImageRGB::from_fn(height, width, |c, y, x| {
        let f = y as f32 / (height - 1).max(1) as f32;
        let mut v = top[c] + f * (bottom[c] - top[c]);
        for (col, cy, cx, ry, rx) in &shapes {
            let (dy, dx) = ((y as f32 - cy) / ry, (x as f32 - cx) / rx);
            if dy * dy + dx * dx <= 1.0 {
                v = col[c];
            }
        }
        (v * (0.8 + 0.2 * shade[y * width + x])).clamp(0.0, 1.0)
    })
    .expect("valid scene size")
}
