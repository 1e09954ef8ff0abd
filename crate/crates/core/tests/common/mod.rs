//! Independent scalar reference implementations and test fixtures.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zrudc::gridnet::{GridNetConfig, GridNetParams, PoolKernel};
use zrudc::image::ImageRGB;
use zrudc::losses::{self, LossWeights};
use zrudc::slicing;
use zrudc::tensor::{Real, Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Real>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(lo..hi))).unwrap()
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ImageRGB {
    ImageRGB::new(random_tensor(rng, &[3, h, w], 0.0, 1.0)).unwrap()
}

fn at<T: Real>(t: &Tensor<T>, c: usize, y: usize, x: usize) -> f64 {
    let s = t.shape();
    t.data()[(c * s[1] + y) * s[2] + x].as_f64()
}

pub fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

pub fn max_err<T: Real>(got: &Tensor<T>, want: &[f64]) -> f64 {
    assert_eq!(got.numel(), want.len(), "element count");
    got.data()
        .iter()
        .zip(want)
        .map(|(g, w)| (g.as_f64() - w).abs())
        .fold(0.0, f64::max)
}

/// Quadruple loop cross-correlation with zero padding.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, k) = (weight.shape()[0], weight.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(cout * ho * wo);
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b.data()[co].as_f64());
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wv = weight.data()[((co * cin + ci) * k + ky) * k + kx].as_f64();
                            acc += wv * at(input, ci, iy as usize, ix as usize);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    (vec![cout, ho, wo], out)
}

/// Ceil-mode max pooling: windows start at multiples of the stride while
/// the start is inside the input, and are clipped at the border.
pub fn maxpool2d<T: Real>(input: &Tensor<T>, k: usize, s: usize) -> (Vec<usize>, Vec<f64>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let starts = |len: usize| -> Vec<usize> {
        if len <= k {
            return vec![0];
        }
        let mut v = vec![];
        let mut i = 0;
        while i < len {
            v.push(i);
            if i + k >= len {
                break;
            }
            i += s;
        }
        v
    };
    let (ys, xs) = (starts(h), starts(w));
    let mut out = vec![];
    for ch in 0..c {
        for &y0 in &ys {
            for &x0 in &xs {
                let mut m = f64::NEG_INFINITY;
                for y in y0..(y0 + k).min(h) {
                    for x in x0..(x0 + k).min(w) {
                        m = m.max(at(input, ch, y, x));
                    }
                }
                out.push(m);
            }
        }
    }
    (vec![c, ys.len(), xs.len()], out)
}

pub fn prelu<T: Real>(input: &Tensor<T>, slope: f64) -> Vec<f64> {
    input
        .data()
        .iter()
        .map(|v| {
            let x = v.as_f64();
            if x >= 0.0 {
                x
            } else {
                slope * x
            }
        })
        .collect()
}

/// Four-tap weighted sum with half-pixel centres and clamped coordinates.
pub fn bilinear<T: Real>(input: &Tensor<T>, oh: usize, ow: usize) -> Vec<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let coord = |o: usize, out_len: usize, in_len: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = vec![];
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1, fy) = coord(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1, fx) = coord(ox, ow, w);
                out.push(
                    (1.0 - fy) * (1.0 - fx) * at(input, ch, y0, x0)
                        + (1.0 - fy) * fx * at(input, ch, y0, x1)
                        + fy * (1.0 - fx) * at(input, ch, y1, x0)
                        + fy * fx * at(input, ch, y1, x1),
                );
            }
        }
    }
    out
}

/// Channel extremum then a patch extremum over an edge-replicated border.
pub fn extremum_channel<T: Real>(img: &Tensor<T>, patch: usize, max: bool) -> Vec<f64> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let r = (patch / 2) as isize;
    let pick = |a: f64, b: f64| if max { a.max(b) } else { a.min(b) };
    let mut out = vec![];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut best = if max { f64::NEG_INFINITY } else { f64::INFINITY };
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    for ch in 0..c {
                        best = pick(best, at(img, ch, yy, xx));
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

pub fn s_slice<T: Real>(grid: &Tensor<T>, img: &Tensor<T>) -> Vec<f64> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = vec![];
    for m in 0..12 {
        let j = m % 4;
        for y in 0..h {
            for x in 0..w {
                let g = at(grid, m, y, x);
                out.push(if j == 3 { g } else { g * at(img, j, y, x) });
            }
        }
    }
    out
}

/// Per-pixel 3×4 affine from a low-rank grid: upsample every coefficient
/// with the reference interpolator, then `y_c = Σ_j A[c,j]·x_j + A[c,3]`.
pub fn affine_apply<T: Real>(lowrank: &Tensor<T>, img: &Tensor<T>) -> Vec<f64> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let up = bilinear(lowrank, h, w);
    let coeff = |m: usize, y: usize, x: usize| up[(m * h + y) * w + x];
    let mut out = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut v = coeff(4 * c + 3, y, x);
                for j in 0..3 {
                    v += coeff(4 * c + j, y, x) * at(img, j, y, x);
                }
                out[(c * h + y) * w + x] = v;
            }
        }
    }
    out
}

/// Spatial consistency straight from its definition: region means of the
/// channel-mean luminance, every in-bounds left/right/up/down neighbour.
pub fn spa_loss<T: Real>(out: &Tensor<T>, inp: &Tensor<T>, region: usize) -> f64 {
    let (h, w) = (out.shape()[1], out.shape()[2]);
    let (rh, rw) = (h / region, w / region);
    let pooled = |t: &Tensor<T>| -> Vec<f64> {
        let mut v = vec![0.0; rh * rw];
        for ry in 0..rh {
            for rx in 0..rw {
                let mut s = 0.0;
                for y in ry * region..(ry + 1) * region {
                    for x in rx * region..(rx + 1) * region {
                        s += (at(t, 0, y, x) + at(t, 1, y, x) + at(t, 2, y, x)) / 3.0;
                    }
                }
                v[ry * rw + rx] = s / (region * region) as f64;
            }
        }
        v
    };
    let (o, i) = (pooled(out), pooled(inp));
    let mut total = 0.0;
    for y in 0..rh as isize {
        for x in 0..rw as isize {
            let p = y as usize * rw + x as usize;
            for (dy, dx) in [(0, -1), (0, 1), (-1, 0), (1, 0)] {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= rh as isize || nx >= rw as isize {
                    continue;
                }
                let q = ny as usize * rw + nx as usize;
                let d = (o[p] - o[q]).abs() - (i[p] - i[q]).abs();
                total += d * d;
            }
        }
    }
    total / (rh * rw) as f64
}

/// Small network and loss settings used by the finite-difference suites.
pub fn tiny_net() -> GridNetConfig {
    GridNetConfig {
        widths: vec![2, 4],
        proxy_size: 8,
    }
}

pub fn tiny_weights() -> LossWeights {
    LossWeights {
        spa_region: 2,
        exp_region: 4,
        dcp_patch: 3,
        dbc_patch: 3,
        ..LossWeights::default()
    }
}

/// A parameter point away from the kinks of the piecewise-linear parts, so
/// that a step of `FD_STEP` stays on one linear piece. Conv biases of ±1
/// with weights bounded by `0.3 / fan_in` keep every PReLU input at least
/// about 0.4 from zero on a fixed side; the head bias keeps every grid
/// coefficient clear of zero.
pub fn tiny_params(seed: u64) -> GridNetParams<f64> {
    let mut p = GridNetParams::<f64>::init(tiny_net(), seed).unwrap();
    let mut r = rng(seed ^ 0xfeed);
    let names: Vec<String> = p.named().iter().map(|(n, _)| n.clone()).collect();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        let fan_in: usize = t.shape()[1..].iter().product();
        let data = t.data_mut();
        if name.ends_with("slope") || name.starts_with("decompress") {
            continue;
        }
        if name == "head.weight" {
            data.iter_mut().for_each(|v| *v = r.random_range(0.005..0.02));
        } else if name.ends_with("weight") {
            let bound = 0.3 / fan_in as f64;
            data.iter_mut().for_each(|v| *v = r.random_range(0.1 * bound..bound));
        } else if name == "head.bias" {
            for (i, v) in data.iter_mut().enumerate() {
                let (c, j) = (i / 4, i % 4);
                let base = match j {
                    _ if j == c => 1.0,
                    3 => 0.15 + 0.1 * c as f64,
                    _ => 0.2,
                };
                *v = base + r.random_range(-0.02..0.02);
            }
        } else {
            for (i, v) in data.iter_mut().enumerate() {
                *v = if i % 2 == 0 { 1.0 } else { -1.0 } + r.random_range(-0.1..0.1);
            }
        }
    }
    p
}

/// Channel-offset ramp with faint texture: channel order and the position
/// of every patch extremum are fixed with a clear margin.
pub fn tiny_image(seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(&[3, 8, 8], |i| {
        let (c, y, x) = (i / 64, (i / 8) % 8, i % 8);
        0.1 + 0.25 * c as f64 + 0.03 * x as f64 + 0.011 * y as f64 + r.random_range(-0.002..0.002)
    })
    .unwrap()
}

/// Loss weights with only `term` switched on; anything else gives the full
/// objective.
pub fn single_term(term: &str) -> LossWeights {
    let z = LossWeights {
        w_spa: 0.0,
        w_exp: 0.0,
        w_cc: 0.0,
        w_tv: 0.0,
        w_dcp: 0.0,
        w_dbc: 0.0,
        w_lle: 1.0,
        ..tiny_weights()
    };
    match term {
        "dcp" => LossWeights { w_dcp: 1.0, ..z },
        "spa" => LossWeights { w_spa: 1.0, ..z },
        "exp" => LossWeights { w_exp: 1.0, ..z },
        "cc" => LossWeights { w_cc: 1.0, ..z },
        "tv" => LossWeights { w_tv: 1.0, ..z },
        "dbc" => LossWeights { w_dbc: 1.0, ..z },
        _ => tiny_weights(),
    }
}

/// The training objective on one image, with parameter gradients when
/// `grads` is set (zero for parameters the objective does not reach).
pub fn objective(
    params: &GridNetParams<f64>,
    img: &Tensor<f64>,
    weights: &LossWeights,
    kernel: PoolKernel,
    grads: bool,
) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, grads);
    let x = tape.constant(img.clone());
    let fwd = slicing::enhance_on(&mut tape, x, &vars, params.config().proxy_size, kernel).unwrap();
    let loss = losses::total_on(&mut tape, fwd.output, x, fwd.grid, weights).unwrap();
    let value = tape.value(loss.total).item();
    if !grads {
        return (value, vec![]);
    }
    let mut g = tape.backward(loss.total).unwrap();
    let out = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.shape()).unwrap()))
        .collect();
    (value, out)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely: relative error
/// of a value that is zero up to rounding is meaningless.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Central differences of `f` with respect to every scalar of `params`,
/// compared against `analytic` (same layout).
pub fn check_gradients(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> GradCheck {
    check_gradients_with(FD_STEP, params, analytic, f)
}

pub fn check_gradients_with(
    step: f64,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> GradCheck {
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut res = GradCheck {
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    for t in 0..params.len() {
        for i in 0..params[t].numel() {
            let orig = params[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let up = f(&work);
            work[t].data_mut()[i] = orig - step;
            let down = f(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_err(analytic[t].data()[i], numeric);
            res.checked += 1;
            if e < FD_TOL {
                res.passed += 1;
            }
            res.worst = res.worst.max(e);
        }
    }
    res
}

/// A synthetic outdoor scene: bright sky above the horizon, saturated
/// foreground below.
pub fn outdoor_scene(h: usize, w: usize, seed: u64) -> ImageRGB {
    let ground = zrudc::trainer::synthesize_scene(h, w, seed);
    let mut r = rng(seed ^ 0x5c1e);
    let horizon = h / 4 + r.random_range(0..h / 8);
    let tint: [f32; 3] = [
        r.random_range(0.8..0.86),
        r.random_range(0.86..0.9),
        r.random_range(0.9..0.95),
    ];
    ImageRGB::from_fn(h, w, |c, y, x| {
        if y < horizon {
            tint[c] - 0.05 * y as f32 / horizon as f32
        } else {
            ground.get(c, y, x)
        }
    })
    .unwrap()
}

/// Depth-like transmission: lowest at the top (far away), highest at the
/// bottom, with a smooth random modulation, all within `[0.4, 0.9]`.
pub fn planted_transmission(rng: &mut impl Rng, h: usize, w: usize) -> Vec<f32> {
    let top: f32 = rng.random_range(0.4..0.5);
    let bottom: f32 = rng.random_range(0.8..0.9);
    let field = zrudc::trainer::degrade::smooth_field(rng, h, w, 3);
    (0..h * w)
        .map(|i| {
            let f = (i / w) as f32 / (h - 1) as f32;
            (top + f * (bottom - top) + 0.1 * (field[i] - 0.5)).clamp(0.4, 0.9)
        })
        .collect()
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}
