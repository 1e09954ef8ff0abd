//! Non-reference training objectives: dark-channel prior, spatial
//! consistency, exposure, colour constancy, grid total variation and the
//! dark/bright channel sparsity term, plus their weighted total.
//!
//! Every term is recorded on a [`Tape`] so the trainer gets exact gradients;
//! the plain functions evaluate the same graph on constants.

use thiserror::Error;

use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid loss config: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, LossError>;

/// Term weights, the exposure target and the patch/region sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub w_dcp: f64,
    pub w_lle: f64,
    pub w_dbc: f64,
    pub w_spa: f64,
    pub w_exp: f64,
    pub w_cc: f64,
    pub w_tv: f64,
    /// Target mean luminance of the exposure term.
    pub exposure: f64,
    pub spa_region: usize,
    pub exp_region: usize,
    pub dcp_patch: usize,
    pub dbc_patch: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_dcp: 0.8,
            w_lle: 0.1,
            w_dbc: 0.1,
            w_spa: 1.0,
            w_exp: 1.0,
            w_cc: 0.5,
            w_tv: 20.0,
            exposure: 0.6,
            spa_region: 8,
            exp_region: 16,
            dcp_patch: 15,
            dbc_patch: 5,
        }
    }
}

impl LossWeights {
    /// All term weights zero; the objective is identically zero.
    pub fn zero() -> Self {
        LossWeights {
            w_dcp: 0.0,
            w_lle: 0.0,
            w_dbc: 0.0,
            w_spa: 0.0,
            w_exp: 0.0,
            w_cc: 0.0,
            w_tv: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_dcp", self.w_dcp),
            ("w_lle", self.w_lle),
            ("w_dbc", self.w_dbc),
            ("w_spa", self.w_spa),
            ("w_exp", self.w_exp),
            ("w_cc", self.w_cc),
            ("w_tv", self.w_tv),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(LossError::Config(format!(
                    "{name} = {w} must be finite and non-negative"
                )));
            }
        }
        if !(self.exposure > 0.0 && self.exposure < 1.0) {
            return Err(LossError::Config(format!(
                "exposure target {} must lie in (0, 1)",
                self.exposure
            )));
        }
        for (name, r) in [("spa_region", self.spa_region), ("exp_region", self.exp_region)] {
            if r == 0 {
                return Err(LossError::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, p) in [("dcp_patch", self.dcp_patch), ("dbc_patch", self.dbc_patch)] {
            if p % 2 == 0 {
                return Err(LossError::Config(format!("{name} = {p} must be odd")));
            }
        }
        Ok(())
    }

    /// Regions must fit inside an `h×w` image.
    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        for (name, r) in [("spa_region", self.spa_region), ("exp_region", self.exp_region)] {
            if r > h.min(w) {
                return Err(LossError::Config(format!("{name} = {r} exceeds image size {h}x{w}")));
            }
        }
        Ok(())
    }

    /// The weighted total of a set of term values, in double precision.
    pub fn combine(&self, t: &LossTerms<f64>) -> f64 {
        self.w_dcp * t.dcp
            + self.w_lle * (self.w_spa * t.spa + self.w_exp * t.exp + self.w_cc * t.cc + self.w_tv * t.tv)
            + self.w_dbc * t.dbc
    }

    /// Effective weight of each term in the total, in report order.
    pub fn effective(&self) -> [f64; 6] {
        [
            self.w_dcp,
            self.w_lle * self.w_spa,
            self.w_lle * self.w_exp,
            self.w_lle * self.w_cc,
            self.w_lle * self.w_tv,
            self.w_dbc,
        ]
    }
}

/// The six term values (or their tape handles).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms<V> {
    pub dcp: V,
    pub spa: V,
    pub exp: V,
    pub cc: V,
    pub tv: V,
    pub dbc: V,
}

impl<V: Copy> LossTerms<V> {
    pub const NAMES: [&'static str; 6] = ["dcp", "spa", "exp", "cc", "tv", "dbc"];

    pub fn as_array(&self) -> [V; 6] {
        [self.dcp, self.spa, self.exp, self.cc, self.tv, self.dbc]
    }

    pub fn map<U>(&self, f: impl Fn(V) -> U) -> LossTerms<U> {
        LossTerms {
            dcp: f(self.dcp),
            spa: f(self.spa),
            exp: f(self.exp),
            cc: f(self.cc),
            tv: f(self.tv),
            dbc: f(self.dbc),
        }
    }
}

/// Per-term values and the weighted total for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub terms: LossTerms<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn new(terms: LossTerms<f64>, weights: &LossWeights) -> Self {
        LossReport {
            terms,
            total: weights.combine(&terms),
        }
    }

    /// Space-separated `dcp spa exp cc tv dbc total`.
    pub fn fields(&self) -> [f64; 7] {
        let t = self.terms.as_array();
        [t[0], t[1], t[2], t[3], t[4], t[5], self.total]
    }

    /// Mean of several reports, term by term.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0f64; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.fields()) {
                *a += v;
            }
        }
        let a = acc.map(|v| v / n);
        LossReport {
            terms: LossTerms {
                dcp: a[0],
                spa: a[1],
                exp: a[2],
                cc: a[3],
                tv: a[4],
                dbc: a[5],
            },
            total: a[6],
        }
    }

    /// Name of the first term whose weighted value is not finite, falling
    /// back to `total`.
    pub fn first_non_finite(&self, weights: &LossWeights) -> Option<&'static str> {
        let weighted = self.terms.as_array();
        for ((name, v), w) in LossTerms::<f64>::NAMES.iter().zip(weighted).zip(weights.effective()) {
            if !(v * w).is_finite() || !v.is_finite() {
                return Some(name);
            }
        }
        (!self.total.is_finite()).then_some("total")
    }
}

// ---------------------------------------------------------------------------
// taped terms

/// Mean absolute dark channel.
pub fn dcp_on<T: Real>(tape: &mut Tape<T>, out: Var, patch: usize) -> Result<Var> {
    let d = tape.dark_channel(out, patch)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Spatial consistency between region-mean luminances of `out` and `inp`
/// over left/right/up/down neighbours, normalized by the region count.
pub fn spa_on<T: Real>(tape: &mut Tape<T>, out: Var, inp: Var, region: usize) -> Result<Var> {
    let (so, si) = (tape.value(out).shape().to_vec(), tape.value(inp).shape().to_vec());
    if so != si {
        return Err(TensorError::shape("loss_spa", format!("input matching output shape {so:?}"), &si).into());
    }
    let lo = tape.channel_mean(out)?;
    let li = tape.channel_mean(inp)?;
    let po = tape.avgpool2d(lo, region)?;
    let pi = tape.avgpool2d(li, region)?;
    let (rh, rw) = {
        let s = tape.value(po).shape();
        (s[1], s[2])
    };
    let mut parts = Vec::new();
    type Diff<T> = fn(&mut Tape<T>, Var) -> crate::tensor::Result<Var>;
    let dirs: [(bool, Diff<T>); 2] = [(rw > 1, Tape::diff_x), (rh > 1, Tape::diff_y)];
    for (present, diff) in dirs {
        if !present {
            continue;
        }
        let d_o = diff(tape, po)?;
        let d_i = diff(tape, pi)?;
        let a_o = tape.abs(d_o);
        let a_i = tape.abs(d_i);
        let delta = tape.sub(a_o, a_i)?;
        let sq = tape.square(delta);
        parts.push(tape.sum(sq));
    }
    let norm = T::lit(2.0 / (rh * rw) as f64);
    let total = match parts[..] {
        [] => {
            let z = tape.constant(Tensor::scalar(T::zero()));
            return Ok(z);
        }
        [a] => a,
        [a, b] => tape.add(a, b)?,
        _ => unreachable!(),
    };
    Ok(tape.scale(total, norm))
}

/// Mean absolute deviation of region-mean luminance from the target.
pub fn exp_on<T: Real>(tape: &mut Tape<T>, out: Var, region: usize, target: f64) -> Result<Var> {
    let l = tape.channel_mean(out)?;
    let p = tape.avgpool2d(l, region)?;
    let d = tape.offset(p, T::lit(-target));
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Sum of squared differences between the three channel means.
pub fn cc_on<T: Real>(tape: &mut Tape<T>, out: Var) -> Result<Var> {
    let means = tape.spatial_mean(out)?;
    if tape.value(means).numel() != 3 {
        return Err(TensorError::shape("loss_cc", "3-channel image", tape.value(out).shape()).into());
    }
    let ch: Vec<Var> = (0..3)
        .map(|c| tape.index(means, c))
        .collect::<std::result::Result<_, _>>()?;
    let mut acc = None;
    for (p, q) in [(0, 1), (0, 2), (1, 2)] {
        let d = tape.sub(ch[p], ch[q])?;
        let s = tape.square(d);
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    Ok(acc.expect("three pairs"))
}

/// Total variation of the coefficient grid: per output-channel group of four
/// maps, `(mean|∇x| + mean|∇y|)²`, averaged over the three groups.
pub fn tv_on<T: Real>(tape: &mut Tape<T>, grid: Var) -> Result<Var> {
    let (c, h, w) = tape.value(grid).dims3("loss_tv")?;
    if c != 12 {
        return Err(TensorError::shape("loss_tv", "12-channel grid", tape.value(grid).shape()).into());
    }
    let mut groups = Vec::with_capacity(3);
    for g in 0..3 {
        let maps = tape.narrow_channels(grid, 4 * g, 4)?;
        let mut parts = Vec::new();
        if w > 1 {
            let d = tape.diff_x(maps)?;
            let a = tape.abs(d);
            parts.push(tape.mean(a));
        }
        if h > 1 {
            let d = tape.diff_y(maps)?;
            let a = tape.abs(d);
            parts.push(tape.mean(a));
        }
        let s = match parts[..] {
            [] => tape.constant(Tensor::scalar(T::zero())),
            [a] => a,
            [a, b] => tape.add(a, b)?,
            _ => unreachable!(),
        };
        groups.push(tape.square(s));
    }
    let sum = {
        let ab = tape.add(groups[0], groups[1])?;
        tape.add(ab, groups[2])?
    };
    Ok(tape.scale(sum, T::lit(1.0 / 3.0)))
}

/// `mean|dark| + mean|1 − bright|`.
pub fn dbc_on<T: Real>(tape: &mut Tape<T>, out: Var, patch: usize) -> Result<Var> {
    let d = tape.dark_channel(out, patch)?;
    let da = tape.abs(d);
    let dm = tape.mean(da);
    let b = tape.bright_channel(out, patch)?;
    let nb = tape.scale(b, -T::one());
    let gap = tape.offset(nb, T::one());
    let ga = tape.abs(gap);
    let gm = tape.mean(ga);
    Ok(tape.add(dm, gm)?)
}

/// Handles of every term and of the weighted objective.
#[derive(Debug, Clone, Copy)]
pub struct TapedLoss {
    pub terms: LossTerms<Var>,
    pub total: Var,
}

/// Record all six terms and their weighted sum. Terms with zero effective
/// weight are evaluated for the report but left out of the objective.
pub fn total_on<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    inp: Var,
    grid: Var,
    weights: &LossWeights,
) -> Result<TapedLoss> {
    weights.validate()?;
    let (_, h, w) = tape.value(out).dims3("loss_total")?;
    weights.check_size(h, w)?;
    let terms = LossTerms {
        dcp: dcp_on(tape, out, weights.dcp_patch)?,
        spa: spa_on(tape, out, inp, weights.spa_region)?,
        exp: exp_on(tape, out, weights.exp_region, weights.exposure)?,
        cc: cc_on(tape, out)?,
        tv: tv_on(tape, grid)?,
        dbc: dbc_on(tape, out, weights.dbc_patch)?,
    };
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (v, wt) in terms.as_array().into_iter().zip(weights.effective()) {
        if wt != 0.0 {
            let s = tape.scale(v, T::lit(wt));
            total = tape.add(total, s)?;
        }
    }
    Ok(TapedLoss { terms, total })
}

/// Term values of a taped loss as a report; the total is recomputed in
/// double precision from the terms.
pub fn report<T: Real>(tape: &Tape<T>, loss: &TapedLoss, weights: &LossWeights) -> LossReport {
    LossReport::new(loss.terms.map(|v| tape.value(v).item().as_f64()), weights)
}

// ---------------------------------------------------------------------------
// plain evaluation

fn eval<T: Real>(inputs: &[&Tensor<T>], f: impl FnOnce(&mut Tape<T>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let v = f(&mut tape, &vars)?;
    Ok(tape.value(v).item().as_f64())
}

pub fn loss_dcp<T: Real>(out: &Tensor<T>, weights: &LossWeights) -> Result<f64> {
    eval(&[out], |t, v| dcp_on(t, v[0], weights.dcp_patch))
}

pub fn loss_spa<T: Real>(out: &Tensor<T>, inp: &Tensor<T>, weights: &LossWeights) -> Result<f64> {
    eval(&[out, inp], |t, v| spa_on(t, v[0], v[1], weights.spa_region))
}

pub fn loss_exp<T: Real>(out: &Tensor<T>, weights: &LossWeights) -> Result<f64> {
    eval(&[out], |t, v| exp_on(t, v[0], weights.exp_region, weights.exposure))
}

pub fn loss_cc<T: Real>(out: &Tensor<T>) -> Result<f64> {
    eval(&[out], |t, v| cc_on(t, v[0]))
}

pub fn loss_tv<T: Real>(grid: &Tensor<T>) -> Result<f64> {
    eval(&[grid], |t, v| tv_on(t, v[0]))
}

pub fn loss_dbc<T: Real>(out: &Tensor<T>, weights: &LossWeights) -> Result<f64> {
    eval(&[out], |t, v| dbc_on(t, v[0], weights.dbc_patch))
}

pub fn loss_total<T: Real>(
    out: &Tensor<T>,
    inp: &Tensor<T>,
    grid: &Tensor<T>,
    weights: &LossWeights,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let (o, i, g) = (
        tape.constant(out.clone()),
        tape.constant(inp.clone()),
        tape.constant(grid.clone()),
    );
    let loss = total_on(&mut tape, o, i, g, weights)?;
    Ok(report(&tape, &loss, weights))
}
