//! Encoder-decoder that regresses the 12-channel affine grid from the
//! fixed-size proxy, and the max-pool + PReLU rank reduction applied to it.
//!
//! Architecture: `L` encoder levels (two 3×3 conv + PReLU each, 2× max-pool
//! between levels), a mirrored decoder that bilinearly upsamples and
//! concatenates the matching skip, and a 1×1 head to 12 channels with no
//! activation. Widths default to 16→32→64.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{ops, Real, Tape, Tensor, TensorError, Var};

/// Channels of an affine grid: a 3×4 matrix per cell.
pub const GRID_CHANNELS: usize = 12;
const PRELU_INIT: f64 = 0.25;
/// Head weights start this fraction of the fan-in bound so the initial grid
/// stays close to the identity transform set by the head bias.
const HEAD_INIT_SCALE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("pool kernel must be a positive integer or 'none', got {0}")]
    PoolKernel(String),
}

/// Kernel of the rank-reducing max-pool (stride equals the kernel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKernel {
    /// No pooling; only the PReLU is applied.
    Off,
    Size(usize),
}

impl PoolKernel {
    pub fn new(kernel: usize) -> Result<Self, ModelError> {
        if kernel == 0 {
            return Err(ModelError::PoolKernel("0".into()));
        }
        Ok(PoolKernel::Size(kernel))
    }

    /// The ablation set `{None, 3, 8, 16}`.
    pub const ABLATION: [PoolKernel; 4] = [
        PoolKernel::Off,
        PoolKernel::Size(3),
        PoolKernel::Size(8),
        PoolKernel::Size(16),
    ];

    /// Side of the pooled grid for a square input of side `side`.
    pub fn pooled_len(self, side: usize) -> usize {
        match self {
            PoolKernel::Off => side,
            PoolKernel::Size(k) => ops::pool_out_len(side, k, k),
        }
    }
}

impl Default for PoolKernel {
    fn default() -> Self {
        PoolKernel::Size(3)
    }
}

impl FromStr for PoolKernel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(PoolKernel::Off);
        }
        match s.parse::<i64>() {
            Ok(k) if k > 0 => Ok(PoolKernel::Size(k as usize)),
            _ => Err(ModelError::PoolKernel(s.to_string())),
        }
    }
}

impl fmt::Display for PoolKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolKernel::Off => f.write_str("None"),
            PoolKernel::Size(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridNetConfig {
    /// Channel width per encoder level, shallowest first.
    pub widths: Vec<usize>,
    /// Side of the square proxy the network consumes.
    pub proxy_size: usize,
}

impl Default for GridNetConfig {
    fn default() -> Self {
        GridNetConfig {
            widths: vec![16, 32, 64],
            proxy_size: crate::image::PROXY_SIZE,
        }
    }
}

impl GridNetConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(ModelError::Config(format!(
                "widths {:?} must be non-empty and positive",
                self.widths
            )));
        }
        if self.proxy_size == 0 {
            return Err(ModelError::Config("proxy size must be positive".into()));
        }
        Ok(())
    }

    fn levels(&self) -> usize {
        self.widths.len()
    }

    /// `(name, shape)` of every parameter in canonical (forward) order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let w = &self.widths;
        let mut out = Vec::new();
        let mut block = |prefix: String, cin: usize, cout: usize| {
            for (i, ci) in [cin, cout].into_iter().enumerate() {
                out.push((format!("{prefix}.conv{i}.weight"), vec![cout, ci, 3, 3]));
                out.push((format!("{prefix}.conv{i}.bias"), vec![cout]));
                out.push((format!("{prefix}.act{i}.slope"), vec![1]));
            }
        };
        for l in 0..w.len() {
            block(format!("enc{l}"), if l == 0 { 3 } else { w[l - 1] }, w[l]);
        }
        for l in (0..w.len() - 1).rev() {
            block(format!("dec{l}"), w[l + 1] + w[l], w[l]);
        }
        out.push(("head.weight".into(), vec![GRID_CHANNELS, w[0], 1, 1]));
        out.push(("head.bias".into(), vec![GRID_CHANNELS]));
        out.push(("lowrank.slope".into(), vec![1]));
        out.push(("decompress.weight".into(), vec![3, GRID_CHANNELS, 3, 3]));
        out.push(("decompress.bias".into(), vec![3]));
        out
    }
}

/// All learnable tensors of the grid network plus the PReLU slope of the
/// rank reduction and the 3×3 decompress convolution used by slicing.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNetParams<T: Real = f32> {
    config: GridNetConfig,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> GridNetParams<T> {
    /// Random fan-in initialization with an identity-affine head bias and
    /// group-sum decompress weights, so the initial output is close to the
    /// input.
    pub fn init(config: GridNetConfig, seed: u64) -> Result<Self, ModelError> {
        Self::build(config, seed, HEAD_INIT_SCALE)
    }

    /// Like [`init`](Self::init) but with a zero head weight: the grid is
    /// exactly the identity affine for every input and the pipeline returns
    /// its input unchanged.
    pub fn identity(config: GridNetConfig, seed: u64) -> Result<Self, ModelError> {
        Self::build(config, seed, 0.0)
    }

    fn build(config: GridNetConfig, seed: u64, head_scale: f64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name == "head.bias" {
                    Tensor::from_fn(&shape, |i| if i % 5 == 0 && i < 11 { T::one() } else { T::zero() })
                } else if name == "decompress.weight" {
                    Ok(group_sum_weight::<T>())
                } else if name.ends_with(".slope") {
                    Tensor::full(&shape, T::lit(PRELU_INIT))
                } else if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let mut bound = (6.0 / ((1.0 + PRELU_INIT * PRELU_INIT) * fan_in as f64)).sqrt();
                    if name == "head.weight" {
                        bound *= head_scale;
                    }
                    Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-1.0..=1.0) * bound))
                };
                t.map_err(ModelError::from)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GridNetParams { config, tensors })
    }

    /// Rebuild from named tensors (checkpoint order), inferring widths from
    /// the encoder weights and checking every name and shape.
    pub fn from_named(named: Vec<(String, Tensor<T>)>, proxy_size: usize) -> Result<Self, ModelError> {
        let mut widths = Vec::new();
        while let Some((_, t)) = named
            .iter()
            .find(|(n, _)| *n == format!("enc{}.conv0.weight", widths.len()))
        {
            widths.push(t.shape()[0]);
        }
        let config = GridNetConfig { widths, proxy_size };
        config.validate().map_err(|e| ModelError::Layout(e.to_string()))?;
        let layout = config.layout();
        if layout.len() != named.len() {
            return Err(ModelError::Layout(format!(
                "expected {} tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let tensors = layout
            .into_iter()
            .zip(named)
            .map(|((want_name, want_shape), (name, t))| {
                if name != want_name || t.shape() != want_shape {
                    Err(ModelError::Layout(format!(
                        "expected {want_name} {want_shape:?}, found {name} {:?}",
                        t.shape()
                    )))
                } else {
                    Ok(t)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(GridNetParams { config, tensors })
    }

    pub fn config(&self) -> &GridNetConfig {
        &self.config
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.config
            .layout()
            .into_iter()
            .map(|(n, _)| n)
            .zip(&self.tensors)
            .collect()
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.config
            .layout()
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.config.layout().iter().position(|(n, _)| n == name)?;
        Some(&mut self.tensors[i])
    }

    fn tail(&self, back: usize) -> &Tensor<T> {
        &self.tensors[self.tensors.len() - back]
    }

    pub fn lowrank_slope(&self) -> T {
        self.tail(3).item()
    }

    pub fn decompress_weight(&self) -> &Tensor<T> {
        self.tail(2)
    }

    pub fn decompress_bias(&self) -> &Tensor<T> {
        self.tail(1)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> GridNetParams<U> {
        GridNetParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Put every parameter on `tape`.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
        ParamVars::from_flat(vars, self.config.levels())
    }
}

/// Decompress weights that sum each output channel's four maps at the
/// centre tap: the classic additive affine application.
pub fn group_sum_weight<T: Real>() -> Tensor<T> {
    Tensor::from_fn(&[3, GRID_CHANNELS, 3, 3], |i| {
        let (c, m, tap) = (i / (GRID_CHANNELS * 9), (i / 9) % GRID_CHANNELS, i % 9);
        if tap == 4 && m / 4 == c {
            T::one()
        } else {
            T::zero()
        }
    })
    .expect("static shape")
}

/// Tape handles of a [`GridNetParams`], grouped by role.
#[derive(Debug, Clone)]
pub struct ParamVars {
    flat: Vec<Var>,
    encoder: Vec<[Var; 6]>,
    /// Indexed by level; the deepest level has no decoder block.
    decoder: Vec<[Var; 6]>,
    pub head_weight: Var,
    pub head_bias: Var,
    pub lowrank_slope: Var,
    pub decompress_weight: Var,
    pub decompress_bias: Var,
}

impl ParamVars {
    fn from_flat(flat: Vec<Var>, levels: usize) -> Self {
        let block = |i: usize| -> [Var; 6] { flat[i..i + 6].try_into().expect("six tensors per block") };
        let encoder = (0..levels).map(|l| block(6 * l)).collect();
        // decoder blocks are stored deepest first
        let mut decoder: Vec<[Var; 6]> = (0..levels - 1).map(|j| block(6 * levels + 6 * j)).collect();
        decoder.reverse();
        let n = flat.len();
        ParamVars {
            encoder,
            decoder,
            head_weight: flat[n - 5],
            head_bias: flat[n - 4],
            lowrank_slope: flat[n - 3],
            decompress_weight: flat[n - 2],
            decompress_bias: flat[n - 1],
            flat,
        }
    }

    /// Handles in canonical parameter order.
    pub fn all(&self) -> &[Var] {
        &self.flat
    }
}

/// `12×Gh×Gw` field of per-cell 3×4 colour affines. Channel `4·c + j`
/// multiplies input channel `j` (`j < 3`) or is the bias (`j = 3`) of output
/// channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrid<T: Real = f32>(Tensor<T>);

impl<T: Real> AffineGrid<T> {
    pub fn new(coeffs: Tensor<T>) -> Result<Self, ModelError> {
        let (c, _, _) = coeffs.dims3("affine_grid")?;
        if c != GRID_CHANNELS {
            return Err(TensorError::shape("affine_grid", "12 coefficient channels", coeffs.shape()).into());
        }
        Ok(AffineGrid(coeffs))
    }

    /// Identity transform at every cell.
    pub fn identity(height: usize, width: usize) -> Result<Self, ModelError> {
        let hw = height * width;
        let t = Tensor::from_fn(&[GRID_CHANNELS, height, width], |i| {
            let m = i / hw;
            if m.is_multiple_of(5) && m < 11 {
                T::one()
            } else {
                T::zero()
            }
        })?;
        Ok(AffineGrid(t))
    }

    pub fn coeffs(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// Coefficient `j` of output channel `c_out` at cell `(y, x)`.
    pub fn coeff(&self, c_out: usize, j: usize, y: usize, x: usize) -> T {
        self.0.at3(4 * c_out + j, y, x)
    }
}

/// Record the network on `tape`: `3×P×P` proxy to the `12×P×P` grid.
pub fn grid_forward_on<T: Real>(tape: &mut Tape<T>, proxy: Var, vars: &ParamVars) -> Result<Var, ModelError> {
    let block = |tape: &mut Tape<T>, x: Var, b: &[Var; 6]| -> Result<Var, ModelError> {
        let x = tape.conv2d(x, b[0], Some(b[1]), 1, 1)?;
        let x = tape.prelu(x, b[2])?;
        let x = tape.conv2d(x, b[3], Some(b[4]), 1, 1)?;
        Ok(tape.prelu(x, b[5])?)
    };
    let mut skips = Vec::with_capacity(vars.encoder.len());
    let mut x = proxy;
    for (l, b) in vars.encoder.iter().enumerate() {
        if l > 0 {
            x = tape.maxpool2d(x, 2, 2)?;
        }
        x = block(tape, x, b)?;
        skips.push(x);
    }
    for l in (0..vars.decoder.len()).rev() {
        let skip = skips[l];
        let (h, w) = {
            let s = tape.value(skip).shape();
            (s[1], s[2])
        };
        let up = tape.bilinear_resize(x, h, w)?;
        let cat = tape.concat_channels(up, skip)?;
        x = block(tape, cat, &vars.decoder[l])?;
    }
    Ok(tape.conv2d(x, vars.head_weight, Some(vars.head_bias), 1, 0)?)
}

/// The network applied to a `3×P×P` proxy; returns the full-proxy-resolution
/// grid.
pub fn grid_forward<T: Real>(proxy: &Tensor<T>, params: &GridNetParams<T>) -> Result<AffineGrid<T>, ModelError> {
    let p = params.config().proxy_size;
    if proxy.shape() != [3, p, p] {
        return Err(TensorError::shape("grid_forward", format!("proxy of shape [3, {p}, {p}]"), proxy.shape()).into());
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let x = tape.constant(proxy.clone());
    let out = grid_forward_on(&mut tape, x, &vars)?;
    AffineGrid::new(tape.value(out).clone())
}

/// Record the rank reduction `PReLU(MaxPool_k(T))` on `tape`.
pub fn low_rank_on<T: Real>(tape: &mut Tape<T>, grid: Var, kernel: PoolKernel, slope: Var) -> Result<Var, ModelError> {
    let pooled = match kernel {
        PoolKernel::Off => grid,
        PoolKernel::Size(0) => return Err(ModelError::PoolKernel("0".into())),
        PoolKernel::Size(k) => tape.maxpool2d(grid, k, k)?,
    };
    Ok(tape.prelu(pooled, slope)?)
}

/// Rank reduction of a grid with non-overlapping ceil-mode windows
/// (stride = kernel) followed by the shared PReLU.
pub fn low_rank<T: Real>(
    grid: &AffineGrid<T>,
    kernel: PoolKernel,
    params: &GridNetParams<T>,
) -> Result<AffineGrid<T>, ModelError> {
    let pooled = match kernel {
        PoolKernel::Off => grid.coeffs().clone(),
        PoolKernel::Size(0) => return Err(ModelError::PoolKernel("0".into())),
        PoolKernel::Size(k) => ops::maxpool2d(grid.coeffs(), k, k)?,
    };
    AffineGrid::new(ops::prelu(&pooled, params.lowrank_slope()))
}
