//! Zero-reference training: Adam over the weighted non-reference losses,
//! driven by random crops of unlabeled images.

pub mod adam;
pub mod checkpoint;
pub mod degrade;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gridnet::{GridNetConfig, GridNetParams, ModelError, PoolKernel};
use crate::image::{load_image, ImageError, ImageRGB};
use crate::losses::{self, LossError, LossReport, LossWeights};
use crate::slicing;
use crate::tensor::{Tape, Tensor, TensorError};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint, CheckpointError};
pub use degrade::{degrade, synthesize_scene, DegradeConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training images found in {0}")]
    EmptyDataset(PathBuf),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss term '{term}' at step {step}")]
    NonFinite { term: &'static str, step: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub pool_kernel: PoolKernel,
    pub seed: u64,
    /// Side of the random square training crop; 0 trains on whole images.
    pub crop: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    pub weights: LossWeights,
    pub net: GridNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 100,
            batch_size: 4,
            pool_kernel: PoolKernel::default(),
            seed: 0,
            crop: 64,
            max_steps: None,
            weights: LossWeights::default(),
            net: GridNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.adam.validate().map_err(TrainError::Config)?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.crop != 0 && self.crop < ImageRGB::MIN_SIDE {
            return Err(TrainError::Config(format!(
                "crop {} is below the {}-pixel minimum",
                self.crop,
                ImageRGB::MIN_SIDE
            )));
        }
        self.weights.validate()?;
        self.net.validate()?;
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GridNetParams<f32>,
    /// Mean report per epoch (a final partial epoch included).
    pub epochs: Vec<LossReport>,
    /// Batch-mean report per optimizer step, before that step's update.
    pub steps: Vec<LossReport>,
}

/// Every PNG/PPM file in `dir`, in file-name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<ImageRGB>, TrainError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ImageError::NotFound(dir.to_path_buf())
        } else {
            ImageError::Read {
                path: dir.to_path_buf(),
                source,
            }
        }
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(TrainError::EmptyDataset(dir.to_path_buf()));
    }
    paths.iter().map(|p| load_image(p).map_err(TrainError::from)).collect()
}

fn random_crop(img: &ImageRGB, crop: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w) = (img.height(), img.width());
    let (ch, cw) = if crop == 0 { (h, w) } else { (crop.min(h), crop.min(w)) };
    let y0 = rng.random_range(0..=h - ch);
    let x0 = rng.random_range(0..=w - cw);
    let src = img.pixels();
    Tensor::from_fn(&[3, ch, cw], |i| {
        let (c, y, x) = (i / (ch * cw), (i / cw) % ch, i % cw);
        src.at3(c, y0 + y, x0 + x)
    })
    .expect("non-empty crop")
}

/// Loss report and parameter gradients for one image.
pub fn image_gradients(
    params: &GridNetParams<f32>,
    image: &Tensor<f32>,
    kernel: PoolKernel,
    weights: &LossWeights,
) -> Result<(LossReport, Vec<Tensor<f32>>), TrainError> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let x = tape.constant(image.clone());
    let fwd = slicing::enhance_on(&mut tape, x, &vars, params.config().proxy_size, kernel)?;
    let loss = losses::total_on(&mut tape, fwd.output, x, fwd.grid, weights)?;
    let report = losses::report(&tape, &loss, weights);
    if report.first_non_finite(weights).is_some() {
        return Ok((report, Vec::new()));
    }
    let mut grads = tape.backward(loss.total)?;
    let g = vars
        .all()
        .iter()
        .map(|&v| grads.take(v).expect("every parameter requires a gradient"))
        .collect();
    Ok((report, g))
}

/// One optimizer step on a batch; returns the batch-mean report.
pub fn train_step(
    params: &mut GridNetParams<f32>,
    state: &mut AdamState<f32>,
    batch: &[Tensor<f32>],
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossReport, TrainError> {
    let results: Vec<_> = batch
        .par_iter()
        .map(|img| image_gradients(params, img, cfg.pool_kernel, &cfg.weights))
        .collect::<Result<_, _>>()?;
    let reports: Vec<LossReport> = results.iter().map(|(r, _)| *r).collect();
    let mean = LossReport::mean(&reports);
    for r in &reports {
        if let Some(term) = r.first_non_finite(&cfg.weights) {
            return Err(TrainError::NonFinite { term, step });
        }
    }
    let scale = 1.0 / batch.len() as f32;
    let mut sum: Vec<Tensor<f32>> = results[0].1.clone();
    for (_, g) in &results[1..] {
        for (a, b) in sum.iter_mut().zip(g) {
            a.add_assign(b);
        }
    }
    for g in &mut sum {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        if !g.is_finite() {
            return Err(TrainError::NonFinite { term: "gradient", step });
        }
    }
    adam_step(params.tensors_mut(), &sum, state, &cfg.adam)?;
    Ok(mean)
}

/// Train from `init` (or a fresh seeded initialization). `on_epoch` sees
/// each finished epoch's index and mean report.
pub fn train(
    images: &[ImageRGB],
    cfg: &TrainConfig,
    init: Option<GridNetParams<f32>>,
    mut on_epoch: impl FnMut(usize, &LossReport),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(TrainError::EmptyDataset(PathBuf::new()));
    }
    let mut params = match init {
        Some(p) => p,
        None => GridNetParams::init(cfg.net.clone(), cfg.seed)?,
    };
    let mut state = AdamState::new(params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut epochs = Vec::new();
    let mut steps = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    'outer: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let first = steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps.len() >= m) {
                break;
            }
            let batch: Vec<Tensor<f32>> = chunk
                .iter()
                .map(|&i| random_crop(&images[i], cfg.crop, &mut rng))
                .collect();
            let report = train_step(&mut params, &mut state, &batch, cfg, steps.len() + 1)?;
            steps.push(report);
        }
        if steps.len() > first {
            let mean = LossReport::mean(&steps[first..]);
            on_epoch(epoch, &mean);
            epochs.push(mean);
        }
        if cfg.max_steps.is_some_and(|m| steps.len() >= m) {
            break 'outer;
        }
    }
    Ok(TrainOutcome { params, epochs, steps })
}

/// One line per epoch: index then `dcp spa exp cc tv dbc total`.
pub fn format_history(epochs: &[LossReport]) -> String {
    let mut s = String::new();
    for (i, r) in epochs.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in r.fields() {
            s.push(' ');
            s.push_str(&format!("{v:.9e}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            crop: 16,
            net: GridNetConfig {
                widths: vec![2, 4],
                proxy_size: 16,
            },
            weights: LossWeights {
                spa_region: 4,
                exp_region: 8,
                dcp_patch: 5,
                dbc_patch: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn corpus() -> Vec<ImageRGB> {
        (0..3)
            .map(|s| {
                degrade(
                    &synthesize_scene(20, 24, s),
                    &DegradeConfig {
                        seed: s,
                        ..Default::default()
                    },
                )
            })
            .collect()
    }

    #[test]
    fn runs_and_is_deterministic() {
        let cfg = tiny();
        let a = train(&corpus(), &cfg, None, |_, _| {}).unwrap();
        let b = train(&corpus(), &cfg, None, |_, _| {}).unwrap();
        assert_eq!(a.steps.len(), 4);
        assert_eq!(a.epochs.len(), 2);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.params, b.params);
        assert_eq!(format_history(&a.epochs).lines().count(), 2);
    }

    #[test]
    fn zero_weights_keep_history_constant() {
        let cfg = TrainConfig {
            weights: LossWeights {
                spa_region: 4,
                exp_region: 8,
                dcp_patch: 5,
                dbc_patch: 3,
                ..LossWeights::zero()
            },
            crop: 0,
            ..tiny()
        };
        let init = GridNetParams::identity(cfg.net.clone(), 0).unwrap();
        let imgs = vec![corpus().remove(0)];
        let out = train(&imgs, &cfg, Some(init.clone()), |_, _| {}).unwrap();
        assert_eq!(out.params, init);
        assert!(out.epochs.windows(2).all(|w| w[0] == w[1]));
        assert!(out.epochs.iter().all(|r| r.total == 0.0));
    }

    #[test]
    fn poisoned_weights_name_term() {
        let cfg = tiny();
        let mut init = GridNetParams::init(cfg.net.clone(), 0).unwrap();
        init.get_mut("head.bias").unwrap().data_mut()[0] = f32::NAN;
        let err = train(&corpus(), &cfg, Some(init), |_, _| {}).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { term: "dcp", step: 1 }), "{err}");
    }

    #[test]
    fn step_cap() {
        let cfg = TrainConfig {
            epochs: 10,
            max_steps: Some(3),
            ..tiny()
        };
        let out = train(&corpus(), &cfg, None, |_, _| {}).unwrap();
        assert_eq!(out.steps.len(), 3);
        assert_eq!(out.epochs.len(), 2);
    }
}
