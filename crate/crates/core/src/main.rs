use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use zrudc::classical::{self, DehazeConfig, DehazeError};
use zrudc::gridnet::{GridNetConfig, PoolKernel};
use zrudc::image::{load_image, save_image, ImageError, ImageRGB, PROXY_SIZE};
use zrudc::losses::LossWeights;
use zrudc::metrics;
use zrudc::slicing;
use zrudc::trainer::{self, AdamConfig, CheckpointError, DegradeConfig, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "zrudc", version, about = "Zero-reference affine-grid image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance one image with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Train a checkpoint on a directory of unlabeled images.
    Train(TrainArgs),
    /// Dark-channel dehazing followed by gamma correction.
    Baseline(BaselineArgs),
    /// Write a synthetically degraded corpus.
    Degrade(DegradeArgs),
    /// PSNR and SSIM between reference and candidate images.
    Eval(EvalArgs),
    /// Train and evaluate across pool kernels None, 3, 8 and 16.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pool kernel of the rank reduction: a positive integer or "none".
    #[arg(long, default_value = "3")]
    pool_kernel: PoolKernel,
}

#[derive(Args, Clone)]
struct LossArgs {
    #[arg(long, default_value_t = 0.8)]
    w_dcp: f64,
    #[arg(long, default_value_t = 0.1)]
    w_lle: f64,
    #[arg(long, default_value_t = 0.1)]
    w_dbc: f64,
    #[arg(long, default_value_t = 1.0)]
    w_spa: f64,
    #[arg(long, default_value_t = 1.0)]
    w_exp: f64,
    #[arg(long, default_value_t = 0.5)]
    w_cc: f64,
    #[arg(long, default_value_t = 20.0)]
    w_tv: f64,
    /// Target mean luminance of the exposure term.
    #[arg(long, default_value_t = 0.6)]
    exposure: f64,
    #[arg(long, default_value_t = 8)]
    spa_region: usize,
    #[arg(long, default_value_t = 16)]
    exp_region: usize,
    #[arg(long, default_value_t = 15)]
    dcp_patch: usize,
    #[arg(long, default_value_t = 5)]
    dbc_patch: usize,
}

impl LossArgs {
    fn weights(&self) -> LossWeights {
        LossWeights {
            w_dcp: self.w_dcp,
            w_lle: self.w_lle,
            w_dbc: self.w_dbc,
            w_spa: self.w_spa,
            w_exp: self.w_exp,
            w_cc: self.w_cc,
            w_tv: self.w_tv,
            exposure: self.exposure,
            spa_region: self.spa_region,
            exp_region: self.exp_region,
            dcp_patch: self.dcp_patch,
            dbc_patch: self.dbc_patch,
        }
    }
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.002)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the random training crop; 0 uses whole images.
    #[arg(long, default_value_t = 64)]
    crop: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Encoder widths, shallowest first.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    widths: Vec<usize>,
    #[command(flatten)]
    loss: LossArgs,
}

impl OptimArgs {
    fn config(&self, pool_kernel: PoolKernel) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.eps,
            },
            epochs: self.epochs,
            batch_size: self.batch,
            pool_kernel,
            seed: self.seed,
            crop: self.crop,
            max_steps: self.steps,
            weights: self.loss.weights(),
            net: GridNetConfig {
                widths: self.widths.clone(),
                proxy_size: PROXY_SIZE,
            },
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss-history file [default: <out>.history.txt]
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value = "3")]
    pool_kernel: PoolKernel,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 45)]
    window: usize,
    #[arg(long, default_value_t = 0.7)]
    gamma: f32,
    #[arg(long, default_value_t = 0.95)]
    omega: f32,
    #[arg(long, default_value_t = 0.1)]
    t_floor: f32,
    #[arg(long, default_value_t = 0.001)]
    airlight_quantile: f32,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["input_dir", "synthesize"])))]
struct DegradeArgs {
    /// Degrade every PNG/PPM in this directory.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Generate this many clean synthetic scenes instead.
    #[arg(long)]
    synthesize: Option<usize>,
    /// Side of synthesized scenes.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Where to write the clean synthesized sources.
    #[arg(long)]
    clean_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    haze: f32,
    #[arg(long, default_value_t = 0.3)]
    vignette: f32,
    #[arg(long, default_value_t = 1.0)]
    blur: f32,
    /// Airlight colour as three comma-separated values.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    airlight: Vec<f32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference image or directory.
    #[arg(long)]
    reference: PathBuf,
    /// Candidate image or directory (matched to references by file name).
    #[arg(long)]
    candidate: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Degraded training and evaluation inputs.
    #[arg(long)]
    data_dir: PathBuf,
    /// Clean references, matched to inputs by file name.
    #[arg(long)]
    clean_dir: PathBuf,
    /// Directory for one checkpoint per kernel.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::NotFound(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::NotFound(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyDataset(_) | TrainError::Config(_) | TrainError::Loss(_) => CliError::Usage(e.to_string()),
            TrainError::Image(e) => e.into(),
            TrainError::Checkpoint(e) => e.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DehazeError> for CliError {
    fn from(e: DehazeError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))
}

fn enhance(args: EnhanceArgs) -> Result<(), CliError> {
    if !args.input.exists() {
        return Err(ImageError::NotFound(args.input).into());
    }
    let params = trainer::load_checkpoint(&args.checkpoint)?;
    let img = load_image(&args.input)?;
    let start = Instant::now();
    let out = slicing::enhance(&img, &params, args.pool_kernel).map_err(runtime)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    save_image(&out, &args.output)?;
    println!("time_ms={ms:.3}");
    Ok(())
}

fn history_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".history.txt");
    PathBuf::from(s)
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = args.optim.config(args.pool_kernel);
    let init = match &args.init {
        Some(p) => Some(trainer::load_checkpoint(p)?),
        None => None,
    };
    let images = trainer::load_dataset(&args.data_dir)?;
    let outcome = trainer::train(&images, &cfg, init, |epoch, r| {
        println!("epoch={epoch} total={:.6e}", r.total);
    })?;
    trainer::save_checkpoint(&outcome.params, &args.out)?;
    let history = args.history.unwrap_or_else(|| history_path(&args.out));
    write_text(&history, &trainer::format_history(&outcome.epochs))
}

fn baseline(args: BaselineArgs) -> Result<(), CliError> {
    let cfg = DehazeConfig {
        window: args.window,
        omega: args.omega,
        t_floor: args.t_floor,
        airlight_quantile: args.airlight_quantile,
        gamma: args.gamma,
    };
    cfg.validate()?;
    let img = load_image(&args.input)?;
    let out = classical::baseline(&img, &cfg)?;
    Ok(save_image(&out, &args.output)?)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|_| CliError::Usage(format!("input not found: {}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn degrade(args: DegradeArgs) -> Result<(), CliError> {
    if args.airlight.len() != 3 {
        return Err(CliError::Usage(format!(
            "airlight needs 3 values, got {}",
            args.airlight.len()
        )));
    }
    let base = DegradeConfig {
        haze: args.haze,
        airlight: [args.airlight[0], args.airlight[1], args.airlight[2]],
        vignette: args.vignette,
        blur_sigma: args.blur,
        seed: args.seed,
    };
    base.validate().map_err(CliError::Usage)?;
    let sources: Vec<(String, ImageRGB)> = match (&args.input_dir, args.synthesize) {
        (Some(dir), _) => {
            let files = image_files(dir)?;
            if files.is_empty() {
                return Err(CliError::Usage(format!("no images found in {}", dir.display())));
            }
            files
                .iter()
                .map(|p| {
                    Ok((
                        format!("{}.png", p.file_stem().unwrap_or_default().to_string_lossy()),
                        load_image(p)?,
                    ))
                })
                .collect::<Result<_, CliError>>()?
        }
        (None, Some(n)) => {
            if args.size < ImageRGB::MIN_SIDE {
                return Err(CliError::Usage(format!(
                    "size {} is below the 8-pixel minimum",
                    args.size
                )));
            }
            (0..n)
                .map(|i| {
                    let seed = args.seed.wrapping_add(i as u64);
                    (
                        format!("{i:04}.png"),
                        trainer::synthesize_scene(args.size, args.size, seed),
                    )
                })
                .collect()
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    create_dir(&args.out_dir)?;
    if let Some(clean) = &args.clean_dir {
        create_dir(clean)?;
    }
    let mut manifest = String::new();
    let _ = writeln!(
        manifest,
        "haze={} vignette={} blur_sigma={} airlight={},{},{} seed={}",
        base.haze, base.vignette, base.blur_sigma, base.airlight[0], base.airlight[1], base.airlight[2], base.seed
    );
    for (i, (name, img)) in sources.iter().enumerate() {
        let cfg = DegradeConfig {
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        save_image(&trainer::degrade(img, &cfg), args.out_dir.join(name))?;
        if let Some(clean) = &args.clean_dir {
            save_image(img, clean.join(name))?;
        }
        let _ = writeln!(manifest, "{name} seed={}", cfg.seed);
    }
    write_text(&args.out_dir.join("manifest.txt"), &manifest)
}

fn eval_pairs(reference: &Path, candidate: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    if reference.is_dir() {
        let pairs: Vec<_> = image_files(reference)?
            .into_iter()
            .map(|r| {
                let name = file_name(&r);
                let c = candidate.join(&name);
                (name, r, c)
            })
            .collect();
        if pairs.is_empty() {
            return Err(CliError::Usage(format!("no images found in {}", reference.display())));
        }
        Ok(pairs)
    } else {
        Ok(vec![(String::new(), reference.to_path_buf(), candidate.to_path_buf())])
    }
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    for (name, r, c) in eval_pairs(&args.reference, &args.candidate)? {
        let (a, b) = (load_image(&r)?, load_image(&c)?);
        let p = metrics::psnr(&a, &b).map_err(|e| CliError::Usage(e.to_string()))?;
        let s = metrics::ssim(&a, &b).map_err(|e| CliError::Usage(e.to_string()))?;
        if name.is_empty() {
            println!("psnr={p:.4} ssim={s:.6}");
        } else {
            println!("{name} psnr={p:.4} ssim={s:.6}");
        }
    }
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<(), CliError> {
    let files = image_files(&args.data_dir)?;
    if files.is_empty() {
        return Err(TrainError::EmptyDataset(args.data_dir.clone()).into());
    }
    let inputs: Vec<ImageRGB> = files.iter().map(load_image).collect::<Result<_, _>>()?;
    let refs: Vec<ImageRGB> = files
        .iter()
        .map(|p| load_image(args.clean_dir.join(file_name(p))))
        .collect::<Result<_, _>>()?;
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
    }
    println!("K PSNR SSIM GRID LOSS");
    for kernel in PoolKernel::ABLATION {
        let cfg = args.optim.config(kernel);
        let outcome = trainer::train(&inputs, &cfg, None, |_, _| {})?;
        let params = &outcome.params;
        if let Some(dir) = &args.out_dir {
            trainer::save_checkpoint(params, dir.join(format!("k_{kernel}.zrud")))?;
        }
        let (mut psnr, mut ssim) = (0.0, 0.0);
        let mut grid = (0, 0);
        for (x, r) in inputs.iter().zip(&refs) {
            let lowrank = slicing::predict_grid(x.pixels(), params, kernel).map_err(runtime)?;
            grid = (lowrank.height(), lowrank.width());
            let out = slicing::apply_grid(&lowrank, x.pixels(), params).map_err(runtime)?;
            let out = ImageRGB::from_tensor_clamped(&out)?;
            psnr += metrics::psnr(&out, r).map_err(|e| CliError::Usage(e.to_string()))?;
            ssim += metrics::ssim(&out, r).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        let n = inputs.len() as f64;
        let loss = outcome.epochs.last().map_or(f64::NAN, |r| r.total);
        println!(
            "{kernel} {:.4} {:.6} {}x{} {:.6e}",
            psnr / n,
            ssim / n,
            grid.0,
            grid.1,
            loss
        );
    }
    Ok(())
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("ZRUDC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("ZRUDC_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Enhance(a) => enhance(a),
        Command::Train(a) => train(a),
        Command::Baseline(a) => baseline(a),
        Command::Degrade(a) => degrade(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprintln!("error: missing subcommand (see --help)");
                return ExitCode::from(1);
            }
            let msg = e.to_string();
            let line = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error: {line}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
