//! Command-line front end: `perturb`, `congeal`, `lsc`, `ablate`, `infer`
//! and `eval`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autodiff::Tensor;
use crate::congeal::{ablate, align_source, train, CongealConfig, RunReport, TrainOptions};
use crate::dataset::{ImageSource, ImageStack, SyntheticSource};
use crate::error::{Error, Result};
use crate::io::{
    grid, max_normalise, parse_report, read_idx_images, read_idx_labels, write_idx_images, write_image, write_report,
    Checkpoint,
};
use crate::lsc::{lsc_align, lsc_run, LscConfig};
use crate::metrics::{apsnr, landmark_error, LandmarkSet, StackStats};
use crate::models::NetworkSpec;
use crate::warp::{AffineRanges, PerturbModel, WarpParams};

#[derive(Parser, Debug)]
#[command(name = "congeal", version, about = "Joint alignment of image collections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes seeded perturbed copies of one image plus their true warps.
    Perturb(PerturbArgs),
    /// Trains the aligner and autoencoder and aligns the dataset.
    Congeal(CongealArgs),
    /// Aligns every image to the reference by least squares.
    Lsc(LscArgs),
    /// Runs the distortion-only, complexity-only and joint arms.
    Ablate(CongealArgs),
    /// Aligns images with a trained checkpoint.
    Infer(InferArgs),
    /// Scores an aligned stack, optionally against landmarks.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// IDX image file.
    #[arg(long)]
    pub data: PathBuf,
    /// IDX label file, used with --digit.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Keep only images with this label.
    #[arg(long)]
    pub digit: Option<u8>,
    /// Keep at most this many images (or generate this many with --sigma).
    #[arg(long)]
    pub n: Option<usize>,
    /// Instead of the file's images, stream perspective copies of one of
    /// them with this corner noise (fraction of the side).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Image used as the template with --sigma.
    #[arg(long, default_value_t = 0)]
    pub template_index: usize,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub code_size: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reference_index: Option<usize>,
    /// Network preset: `mnist` or `desk`.
    #[arg(long)]
    pub network: Option<String>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CongealArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Checkpoint path; defaults to `<out-dir>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from --checkpoint if it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct LscArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `key = value` file with max-iters, damping, threshold, pyramid,
    /// reference-index or batch.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub reference_index: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// 1 for a single level, 2 to start on a half-size copy.
    #[arg(long)]
    pub pyramid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Perspective,
    Affine,
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Model::Perspective)]
    pub model: Model,
    /// Side of the affine canvas.
    #[arg(long, default_value_t = 40)]
    pub pad_to: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// IDX file of aligned images.
    #[arg(long)]
    pub data: PathBuf,
    /// Landmark file of the unaligned images.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Warps for --landmarks: a run report or an `infer` params file.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Parses the process arguments and runs; exit code 0 on success, 1 on a
/// runtime failure and 2 on bad flags.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Perturb(a) => perturb(a),
        Command::Congeal(a) => congeal_cmd(a),
        Command::Lsc(a) => lsc_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

/// Reads `key = value` lines, skipping blanks and `#` comments.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::InvalidConfig(format!("{}: expected `key = value`, got {l:?}", path.display())))
        })
        .collect()
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_config(flags: &TrainFlags) -> Result<CongealConfig> {
    let mut cfg = CongealConfig::default();
    if let Some(path) = &flags.config {
        for (k, v) in read_pairs(path)? {
            cfg.set(&k, &v)?;
        }
    }
    macro_rules! over {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field.clone() { cfg.$field = v; })*
        };
    }
    over!(
        lambda,
        gamma,
        k,
        code_size,
        batch,
        epochs,
        lr,
        seed,
        reference_index,
        network,
        patience,
        checkpoint_every
    );
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads the dataset described by `args`; `seed` drives synthetic copies.
pub fn load_source(args: &DataArgs, seed: u64) -> Result<Box<dyn ImageSource>> {
    let mut stack = read_idx_images(&args.data)?;
    if let Some(digit) = args.digit {
        let labels_path = args
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--digit needs --labels".into()))?;
        let labels = read_idx_labels(labels_path)?;
        if labels.len() != stack.n {
            return Err(Error::InvalidConfig(format!(
                "{} labels for {} images",
                labels.len(),
                stack.n
            )));
        }
        let keep: Vec<usize> = (0..stack.n).filter(|&i| labels[i] == digit).collect();
        if keep.is_empty() {
            return Err(Error::InvalidConfig(format!("no image has label {digit}")));
        }
        stack = stack.select(&keep)?;
    }
    if let Some(sigma) = args.sigma {
        if args.template_index >= stack.n {
            return Err(Error::InvalidConfig(format!(
                "template index {} out of range for {} images",
                args.template_index, stack.n
            )));
        }
        let t = Tensor::new(
            [1, stack.channels, stack.height, stack.width],
            stack.image(args.template_index).to_vec(),
        )?;
        let n = args.n.unwrap_or(1000);
        return Ok(Box::new(SyntheticSource::new(
            t,
            PerturbModel::Perspective { sigma },
            seed,
            n,
        )?));
    }
    if let Some(n) = args.n {
        if n < stack.n {
            stack = stack.select(&(0..n).collect::<Vec<_>>())?;
        }
    }
    Ok(Box::new(stack))
}

/// Writes mean and max-normalised variance images; returns
/// `(label, path)` pairs for the report.
fn write_stats_images(dir: &Path, tag: &str, s: &StackStats) -> Result<Vec<(String, String)>> {
    let mean: Vec<f32> = s.mean.iter().map(|&v| v as f32).collect();
    let (var, _) = max_normalise(&s.variance()?);
    let mut out = Vec::new();
    for (name, values) in [("mean", mean), ("variance", var)] {
        let path = dir.join(format!("{name}-{tag}.pgm"));
        write_image(&path, &values, s.dims)?;
        out.push((format!("{name}-{tag}"), path.display().to_string()));
    }
    Ok(out)
}

fn write_grid<'a>(
    dir: &Path,
    tag: &str,
    images: impl IntoIterator<Item = &'a [f32]>,
    dims: (usize, usize, usize),
) -> Result<(String, String)> {
    let path = dir.join(format!("grid-{tag}.pgm"));
    grid(images, dims)?.write(&path)?;
    Ok((format!("grid-{tag}"), path.display().to_string()))
}

fn first_indices(n: usize) -> Vec<usize> {
    (0..n.min(64)).collect()
}

fn summary(r: &RunReport) -> String {
    format!(
        "method={} n={} apsnr_before={:.4} apsnr_after={:.4} gain={:.4} area_ratio={:.4} flagged={} seconds={:.1}",
        r.method,
        r.n,
        r.apsnr_before,
        r.apsnr_after,
        r.apsnr_gain(),
        r.mean_area_ratio,
        r.flagged,
        r.wall_clock_s
    )
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let stack = read_idx_images(&a.data.data)?;
    let idx = a.data.template_index;
    if idx >= stack.n {
        return Err(Error::InvalidConfig(format!(
            "template index {idx} out of range for {} images",
            stack.n
        )));
    }
    let template = Tensor::new(
        [1, stack.channels, stack.height, stack.width],
        stack.image(idx).to_vec(),
    )?;
    let model = match a.model {
        Model::Perspective => PerturbModel::Perspective {
            sigma: a.data.sigma.unwrap_or(0.1),
        },
        Model::Affine => PerturbModel::Affine {
            ranges: AffineRanges::default(),
            pad_to: a.pad_to,
        },
    };
    let n = a.data.n.unwrap_or(1000);
    let src = SyntheticSource::new(template, model, a.seed, n)?;
    mkdir(&a.out_dir)?;
    let out = ImageStack::from_source(&src)?;
    let images = a.out_dir.join("perturbed-images.idx3-ubyte");
    write_idx_images(&images, &out)?;
    let mut truth = String::from("# image h00 h01 h02 h10 h11 h12 h20 h21 h22\n");
    for i in 0..n {
        let rows = src.truth(i)?.rows();
        let vals: Vec<String> = rows.iter().flatten().map(|v| v.to_string()).collect();
        truth.push_str(&format!("{i} {}\n", vals.join(" ")));
    }
    let truth_path = a.out_dir.join("truth.txt");
    std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;
    write_grid(&a.out_dir, "perturbed", out.images(), src.dims())?;
    println!("wrote {n} images to {}", images.display());
    Ok(())
}

fn congeal_cmd(a: CongealArgs) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    let source = load_source(&a.data, cfg.seed)?;
    let spec = NetworkSpec::by_name(&cfg.network, cfg.code_size)?;
    mkdir(&a.out_dir)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| a.out_dir.join("model.ckpt"));
    let resume = if a.resume && ckpt.exists() {
        Some(Checkpoint::load(&ckpt)?)
    } else {
        None
    };
    let mut stdout = std::io::stdout();
    let run = train(
        source.as_ref(),
        &spec,
        &cfg,
        TrainOptions {
            checkpoint: Some(ckpt),
            resume,
            progress: Some(&mut stdout),
            freeze_autoencoder: false,
        },
    )?;
    let mut report = run.report;
    report
        .images
        .extend(write_stats_images(&a.out_dir, "before", &report.before)?);
    report
        .images
        .extend(write_stats_images(&a.out_dir, "after", &report.after)?);
    let dims = source.dims();
    let first = first_indices(source.len());
    let before = source.batch(&first)?;
    report.images.push(write_grid(
        &a.out_dir,
        "before",
        before.data().chunks(dims.0 * dims.1 * dims.2),
        dims,
    )?);
    let mut aligned = Vec::new();
    align_source(
        &run.model,
        &run.reference,
        cfg.reference_index,
        source.as_ref(),
        &first,
        cfg.batch,
        |_, img, _| {
            aligned.extend_from_slice(img);
            Ok(())
        },
    )?;
    report.images.push(write_grid(
        &a.out_dir,
        "after",
        aligned.chunks(dims.0 * dims.1 * dims.2),
        dims,
    )?);
    write_report(&a.out_dir.join("report.txt"), &report)?;
    println!("{}", summary(&report));
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn resolve_lsc(a: &LscArgs) -> Result<(LscConfig, usize, usize)> {
    let mut cfg = LscConfig::for_sigma(a.data.sigma.unwrap_or(0.0));
    let (mut reference, mut batch) = (0usize, 256usize);
    let num = |k: &str, v: &str| -> Result<f64> {
        v.parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {k}")))
    };
    if let Some(path) = &a.config {
        for (k, v) in read_pairs(path)? {
            match k.replace('_', "-").as_str() {
                "max-iters" => cfg.max_iters = num(&k, &v)? as usize,
                "damping" => cfg.damping = num(&k, &v)?,
                "threshold" => cfg.threshold = num(&k, &v)?,
                "pyramid" => cfg.pyramid = num(&k, &v)? as usize,
                "reference-index" => reference = num(&k, &v)? as usize,
                "batch" => batch = num(&k, &v)? as usize,
                _ => return Err(Error::InvalidConfig(format!("unknown key {k:?}"))),
            }
        }
    }
    cfg.max_iters = a.max_iters.unwrap_or(cfg.max_iters);
    cfg.damping = a.damping.unwrap_or(cfg.damping);
    cfg.threshold = a.threshold.unwrap_or(cfg.threshold);
    cfg.pyramid = a.pyramid.unwrap_or(cfg.pyramid);
    reference = a.reference_index.unwrap_or(reference);
    cfg.validate()?;
    Ok((cfg, reference, batch))
}

fn lsc_cmd(a: LscArgs) -> Result<()> {
    let (cfg, reference_index, batch) = resolve_lsc(&a)?;
    let source = load_source(&a.data, a.seed.unwrap_or(0))?;
    mkdir(&a.out_dir)?;
    let (mut report, _) = lsc_run(source.as_ref(), reference_index, &cfg, batch)?;
    report
        .images
        .extend(write_stats_images(&a.out_dir, "before", &report.before)?);
    report
        .images
        .extend(write_stats_images(&a.out_dir, "after", &report.after)?);
    let dims = source.dims();
    let per = dims.0 * dims.1 * dims.2;
    let first = first_indices(source.len());
    let before = source.batch(&first)?;
    report
        .images
        .push(write_grid(&a.out_dir, "before", before.data().chunks(per), dims)?);
    let reference = source.batch(&[reference_index])?;
    let aligned = lsc_align(&before, &reference, &cfg)?;
    let cells: Vec<&[f32]> = first
        .iter()
        .map(|&i| {
            if i == reference_index {
                reference.data()
            } else {
                &aligned.aligned.data()[i * per..(i + 1) * per]
            }
        })
        .collect();
    report.images.push(write_grid(&a.out_dir, "after", cells, dims)?);
    write_report(&a.out_dir.join("report.txt"), &report)?;
    println!("{}", summary(&report));
    Ok(())
}

fn ablate_cmd(a: CongealArgs) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    let source = load_source(&a.data, cfg.seed)?;
    let spec = NetworkSpec::by_name(&cfg.network, cfg.code_size)?;
    let mut stdout = std::io::stdout();
    let result = ablate(source.as_ref(), &spec, &cfg, Some(&mut stdout))?;
    for (name, report) in result.arms() {
        let dir = a.out_dir.join(name);
        mkdir(&dir)?;
        let mut report = report.clone();
        report.images.extend(write_stats_images(&dir, "after", &report.after)?);
        write_report(&dir.join("report.txt"), &report)?;
        println!("arm={name} {}", summary(&report));
    }
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let source = load_source(&a.data, ck.config.seed)?;
    mkdir(&a.out_dir)?;
    let dims = source.dims();
    let n = source.len();
    let all: Vec<usize> = (0..n).collect();
    let mut aligned = Vec::with_capacity(n * dims.0 * dims.1 * dims.2);
    let mut lines = String::from("# image dx dy for TL TR BR BL\n");
    // No image of this dataset is the training reference.
    let flagged = align_source(
        &ck.model,
        &ck.reference,
        usize::MAX,
        source.as_ref(),
        &all,
        a.batch,
        |i, img, p| {
            aligned.extend_from_slice(img);
            let vals: Vec<String> = p.0.iter().map(|v| v.to_string()).collect();
            lines.push_str(&format!("{i} {}\n", vals.join(" ")));
            Ok(())
        },
    )?;
    let stack = ImageStack::new(n, dims.0, dims.1, dims.2, aligned)?;
    write_idx_images(&a.out_dir.join("aligned-images.idx3-ubyte"), &stack)?;
    let params = a.out_dir.join("params.txt");
    std::fs::write(&params, lines).map_err(|e| Error::io(&params, e))?;
    write_grid(&a.out_dir, "aligned", stack.images(), dims)?;
    println!(
        "aligned {n} images ({flagged} flagged updates), params in {}",
        params.display()
    );
    Ok(())
}

/// Warps from a run report or from an `infer` params file.
pub fn read_params(path: &Path) -> Result<Vec<WarpParams>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(r) = parse_report(&text) {
        return Ok(r.params);
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .skip(1)
                .map(|x| {
                    x.parse()
                        .map_err(|_| Error::malformed("params", format!("bad number {x:?}")))
                })
                .collect::<Result<_>>()?;
            WarpParams::from_slice(&v)
        })
        .collect()
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let stack = read_idx_images(&a.data)?;
    let dims = (stack.channels, stack.height, stack.width);
    let mut stats = StackStats::new(dims);
    for img in stack.images() {
        stats.push(img)?;
    }
    mkdir(&a.out_dir)?;
    let images = write_stats_images(&a.out_dir, "eval", &stats)?;
    let mut text = format!(
        "n = {}\napsnr = {}\nvariance_energy = {}\n",
        stats.n,
        apsnr(&stats)?,
        stats.variance_energy()?
    );
    for (k, v) in images {
        text.push_str(&format!("image.{k} = {v}\n"));
    }
    match (&a.landmarks, &a.params) {
        (Some(lm), Some(p)) => {
            let set = LandmarkSet::read(lm)?;
            set.check_frame(stack.width, stack.height)?;
            let warps = read_params(p)?
                .iter()
                .map(|d| d.to_homography(stack.width, stack.height))
                .collect::<Result<Vec<_>>>()?;
            let e = landmark_error(&set, &warps)?;
            for (k, v) in e.per_landmark.iter().enumerate() {
                text.push_str(&format!("landmark.{k} = {v}\n"));
            }
            text.push_str(&format!("landmark.mean = {}\n", e.mean));
        }
        (None, None) => {}
        _ => return Err(Error::InvalidConfig("--landmarks and --params go together".into())),
    }
    let path = a.out_dir.join("eval.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}
