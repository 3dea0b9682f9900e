//! Command-line front end: degrade images, scan datasets, train, evaluate,
//! sweep the resolution ladder, and benchmark inference.
//!
//! Conventions: progress and summaries go to stderr; artifacts go to the
//! requested files, or to stdout when no file is given. Exit code 0 means
//! success, 1 a runtime failure, 2 a usage error.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bcfpl::dataset::{
    load_csv_manifest, load_label_file, scan_class_folders, write_csv_manifest,
    write_csv_manifest_to, Manifest,
};
use bcfpl::eval::{
    bench_throughput, evaluate, report_to_string, sweep_resolutions, write_roc_csv,
    write_sweep_csv, write_sweep_csv_path,
};
use bcfpl::imaging::{degrade, read_image, write_pnm, RESOLUTION_LADDER};
use bcfpl::nn::model::BcfplModel;
use bcfpl::train::checkpoint::{load_checkpoint, save_checkpoint};
use bcfpl::train::{train_run, write_epoch_csv, write_epoch_csv_path, EpochLog, TrainConfig};

#[derive(Parser)]
#[command(
    name = "bcfpl",
    version,
    about = "Train and evaluate a compact occupancy classifier on deliberately low-resolution parking images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Push one image through the shrink-and-enlarge degradation
    Degrade(DegradeArgs),
    /// Scan a class-folder tree into a path,label manifest
    Scan(ScanArgs),
    /// Train a model, writing an epoch log and optionally a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy, confusion counts, ROC with AUC
    Eval(EvalArgs),
    /// Train and evaluate once per degradation resolution
    Sweep(SweepArgs),
    /// Fixed low-rate protocol that logs held-out accuracy every epoch
    OverfitStudy(OverfitArgs),
    /// Measure inference throughput on synthetic batches
    Bench(BenchArgs),
}

#[derive(Args)]
struct DegradeArgs {
    /// Source image (png, jpeg, or pnm)
    input: PathBuf,
    /// Destination, written as binary PGM/PPM
    output: PathBuf,
    /// Intermediate square side the image is shrunk to
    #[arg(long, short, visible_alias = "k")]
    resolution: usize,
}

#[derive(Args)]
struct ScanArgs {
    /// Root of a tree with `occupied` and `empty` directories
    #[arg(long, env = "BCFPL_DATA_ROOT")]
    root: PathBuf,
    /// Manifest CSV destination (stdout when omitted)
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Optimizer and schedule knobs shared by every training command. The
/// defaults are the reference protocol.
#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// Learning rate at epoch 0
    #[arg(long = "lr", default_value_t = TrainConfig::default().lr0)]
    lr0: f64,
    /// Hold the learning rate constant instead of halving it periodically
    #[arg(long)]
    flat_lr: bool,
    /// Epochs between halvings of the learning rate
    #[arg(long, default_value_t = TrainConfig::default().halve_every)]
    halve_every: usize,
    #[arg(long, default_value_t = TrainConfig::default().dropout_p)]
    dropout: f64,
    #[arg(long, default_value_t = TrainConfig::default().adamw.weight_decay)]
    weight_decay: f64,
}

impl TrainOpts {
    fn to_config(&self, resolution: usize) -> TrainConfig {
        let mut config = TrainConfig {
            seed: self.seed,
            resolution,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            attenuation: !self.flat_lr,
            halve_every: self.halve_every,
            dropout_p: self.dropout,
            ..TrainConfig::default()
        };
        config.adamw.weight_decay = self.weight_decay;
        config
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled images: class-folder tree, CSV manifest, or label file
    #[arg(long, env = "BCFPL_DATA_ROOT")]
    data: PathBuf,
    /// Held-out set evaluated after every epoch
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Intermediate square side of the degradation
    #[arg(long, short, visible_alias = "k", default_value_t = TrainConfig::default().resolution)]
    resolution: usize,
    #[command(flatten)]
    opts: TrainOpts,
    /// Epoch log CSV destination (stdout when omitted)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where to save the trained model
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled images: class-folder tree, CSV manifest, or label file
    #[arg(long, env = "BCFPL_DATA_ROOT")]
    data: PathBuf,
    /// Degradation applied before inference; match the training value
    #[arg(long, short, visible_alias = "k", default_value_t = TrainConfig::default().resolution)]
    resolution: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// Report destination (stdout when omitted)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the ROC curve as threshold,fpr,tpr CSV
    #[arg(long)]
    roc: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Training images: class-folder tree, CSV manifest, or label file
    #[arg(long, env = "BCFPL_DATA_ROOT")]
    data: PathBuf,
    /// Evaluation set as NAME=PATH; repeat for several sets
    #[arg(long = "eval", value_parser = parse_eval_spec, required = true)]
    evals: Vec<(String, PathBuf)>,
    /// Resolutions to cover, highest fidelity first
    #[arg(
        long,
        visible_alias = "ladder",
        num_args = 1..,
        value_delimiter = ',',
        default_values_t = RESOLUTION_LADDER
    )]
    resolutions: Vec<usize>,
    #[command(flatten)]
    opts: TrainOpts,
    /// Sweep CSV destination (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OverfitArgs {
    /// Training images: class-folder tree, CSV manifest, or label file
    #[arg(long, env = "BCFPL_DATA_ROOT")]
    data: PathBuf,
    /// Held-out set, scored after every epoch
    #[arg(long)]
    holdout: PathBuf,
    /// Intermediate square side of the degradation
    #[arg(long, short, visible_alias = "k", default_value_t = TrainConfig::default().resolution)]
    resolution: usize,
    #[arg(long, default_value_t = TrainConfig::overfit_study().seed)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::overfit_study().batch_size)]
    batch_size: usize,
    /// Epoch log CSV destination (stdout when omitted)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Where to save the trained model
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Images per timed repetition
    #[arg(long, default_value_t = 256)]
    images: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Timed repetitions after one warmup pass
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Benchmark this trained model instead of a fresh initialization
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn parse_eval_spec(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err("expected NAME=PATH".to_string()),
    }
}

/// A dataset argument names a class-folder tree, a `path,label` CSV, or a
/// whitespace-separated label file. Relative image paths inside file
/// manifests resolve against the file's own directory.
fn load_data(path: &Path) -> Result<Manifest> {
    let meta = std::fs::metadata(path)
        .with_context(|| format!("reading dataset {}", path.display()))?;
    if meta.is_dir() {
        return Ok(scan_class_folders(path)?);
    }
    let root = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        Ok(load_csv_manifest(path, &root)?)
    } else {
        Ok(load_label_file(path, &root)?)
    }
}

fn describe(manifest: &Manifest) -> String {
    let occupied = manifest
        .samples
        .iter()
        .filter(|s| s.label.is_occupied())
        .count();
    format!(
        "{}: {} samples ({} occupied, {} empty)",
        manifest.name,
        manifest.len(),
        occupied,
        manifest.len() - occupied
    )
}

/// The fully resolved run parameters, echoed before training starts.
/// `resolution` is None when a sweep will set it per run.
fn echo_config(
    config: &TrainConfig,
    resolution: Option<usize>,
    train: &Manifest,
    holdout: Option<&Manifest>,
) {
    let schedule = if config.attenuation {
        format!("halved every {} epochs", config.halve_every)
    } else {
        "constant".to_string()
    };
    let resolution = match resolution {
        Some(r) => format!("resolution {r}"),
        None => "resolution per sweep".to_string(),
    };
    eprintln!(
        "config: seed {}, {resolution}, {} epochs, batch size {}, lr {} ({schedule}), dropout {}, weight decay {}",
        config.seed,
        config.epochs,
        config.batch_size,
        config.lr0,
        config.dropout_p,
        config.adamw.weight_decay
    );
    eprintln!("train data {}", describe(train));
    if let Some(h) = holdout {
        eprintln!("holdout data {}", describe(h));
    }
}

fn echo_epochs(logs: &[EpochLog]) {
    for log in logs {
        let holdout = log
            .test_acc
            .map(|acc| format!(", holdout acc {acc:.4}"))
            .unwrap_or_default();
        eprintln!(
            "epoch {:>3}: lr {:.3e}, loss {:.4}, train acc {:.4}{holdout}",
            log.epoch, log.lr, log.train_loss, log.train_acc
        );
    }
}

fn write_logs(logs: &[EpochLog], destination: Option<&Path>) -> Result<()> {
    match destination {
        Some(path) => {
            write_epoch_csv_path(path, logs)?;
            eprintln!("epoch log written to {}", path.display());
        }
        None => write_epoch_csv(io::stdout().lock(), logs)?,
    }
    Ok(())
}

fn save_model(model: &BcfplModel<f32>, destination: Option<&Path>) -> Result<()> {
    if let Some(path) = destination {
        save_checkpoint(path, model, None)?;
        eprintln!("checkpoint written to {}", path.display());
    }
    Ok(())
}

fn run_degrade(args: DegradeArgs) -> Result<()> {
    if args.resolution == 0 {
        bail!("resolution must be at least 1");
    }
    let supported = args
        .output
        .extension()
        .map(|e| {
            let e = e.to_string_lossy().to_ascii_lowercase();
            ["ppm", "pgm", "pnm"].contains(&e.as_str())
        })
        .unwrap_or(false);
    if !supported {
        bail!(
            "output {} must use a .ppm, .pgm, or .pnm extension",
            args.output.display()
        );
    }
    let img = read_image(&args.input)?;
    let degraded = degrade(&img, args.resolution)?;
    write_pnm(&args.output, &degraded)?;
    eprintln!(
        "{} ({}x{}) degraded through {3}x{3} to {4}",
        args.input.display(),
        img.width(),
        img.height(),
        args.resolution,
        args.output.display()
    );
    Ok(())
}

fn run_scan(args: ScanArgs) -> Result<()> {
    // Scan from the canonical root so the manifest holds absolute paths
    // and stays valid wherever it is loaded from.
    let root = std::fs::canonicalize(&args.root)
        .with_context(|| format!("reading dataset {}", args.root.display()))?;
    eprintln!("config: scanning {}", root.display());
    let manifest = scan_class_folders(&root)?;
    eprintln!("{}", describe(&manifest));
    match &args.output {
        Some(path) => {
            write_csv_manifest(path, &manifest)?;
            eprintln!("manifest written to {}", path.display());
        }
        None => write_csv_manifest_to(io::stdout().lock(), &manifest)
            .context("writing manifest to stdout")?,
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let train = load_data(&args.data)?;
    let holdout = args.holdout.as_deref().map(load_data).transpose()?;
    let config = args.opts.to_config(args.resolution);
    echo_config(&config, Some(args.resolution), &train, holdout.as_ref());
    let (model, logs) = train_run(&config, &train, holdout.as_ref())?;
    echo_epochs(&logs);
    write_logs(&logs, args.log.as_deref())?;
    save_model(&model, args.checkpoint.as_deref())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    eprintln!(
        "config: checkpoint {}, resolution {}, batch size {}",
        args.checkpoint.display(),
        args.resolution,
        args.batch_size
    );
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let manifest = load_data(&args.data)?;
    let report = evaluate(&model, &manifest, args.resolution, args.batch_size)?;
    eprintln!(
        "{} at resolution {}: accuracy {:.4}, auc {:.4}",
        describe(&manifest),
        args.resolution,
        report.accuracy,
        report.auc
    );
    match &args.report {
        Some(path) => {
            std::fs::write(path, report_to_string(&report))
                .with_context(|| format!("writing report {}", path.display()))?;
            eprintln!("report written to {}", path.display());
        }
        None => print!("{}", report_to_string(&report)),
    }
    if let Some(path) = &args.roc {
        let file =
            File::create(path).with_context(|| format!("writing roc {}", path.display()))?;
        write_roc_csv(io::BufWriter::new(file), &report.roc)?;
        eprintln!("roc curve written to {}", path.display());
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let train = load_data(&args.data)?;
    let mut evals = Vec::with_capacity(args.evals.len());
    for (name, path) in &args.evals {
        evals.push((name.clone(), load_data(path)?));
    }
    // Resolution is set per run inside the sweep; seed a valid placeholder.
    let config = args.opts.to_config(RESOLUTION_LADDER[0]);
    echo_config(&config, None, &train, None);
    let names: Vec<&str> = evals.iter().map(|(n, _)| n.as_str()).collect();
    eprintln!(
        "sweeping resolutions {:?} over evaluation sets [{}]",
        args.resolutions,
        names.join(", ")
    );
    let rows = sweep_resolutions(&config, &train, &evals, &args.resolutions)?;
    for row in &rows {
        eprintln!(
            "resolution {:>3} on {}: accuracy {:.4}, auc {:.4}",
            row.resolution, row.dataset, row.accuracy, row.auc
        );
    }
    match &args.output {
        Some(path) => {
            write_sweep_csv_path(path, &rows)?;
            eprintln!("sweep written to {}", path.display());
        }
        None => write_sweep_csv(io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn run_overfit(args: OverfitArgs) -> Result<()> {
    let train = load_data(&args.data)?;
    let holdout = load_data(&args.holdout)?;
    let config = TrainConfig {
        seed: args.seed,
        resolution: args.resolution,
        batch_size: args.batch_size,
        ..TrainConfig::overfit_study()
    };
    echo_config(&config, Some(args.resolution), &train, Some(&holdout));
    let (model, logs) = train_run(&config, &train, Some(&holdout))?;
    echo_epochs(&logs);
    write_logs(&logs, args.log.as_deref())?;
    save_model(&model, args.checkpoint.as_deref())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let source = match &args.checkpoint {
        Some(path) => format!("checkpoint {}", path.display()),
        None => format!("fresh model, seed {}", args.seed),
    };
    eprintln!(
        "config: {} images in batches of {}, {} repetitions after warmup, data seed {}, {source}",
        args.images, args.batch_size, args.reps, args.seed
    );
    let model = match &args.checkpoint {
        Some(path) => load_checkpoint(path)?.0,
        None => BcfplModel::<f32>::init(args.seed),
    };
    let result = bench_throughput(&model, args.images, args.batch_size, args.reps, args.seed)?;
    eprintln!(
        "per-repetition throughput: {:?}",
        result
            .runs
            .iter()
            .map(|r| format!("{r:.1}"))
            .collect::<Vec<_>>()
    );
    println!(
        "{} images in batches of {}, {} repetitions: {:.1} images per second (std {:.1})",
        result.n_images,
        result.batch_size,
        result.runs.len(),
        result.mean_images_per_sec,
        result.std_images_per_sec
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Degrade(args) => run_degrade(args),
        Command::Scan(args) => run_scan(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
        Command::OverfitStudy(args) => run_overfit(args),
        Command::Bench(args) => run_bench(args),
    }
}

fn main() -> ExitCode {
    // clap exits 0 for --help/--version and 2 for usage errors.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
