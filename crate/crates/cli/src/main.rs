//! Command-line entry point: analyze, train, eval, roc, predict and make-manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kutralnet::cost::{analyze, emit_report, ReportFormat};
use kutralnet::data::{preprocess, AugmentMode, DatasetManifest, Entry, ImageLoader, Label, Split};
use kutralnet::model::{load_checkpoint, save_checkpoint};
use kutralnet::train::{black_image_test, evaluate, predict, roc_auroc, roc_csv, train, RocSummary, TrainConfig};
use kutralnet::{build_variant, Error, ModelGraph, Variant};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "kutralnet",
    version,
    about = "Fire-recognition CNNs: cost analysis, training and evaluation"
)]
struct Cli {
    /// Seed for weight initialization, shuffling and augmentation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; defaults to `runs/<subcommand>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Prefix for relative manifest paths; defaults to the manifest's directory.
    #[arg(long, global = true, env = "KUTRALNET_DATA_ROOT")]
    data_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Per-layer parameter and flop counts.
    Analyze(AnalyzeArgs),
    /// Train a variant on a manifest.
    Train(TrainArgs),
    /// Accuracy and confusion counts on one split.
    Eval(EvalArgs),
    /// ROC curve and AUROC on one split.
    Roc(EvalArgs),
    /// Classify one image, or the all-black probe.
    Predict(PredictArgs),
    /// Build a manifest from a labelled directory tree.
    MakeManifest(ManifestArgs),
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    #[arg(long, default_value = "kutralnet")]
    model: Variant,
    #[arg(long, default_value_t = 84)]
    input: usize,
    /// Format printed to stdout; CSV and JSON files are always written.
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long, default_value = "kutralnet")]
    model: Variant,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Overrides the variant's initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Train fraction used when the manifest has no train/val assignment.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Stop once training accuracy reaches this value.
    #[arg(long)]
    stop_at_train_accuracy: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// Trained weights; without it a freshly initialized `--model` is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "kutralnet")]
    model: Variant,
    #[arg(long, conflicts_with = "black", required_unless_present = "black")]
    image: Option<PathBuf>,
    #[arg(long)]
    black: bool,
}

#[derive(Debug, Args, Serialize)]
struct ManifestArgs {
    /// Root holding `fire/` and `no_fire/` folders, optionally under `test/`.
    #[arg(long)]
    dir: PathBuf,
    /// Assign train/val to non-test entries with this train fraction.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// `add:N` or `replace:N`.
    #[arg(long)]
    augment_black: Option<AugmentMode>,
    /// Keep this many entries of each label.
    #[arg(long)]
    balance: Option<usize>,
    /// Where to write the CSV; defaults to `<out>/manifest.csv`.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Roc(_) => "roc",
            Command::Predict(_) => "predict",
            Command::MakeManifest(_) => "make-manifest",
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    unix_time: u64,
    cli: &'a Cli,
    out: &'a Path,
    train_config: Option<&'a TrainConfig>,
}

fn write_run_record(cli: &Cli, out: &Path, train_config: Option<&TrainConfig>) -> Result<()> {
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        cli,
        out,
        train_config,
    };
    write_json(&out.join("run.json"), &record)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `1234567` → `1,234,567`.
fn grouped(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn loader_for(cli: &Cli, manifest: &Path, size: usize) -> ImageLoader {
    let root = cli
        .data_root
        .clone()
        .or_else(|| manifest.parent().map(Path::to_path_buf));
    ImageLoader::new(root, size).with_cache()
}

fn run_analyze(cli: &Cli, args: &AnalyzeArgs, out: &Path) -> Result<()> {
    let model = build_variant::<f32>(args.model, cli.seed)?;
    let report = analyze(&model, (args.input, args.input))?;
    write_text(&out.join("cost.csv"), &emit_report(&report, ReportFormat::Csv))?;
    write_text(
        &out.join("cost.json"),
        &(emit_report(&report, ReportFormat::Json) + "\n"),
    )?;
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{}", emit_report(&report, args.format))?;
    if args.format == ReportFormat::Table {
        writeln!(
            stdout,
            "{}: {} params, {} flops ({})",
            args.model,
            grouped(report.total_params),
            grouped(report.total_flops),
            report.convention
        )?;
    }
    Ok(())
}

fn train_config(cli: &Cli, args: &TrainArgs, out: &Path) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: cli.seed,
        checkpoint_dir: Some(out.to_path_buf()),
        stop_at_train_accuracy: args.stop_at_train_accuracy,
        ..TrainConfig::for_variant(args.model)
    };
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if cfg.schedule.is_some_and(|s| s.epoch > cfg.epochs) {
        log::warn!("learning-rate drop falls after the last epoch; running at a constant rate");
        cfg.schedule = None;
    }
    cfg
}

fn run_train(cli: &Cli, args: &TrainArgs, out: &Path) -> Result<TrainConfig> {
    let cfg = train_config(cli, args, out);
    write_run_record(cli, out, Some(&cfg))?;
    let mut manifest = DatasetManifest::read_csv(&args.manifest)?;
    let unassigned = manifest.entries.iter().any(|e| e.split.is_none());
    if unassigned {
        manifest = manifest.split(args.train_fraction, cli.seed)?;
        manifest.save_csv(out.join("manifest.csv"))?;
    }
    let mut model = build_variant::<f32>(args.model, cli.seed)?;
    let mut loader = loader_for(cli, &args.manifest, model.config().input_size);
    let history = train(&mut model, &manifest, &mut loader, &cfg)?;
    write_text(&out.join("history.csv"), &history.to_csv())?;
    save_checkpoint(&model, out.join("last.ckpt"))?;
    match (history.best_epoch, history.best_val_acc) {
        (Some(epoch), Some(acc)) => println!("best validation accuracy {acc:.4} at epoch {epoch}"),
        _ => println!("no validation split; last.ckpt holds the final weights"),
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct EvalReport {
    split: Split,
    samples: usize,
    accuracy: f64,
    /// `confusion[true][predicted]`, 0 = no-fire, 1 = fire.
    confusion: [[usize; 2]; 2],
}

fn run_eval(cli: &Cli, args: &EvalArgs, out: &Path, roc: bool) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let manifest = DatasetManifest::read_csv(&args.manifest)?;
    let mut loader = loader_for(cli, &args.manifest, model.config().input_size);
    let eval = evaluate(&model, &manifest, args.split, &mut loader, args.batch_size)?;
    if roc {
        let curve = roc_auroc(&eval.scores, &eval.labels)?;
        write_text(&out.join("roc.csv"), &roc_csv(&curve))?;
        let summary = RocSummary {
            auroc: curve.auroc,
            accuracy: eval.accuracy,
        };
        write_json(&out.join("auroc.json"), &summary)?;
        println!(
            "AUROC {:.4}, accuracy {:.4} on {} {}",
            summary.auroc,
            summary.accuracy,
            eval.labels.len(),
            args.split
        );
    } else {
        let report = EvalReport {
            split: args.split,
            samples: eval.labels.len(),
            accuracy: eval.accuracy,
            confusion: eval.confusion,
        };
        write_json(&out.join("eval.json"), &report)?;
        println!("accuracy {:.4} on {} {}", report.accuracy, report.samples, args.split);
        println!("confusion [true][predicted] (no-fire, fire): {:?}", report.confusion);
    }
    Ok(())
}

fn run_predict(cli: &Cli, args: &PredictArgs, out: &Path) -> Result<()> {
    let model: ModelGraph<f32> = match &args.checkpoint {
        Some(path) => load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?,
        None => build_variant(args.model, cli.seed)?,
    };
    let prediction = match &args.image {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| kutralnet::error::DataError::Decode {
                path: path.clone(),
                message: e.to_string(),
            })?;
            predict(&model, &preprocess(&bytes, model.config().input_size, path)?)?
        }
        None => black_image_test(&model)?,
    };
    write_json(&out.join("prediction.json"), &prediction)?;
    println!("{} {:.6}", prediction.label, prediction.fire_probability);
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Collects images under `dir`, sorted, as paths relative to `root`.
fn collect_images(root: &Path, dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut children: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    children.sort();
    for path in children {
        if path.is_dir() {
            collect_images(root, &path, found)?;
        } else if is_image(&path) {
            found.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

/// Label from the nearest labelled folder; a `test` folder marks the test split.
fn entry_for(path: &Path) -> Option<Entry> {
    let dirs: Vec<&str> = path.parent()?.iter().filter_map(|c| c.to_str()).collect();
    let label = dirs.iter().rev().find_map(|d| {
        let d = d.to_ascii_lowercase();
        matches!(d.as_str(), "fire" | "no_fire" | "no-fire" | "nofire")
            .then(|| d.parse::<Label>().ok())
            .flatten()
    })?;
    let mut entry = Entry::real(path, label);
    if dirs.iter().any(|d| d.eq_ignore_ascii_case("test")) {
        entry.split = Some(Split::Test);
    }
    Some(entry)
}

fn run_make_manifest(cli: &Cli, args: &ManifestArgs, out: &Path) -> Result<()> {
    let mut paths = Vec::new();
    collect_images(&args.dir, &args.dir, &mut paths)?;
    let entries: Vec<Entry> = paths.iter().filter_map(|p| entry_for(p)).collect();
    let skipped = paths.len() - entries.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} images outside fire/ and no_fire/ folders");
    }
    let name = args.dir.file_name().and_then(|n| n.to_str()).unwrap_or("manifest");
    let mut manifest = DatasetManifest::new(name, entries);
    if manifest.is_empty() {
        return Err(kutralnet::error::DataError::EmptyManifest.into());
    }
    if let Some(per_class) = args.balance {
        manifest = manifest.balanced_subset(per_class, cli.seed)?;
    }
    if let Some(f) = args.train_fraction {
        manifest = manifest.split(f, cli.seed)?;
    }
    if let Some(mode) = args.augment_black {
        manifest = manifest.augment_black(mode, cli.seed)?;
    }
    let target = args.output.clone().unwrap_or_else(|| out.join("manifest.csv"));
    manifest.save_csv(&target)?;
    let c = manifest.counts(None);
    println!(
        "{}: {} fire, {} no-fire, {} total",
        target.display(),
        c.fire,
        c.no_fire,
        c.total()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if let Command::Train(args) = &cli.command {
        run_train(cli, args, &out)?;
        return Ok(());
    }
    write_run_record(cli, &out, None)?;
    match &cli.command {
        Command::Analyze(args) => run_analyze(cli, args, &out),
        Command::Eval(args) => run_eval(cli, args, &out, false),
        Command::Roc(args) => run_eval(cli, args, &out, true),
        Command::Predict(args) => run_predict(cli, args, &out),
        Command::MakeManifest(args) => run_make_manifest(cli, args, &out),
        Command::Train(_) => unreachable!("handled above"),
    }
}

/// 1 usage, 2 data, 3 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 1,
                Error::NanLoss { .. } | Error::NonFinite(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<kutralnet::error::DataError>().is_some() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
