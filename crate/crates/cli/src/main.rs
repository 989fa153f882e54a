use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use tae_core::ablation::{enhancer_for, run_ablation, NO_ENHANCEMENT};
use tae_core::evaluation::{run_ope, BuiltinTracker, Comparison, ComparisonRow, MetricReport, OpeOptions, TrackerKind};
use tae_core::io::dataset::ATTRIBUTE_COUNT;
use tae_core::io::{load_dataset, read_image, synth_dataset, write_gray, write_image, EngineConfig, Split};
use tae_core::training::{load_checkpoint, samples_from_records, save_checkpoint, Checkpoint, EpochStats, TaeModel, Trainer};
use tae_core::{Error, Mode, Result};

#[derive(Parser)]
#[command(name = "tae", version, about = "Target-aware low-light enhancement and tracking evaluation")]
struct Cli {
    /// Worker threads for per-image and per-sequence pools (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an enhancer and write checkpoints plus a per-epoch loss CSV.
    Train(TrainArgs),
    /// Enhance every image in a directory.
    Enhance(EnhanceArgs),
    /// One-pass tracking evaluation with optional enhancement.
    Eval(EvalArgs),
    /// Generate a synthetic low-light tracking dataset.
    Synth(SynthArgs),
    /// Four-condition comparison: none, baseline, TA, TA+MC.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Dataset root; overrides `paths.dataset`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "TA+MC")]
    mode: Mode,
    /// Also write the objectness map and per-channel masks as grayscale PNGs.
    #[arg(long)]
    dump_mask: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "ncc")]
    tracker: TrackerKind,
    /// Checkpoint to enhance frames with; adds a second condition.
    #[arg(long)]
    enhance: Option<PathBuf>,
    #[arg(long, default_value = "TA+MC")]
    mode: Mode,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Keep only sequences with this attribute flag set (0-based index).
    #[arg(long)]
    attribute: Option<usize>,
    /// Tracker and metric settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON report path; CSV and curve TSVs are written next to it.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Enhance(a) => enhance(a, cli.jobs),
        Command::Eval(a) => eval(a, cli.jobs),
        Command::Synth(a) => synth(a),
        Command::Ablate(a) => ablate(a, cli.jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("tae: error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::from_path(p),
        None => Ok(EngineConfig::default()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn loss_csv(stats: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loc,exp,color,tv,total\n");
    for s in stats {
        let l = &s.losses;
        out.push_str(&format!("{},{},{},{},{},{}\n", s.epoch, l.loc, l.exp, l.color, l.tv, l.total));
    }
    out
}

fn log_epoch(label: &str, s: &EpochStats) {
    log::info!(
        "{label} epoch {}: total {:.6} (loc {:.6}, exp {:.6}, color {:.6}, tv {:.6}), lr {:e}, {} samples, {} skipped",
        s.epoch,
        s.losses.total,
        s.losses.loc,
        s.losses.exp,
        s.losses.color,
        s.losses.tv,
        s.learning_rate,
        s.samples,
        s.skipped
    );
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = EngineConfig::from_path(&args.config)?;
    let root = args
        .dataset
        .clone()
        .or_else(|| cfg.paths.dataset.clone())
        .ok_or_else(|| Error::InvalidArgument("no dataset: pass --dataset or set paths.dataset".into()))?;
    let records = load_dataset(&root, Split::Train)?;
    let samples = samples_from_records(&records, cfg.train.frame_stride)?;
    log::info!("training on {} frames from {} sequences", samples.len(), records.len());
    create_dir(&args.out)?;
    let config_text = cfg.to_toml_string();
    let model = TaeModel::init(cfg.seed, cfg.enhancement.alpha_source);
    let mut trainer = Trainer::new(cfg.train_config(), model)?;
    let mut stats = Vec::new();
    for _ in 0..cfg.train.epochs {
        let s = trainer.train_epoch(&samples)?;
        log_epoch(trainer.cfg.mode.as_str(), &s);
        save_checkpoint(&args.out.join(format!("epoch_{:03}.tae", s.epoch)), &trainer.checkpoint(config_text.clone()))?;
        stats.push(s);
    }
    save_checkpoint(&args.out.join("model.tae"), &trainer.checkpoint(config_text))?;
    write_text(&args.out.join("losses.csv"), &loss_csv(&stats))
}

fn is_image(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    matches!(ext.as_deref(), Some("png" | "ppm" | "pnm"))
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn enhance(args: &EnhanceArgs, jobs: usize) -> Result<()> {
    let ckpt: Checkpoint = load_checkpoint(&args.ckpt)?;
    let mut inputs: Vec<PathBuf> = fs::read_dir(&args.input)
        .map_err(|e| Error::io(&args.input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(format!("no .png/.ppm images in {}", args.input.display())));
    }
    create_dir(&args.out)?;
    let model = &ckpt.model;
    build_pool(jobs)?.install(|| {
        inputs.par_iter().try_for_each(|path| -> Result<()> {
            let image = read_image(path)?;
            let out = model.enhance(&image, args.mode)?;
            let name = path.file_name().expect("read_dir entries have names");
            write_image(&args.out.join(name), &out.image.values)?;
            if args.dump_mask {
                let stem = path.file_stem().expect("file has a stem").to_string_lossy();
                if let Some(obj) = &out.objectness {
                    write_gray(&args.out.join(format!("{stem}_objectness.png")), &obj.values, 0)?;
                }
                for (c, ch) in ["r", "g", "b"].iter().enumerate() {
                    write_gray(&args.out.join(format!("{stem}_mask_{ch}.png")), &out.mask.values, c)?;
                }
            }
            log::debug!("enhanced {}", path.display());
            Ok(())
        })
    })?;
    log::info!("enhanced {} images", inputs.len());
    Ok(())
}

fn label_slug(label: &str) -> String {
    label.to_ascii_lowercase().replace('+', "_")
}

/// `<stem>_<label>_{success,precision,norm_precision}.tsv` next to `report`.
fn write_curves(report: &Path, label: &str, r: &MetricReport) -> Result<()> {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    let dir = report.parent().unwrap_or(Path::new(""));
    let slug = label_slug(label);
    for (kind, thresholds, values) in [
        ("success", &r.success_thresholds, &r.success),
        ("precision", &r.precision_thresholds, &r.precision),
        ("norm_precision", &r.norm_precision_thresholds, &r.norm_precision),
    ] {
        let path = dir.join(format!("{stem}_{slug}_{kind}.tsv"));
        write_text(&path, &MetricReport::curve_tsv(thresholds, values))?;
    }
    Ok(())
}

fn write_comparison(report: &Path, cmp: &Comparison) -> Result<()> {
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(report, &cmp.to_report_json())?;
    write_text(&report.with_extension("csv"), &cmp.to_csv())?;
    for row in &cmp.rows {
        write_curves(report, &row.label, &row.report)?;
    }
    Ok(())
}

fn eval(args: &EvalArgs, jobs: usize) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let mut dataset = load_dataset(&args.dataset, args.split)?;
    if let Some(a) = args.attribute {
        if a >= ATTRIBUTE_COUNT {
            return Err(Error::InvalidArgument(format!("attribute index {a} is not below {ATTRIBUTE_COUNT}")));
        }
        dataset.retain(|s| s.has_attribute(a));
        if dataset.is_empty() {
            return Err(Error::InvalidArgument(format!("no {} sequence has attribute {a}", args.split)));
        }
    }
    let tracker = BuiltinTracker {
        kind: args.tracker,
        ncc: cfg.tracker,
    };
    let opts = OpeOptions {
        jobs,
        metrics: cfg.metrics,
    };
    let (_, report) = run_ope(&dataset, &tracker, None, &opts)?;
    let mut rows = vec![ComparisonRow {
        label: NO_ENHANCEMENT.into(),
        report,
    }];
    if let Some(path) = &args.enhance {
        let ckpt = load_checkpoint(path)?;
        let enhancer = enhancer_for(&ckpt.model, args.mode);
        let (_, report) = run_ope(&dataset, &tracker, Some(&enhancer), &opts)?;
        rows.push(ComparisonRow {
            label: args.mode.as_str().into(),
            report,
        });
    }
    let cmp = Comparison { rows };
    for (k, row) in cmp.rows.iter().enumerate() {
        let d = cmp.deltas(k);
        log::info!(
            "{}: S_AUC {:.4} ({:+.2} pp), P {:.4}, NormP {:.4}",
            row.label,
            row.report.s_auc,
            d.s_auc,
            row.report.precision_at,
            row.report.norm_precision_auc
        );
    }
    write_comparison(&args.report, &cmp)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let ids = synth_dataset(&args.out, &cfg.synth)?;
    log::info!("wrote {} sequences to {}", ids.len(), args.out.display());
    Ok(())
}

fn ablate(args: &AblateArgs, jobs: usize) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    create_dir(&args.out)?;
    let outcome = run_ablation(&args.dataset, &cfg, jobs, |mode, s| log_epoch(mode.as_str(), s))?;
    let config_text = cfg.to_toml_string();
    for (mode, model, stats) in &outcome.trained {
        let slug = label_slug(mode.as_str());
        write_text(&args.out.join(format!("losses_{slug}.csv")), &loss_csv(stats))?;
        save_checkpoint(
            &args.out.join(format!("model_{slug}.tae")),
            &Checkpoint::fresh(model.clone(), config_text.clone()),
        )?;
    }
    let cmp = &outcome.comparison;
    write_comparison(&args.out.join("ablation.json"), cmp)?;
    write_text(&args.out.join("ablation_summary.json"), &cmp.to_json())?;
    print!("{}", cmp.to_csv());
    Ok(())
}
