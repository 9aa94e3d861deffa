//! `fens`: train, tune, ensemble, and benchmark compact image classifiers.
//! Every run-style subcommand takes a JSON config plus flags that override
//! individual file values; results land under one relocatable output root.

use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use fens_core::bench::TrackingAlloc;
use fens_core::data::{load_csv_dataset, load_image_folder, save_csv, synth_glyphs};
use fens_core::hpo::TuningReport;
use fens_core::models::{Family, PresetKind, Strategy};
use fens_core::pipeline::{
    cmd_report, compute_scores, resolve_out_dir, run_bench, run_eval, run_pipeline, run_tune,
    BenchFile, BenchSettings, DataSource, EntryState, ExperimentMatrix, HpoSettings,
    PipelineConfig, StageOutcome,
};
use fens_core::{Error, Result};

/// Registered so benchmark memory probes can fall back to allocator tracking.
#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

#[derive(Parser)]
#[command(name = "fens", version, about = "Train, tune, ensemble, and benchmark compact image classifiers")]
struct Cli {
    /// More log detail; repeat for debug output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Worker threads for matrix entries; benchmarks always use one.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create or inspect datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Search training hyperparameters with Hyperband.
    Tune(RunArgs),
    /// Run the full pipeline: tune, cross-validate, evaluate, report.
    Train(RunArgs),
    /// Rebuild probability matrices from finished runs; never trains.
    Eval(RunArgs),
    /// Score ensemble combinations from persisted matrices.
    Ensemble(OutArgs),
    /// Measure latency and memory for every trained member.
    Bench(RunArgs),
    /// Emit comparison tables from artifacts on disk.
    Report(OutArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate a deterministic synthetic glyph dataset as CSV.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving synth.csv and its metadata sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print facts about a CSV file or an image folder.
    Inspect {
        path: PathBuf,
        /// Sample height when reading CSV.
        #[arg(long, default_value_t = 32)]
        height: usize,
        /// Sample width when reading CSV.
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Output root; defaults to $FENS_HOME, then ./fens-runs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON pipeline config; the flags below override file values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output root; defaults to $FENS_HOME, then ./fens-runs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset label used in run ids.
    #[arg(long)]
    name: Option<String>,
    /// CSV dataset: one `label,pixel…` row per sample.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["folder", "synth_classes"])]
    csv: Option<PathBuf>,
    /// Image-folder dataset: one subdirectory per class.
    #[arg(long, value_name = "DIR", conflicts_with = "synth_classes")]
    folder: Option<PathBuf>,
    /// Synthetic glyph dataset with this many classes.
    #[arg(long)]
    synth_classes: Option<usize>,
    /// Samples per synthetic class.
    #[arg(long)]
    synth_per_class: Option<usize>,
    /// Synthetic generator seed.
    #[arg(long)]
    synth_seed: Option<u64>,
    /// Sample height for csv/synth sources.
    #[arg(long)]
    height: Option<usize>,
    /// Sample width for csv/synth sources.
    #[arg(long)]
    width: Option<usize>,
    /// Comma-separated families: mobile,mnas,shuffle,squeeze.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<Family>>,
    /// Comma-separated strategies: tfs,hft,fft.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Architecture preset: full or micro.
    #[arg(long)]
    preset: Option<PresetKind>,
    /// Channel width multiplier.
    #[arg(long)]
    width_mult: Option<f64>,
    /// Seed for splits, initialization, and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs per fold.
    #[arg(long)]
    epochs: Option<usize>,
    /// Training batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Cross-validation fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Training share of the holdout split, in (0,1).
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Smallest subset the best-ensemble search may return.
    #[arg(long)]
    min_size: Option<usize>,
    /// Hyperband resource budget R; enables tuning when set.
    #[arg(long)]
    r_max: Option<usize>,
    /// Hyperband halving rate eta; enables tuning when set.
    #[arg(long)]
    eta: Option<usize>,
    /// Checkpoint seeding hft/fft feature extractors.
    #[arg(long, value_name = "FILE")]
    transfer_source: Option<PathBuf>,
    /// Benchmark batch size.
    #[arg(long)]
    bench_batch_size: Option<usize>,
    /// Benchmark timing repetitions.
    #[arg(long)]
    bench_repetitions: Option<usize>,
    /// Benchmark warmup passes.
    #[arg(long)]
    bench_warmup: Option<usize>,
}

struct KvLogger;

static LOGGER: KvLogger = KvLogger;

impl log::Log for KvLogger {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }

    fn log(&self, record: &log::Record) {
        eprintln!(
            "level={} msg=\"{}\"",
            record.level().to_string().to_lowercase(),
            record.args()
        );
    }

    fn flush(&self) {}
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(level);
}

fn dataset_from_flags(args: &RunArgs) -> Result<Option<DataSource>> {
    if let Some(path) = &args.csv {
        return Ok(Some(DataSource::Csv {
            path: path.clone(),
            height: args.height.unwrap_or(32),
            width: args.width.unwrap_or(32),
        }));
    }
    if let Some(path) = &args.folder {
        return Ok(Some(DataSource::Folder { path: path.clone() }));
    }
    if let Some(classes) = args.synth_classes {
        let per_class = args
            .synth_per_class
            .ok_or_else(|| Error::Config("--synth-classes needs --synth-per-class".into()))?;
        return Ok(Some(DataSource::Synth {
            classes,
            per_class,
            height: args.height.unwrap_or(32),
            width: args.width.unwrap_or(32),
            seed: args.synth_seed.unwrap_or(0),
        }));
    }
    Ok(None)
}

fn default_config(dataset: DataSource) -> PipelineConfig {
    PipelineConfig {
        name: None,
        dataset,
        preprocess: None,
        families: Family::ALL.to_vec(),
        strategies: vec![Strategy::Tfs],
        preset: PresetKind::Micro,
        width_mult: 1.0,
        hpo: None,
        cv: Default::default(),
        train: Default::default(),
        ensemble: Default::default(),
        bench: None,
        transfer_source: None,
        seed: 7,
        out_dir: None,
    }
}

/// File config first, then every given flag on top.
fn build_config(args: &RunArgs) -> Result<PipelineConfig> {
    let flag_dataset = dataset_from_flags(args)?;
    let mut config = match &args.config {
        Some(path) => {
            let bytes = fs::read(path)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
            serde_json::from_slice::<PipelineConfig>(&bytes)
                .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?
        }
        None => match flag_dataset.clone() {
            Some(dataset) => default_config(dataset),
            None => {
                let mut cmd = Cli::command();
                cmd.error(
                    ErrorKind::MissingRequiredArgument,
                    "a dataset is required: pass --config FILE or one of --csv/--folder/--synth-classes",
                )
                .exit();
            }
        },
    };
    if let Some(dataset) = flag_dataset {
        config.dataset = dataset;
    }
    if let Some(v) = &args.name {
        config.name = Some(v.clone());
    }
    if let Some(v) = &args.families {
        config.families = v.clone();
    }
    if let Some(v) = &args.strategies {
        config.strategies = v.clone();
    }
    if let Some(v) = args.preset {
        config.preset = v;
    }
    if let Some(v) = args.width_mult {
        config.width_mult = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.folds {
        config.cv.k = v;
    }
    if let Some(v) = args.train_fraction {
        config.cv.train_fraction = v;
    }
    if let Some(v) = args.min_size {
        config.ensemble.min_size = v;
    }
    if args.r_max.is_some() || args.eta.is_some() {
        let hpo = config.hpo.get_or_insert_with(HpoSettings::default);
        if let Some(v) = args.r_max {
            hpo.r_max = v;
        }
        if let Some(v) = args.eta {
            hpo.eta = v;
        }
    }
    if args.bench_batch_size.is_some()
        || args.bench_repetitions.is_some()
        || args.bench_warmup.is_some()
    {
        let bench = config.bench.get_or_insert_with(BenchSettings::default);
        if let Some(v) = args.bench_batch_size {
            bench.batch_size = v;
        }
        if let Some(v) = args.bench_repetitions {
            bench.repetitions = v;
        }
        if let Some(v) = args.bench_warmup {
            bench.warmup = v;
        }
    }
    if let Some(v) = &args.transfer_source {
        config.transfer_source = Some(v.clone());
    }
    if let Some(v) = &args.out {
        config.out_dir = Some(v.clone());
    }
    Ok(config)
}

fn out_root(config: &PipelineConfig) -> PathBuf {
    let home = std::env::var("FENS_HOME").ok();
    resolve_out_dir(config.out_dir.as_deref(), home.as_deref())
}

fn stage_list(stages: &[StageOutcome]) -> String {
    if stages.is_empty() {
        return "-".into();
    }
    stages
        .iter()
        .map(|s| format!("{}:{}", s.name, if s.cached { "cached" } else { "fresh" }))
        .collect::<Vec<_>>()
        .join(",")
}

fn print_matrix(matrix: &ExperimentMatrix) {
    for e in &matrix.entries {
        let status = match e.status {
            EntryState::Done => "done",
            EntryState::Failed => "failed",
        };
        let mut line = format!(
            "entry={}-{}-{} status={status} stages={}",
            matrix.dataset,
            e.family,
            e.strategy,
            stage_list(&e.stages)
        );
        if let Some(err) = &e.error {
            line.push_str(&format!(" error=\"{err}\""));
        }
        println!("{line}");
    }
}

fn cmd_train(args: &RunArgs, jobs: usize) -> Result<()> {
    let config = build_config(args)?;
    let out = out_root(&config);
    let matrix = run_pipeline(&config, &out, jobs)?;
    print_matrix(&matrix);
    println!("reports={}", out.join("reports").display());
    Ok(())
}

fn cmd_tune(args: &RunArgs, jobs: usize) -> Result<()> {
    let mut config = build_config(args)?;
    config.hpo.get_or_insert_with(HpoSettings::default);
    let out = out_root(&config);
    let matrix = run_tune(&config, &out, jobs)?;
    print_matrix(&matrix);
    for e in &matrix.entries {
        if e.status != EntryState::Done {
            continue;
        }
        let id = format!("{}-{}-{}", matrix.dataset, e.family, e.strategy);
        let report: TuningReport =
            serde_json::from_slice(&fs::read(out.join("hpo").join(format!("{id}.json")))?)?;
        let best = report.best();
        println!(
            "entry={id} winner-lr={} winner-batch-size={} winner-weight-decay={} consumed-epochs={}",
            best.config.learning_rate,
            best.config.batch_size,
            best.config.weight_decay,
            report.consumed_epochs
        );
    }
    Ok(())
}

fn cmd_eval(args: &RunArgs, jobs: usize) -> Result<()> {
    let config = build_config(args)?;
    let out = out_root(&config);
    let manifest = run_eval(&config, &out, jobs)?;
    for m in &manifest.members {
        println!(
            "member={} family={} strategy={} run={} val-score={:.4}",
            m.id, m.family, m.strategy, m.run_id, m.val_score
        );
    }
    Ok(())
}

fn cmd_ensemble(args: &OutArgs) -> Result<()> {
    let out = resolve_out_dir(args.out.as_deref(), std::env::var("FENS_HOME").ok().as_deref());
    let scores = compute_scores(&out)?;
    for row in &scores.combos {
        println!(
            "combination={} members={} soft-accuracy={:.4} hard-accuracy={:.4} weighted-accuracy={:.4}",
            row.name,
            row.members.len(),
            row.soft.accuracy,
            row.hard.accuracy,
            row.weighted.accuracy
        );
    }
    for path in cmd_report(&out)? {
        println!("wrote={}", path.display());
    }
    Ok(())
}

fn cmd_bench(args: &RunArgs, jobs: usize) -> Result<()> {
    if jobs > 1 {
        log::warn!("benchmarks ignore --jobs and run single-threaded");
    }
    let config = build_config(args)?;
    let out = out_root(&config);
    let cached = run_bench(&config, &out)?;
    println!("bench-cache={}", if cached { "hit" } else { "miss" });
    let bench: BenchFile = serde_json::from_slice(&fs::read(out.join("bench.json"))?)?;
    for r in bench.members.iter().chain([&bench.ensemble.combined]) {
        println!(
            "subject={} latency-batch-s={:.6} inference-time-img-s={:.6} load-memory-mb={:.3} params={} macs={}",
            r.subject, r.latency_batch_s, r.inference_time_img_s, r.load_memory_mb, r.params, r.macs
        );
    }
    for path in cmd_report(&out)? {
        println!("wrote={}", path.display());
    }
    Ok(())
}

fn cmd_report_files(args: &OutArgs) -> Result<()> {
    let out = resolve_out_dir(args.out.as_deref(), std::env::var("FENS_HOME").ok().as_deref());
    for path in cmd_report(&out)? {
        println!("wrote={}", path.display());
    }
    Ok(())
}

fn cmd_dataset(cmd: &DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Synth { classes, per_class, height, width, seed, out } => {
            let ds = synth_glyphs(*classes, *per_class, *height, *width, *seed)?;
            fs::create_dir_all(out)?;
            let csv = out.join("synth.csv");
            save_csv(&ds, &csv)?;
            let meta = serde_json::json!({
                "classes": classes,
                "per-class": per_class,
                "height": height,
                "width": width,
                "seed": seed,
                "samples": ds.len(),
                "digest": ds.digest(),
            });
            let sidecar = out.join("synth.json");
            fs::write(&sidecar, serde_json::to_vec_pretty(&meta)?)?;
            println!("wrote={} samples={} digest={}", csv.display(), ds.len(), ds.digest());
            println!("wrote={}", sidecar.display());
        }
        DatasetCmd::Inspect { path, height, width } => {
            let ds = if path.is_dir() {
                load_image_folder(path)?
            } else {
                load_csv_dataset(path, *height, *width)?
            };
            let (c, h, w) = ds.chw();
            let mut counts = vec![0usize; ds.classes];
            for &y in &ds.labels {
                counts[y] += 1;
            }
            println!(
                "samples={} classes={} channels={c} height={h} width={w}",
                ds.len(),
                ds.classes
            );
            println!(
                "min-class-count={} max-class-count={} digest={}",
                counts.iter().min().unwrap_or(&0),
                counts.iter().max().unwrap_or(&0),
                ds.digest()
            );
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Cmd::Dataset(cmd) => cmd_dataset(cmd),
        Cmd::Tune(args) => cmd_tune(args, cli.jobs),
        Cmd::Train(args) => cmd_train(args, cli.jobs),
        Cmd::Eval(args) => cmd_eval(args, cli.jobs),
        Cmd::Ensemble(args) => cmd_ensemble(args),
        Cmd::Bench(args) => cmd_bench(args, cli.jobs),
        Cmd::Report(args) => cmd_report_files(args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_logging(cli.verbose);
    if let Err(e) = run(&cli) {
        eprintln!("level=error msg=\"{e}\"");
        std::process::exit(e.exit_code());
    }
}
