use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lama_core::alignment::GammaSearch;
use lama_core::bench::{self, Method, RunConfig, SweepPoint};
use lama_core::dataset::{self, CsvOptions, Dataset, LabelColumn};
use lama_core::kernel::ExponentMode;
use serde::Serialize;

use crate::service::{self, ServiceState};

#[derive(Debug, Parser)]
#[command(
    name = "lama",
    version,
    about = "SVDD hyperparameter estimation from a few active labels"
)]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate (gamma, C) on one dataset and print the result as JSON.
    Tune(TuneArgs),
    /// Run methods x datasets x repetitions from a manifest.
    Bench(BenchArgs),
    /// Serve interactive labeling sessions over HTTP.
    Serve(ServeArgs),
    /// Sensitivity of the estimate to the neighborhood size k.
    SweepK(SweepArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// CSV file, one row per observation.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Label column, by header name or zero-based index. Defaults to the last column.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Label value marking outliers; everything else is an inlier.
    #[arg(long, default_value = "yes")]
    pub outlier_label: String,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
}

impl DatasetArgs {
    pub fn load(&self) -> anyhow::Result<Dataset> {
        let label_column = self.label_column.as_ref().map(|c| match c.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(c.clone()),
        });
        let opts = CsvOptions {
            label_column,
            outlier_label: self.outlier_label.clone(),
            has_header: !self.no_header,
        };
        dataset::load_csv(&self.dataset, &opts).with_context(|| format!("loading {}", self.dataset.display()))
    }
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Neighborhood size.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Target number of labeled observations, initial pool included.
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    /// Candidates scored per query.
    #[arg(long, default_value_t = 100)]
    pub sample_size: usize,
    /// Grid size for C.
    #[arg(long, default_value_t = 20)]
    pub c_grid: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Datasets larger than this are subsampled per repetition.
    #[arg(long, default_value_t = 2000)]
    pub subsample_max: usize,
    #[arg(long, default_value_t = 2)]
    pub initial_inliers: usize,
    #[arg(long, default_value_t = 2)]
    pub initial_outliers: usize,
    /// Grid size per axis of the ground-truth search.
    #[arg(long, default_value_t = 20)]
    pub emp_ub_grid: usize,
    /// Log-spaced gamma grid points before refinement.
    #[arg(long, default_value_t = 40)]
    pub gamma_grid: usize,
    /// Golden-section refinement steps for gamma.
    #[arg(long, default_value_t = 20)]
    pub gamma_refine: usize,
    /// Use exp(-gamma * ||x - x'||) instead of the squared distance.
    #[arg(long)]
    pub plain_exponent: bool,
    /// Record wall-clock seconds per run (makes output nondeterministic).
    #[arg(long)]
    pub timing: bool,
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            k: self.k,
            budget: self.budget,
            sample_size: self.sample_size,
            c_grid: self.c_grid,
            repetitions: self.repetitions,
            seed: self.seed,
            subsample_max: self.subsample_max,
            initial_inliers: self.initial_inliers,
            initial_outliers: self.initial_outliers,
            emp_ub_grid: self.emp_ub_grid,
            gamma_search: GammaSearch {
                grid_points: self.gamma_grid,
                refine_iterations: self.gamma_refine,
                mode: if self.plain_exponent {
                    ExponentMode::Plain
                } else {
                    ExponentMode::Squared
                },
                ..GammaSearch::default()
            },
            timing: self.timing,
        }
    }
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value = "lama", value_parser = parse_method)]
    pub method: Method,
    #[command(flatten)]
    pub run: RunArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON manifest: a list of {name, path, label_column, outlier_label, header}.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "lama,lama-sample,emp-ub", value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub run: RunArgs,
    /// CSV results; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Full JSON report with the config echo.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory for per-session checkpoints; existing ones are resumed.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value = "lama", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 20)]
    pub k_max: usize,
    #[command(flatten)]
    pub run: RunArgs,
    /// CSV trace (k, gamma_opt, c_opt, quality_score, kappa_full); stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: lama_core::LamaError| e.to_string())
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Tune(args) => tune(args),
        Command::Bench(args) => bench_cmd(args),
        Command::Serve(args) => serve(args),
        Command::SweepK(args) => sweep(args),
    }
}

fn tune(args: TuneArgs) -> anyhow::Result<()> {
    let cfg = args.run.config();
    cfg.validate()?;
    let data = args.data.load()?;
    let record = bench::run_once(&data, args.method, &cfg, 0);
    if let Some(e) = &record.error {
        bail!("tuning failed: {e}");
    }
    let text = serde_json::to_string_pretty(&record)? + "\n";
    write_or_print(args.output.as_deref(), &text)
}

fn bench_cmd(args: BenchArgs) -> anyhow::Result<()> {
    let cfg = args.run.config();
    cfg.validate()?;
    if args.methods.is_empty() {
        bail!("no methods selected");
    }
    let manifests = dataset::read_manifests(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let report = bench::run_manifest(&manifests, None, &args.methods, &cfg)?;
    write_or_print(args.output.as_deref(), &report.to_csv_string()?)?;
    if let Some(path) = &args.json {
        fs::write(path, report.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let state = match &args.checkpoint_dir {
        Some(dir) => ServiceState::with_checkpoints(dir)?,
        None => ServiceState::new(None),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(&args.addr, state))
}

#[derive(Serialize)]
struct SweepReport<'a> {
    dataset: &'a str,
    method: Method,
    config: &'a RunConfig,
    points: &'a [SweepPoint],
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    if args.k_min == 0 || args.k_min > args.k_max {
        bail!("k range [{}, {}] is empty or starts at 0", args.k_min, args.k_max);
    }
    let cfg = args.run.config();
    let data = args.data.load()?;
    let ks: Vec<usize> = (args.k_min..=args.k_max).collect();
    let points = bench::sweep_k(&data, &ks, args.method, &cfg)?;

    let csv = bench::sweep_csv(&points)?;
    write_or_print(args.output.as_deref(), &csv)?;
    if let Some(path) = &args.json {
        let report = SweepReport {
            dataset: data.name(),
            method: args.method,
            config: &cfg,
            points: &points,
        };
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}
