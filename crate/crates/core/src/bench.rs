//! Benchmark protocol: LAMA, LAMA with random queries, and the empirical
//! upper bound from a ground-truth grid search, over datasets and
//! repetitions.
//!
//! Every repetition uses `seed + rep` for subsampling, the initial pool
//! and the query streams. Final models are fit unsupervised on the whole
//! (subsampled) dataset and kappa is measured against its ground truth.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::GammaSearch;
use crate::cost::{self, cohen_kappa, linear_grid};
use crate::dataset::{Dataset, DatasetManifest};
use crate::error::{LamaError, Result};
use crate::kernel::{KernelMatrix, SquaredDistances};
use crate::query::{self, ActiveLearner, GroundTruthOracle, LoopConfig, QueryStrategy};
use crate::svdd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lama,
    LamaSample,
    EmpUb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lama, Method::LamaSample, Method::EmpUb];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lama => "lama",
            Method::LamaSample => "lama-sample",
            Method::EmpUb => "emp-ub",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = LamaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lama" => Ok(Method::Lama),
            "lama-sample" | "lama_sample" => Ok(Method::LamaSample),
            "emp-ub" | "emp_ub" => Ok(Method::EmpUb),
            other => Err(LamaError::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub budget: usize,
    pub sample_size: usize,
    pub c_grid: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub subsample_max: usize,
    pub initial_inliers: usize,
    pub initial_outliers: usize,
    /// Grid resolution per axis for the empirical upper bound.
    pub emp_ub_grid: usize,
    pub gamma_search: GammaSearch,
    /// Record wall-clock seconds per run. Off by default so that reports
    /// are reproducible byte for byte.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 5,
            budget: 50,
            sample_size: 100,
            c_grid: 20,
            repetitions: 5,
            seed: 0,
            subsample_max: 2000,
            initial_inliers: 2,
            initial_outliers: 2,
            emp_ub_grid: 20,
            gamma_search: GammaSearch::default(),
            timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(LamaError::InvalidParameter(what.to_string()))
            }
        };
        check(self.k >= 1, "k must be at least 1")?;
        check(self.sample_size >= 1, "sample size must be at least 1")?;
        check(self.c_grid >= 1, "cost grid needs at least one point")?;
        check(self.repetitions >= 1, "at least one repetition is required")?;
        check(self.subsample_max >= 4, "subsample size must be at least 4")?;
        check(self.emp_ub_grid >= 1, "upper-bound grid needs at least one point")?;
        check(
            self.initial_inliers >= 1 && self.initial_outliers >= 1,
            "the initial pool needs at least one inlier and one outlier",
        )?;
        check(
            self.gamma_search.grid_points >= 1,
            "gamma grid needs at least one point",
        )
    }

    fn loop_config(&self, strategy: QueryStrategy, seed: u64) -> LoopConfig {
        LoopConfig {
            k: self.k,
            budget: self.budget,
            sample_size: self.sample_size,
            seed,
            initial_inliers: self.initial_inliers,
            initial_outliers: self.initial_outliers,
            strategy,
            gamma_search: self.gamma_search,
            ..LoopConfig::default()
        }
    }
}

/// One repetition of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub method: Method,
    pub rep: usize,
    pub seed: u64,
    pub n: usize,
    pub gamma_opt: Option<f64>,
    pub c_opt: Option<f64>,
    pub c_lb: Option<f64>,
    pub c_ub: Option<f64>,
    /// Kappa on the labeled set (for the upper bound: on the full data).
    pub quality_score: Option<f64>,
    pub kappa_full: Option<f64>,
    pub queries: usize,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub method: Method,
    pub runs: usize,
    pub failed: usize,
    pub gamma_opt: Option<f64>,
    pub c_opt: Option<f64>,
    pub quality_score: Option<f64>,
    pub kappa_full: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub methods: Vec<Method>,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

struct Outcome {
    gamma_opt: f64,
    c_opt: f64,
    c_lb: Option<f64>,
    c_ub: Option<f64>,
    quality_score: f64,
    kappa_full: f64,
    queries: usize,
}

/// Runs one repetition; errors are recorded in the returned row.
pub fn run_once(data: &Dataset, method: Method, cfg: &RunConfig, rep: usize) -> RunRecord {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let start = Instant::now();
    let result = data
        .subsample(cfg.subsample_max, seed)
        .and_then(|d| execute(Arc::new(d), method, cfg, seed));
    let seconds = cfg.timing.then(|| start.elapsed().as_secs_f64());
    let n = data.len().min(cfg.subsample_max);
    let mut record = RunRecord {
        dataset: data.name().to_string(),
        method,
        rep,
        seed,
        n,
        gamma_opt: None,
        c_opt: None,
        c_lb: None,
        c_ub: None,
        quality_score: None,
        kappa_full: None,
        queries: 0,
        seconds,
        error: None,
    };
    match result {
        Ok(o) => {
            record.gamma_opt = Some(o.gamma_opt);
            record.c_opt = Some(o.c_opt);
            record.c_lb = o.c_lb;
            record.c_ub = o.c_ub;
            record.quality_score = Some(o.quality_score);
            record.kappa_full = Some(o.kappa_full);
            record.queries = o.queries;
        }
        Err(e) => {
            warn!("{} / {method} / rep {rep} failed: {e}", data.name());
            record.error = Some(e.to_string());
        }
    }
    record
}

fn execute(data: Arc<Dataset>, method: Method, cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let dist = Arc::new(SquaredDistances::from_points(data.x()));
    match method {
        Method::Lama => active(data, dist, cfg, QueryStrategy::MinMaxAlignment, seed),
        Method::LamaSample => active(data, dist, cfg, QueryStrategy::Random, seed),
        Method::EmpUb => empirical_upper_bound(&data, &dist, cfg),
    }
}

fn active(
    data: Arc<Dataset>,
    dist: Arc<SquaredDistances>,
    cfg: &RunConfig,
    strategy: QueryStrategy,
    seed: u64,
) -> Result<Outcome> {
    let config = cfg.loop_config(strategy, seed);
    let initial = query::draw_initial_pool(data.labels(), config.initial_inliers, config.initial_outliers, seed)?;
    let learner = ActiveLearner::with_distances(data.clone(), dist.clone(), config, initial)?;
    let mut oracle = GroundTruthOracle::new(data.labels());
    let outcome = query::drive(learner, &mut oracle)?;
    let gamma = outcome.alignment.gamma_opt;

    let km = KernelMatrix::from_distances(&dist, gamma, cfg.gamma_search.mode)?;
    let est = cost::grid_search_c(&km, outcome.state.labeled(), cfg.c_grid)?;
    let model = svdd::fit(&km, est.c_opt)?;
    let kappa_full = cohen_kappa(&model.predict_all(&km), data.labels())?;
    Ok(Outcome {
        gamma_opt: gamma,
        c_opt: est.c_opt,
        c_lb: Some(est.c_lb),
        c_ub: Some(est.c_ub),
        quality_score: est.quality_score,
        kappa_full,
        queries: outcome.state.history.len(),
    })
}

/// Ground-truth grid search over `gamma` (log-spaced over the alignment
/// search bounds) and `C` (linear over `[1/N, 1]`). Ties keep the smaller
/// `gamma` and the larger `C`.
pub fn empirical_upper_bound_grid(
    data: &Dataset,
    dist: &SquaredDistances,
    cfg: &RunConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    let search = GammaSearch {
        grid_points: cfg.emp_ub_grid,
        ..cfg.gamma_search
    };
    let gammas = search.grid(dist)?;
    let costs = linear_grid(1.0 / data.len() as f64, 1.0, cfg.emp_ub_grid);
    let mut cells = Vec::with_capacity(gammas.len() * costs.len());
    for &gamma in &gammas {
        let km = KernelMatrix::from_distances(dist, gamma, search.mode)?;
        let row: Vec<(f64, f64, f64)> = costs
            .par_iter()
            .map(|&c| {
                let model = svdd::fit(&km, c)?;
                Ok((gamma, c, cohen_kappa(&model.predict_all(&km), data.labels())?))
            })
            .collect::<Result<_>>()?;
        cells.extend(row);
    }
    Ok(cells)
}

fn empirical_upper_bound(data: &Dataset, dist: &SquaredDistances, cfg: &RunConfig) -> Result<Outcome> {
    let cells = empirical_upper_bound_grid(data, dist, cfg)?;
    let mut best = cells[0];
    for &cell in &cells[1..] {
        let better = cell.2 > best.2 || (cell.2 == best.2 && cell.0 == best.0 && cell.1 > best.1);
        if better {
            best = cell;
        }
    }
    Ok(Outcome {
        gamma_opt: best.0,
        c_opt: best.1,
        c_lb: None,
        c_ub: None,
        quality_score: best.2,
        kappa_full: best.2,
        queries: 0,
    })
}

pub fn run_method(data: &Dataset, method: Method, cfg: &RunConfig) -> Vec<RunRecord> {
    (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_once(data, method, cfg, rep))
        .collect()
}

pub fn run_lama(data: &Dataset, cfg: &RunConfig) -> Vec<RunRecord> {
    run_method(data, Method::Lama, cfg)
}

pub fn run_lama_sample(data: &Dataset, cfg: &RunConfig) -> Vec<RunRecord> {
    run_method(data, Method::LamaSample, cfg)
}

pub fn run_emp_ub(data: &Dataset, cfg: &RunConfig) -> Vec<RunRecord> {
    run_method(data, Method::EmpUb, cfg)
}

/// All (dataset, method, rep) combinations. Rows come back in dataset,
/// method, rep order regardless of scheduling.
pub fn run_bench(datasets: &[Dataset], methods: &[Method], cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let jobs: Vec<(usize, Method, usize)> = (0..datasets.len())
        .flat_map(|d| {
            methods
                .iter()
                .flat_map(move |&m| (0..cfg.repetitions).map(move |r| (d, m, r)))
        })
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(d, m, r)| {
            let rec = run_once(&datasets[d], m, cfg, r);
            info!("{} / {m} / rep {r}: kappa_full = {:?}", rec.dataset, rec.kappa_full);
            rec
        })
        .collect();
    let aggregates = aggregate(&records);
    Ok(Report {
        config: cfg.clone(),
        methods: methods.to_vec(),
        records,
        aggregates,
    })
}

/// Loads every manifest entry and runs the benchmark.
pub fn run_manifest(
    entries: &[DatasetManifest],
    base_dir: Option<&Path>,
    methods: &[Method],
    cfg: &RunConfig,
) -> Result<Report> {
    let datasets = entries.iter().map(|m| m.load(base_dir)).collect::<Result<Vec<_>>>()?;
    run_bench(&datasets, methods, cfg)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, count) = values.flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Arithmetic means over the successful repetitions of each
/// (dataset, method), in order of first appearance.
pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(d, m)| d == &r.dataset && *m == r.method) {
            keys.push((r.dataset.clone(), r.method));
        }
    }
    keys.into_iter()
        .map(|(dataset, method)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.dataset == dataset && r.method == method)
                .collect();
            let ok: Vec<&&RunRecord> = group.iter().filter(|r| r.error.is_none()).collect();
            Aggregate {
                runs: group.len(),
                failed: group.len() - ok.len(),
                gamma_opt: mean(ok.iter().map(|r| r.gamma_opt)),
                c_opt: mean(ok.iter().map(|r| r.c_opt)),
                quality_score: mean(ok.iter().map(|r| r.quality_score)),
                kappa_full: mean(ok.iter().map(|r| r.kappa_full)),
                seconds: mean(ok.iter().map(|r| r.seconds)),
                dataset,
                method,
            }
        })
        .collect()
}

pub const CSV_HEADER: [&str; 8] = [
    "dataset",
    "method",
    "rep",
    "gamma_opt",
    "c_opt",
    "quality_score",
    "kappa_full",
    "seconds",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    /// One row per repetition followed by one `mean` row per
    /// (dataset, method).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.dataset.clone(),
                r.method.to_string(),
                r.rep.to_string(),
                num(r.gamma_opt),
                num(r.c_opt),
                num(r.quality_score),
                num(r.kappa_full),
                num(r.seconds),
            ])?;
        }
        for a in &self.aggregates {
            w.write_record([
                a.dataset.clone(),
                a.method.to_string(),
                "mean".to_string(),
                num(a.gamma_opt),
                num(a.c_opt),
                num(a.quality_score),
                num(a.kappa_full),
                num(a.seconds),
            ])?;
        }
        w.flush().map_err(|e| LamaError::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn aggregate_for(&self, dataset: &str, method: Method) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.dataset == dataset && a.method == method)
    }
}

/// One point of a k-sensitivity sweep, averaged over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub gamma_opt: Option<f64>,
    pub c_opt: Option<f64>,
    pub quality_score: Option<f64>,
    pub kappa_full: Option<f64>,
    pub records: Vec<RunRecord>,
}

/// Runs `method` once per `k` (with `cfg.repetitions` repetitions each).
pub fn sweep_k(data: &Dataset, ks: &[usize], method: Method, cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(LamaError::InvalidParameter(format!(
            "k = {k} is not a valid neighborhood size"
        )));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let cfg = RunConfig { k, ..cfg.clone() };
            let records = run_method(data, method, &cfg);
            let ok = || records.iter().filter(|r| r.error.is_none());
            SweepPoint {
                k,
                gamma_opt: mean(ok().map(|r| r.gamma_opt)),
                c_opt: mean(ok().map(|r| r.c_opt)),
                quality_score: mean(ok().map(|r| r.quality_score)),
                kappa_full: mean(ok().map(|r| r.kappa_full)),
                records,
            }
        })
        .collect())
}

/// `k, gamma_opt, c_opt, quality_score, kappa_full`, one row per point.
pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "gamma_opt", "c_opt", "quality_score", "kappa_full"])?;
    for p in points {
        w.write_record([
            p.k.to_string(),
            num(p.gamma_opt),
            num(p.c_opt),
            num(p.quality_score),
            num(p.kappa_full),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| LamaError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
