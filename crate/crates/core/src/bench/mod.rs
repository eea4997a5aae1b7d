//! Replication harness: seeded experiment grid, CSV emission, summaries, plots.
//!
//! Seed split (all through [`rng::derive_seed`]):
//!
//! ```text
//! replication r      : R = derive(master, [1, r])
//! spec               : derive(R, [1])
//! behavior policy    : derive(R, [2])      or derive(master, [2, 2]) if not redrawn
//! evaluation policy  : derive(R, [3])      or derive(master, [2, 3]) if not redrawn
//! oracle batch       : derive(R, [4])
//! eval states        : derive(R, [5])
//! batch for size n   : derive(R, [6, n])
//! penalty draws at n : derive(R, [7, n])
//! ```
//!
//! Both methods in a cell see the same batch and penalty seed.

pub mod config;
pub mod diagnose;
pub mod plot;
pub mod summary;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluation::{self, Method, MetricsRecord};
use crate::fqi::{self, FqiResult, LinearQ};
use crate::mdp::{self, MdpSpec, Policy, TrajectoryBatch};
use crate::rng::{self, derive_seed};
use crate::{Error, Result};

pub use config::{ExperimentConfig, ExperimentMode, PenaltyKind, PoolingKind, ThresholdKind};
pub use diagnose::{diagnose, DiagnoseReport};
pub use summary::{summarize, summarize_records, SummaryRow, METRICS};

const TAG_REPLICATION: u64 = 1;
const TAG_SHARED_POLICY: u64 = 2;
const TAG_SPEC: u64 = 1;
const TAG_BEHAVIOR: u64 = 2;
const TAG_EVALUATION: u64 = 3;
const TAG_ORACLE: u64 = 4;
const TAG_EVAL_STATES: u64 = 5;
const TAG_BATCH: u64 = 6;
const TAG_PENALTY: u64 = 7;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Seeds for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplicationSeeds {
    pub root: u64,
    pub spec: u64,
    pub behavior: u64,
    pub evaluation: u64,
    pub oracle: u64,
    pub eval_states: u64,
}

impl ReplicationSeeds {
    pub fn new(master_seed: u64, replication: usize, redraw_policies: bool) -> Self {
        let root = derive_seed(master_seed, &[TAG_REPLICATION, replication as u64]);
        let policy_parent = |tag| {
            if redraw_policies {
                derive_seed(root, &[tag])
            } else {
                derive_seed(master_seed, &[TAG_SHARED_POLICY, tag])
            }
        };
        Self {
            root,
            spec: derive_seed(root, &[TAG_SPEC]),
            behavior: policy_parent(TAG_BEHAVIOR),
            evaluation: policy_parent(TAG_EVALUATION),
            oracle: derive_seed(root, &[TAG_ORACLE]),
            eval_states: derive_seed(root, &[TAG_EVAL_STATES]),
        }
    }

    pub fn batch(&self, n: usize) -> u64 {
        derive_seed(self.root, &[TAG_BATCH, n as u64])
    }

    pub fn penalty(&self, n: usize) -> u64 {
        derive_seed(self.root, &[TAG_PENALTY, n as u64])
    }
}

/// Everything shared by the cells of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationContext {
    pub replication: usize,
    pub seeds: ReplicationSeeds,
    pub spec: MdpSpec,
    pub behavior: Policy,
    pub evaluation: Policy,
    pub oracle: LinearQ,
    pub eval_states: Vec<Vec<f64>>,
}

impl ReplicationContext {
    pub fn build(config: &ExperimentConfig, replication: usize) -> Result<Self> {
        let seeds = ReplicationSeeds::new(config.master_seed, replication, config.redraw_policies);
        let spec = mdp::generate_mdp(&config.mdp_params(), seeds.spec)?;
        let behavior = Policy::random_logistic(config.d, &mut rng::stream(seeds.behavior, &[]));
        let evaluation = Policy::random_logistic(config.d, &mut rng::stream(seeds.evaluation, &[]));
        let oracle_config = config.fqi_config(&evaluation, seeds.oracle);
        let oracle = fqi::run_oracle_q(&spec, config.n_oracle, config.initial_sd, seeds.oracle, &oracle_config)?;
        let eval_states = mdp::sample_initial_states(config.d, config.num_eval_states, config.initial_sd, seeds.eval_states);
        Ok(Self {
            replication,
            seeds,
            spec,
            behavior,
            evaluation,
            oracle,
            eval_states,
        })
    }

    pub fn batch(&self, config: &ExperimentConfig, n: usize) -> Result<TrajectoryBatch> {
        mdp::simulate(&self.spec, &self.behavior, n, config.initial_sd, self.seeds.batch(n))
    }

    pub fn fit(&self, config: &ExperimentConfig, method: Method, batch: &TrajectoryBatch) -> Result<FqiResult> {
        let fqi_config = config.fqi_config(&self.evaluation, self.seeds.penalty(batch.len()));
        match method {
            Method::RewardFiltered => fqi::run_reward_filtered(batch, &fqi_config),
            Method::NaiveThresholded => fqi::run_naive_thresholded(batch, &fqi_config),
        }
    }

    /// Stage-0 Q-MSE against the oracle plus support recovery of the stage-0
    /// state support.
    pub fn score(&self, method: Method, fit: &FqiResult, n: usize, wall_time_ms: f64) -> Result<MetricsRecord> {
        let q_mse = evaluation::q_mse(&fit.qfun, &self.oracle, &self.eval_states, 0)?;
        let support = evaluation::support_metrics(&fit.qfun.state_support(0), &self.spec.support, self.spec.d)?;
        Ok(MetricsRecord {
            method,
            n,
            replication: self.replication,
            q_mse,
            tpr: support.tpr,
            fpr: support.fpr,
            fp_count: support.fp_count as f64,
            wall_time_ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutput {
    /// Sorted by `(method, n, replication)`; failed cells carry NaN metrics.
    pub records: Vec<MetricsRecord>,
    pub failures: Vec<CellFailure>,
}

fn failure(method: Method, n: usize, replication: usize, err: &Error) -> CellFailure {
    CellFailure {
        method,
        n,
        replication,
        code: err.code().to_string(),
        message: err.to_string(),
    }
}

struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] Option<std::time::Instant>);

impl Stopwatch {
    fn start(enabled: bool) -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Stopwatch(enabled.then(std::time::Instant::now))
        }
        #[cfg(target_arch = "wasm32")]
        {
            let _ = enabled;
            Stopwatch()
        }
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.0.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

fn run_cell(config: &ExperimentConfig, ctx: &ReplicationContext, n: usize) -> Vec<std::result::Result<MetricsRecord, CellFailure>> {
    let batch = match ctx.batch(config, n) {
        Ok(b) => b,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| Err(failure(m, n, ctx.replication, &e)))
                .collect()
        }
    };
    config
        .methods
        .iter()
        .map(|&method| {
            let clock = Stopwatch::start(config.record_wall_time);
            ctx.fit(config, method, &batch)
                .and_then(|fit| ctx.score(method, &fit, n, clock.elapsed_ms()))
                .map_err(|e| failure(method, n, ctx.replication, &e))
        })
        .collect()
}

fn collect(config: &ExperimentConfig, cells: Vec<Vec<std::result::Result<MetricsRecord, CellFailure>>>) -> GridOutput {
    let mut out = GridOutput::default();
    for result in cells.into_iter().flatten() {
        match result {
            Ok(r) => out.records.push(r),
            Err(f) => {
                out.records.push(MetricsRecord::failed(f.method, f.n, f.replication));
                out.failures.push(f);
            }
        }
    }
    if !config.record_wall_time {
        for r in out.records.iter_mut().filter(|r| !r.is_failed()) {
            r.wall_time_ms = 0.0;
        }
    }
    out.records
        .sort_by_key(|r| (r.method, r.n, r.replication));
    out.failures.sort();
    out
}

/// Worker count: `config.threads`, else `RFQI_THREADS`, else `0` (library default).
pub fn worker_threads(config: &ExperimentConfig) -> usize {
    if config.threads > 0 {
        return config.threads;
    }
    std::env::var("RFQI_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Runs the whole grid in memory. `progress` is called once per finished
/// `(replication, n)` cell with `(done, total)`.
pub fn run_grid_with_progress(config: &ExperimentConfig, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<GridOutput> {
    config.validate()?;
    let total = config.replications * config.sample_sizes.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let tick = || progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1, total);

    let replication_cells = |r: usize| -> Vec<Vec<std::result::Result<MetricsRecord, CellFailure>>> {
        match ReplicationContext::build(config, r) {
            Ok(ctx) => map_maybe_parallel(&config.sample_sizes, |&n| {
                let cell = run_cell(config, &ctx, n);
                tick();
                cell
            }),
            Err(e) => config
                .sample_sizes
                .iter()
                .map(|&n| {
                    tick();
                    config.methods.iter().map(|&m| Err(failure(m, n, r, &e))).collect()
                })
                .collect(),
        }
    };

    let reps: Vec<usize> = (0..config.replications).collect();
    let run = || {
        map_maybe_parallel(&reps, |&r| replication_cells(r))
            .into_iter()
            .flatten()
            .collect()
    };
    let cells = with_pool(worker_threads(config), run)?;
    Ok(collect(config, cells))
}

pub fn run_grid(config: &ExperimentConfig) -> Result<GridOutput> {
    run_grid_with_progress(config, &|_, _| {})
}

#[cfg(feature = "parallel")]
fn map_maybe_parallel<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_maybe_parallel<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_pool<R>(_threads: usize, f: impl FnOnce() -> R) -> Result<R> {
    Ok(f())
}

/// Run metadata written next to the CSVs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub crate_version: &'static str,
    pub rng_algorithm: &'static str,
    pub config: &'a ExperimentConfig,
    pub worker_threads: usize,
    pub wall_time_ms: f64,
    pub num_records: usize,
    pub failures: &'a [CellFailure],
    pub results_sha256: String,
}

/// Runs the grid and writes `results.csv`, `summary.csv` and `manifest.json`
/// into `config.output_dir`. Returns the path of `results.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PathBuf> {
    run_experiment_with_progress(config, &|_, _| {})
}

pub fn run_experiment_with_progress(config: &ExperimentConfig, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<PathBuf> {
    config.validate()?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let clock = Stopwatch::start(true);
    let grid = run_grid_with_progress(config, progress)?;

    let mut results = Vec::new();
    summary::write_results_csv(&grid.records, &mut results)?;
    let results_path = dir.join(RESULTS_FILE);
    std::fs::write(&results_path, &results).map_err(|e| Error::io(&results_path, e))?;

    let summary_path = dir.join(SUMMARY_FILE);
    summary::write_summary_csv(&summarize_records(&grid.records), crate::io::create(&summary_path)?)?;

    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        rng_algorithm: rng::RNG_ALGORITHM,
        config,
        worker_threads: worker_threads(config),
        wall_time_ms: clock.elapsed_ms(),
        num_records: grid.records.len(),
        failures: &grid.failures,
        results_sha256: hex(&Sha256::digest(&results)),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(results_path)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
