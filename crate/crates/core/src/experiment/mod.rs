//! The p-sweep: seeded repeated runs, aggregation, bootstrap intervals and
//! report files.

mod bootstrap;
mod report;
mod svg;

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bootstrap::bootstrap_ci;
pub use report::{
    emit_report, load_report, read_results_csv, EmittedFiles, Summary, SUMMARY_SCHEMA_VERSION,
};

use crate::data::{ingest_csv, prepare, synth_series, PreparedData, SynthProfile};
use crate::error::{Error, Result};
use crate::importance::{importance_scores, select_top_p, subset_size, ImportanceRanking};
use crate::training::{evaluate, retrain_subset, train_tracked, EvalMetrics, TrainConfig};

/// Where the series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        value_column: String,
        timestamp_column: String,
    },
    Synthetic {
        seed: u64,
        length: usize,
        profile: SynthProfile,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub train_fraction: f64,
    /// Window length; 1 gives the lag-1 framing `X_t = [x_t]`, `y_t = x_{t+1}`.
    pub window: usize,
}

impl DatasetSpec {
    pub fn synthetic(seed: u64, length: usize) -> Self {
        DatasetSpec {
            source: DataSource::Synthetic {
                seed,
                length,
                profile: SynthProfile::default(),
            },
            train_fraction: 0.8,
            window: 1,
        }
    }

    /// Reads or generates the series, then splits, scales and windows it.
    pub fn load(&self) -> Result<PreparedData> {
        let series = match &self.source {
            DataSource::Csv {
                path,
                value_column,
                timestamp_column,
            } => ingest_csv(path, value_column, timestamp_column)?.series,
            DataSource::Synthetic {
                seed,
                length,
                profile,
            } => synth_series(*seed, *length, profile)?,
        };
        prepare(&series, self.train_fraction, self.window)
    }
}

pub fn default_p_values() -> Vec<f64> {
    (1..=10).map(|i| f64::from(i * 10)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Ascending, unique, each in (0, 100].
    pub p_values: Vec<f64>,
    pub n_runs: usize,
    /// Its `seed` is replaced by each run's derived seed.
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub master_seed: u64,
}

impl SweepConfig {
    pub fn new(dataset: DatasetSpec) -> Self {
        SweepConfig {
            p_values: default_p_values(),
            n_runs: 5,
            train: TrainConfig::default(),
            dataset,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.p_values.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
            return Err(Error::Config(format!("p value {p} outside (0, 100]")));
        }
        if self.p_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "p values must be ascending and unique".into(),
            ));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(Error::Config(
                "bootstrap_resamples must be at least 1".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!(
                "ci_level {} outside (0, 1)",
                self.ci_level
            )));
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.dataset.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        self.train.validate()
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        run_seeds(self.master_seed, self.n_runs)
    }

    pub fn bootstrap_seed(&self) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(1);
        rng.next_u64()
    }
}

/// Per-run initialization seeds derived from the master seed.
pub fn run_seeds(master_seed: u64, n_runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..n_runs).map(|_| rng.next_u64()).collect()
}

/// One trained model's test metrics. `p == None` marks a full-data baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub p: Option<f64>,
    pub run_seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub wall_time_s: f64,
    pub sample_visits: u64,
    pub param_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub p: Option<f64>,
    pub run_seed: u64,
    pub numerical: bool,
    pub message: String,
}

/// Mean and sample standard deviation (`n-1`) of one configuration's runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `None` for the full-data baseline.
    pub p: Option<f64>,
    pub k: usize,
    pub n_runs: usize,
    pub mean_mae: f64,
    /// `None` with fewer than two runs.
    pub std_mae: Option<f64>,
    pub mean_rmse: f64,
    pub std_rmse: Option<f64>,
    pub sample_visits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub method: String,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

/// Interval for the paired improvement `mae_full - mae_subset` at one `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementCi {
    pub p: f64,
    pub n_pairs: usize,
    pub mean_improvement: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub n_train: usize,
    pub n_test: usize,
    pub run_seeds: Vec<u64>,
    pub baselines: Vec<RunRow>,
    /// Subset rows, ascending `p`, runs in seed order within each `p`.
    pub rows: Vec<RunRow>,
    pub baseline: Option<Aggregate>,
    pub aggregates: Vec<Aggregate>,
    /// Smallest `p` whose mean MAE does not exceed the baseline's.
    pub best_p: Option<f64>,
    pub improvement_ci: Option<ImprovementCi>,
    pub bootstrap: BootstrapSettings,
    pub failures: Vec<RunFailure>,
    /// Effective configuration, echoed into `summary.json`.
    pub config: serde_json::Value,
}

impl ExperimentReport {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn aggregate(&self, p: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.p == Some(p))
    }

    /// Mean measured wall time per configuration, `None` key for baselines.
    pub fn mean_wall_time(&self, p: Option<f64>) -> Option<f64> {
        let times: Vec<f64> = self
            .baselines
            .iter()
            .chain(&self.rows)
            .filter(|r| r.p == p)
            .map(|r| r.wall_time_s)
            .collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }
}

fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

fn aggregate_rows(p: Option<f64>, k: usize, rows: &[&RunRow]) -> Option<Aggregate> {
    if rows.is_empty() {
        return None;
    }
    let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
    let rmses: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
    let (mean_mae, std_mae) = mean_std(&maes);
    let (mean_rmse, std_rmse) = mean_std(&rmses);
    Some(Aggregate {
        p,
        k,
        n_runs: rows.len(),
        mean_mae,
        std_mae,
        mean_rmse,
        std_rmse,
        sample_visits: rows[0].sample_visits,
    })
}

/// Builds aggregates, the flagged `p` and its improvement interval from raw
/// rows. Shared by fresh sweeps and re-rendering from disk.
#[allow(clippy::too_many_arguments)]
pub fn assemble_report(
    n_train: usize,
    n_test: usize,
    run_seeds: Vec<u64>,
    baselines: Vec<RunRow>,
    rows: Vec<RunRow>,
    failures: Vec<RunFailure>,
    bootstrap: BootstrapSettings,
    config: serde_json::Value,
) -> Result<ExperimentReport> {
    let base_refs: Vec<&RunRow> = baselines.iter().collect();
    let baseline = aggregate_rows(None, n_train, &base_refs);

    let mut ps: Vec<f64> = rows.iter().filter_map(|r| r.p).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let aggregates: Vec<Aggregate> = ps
        .iter()
        .filter_map(|&p| {
            let of_p: Vec<&RunRow> = rows.iter().filter(|r| r.p == Some(p)).collect();
            aggregate_rows(Some(p), subset_size(p, n_train), &of_p)
        })
        .collect();

    let best_p = baseline.as_ref().and_then(|b| {
        aggregates
            .iter()
            .find(|a| a.mean_mae <= b.mean_mae)
            .and_then(|a| a.p)
    });
    let ci_p = best_p.or_else(|| {
        aggregates
            .iter()
            .min_by(|a, b| a.mean_mae.total_cmp(&b.mean_mae))
            .and_then(|a| a.p)
    });

    let improvement_ci = match ci_p {
        Some(p) => {
            let diffs: Vec<f64> = rows
                .iter()
                .filter(|r| r.p == Some(p))
                .filter_map(|r| {
                    baselines
                        .iter()
                        .find(|b| b.run_seed == r.run_seed)
                        .map(|b| b.mae - r.mae)
                })
                .collect();
            if diffs.is_empty() {
                None
            } else {
                let (lo, hi) =
                    bootstrap_ci(&diffs, bootstrap.resamples, bootstrap.level, bootstrap.seed)?;
                Some(ImprovementCi {
                    p,
                    n_pairs: diffs.len(),
                    mean_improvement: bootstrap::shifted_mean(&diffs),
                    lo,
                    hi,
                })
            }
        }
        None => None,
    };

    Ok(ExperimentReport {
        n_train,
        n_test,
        run_seeds,
        baselines,
        rows,
        baseline,
        aggregates,
        best_p,
        improvement_ci,
        bootstrap,
        failures,
        config,
    })
}

/// Loads the dataset and runs the sweep.
pub fn run_sweep(sweep: &SweepConfig, workers: usize) -> Result<ExperimentReport> {
    sweep.validate()?;
    let data = sweep.dataset.load()?;
    run_sweep_prepared(sweep, &data, workers)
}

fn row_from(
    p: Option<f64>,
    run_seed: u64,
    m: &EvalMetrics,
    ledger: &crate::training::CostLedger,
) -> RunRow {
    RunRow {
        p,
        run_seed,
        mae: m.mae,
        rmse: m.rmse,
        wall_time_s: ledger.wall_time_s,
        sample_visits: ledger.sample_visits,
        param_updates: ledger.param_update_count,
    }
}

fn failure(p: Option<f64>, run_seed: u64, e: &Error) -> RunFailure {
    log::warn!("run {run_seed:#x} (p={p:?}) failed: {e}");
    RunFailure {
        p,
        run_seed,
        numerical: e.is_numerical(),
        message: e.to_string(),
    }
}

/// Runs the sweep on already prepared data using at most `workers` threads.
///
/// For each run seed: one tracked full-data training, whose gradient log
/// ranks the samples; then, for every `p`, a fresh model trained on the top
/// `p`% only. Failed runs are recorded and the report is marked partial.
/// The report content does not depend on `workers`.
pub fn run_sweep_prepared(
    sweep: &SweepConfig,
    data: &PreparedData,
    workers: usize,
) -> Result<ExperimentReport> {
    sweep.validate()?;
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let seeds = sweep.run_seeds();
    let run_config = |seed| TrainConfig {
        seed,
        ..sweep.train
    };

    let mut failures = Vec::new();
    let mut baselines = Vec::new();
    let mut rows = Vec::new();

    if !sweep.p_values.is_empty() {
        log::info!(
            "training {} full-data baselines on {} samples",
            seeds.len(),
            data.train.len()
        );
        let full: Vec<Result<(RunRow, ImportanceRanking)>> = pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let run = train_tracked(&run_config(seed), &data.train)?;
                    let metrics = evaluate(&run.model, &data.test, &data.scaler)?;
                    let ranking = importance_scores(&run.log)?;
                    Ok((row_from(None, seed, &metrics, &run.ledger), ranking))
                })
                .collect()
        });
        let mut ranked = Vec::new();
        for (seed, res) in seeds.iter().zip(full) {
            match res {
                Ok((row, ranking)) => {
                    baselines.push(row);
                    ranked.push((*seed, ranking));
                }
                Err(e) => failures.push(failure(None, *seed, &e)),
            }
        }

        let tasks: Vec<(f64, usize)> = sweep
            .p_values
            .iter()
            .flat_map(|&p| (0..ranked.len()).map(move |r| (p, r)))
            .collect();
        log::info!("retraining {} subsets", tasks.len());
        let subset: Vec<Result<RunRow>> = pool.install(|| {
            tasks
                .par_iter()
                .map(|&(p, r)| {
                    let (seed, ranking) = &ranked[r];
                    let selection = select_top_p(ranking, p)?;
                    let run = retrain_subset(&run_config(*seed), &data.train, &selection)?;
                    let metrics = evaluate(&run.model, &data.test, &data.scaler)?;
                    Ok(row_from(Some(p), *seed, &metrics, &run.ledger))
                })
                .collect()
        });
        for (&(p, r), res) in tasks.iter().zip(subset) {
            match res {
                Ok(row) => rows.push(row),
                Err(e) => failures.push(failure(Some(p), ranked[r].0, &e)),
            }
        }
    }

    assemble_report(
        data.train.len(),
        data.test.len(),
        seeds,
        baselines,
        rows,
        failures,
        BootstrapSettings {
            method: "percentile".into(),
            resamples: sweep.bootstrap_resamples,
            level: sweep.ci_level,
            seed: sweep.bootstrap_seed(),
        },
        serde_json::to_value(sweep)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{LstmTopology, Topology};

    fn small_sweep(p_values: Vec<f64>, n_runs: usize) -> SweepConfig {
        let mut s = SweepConfig::new(DatasetSpec::synthetic(1, 200));
        s.p_values = p_values;
        s.n_runs = n_runs;
        s.train.epochs = 2;
        s.train.batch_size = 16;
        s.train.topology = Topology::Lstm(LstmTopology::new(1, 4, 1));
        s.bootstrap_resamples = 200;
        s
    }

    #[test]
    fn full_percentage_equals_baseline() {
        let r = run_sweep(&small_sweep(vec![100.0], 1), 1).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.baselines.len(), 1);
        assert_eq!(r.rows[0].mae.to_bits(), r.baselines[0].mae.to_bits());
        assert_eq!(r.rows[0].rmse.to_bits(), r.baselines[0].rmse.to_bits());
        assert_eq!(r.best_p, Some(100.0));
        let ci = r.improvement_ci.unwrap();
        assert_eq!((ci.lo, ci.hi), (0.0, 0.0));
    }

    #[test]
    fn row_counts() {
        let r = run_sweep(&small_sweep(default_p_values(), 5), 3).unwrap();
        assert_eq!(r.rows.len(), 50);
        assert_eq!(r.baselines.len(), 5);
        assert!(!r.is_partial());
        assert_eq!(r.aggregates.len(), 10);
    }

    #[test]
    fn report_independent_of_worker_count() {
        let cfg = small_sweep(vec![30.0, 100.0], 3);
        let strip = |r: &ExperimentReport| {
            r.rows
                .iter()
                .chain(&r.baselines)
                .map(|row| (row.p, row.run_seed, row.mae.to_bits(), row.sample_visits))
                .collect::<Vec<_>>()
        };
        let a = run_sweep(&cfg, 1).unwrap();
        let b = run_sweep(&cfg, 4).unwrap();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.aggregates, b.aggregates);
        assert_eq!(a.improvement_ci, b.improvement_ci);
    }

    #[test]
    fn empty_p_list_trains_nothing() {
        let r = run_sweep(&small_sweep(vec![], 2), 1).unwrap();
        assert!(r.rows.is_empty() && r.baselines.is_empty());
        assert!(r.improvement_ci.is_none());
    }

    #[test]
    fn invalid_sweeps_rejected() {
        assert!(small_sweep(vec![20.0, 10.0], 1).validate().is_err());
        assert!(small_sweep(vec![10.0, 10.0], 1).validate().is_err());
        assert!(small_sweep(vec![0.0], 1).validate().is_err());
        assert!(small_sweep(vec![101.0], 1).validate().is_err());
        assert!(small_sweep(vec![10.0], 0).validate().is_err());
        assert!(run_sweep(&small_sweep(vec![10.0], 1), 0).is_err());
    }

    #[test]
    fn numerical_failures_mark_report_partial() {
        let mut cfg = small_sweep(vec![50.0], 2);
        cfg.train.optimizer.learning_rate = 1e308;
        let r = run_sweep(&cfg, 1).unwrap();
        assert!(r.is_partial());
        assert!(r.failures.iter().all(|f| f.numerical));
    }

    #[test]
    fn std_uses_sample_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]).1, None);
    }
}
