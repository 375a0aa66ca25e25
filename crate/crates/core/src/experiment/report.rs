use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    assemble_report, svg, Aggregate, BootstrapSettings, ExperimentReport, ImprovementCi,
    RunFailure, RunRow,
};
use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

pub const RESULTS_FILE: &str = "results.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CURVES_FILE: &str = "curves.svg";
pub const TABLE_FILE: &str = "table.md";

const RESULTS_HEADER: [&str; 6] = [
    "p",
    "run_seed",
    "mae",
    "rmse",
    "sample_visits",
    "param_updates",
];
const BASELINE_LABEL: &str = "full";

/// Contents of `summary.json`. Holds only deterministic quantities; measured
/// wall times live in `timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub run_seeds: Vec<u64>,
    pub baseline: Option<Aggregate>,
    pub aggregates: Vec<Aggregate>,
    pub best_p: Option<f64>,
    pub improvement_ci: Option<ImprovementCi>,
    pub bootstrap: BootstrapSettings,
    pub partial: bool,
    pub failures: Vec<RunFailure>,
    pub config: serde_json::Value,
}

impl ExperimentReport {
    pub fn summary(&self) -> Summary {
        Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            n_train: self.n_train,
            n_test: self.n_test,
            run_seeds: self.run_seeds.clone(),
            baseline: self.baseline.clone(),
            aggregates: self.aggregates.clone(),
            best_p: self.best_p,
            improvement_ci: self.improvement_ci.clone(),
            bootstrap: self.bootstrap.clone(),
            partial: self.is_partial(),
            failures: self.failures.clone(),
            config: self.config.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub results: PathBuf,
    pub timings: PathBuf,
    pub summary: PathBuf,
    pub table: PathBuf,
    /// Absent when there is nothing to plot.
    pub curves: Option<PathBuf>,
}

fn p_label(p: Option<f64>) -> String {
    p.map_or_else(|| BASELINE_LABEL.to_string(), |p| p.to_string())
}

fn parse_p(s: &str) -> Result<Option<f64>> {
    if s == BASELINE_LABEL {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("bad p value `{s}`")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn results_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for r in report.baselines.iter().chain(&report.rows) {
        w.write_record([
            p_label(r.p),
            r.run_seed.to_string(),
            r.mae.to_string(),
            r.rmse.to_string(),
            r.sample_visits.to_string(),
            r.param_updates.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<results.csv>", e.into_error()))
}

fn timings_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p", "run_seed", "wall_time_s"])?;
    for r in report.baselines.iter().chain(&report.rows) {
        w.write_record([
            p_label(r.p),
            r.run_seed.to_string(),
            r.wall_time_s.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<timings.csv>", e.into_error()))
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

fn table_md(report: &ExperimentReport) -> String {
    let mut s = String::from("# Sample importance sweep\n\n");
    match &report.baseline {
        Some(b) => s.push_str(&format!(
            "Full model: MAE {:.4} ± {} over {} run(s), {} training samples.\n\n",
            b.mean_mae,
            fmt_opt(b.std_mae, 4),
            b.n_runs,
            report.n_train
        )),
        None => s.push_str("No full-model baseline completed.\n\n"),
    }
    s.push_str(
        "| Dataset Size (Samples) | Percentage of Samples Used (%) | Samples Used | Mean MAE | \
         MAE Improvement | MAE Improvement (%) | Training Time Improvement (seconds) | \
         Training Time Improvement (%) |\n",
    );
    s.push_str("|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    let base_mae = report.baseline.as_ref().map(|b| b.mean_mae);
    let base_time = report.mean_wall_time(None);
    for a in &report.aggregates {
        let d_mae = base_mae.map(|b| b - a.mean_mae);
        let d_mae_pct = base_mae
            .filter(|b| *b != 0.0)
            .map(|b| 100.0 * (b - a.mean_mae) / b);
        let t = report.mean_wall_time(a.p);
        let d_t = base_time.zip(t).map(|(b, t)| b - t);
        let d_t_pct = base_time
            .zip(t)
            .filter(|(b, _)| *b > 0.0)
            .map(|(b, t)| 100.0 * (b - t) / b);
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} | {} | {} | {} | {} |\n",
            report.n_train,
            p_label(a.p),
            a.k,
            a.mean_mae,
            fmt_opt(d_mae, 4),
            fmt_opt(d_mae_pct, 2),
            fmt_opt(d_t, 3),
            fmt_opt(d_t_pct, 2),
        ));
    }
    s.push('\n');
    match report.best_p {
        Some(p) => s.push_str(&format!(
            "Smallest percentage matching the full model's mean MAE: {p}%.\n"
        )),
        None => s.push_str("No percentage matched the full model's mean MAE.\n"),
    }
    if let Some(ci) = &report.improvement_ci {
        s.push_str(&format!(
            "MAE improvement at {}%: {:.4}, {:.0}% {} bootstrap CI [{:.4}, {:.4}] ({} paired runs).\n",
            ci.p,
            ci.mean_improvement,
            report.bootstrap.level * 100.0,
            report.bootstrap.method,
            ci.lo,
            ci.hi,
            ci.n_pairs
        ));
    }
    if report.is_partial() {
        s.push_str(&format!(
            "\n**Partial report:** {} run(s) failed.\n",
            report.failures.len()
        ));
    }
    s
}

/// Writes `results.csv`, `timings.csv`, `summary.json`, `table.md` and, when
/// any subset was evaluated, `curves.svg` into `out_dir`.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<EmittedFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = EmittedFiles {
        results: out_dir.join(RESULTS_FILE),
        timings: out_dir.join(TIMINGS_FILE),
        summary: out_dir.join(SUMMARY_FILE),
        table: out_dir.join(TABLE_FILE),
        curves: (!report.aggregates.is_empty()).then(|| out_dir.join(CURVES_FILE)),
    };
    write_file(&files.results, &results_csv(report)?)?;
    write_file(&files.timings, &timings_csv(report)?)?;
    let mut json = serde_json::to_vec_pretty(&report.summary())?;
    json.push(b'\n');
    write_file(&files.summary, &json)?;
    write_file(&files.table, table_md(report).as_bytes())?;
    let curves = out_dir.join(CURVES_FILE);
    match &files.curves {
        Some(path) => write_file(path, svg::mae_curve(report).as_bytes())?,
        None if curves.exists() => fs::remove_file(&curves).map_err(|e| Error::io(&curves, e))?,
        None => {}
    }
    Ok(files)
}

/// Reads `results.csv`; wall times are taken from a sibling `timings.csv`
/// when present and left at zero otherwise.
pub fn read_results_csv(path: &Path) -> Result<(Vec<RunRow>, Vec<RunRow>)> {
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()?.iter().ne(RESULTS_HEADER) {
        return Err(Error::Data(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let num = |s: &str| -> Result<u64> {
        s.parse()
            .map_err(|_| Error::Data(format!("bad integer `{s}` in {}", path.display())))
    };
    let real = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Data(format!("bad number `{s}` in {}", path.display())))
    };
    let mut all = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        all.push(RunRow {
            p: parse_p(&rec[0])?,
            run_seed: num(&rec[1])?,
            mae: real(&rec[2])?,
            rmse: real(&rec[3])?,
            wall_time_s: 0.0,
            sample_visits: num(&rec[4])?,
            param_updates: num(&rec[5])?,
        });
    }
    let timings = path.with_file_name(TIMINGS_FILE);
    if timings.exists() {
        let mut reader = csv::Reader::from_path(&timings)?;
        for rec in reader.records() {
            let rec = rec?;
            let p = parse_p(&rec[0])?;
            let seed = num(&rec[1])?;
            let t = real(&rec[2])?;
            if let Some(row) = all.iter_mut().find(|r| r.p == p && r.run_seed == seed) {
                row.wall_time_s = t;
            }
        }
    }
    Ok(all.into_iter().partition(|r| r.p.is_none()))
}

/// Rebuilds a report from the files of an earlier [`emit_report`].
pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let summary_path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let summary: Summary = serde_json::from_str(&text)?;
    if summary.schema_version != SUMMARY_SCHEMA_VERSION {
        return Err(Error::Data(format!(
            "unsupported summary schema {}",
            summary.schema_version
        )));
    }
    let (baselines, rows) = read_results_csv(&dir.join(RESULTS_FILE))?;
    assemble_report(
        summary.n_train,
        summary.n_test,
        summary.run_seeds,
        baselines,
        rows,
        summary.failures,
        summary.bootstrap,
        summary.config,
    )
}
