//! `sampimp`: synthesize series, rank training samples by gradient-norm
//! importance, run p-sweeps and render reports.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sampimp_core::data::{synth_series, SynthProfile};
use sampimp_core::experiment::{emit_report, load_report, run_seeds, run_sweep_prepared};
use sampimp_core::importance::importance_scores;
use sampimp_core::training::{save_checkpoint, train_tracked, TrainConfig};

use config::{RunSpec, Settings};

/// Process exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
    Partial(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Partial(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Partial(m) => write!(f, "partial completion: {m}"),
        }
    }
}

impl From<sampimp_core::Error> for CliError {
    fn from(e: sampimp_core::Error) -> Self {
        use sampimp_core::Error as E;
        match e {
            E::Config(_) | E::InvalidTopology(_) | E::InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
            E::NonFinite(_) | E::NumericalFailure { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sampimp",
    version,
    about = "Gradient-norm sample importance for time-series training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic traffic-like series as `timestamp,value` CSV.
    Synth(SynthArgs),
    /// Train once on all samples and write the importance ranking and the
    /// gradient-norm matrix.
    Rank(RunArgs),
    /// Run the full p-sweep and write the report files.
    Sweep(RunArgs),
    /// Re-render summary, table and chart from an existing results directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    length: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    base: Option<f64>,
    #[arg(long)]
    daily_amplitude: Option<f64>,
    #[arg(long)]
    daily_period: Option<f64>,
    #[arg(long)]
    weekly_depth: Option<f64>,
    #[arg(long)]
    weekly_period: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    spike_rate: Option<f64>,
    #[arg(long)]
    spike_magnitude: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON object of dotted keys, or a `summary.json` from an earlier sweep.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (`output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent training tasks; does not change results.
    #[arg(long)]
    workers: Option<u64>,
    /// Comma-separated percentages (`sweep.p_values`).
    #[arg(long)]
    p_values: Option<String>,
    /// Runs per percentage (`sweep.runs`).
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    /// Any other key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `results.csv` and `summary.json`.
    dir: PathBuf,
    /// Where to write the re-rendered files (defaults to `dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunSpec, CliError> {
        let mut settings = Settings::default();
        if let Some(path) = &self.config {
            settings.load_file(path)?;
        }
        settings.apply_env()?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            settings.set_raw(k.trim(), v.trim())?;
        }
        if let Some(out) = &self.out {
            settings.set("output.dir", out.to_string_lossy().into_owned().into())?;
        }
        if let Some(w) = self.workers {
            settings.set("workers", w.into())?;
        }
        if let Some(p) = &self.p_values {
            settings.set_raw("sweep.p_values", p)?;
        }
        if let Some(r) = self.runs {
            settings.set("sweep.runs", r.into())?;
        }
        if let Some(s) = self.master_seed {
            settings.set("sweep.master_seed", s.into())?;
        }
        if let Some(e) = self.epochs {
            settings.set("train.epochs", e.into())?;
        }
        RunSpec::resolve(&settings)
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let d = SynthProfile::default();
    let profile = SynthProfile {
        base: args.base.unwrap_or(d.base),
        daily_amplitude: args.daily_amplitude.unwrap_or(d.daily_amplitude),
        daily_period: args.daily_period.unwrap_or(d.daily_period),
        weekly_depth: args.weekly_depth.unwrap_or(d.weekly_depth),
        weekly_period: args.weekly_period.unwrap_or(d.weekly_period),
        noise_std: args.noise_std.unwrap_or(d.noise_std),
        spike_rate: args.spike_rate.unwrap_or(d.spike_rate),
        spike_magnitude: args.spike_magnitude.unwrap_or(d.spike_magnitude),
        ..d
    };
    let length =
        usize::try_from(args.length).map_err(|_| CliError::Config("length too large".into()))?;
    let series = synth_series(args.seed, length, &profile)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    series.write_csv(&args.out)?;
    log::info!("wrote {} points to {}", series.len(), args.out.display());
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn cmd_rank(args: &RunArgs) -> Result<(), CliError> {
    let spec = args.resolve()?;
    let data = spec.sweep.dataset.load()?;
    let seed = run_seeds(spec.sweep.master_seed, 1)[0];
    let config = TrainConfig {
        seed,
        ..spec.sweep.train
    };
    let run = train_tracked(&config, &data.train)?;
    let ranking = importance_scores(&run.log)?;

    create_out_dir(&spec.out_dir)?;
    ranking.write_csv(&spec.out_dir.join("ranking.csv"))?;
    run.log
        .write_csv(&spec.out_dir.join("gradient_norms.csv"))?;
    let bin = spec.out_dir.join("gradient_norms.bin");
    let file = std::fs::File::create(&bin)
        .map_err(|e| CliError::Data(format!("{}: {e}", bin.display())))?;
    run.log
        .write_binary(std::io::BufWriter::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", bin.display())))?;
    save_checkpoint(&spec.out_dir.join("model.ckpt"), &run.model, &config)?;
    log::info!(
        "ranked {} samples over {} epochs into {}",
        ranking.len(),
        run.log.epochs_completed(),
        spec.out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<(), CliError> {
    let spec = args.resolve()?;
    let data = spec.sweep.dataset.load()?;
    log::info!(
        "{} training / {} test samples, {} worker(s)",
        data.train.len(),
        data.test.len(),
        spec.workers
    );
    let mut report = run_sweep_prepared(&spec.sweep, &data, spec.workers)?;
    report.config = spec.echo_value();
    emit_report(&report, &spec.out_dir)?;
    log::info!("report written to {}", spec.out_dir.display());

    if report.is_partial() {
        let completed = report.rows.len() + report.baselines.len();
        let msg = format!("{} task(s) failed", report.failures.len());
        if completed == 0 && report.failures.iter().any(|f| f.numerical) {
            return Err(CliError::Numeric(msg));
        }
        return Err(CliError::Partial(msg));
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let report = load_report(&args.dir)?;
    let out = args.out.as_ref().unwrap_or(&args.dir);
    emit_report(&report, out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sampimp: {e}");
            ExitCode::from(e.code())
        }
    }
}
