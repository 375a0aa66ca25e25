//! Default sweep on a 5000-point synthetic series, printed as a table.
//!
//! `cargo run --release -p sampimp-core --example desk_sweep [workers]`

use sampimp_core::experiment::{run_sweep, DatasetSpec, SweepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workers = std::env::args()
        .nth(1)
        .map(|w| w.parse())
        .transpose()?
        .unwrap_or(4);
    let sweep = SweepConfig::new(DatasetSpec::synthetic(2024, 5000));
    let report = run_sweep(&sweep, workers)?;
    let base = report.baseline.as_ref().expect("baseline");
    println!(
        "full: mae {:.4} ± {:.4}  time {:.2}s",
        base.mean_mae,
        base.std_mae.unwrap_or(0.0),
        report.mean_wall_time(None).unwrap_or(0.0)
    );
    for a in &report.aggregates {
        println!(
            "p={:>5}: mae {:.4} ± {:.4}  time {:.2}s",
            a.p.unwrap_or(100.0),
            a.mean_mae,
            a.std_mae.unwrap_or(0.0),
            report.mean_wall_time(a.p).unwrap_or(0.0)
        );
    }
    println!(
        "best p: {:?}  ci: {:?}",
        report.best_p, report.improvement_ci
    );
    Ok(())
}
