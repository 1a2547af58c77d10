//! Train a fuzzy-encoded Markov predictor on a power-demand trace and score
//! one-step and 10 s predictions against persistence.
//!
//! ```text
//! cargo run --example power_prediction -- [TRACE] [SETUP]
//! ```
//! Defaults to the shipped drive-cycle trace.

use std::path::PathBuf;

use quadsim::predictive::{predict_power_demand, PredictionSetup};
use quadsim::trace::{load_trace, TraceFormat};

fn main() -> quadsim::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let mut args = std::env::args().skip(1);
    let trace_path = args.next().map(PathBuf::from).unwrap_or(data.join("drive_cycle.csv"));
    let setup_path = args.next().map(PathBuf::from).unwrap_or(data.join("drive_cycle.family.json"));

    let trace = load_trace(&trace_path, TraceFormat::from_path(&trace_path))?;
    let setup: PredictionSetup = serde_json::from_str(&std::fs::read_to_string(&setup_path)?)?;
    let report = predict_power_demand(&trace, &setup)?;

    println!("{}: {} training / {} evaluation samples", report.label, report.train_samples, report.eval_samples);
    println!("{:>10} {:>12} {:>12} {:>14}", "horizon", "fem", "persistence", "fem (propag.)");
    for h in [&report.one_step, &report.horizon] {
        println!(
            "{:>9.1}s {:>12.4} {:>12.4} {:>14.4}",
            h.horizon_steps as f64 * report.dt,
            h.rmse_fem,
            h.rmse_persistence,
            h.rmse_fem_propagated
        );
    }
    Ok(())
}
