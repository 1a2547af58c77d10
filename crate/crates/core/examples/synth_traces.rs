//! Generate a seeded synthetic trace and save it as CSV or JSON.
//!
//! ```text
//! cargo run --example synth_traces -- drive_cycle_like --seed 42 --length 3000 --out dc.csv
//! cargo run --example synth_traces -- ar1 --param phi=0.95 --param sigma=0.5 --param mean=5 --out ar1.csv
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;
use quadsim::trace::{save_trace, synth_trace, SynthKind, TraceFormat};

#[derive(Parser)]
struct Args {
    /// constant, sine, ar1 or drive_cycle_like
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    length: usize,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Generator parameter as key=value; repeatable.
    #[arg(long = "param", value_parser = parse_kv)]
    params: Vec<(String, f64)>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((k.to_string(), v.parse().map_err(|e| format!("{k}: {e}"))?))
}

fn main() -> quadsim::Result<()> {
    let args = Args::parse();
    let params: BTreeMap<String, f64> = args.params.into_iter().collect();
    let kind = SynthKind::from_params(&args.kind, &params)?;
    let trace = synth_trace(&kind, args.seed, args.length, args.dt)?;
    save_trace(&trace, &args.out, TraceFormat::from_path(&args.out))?;
    let (lo, hi) = trace.range();
    println!("{}: {} samples, dt {} s, range [{lo:.3}, {hi:.3}]", args.out.display(), trace.len(), trace.dt());
    Ok(())
}
