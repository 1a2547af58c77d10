//! Command-line front end. Every subcommand writes only inside `--out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::fleet::{benchmark_controller, min_headway, plan_fleet, write_plans_csv, FleetScenario, SpeedPlan};
use crate::predictive::{predict_power_demand, PredictionSetup};
use crate::trace::{load_trace, TraceFormat};
use crate::world::{self, Scenario};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "quadsim", version, about = "Parallel-driving vehicle simulation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the fuzzy Markov predictor on a trace and score it against persistence.
    Predict {
        #[arg(long)]
        trace: PathBuf,
        /// Prediction setup JSON: family, split and horizon.
        #[arg(long)]
        family: PathBuf,
        /// Long-prediction horizon in seconds; overrides the setup file.
        #[arg(long)]
        horizon: Option<f64>,
        /// Training fraction; overrides the setup file.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan speed profiles for a corridor scenario.
    Fleet {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = FleetMode::Both)]
        mode: FleetMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed-loop simulation and write its log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 600)]
        ticks: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FleetMode {
    Mpc,
    Benchmark,
    Both,
}

/// Runs a parsed command and maps the outcome to the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Predict {
            trace,
            family,
            horizon,
            split,
            out,
        } => cmd_predict(&trace, &family, horizon, split, &out),
        Command::Fleet { scenario, mode, out } => cmd_fleet(&scenario, mode, &out),
        Command::Run {
            scenario,
            ticks,
            seed,
            out,
        } => cmd_run(&scenario, ticks, seed, &out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut f = create(out, name)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn cmd_predict(
    trace_path: &Path,
    family: &Path,
    horizon: Option<f64>,
    split: Option<f64>,
    out: &Path,
) -> Result<i32> {
    let trace = load_trace(trace_path, TraceFormat::from_path(trace_path))?;
    let text = fs::read_to_string(family).map_err(|e| Error::parse(family, e.to_string()))?;
    let mut setup: PredictionSetup = serde_json::from_str(&text).map_err(|e| Error::parse(family, e.to_string()))?;
    if let Some(h) = horizon {
        setup.horizon_seconds = h;
    }
    if let Some(s) = split {
        setup.split = s;
    }
    let report = predict_power_demand(&trace, &setup)?;
    fs::create_dir_all(out)?;
    write_json(out, "predict_report.json", &report)?;
    report.one_step.write_csv(&out.join("one_step.csv"))?;
    report.horizon.write_csv(&out.join("horizon.csv"))?;
    for h in [&report.one_step, &report.horizon] {
        println!(
            "horizon {} s: FEM RMSE {}, persistence RMSE {}",
            h.horizon_steps as f64 * report.dt,
            h.rmse_fem,
            h.rmse_persistence
        );
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct ModeVehicle {
    vehicle: usize,
    stops: usize,
    min_speed: f64,
    energy_proxy: f64,
    crossings: Vec<Option<f64>>,
    fallback: bool,
}

#[derive(Debug, Serialize)]
struct ModeSummary {
    min_headway: Option<f64>,
    vehicles: Vec<ModeVehicle>,
}

fn mode_summary(scn: &FleetScenario, plans: &[SpeedPlan]) -> ModeSummary {
    ModeSummary {
        min_headway: min_headway(scn, plans),
        vehicles: plans
            .iter()
            .map(|p| ModeVehicle {
                vehicle: p.vehicle,
                stops: p.stop_count(),
                min_speed: p.min_speed(),
                energy_proxy: p.energy_proxy(),
                crossings: p.crossings.clone(),
                fallback: p.fallback,
            })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
struct Comparison {
    mpc: ModeSummary,
    benchmark: ModeSummary,
}

pub fn cmd_fleet(scenario: &Path, mode: FleetMode, out: &Path) -> Result<i32> {
    let scn = FleetScenario::load(scenario)?;
    fs::create_dir_all(out)?;
    let mut code = 0;
    let mpc = if mode != FleetMode::Benchmark {
        let plans = plan_fleet(&scn)?;
        let mut f = create(out, "mpc.csv")?;
        write_plans_csv(&plans, &mut f)?;
        f.flush()?;
        let flagged: Vec<usize> = plans.iter().filter(|p| p.fallback).map(|p| p.vehicle).collect();
        if !flagged.is_empty() {
            eprintln!("no feasible no-stop plan for vehicles {flagged:?}; benchmark fallback used");
            code = Error::Infeasible {
                vehicle: flagged[0],
                reason: String::new(),
            }
            .exit_code();
        }
        Some(plans)
    } else {
        None
    };
    let bench = if mode != FleetMode::Mpc {
        let plans = benchmark_controller(&scn);
        let mut f = create(out, "benchmark.csv")?;
        write_plans_csv(&plans, &mut f)?;
        f.flush()?;
        Some(plans)
    } else {
        None
    };
    for (name, plans) in [("mpc", &mpc), ("benchmark", &bench)] {
        if let Some(plans) = plans {
            let stops: Vec<usize> = plans.iter().map(|p| p.stop_count()).collect();
            println!("{name}: stops per vehicle {stops:?}");
        }
    }
    if let (Some(m), Some(b)) = (&mpc, &bench) {
        let cmp = Comparison {
            mpc: mode_summary(&scn, m),
            benchmark: mode_summary(&scn, b),
        };
        write_json(out, "comparison.json", &cmp)?;
    }
    Ok(code)
}

pub fn cmd_run(scenario: &Path, ticks: u64, seed: u64, out: &Path) -> Result<i32> {
    let scn = Scenario::load(scenario)?;
    let log = world::run(&scn, ticks, seed)?;
    fs::create_dir_all(out)?;
    let mut f = create(out, "log.jsonl")?;
    log.write_jsonl(&mut f)?;
    f.flush()?;
    let summary = log.summary(&scn.fleet);
    write_json(out, "summary.json", &summary)?;
    println!("gate acceptance rate {:.4}", summary.acceptance_rate);
    for v in &summary.vehicles {
        println!("vehicle {}: {} stops", v.vehicle, v.stops);
    }
    Ok(0)
}
