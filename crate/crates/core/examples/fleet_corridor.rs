//! No-stop speed planning for a platoon on a two-signal corridor, compared
//! with a controller that stops at red lights.
//!
//! ```text
//! cargo run --release --example fleet_corridor -- [SCENARIO] [OUT_DIR]
//! ```
//! With an output directory, both plan sets are written as CSV.

use std::path::PathBuf;

use quadsim::fleet::{benchmark_controller, min_headway, plan_fleet, write_plans_csv, FleetScenario, SpeedPlan};

fn report(name: &str, scn: &FleetScenario, plans: &[SpeedPlan]) {
    println!("{name}");
    for p in plans {
        let crossings: Vec<String> = p.crossings.iter().map(|c| c.map_or("-".into(), |t| format!("{t:.1}"))).collect();
        println!(
            "  vehicle {}: stops {}, min speed {:5.2}, energy {:6.1}, crossings at [{}]{}",
            p.vehicle,
            p.stop_count(),
            p.min_speed(),
            p.energy_proxy(),
            crossings.join(", "),
            if p.fallback { " (fallback)" } else { "" }
        );
    }
    if let Some(h) = min_headway(scn, plans) {
        println!("  min headway {h:.2} m");
    }
}

fn main() -> quadsim::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/corridor.json"));
    let scn = FleetScenario::load(&path)?;

    let mpc = plan_fleet(&scn)?;
    let bench = benchmark_controller(&scn);
    report("receding-horizon plan", &scn, &mpc);
    report("stop-at-red benchmark", &scn, &bench);

    if let Some(out) = args.next().map(PathBuf::from) {
        std::fs::create_dir_all(&out)?;
        write_plans_csv(&mpc, &mut std::fs::File::create(out.join("mpc.csv"))?)?;
        write_plans_csv(&bench, &mut std::fs::File::create(out.join("benchmark.csv"))?)?;
    }
    Ok(())
}
