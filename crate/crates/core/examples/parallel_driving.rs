//! Closed-loop run of the corridor with real and virtual vehicles, followed
//! by a feedback refit of the agents on what the real vehicles did.
//!
//! The agents start out trained on a cruise regime (every light green), then
//! the corridor's signals force speed changes they have not seen.

use std::path::PathBuf;

use quadsim::world::{check_log, feedback_update, Scenario, World};

fn main() -> quadsim::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let cruise = Scenario::load(&data.join("cruise.json"))?;
    let corridor = Scenario::load(&data.join("corridor.json"))?;
    let seed = 2024;

    let trained = World::new(cruise, seed)?;
    let models = trained.descriptive_models();
    let bundles = trained.fem_bundles();

    let mut world = World::new(corridor.clone(), seed)?;
    for _ in 0..600 {
        world.step()?;
    }
    let log = world.into_log();
    check_log(&corridor, &log)?;

    let summary = log.summary(&corridor.fleet);
    println!("config {}", &summary.config_hash[..16]);
    println!("gate acceptance rate {:.3}", summary.acceptance_rate);
    if let Some(h) = summary.min_headway {
        println!("min headway {h:.2} m");
    }
    for v in &summary.vehicles {
        println!(
            "vehicle {}: {} stops, min speed {:.2} m/s, energy {:.1}, {} fallback ticks",
            v.vehicle, v.stops, v.min_speed, v.energy_proxy, v.fallback_ticks
        );
    }

    let fb = feedback_update(&corridor, &log, &models, &bundles)?;
    println!("one-step power RMSE: {:.4} kW before refit, {:.4} kW after", fb.rmse_before, fb.rmse_after);
    for v in &fb.vehicles {
        let (b, a) = (&v.consistency_before, &v.consistency_after);
        println!(
            "vehicle {}: d_state {:.3} -> {:.3}, d_action {:.3} -> {:.3}, violations {} -> {}",
            v.vehicle,
            b.d_state,
            a.d_state,
            b.d_action,
            a.d_action,
            b.violations(),
            a.violations()
        );
    }
    Ok(())
}
