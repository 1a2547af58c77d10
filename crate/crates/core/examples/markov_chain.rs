//! Quantize a trace onto crisp levels, estimate the transition matrix by
//! maximum likelihood, and push a distribution forward in time.

use std::path::PathBuf;

use quadsim::markov::{count_transitions, estimate, propagate, stationary, StateDistribution, ZeroRowPolicy};
use quadsim::trace::{load_trace, quantize, CrispStateSpace, TraceFormat};

fn main() -> quadsim::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/ar1.csv");
    let trace = load_trace(&path, TraceFormat::Csv)?;
    let space = CrispStateSpace::uniform(5, trace.range())?;
    let states = quantize(&trace, &space);

    let counts = count_transitions(&states, space.len())?;
    let pi = estimate(&counts, ZeroRowPolicy::SelfLoop);
    println!("levels {:.3?}", space.levels());
    println!("transition matrix ({} transitions):", counts.total());
    for row in pi.rows() {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        println!("  [{}]", cells.join(" "));
    }

    let start = StateDistribution::point(space.len(), states[0]);
    for n in [1, 5, 20] {
        println!("p after {n:>2} steps: {:.3?}", propagate(&start, &pi, n)?.probs());
    }
    println!("stationary:        {:.3?}", stationary(&pi, 1e-12, 100_000)?.probs());
    Ok(())
}
