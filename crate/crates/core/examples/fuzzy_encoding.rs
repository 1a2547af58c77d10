//! Fuzzy encoding of a continuous signal: fuzzify, train the transition
//! matrix on soft state labels, and decode predictions back to real values.

use std::path::PathBuf;

use quadsim::fuzzy::{fem_predict, fuzzify, normalize, AssignmentRule, FamilyKind, FamilySpec, FemBundle};
use quadsim::markov::ZeroRowPolicy;
use quadsim::trace::{load_trace, TraceFormat};

fn main() -> quadsim::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/ar1.csv");
    let trace = load_trace(&path, TraceFormat::Csv)?;
    let spec = FamilySpec::new(FamilyKind::Triangular, 8, (-1.5, 11.5));
    let (bundle, family) = FemBundle::train(&trace, spec, AssignmentRule::Argmax, ZeroRowPolicy::SelfLoop)?;

    println!("centroids {:.3?}", family.centroids());
    let x = 4.2;
    let k = fuzzify(x, &family);
    println!("memberships of {x}: {:.3?}", k.values());
    println!("fuzzy probabilities:  {:.3?}", normalize(&k)?.values());

    println!("{:>6} {:>9} {:>9} {:>9}", "x", "1 step", "5 steps", "50 steps");
    for x in [0.0, 2.5, 5.0, 7.5, 10.0] {
        let p = |n| fem_predict(x, &family, &bundle.transition, n);
        println!("{x:>6.1} {:>9.3} {:>9.3} {:>9.3}", p(1)?, p(5)?, p(50)?);
    }
    Ok(())
}
