//! Fit the tabular induction and policy models of a descriptive vehicle and
//! check that they agree with each other and with the data.
//!
//! The plant is the simplest non-trivial one: two states, two actions, the
//! next state equals the action, and matching the action to the state pays.

use quadsim::descriptive::{consistency, fit, DEFAULT_GAMMA};
use quadsim::trace::{StateActionTrajectory, Step};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> quadsim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = 0;
    let steps: Vec<Step> = (0..200)
        .map(|_| {
            let a = rng.random_range(0..2);
            let step = Step { s, a, r: if s == a { 1.0 } else { 0.0 } };
            s = a;
            step
        })
        .collect();
    let explored = StateActionTrajectory::new(steps, 2, 2)?;

    let (induction, policy) = fit(&explored, DEFAULT_GAMMA)?;
    println!("F_A: action -> state {:?}", induction.f_map);
    println!("P_R: state -> action {:?}", policy.p_map);

    // score the models on the policy they recommend
    let on_policy = StateActionTrajectory::new(vec![Step { s: 1, a: 1, r: 1.0 }; 20], 2, 2)?;
    println!("on policy:\n{}", consistency(&induction, &policy, &on_policy, 0.0, 0.0)?);
    println!("exploration data:\n{}", consistency(&induction, &policy, &explored, 0.0, 0.0)?);
    Ok(())
}
