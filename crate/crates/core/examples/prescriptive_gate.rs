//! A prescriptive vehicle picks an action, and the gate decides whether the
//! real vehicle may execute it: the descriptive models must map it back onto
//! itself and the kinematic safety predicates must hold.

use quadsim::descriptive::fit;
use quadsim::prescriptive::{calibrate, gate, select_action, CandidateActionSet, GateModels, SafetyContext};
use quadsim::trace::{CrispStateSpace, StateActionTrajectory, Step};

fn main() -> quadsim::Result<()> {
    // five acceleration levels; the state is the level last applied
    let actions = CrispStateSpace::uniform(5, (-2.0, 2.0))?;
    let steps: Vec<Step> = [0, 1, 2, 3, 4, 3, 2, 1, 2, 3, 2, 2]
        .windows(2)
        .map(|w| Step { s: w[0], a: w[1], r: -(actions.levels()[w[1]]).abs() })
        .collect();
    let traj = StateActionTrajectory::new(steps, 5, 5)?;
    let (induction, mut policy) = fit(&traj, 0.5)?;
    let cal = calibrate(&traj, &induction, &policy, 0.0, 20)?;
    println!("calibration: {} -> {} violations in {} sweeps", cal.initial_violations, cal.violations, cal.iterations);
    policy.p_map = cal.p_map;

    let safety = SafetyContext {
        position: 0.0,
        speed: 10.0,
        dt: 0.5,
        v_max: 15.0,
        a_min: -3.0,
        a_max: 2.0,
        d_min: 8.0,
        leader: Some((10.4, 8.0)),
        lookahead_steps: 2,
    };
    let target = 9.5;
    let cands = CandidateActionSet::new(actions.levels().to_vec(), (-3.0, 2.0), (safety.speed, target))?;
    let pick = select_action(&cands, |&(v, target), a| -(v + a * safety.dt - target).abs());
    println!("chosen acceleration {}", cands.candidates()[pick]);

    let models = GateModels { policy: &policy, induction: &induction, actions: &actions };
    for &a in actions.levels() {
        let d = gate(a, &models, 1.0, &safety)?;
        let reasons: Vec<String> = d.reasons.iter().map(|r| r.to_string()).collect();
        println!(
            "a = {a:>4.1}: {} (residual {:.1}) {}",
            if d.accepted { "accept" } else { "reject" },
            d.stage2_residual,
            reasons.join(", ")
        );
    }
    Ok(())
}
