//! Prescriptive vehicle: picks the reward-maximizing candidate action, then
//! decides whether it may reach the real vehicle.
//!
//! The second stage checks that the real-vehicle policy, applied to the
//! state the induction model predicts for the action, gives the action back
//! (within `ε`), and that a set of kinematic safety predicates holds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::descriptive::{index_distance, InductionModel, PolicyModel};
use crate::error::{Error, Result};
use crate::trace::{CrispStateSpace, StateActionTrajectory};

/// Candidate accelerations (m/s²) together with the observation context
/// the reward function reads.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateActionSet<C> {
    candidates: Vec<f64>,
    pub context: C,
}

impl<C> CandidateActionSet<C> {
    pub fn new(candidates: Vec<f64>, bounds: (f64, f64), context: C) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("candidate set is empty".into()));
        }
        if let Some(a) = candidates.iter().find(|a| !(bounds.0..=bounds.1).contains(*a)) {
            return Err(Error::Invariant(format!(
                "candidate {a} outside actuator bounds [{}, {}]",
                bounds.0, bounds.1
            )));
        }
        Ok(CandidateActionSet { candidates, context })
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }
}

/// Index of the candidate with the largest reward, ties to the lowest index.
pub fn select_action<C>(cands: &CandidateActionSet<C>, reward: impl Fn(&C, f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_r = f64::NEG_INFINITY;
    for (k, &a) in cands.candidates.iter().enumerate() {
        let r = reward(&cands.context, a);
        if r > best_r {
            best = k;
            best_r = r;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateReason {
    #[serde(rename = "policy residual")]
    PolicyResidual,
    #[serde(rename = "speed")]
    Speed,
    #[serde(rename = "accel")]
    Accel,
    #[serde(rename = "headway")]
    Headway,
}

impl fmt::Display for GateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateReason::PolicyResidual => "policy residual",
            GateReason::Speed => "speed",
            GateReason::Accel => "accel",
            GateReason::Headway => "headway",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub action: f64,
    pub accepted: bool,
    pub reasons: Vec<GateReason>,
    pub stage2_residual: f64,
    pub threshold: f64,
}

/// Kinematic snapshot the safety predicates are evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyContext {
    pub position: f64,
    pub speed: f64,
    pub dt: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub d_min: f64,
    /// Leader `(position, speed)`, projected forward at constant speed.
    pub leader: Option<(f64, f64)>,
    pub lookahead_steps: usize,
}

impl SafetyContext {
    /// Smallest gap to the leader over the lookahead when `accel` is held.
    pub fn projected_headway(&self, accel: f64) -> Option<f64> {
        let (mut lp, lv) = self.leader?;
        let (mut p, mut v) = (self.position, self.speed);
        let mut gap = lp - p;
        for _ in 0..self.lookahead_steps.max(1) {
            p += v * self.dt;
            v = (v + accel * self.dt).clamp(0.0, self.v_max);
            lp += lv * self.dt;
            gap = gap.min(lp - p);
        }
        Some(gap)
    }

    fn violations(&self, accel: f64) -> Vec<GateReason> {
        const TOL: f64 = 1e-9;
        let mut out = Vec::new();
        let next = self.speed + accel * self.dt;
        if next < -TOL || next > self.v_max + TOL {
            out.push(GateReason::Speed);
        }
        if accel < self.a_min - TOL || accel > self.a_max + TOL {
            out.push(GateReason::Accel);
        }
        if self.projected_headway(accel).is_some_and(|g| g < self.d_min) {
            out.push(GateReason::Headway);
        }
        out
    }
}

/// Tabular models and grids shared by the gate and calibration.
#[derive(Debug, Clone, Copy)]
pub struct GateModels<'a> {
    pub policy: &'a PolicyModel,
    pub induction: &'a InductionModel,
    /// Accelerations indexed by action id.
    pub actions: &'a CrispStateSpace,
}

impl GateModels<'_> {
    fn check(&self) -> Result<()> {
        let (p, f) = (self.policy, self.induction);
        if p.n_states() != f.n_states() {
            return Err(Error::Vocabulary(format!(
                "policy has {} states, induction model {}",
                p.n_states(),
                f.n_states()
            )));
        }
        if p.n_actions() != self.actions.len() || f.n_actions() != self.actions.len() {
            return Err(Error::Vocabulary(format!(
                "action grid has {} levels, policy {} and induction model {}",
                self.actions.len(),
                p.n_actions(),
                f.n_actions()
            )));
        }
        Ok(())
    }

    /// `|a − P_R(F_A(a))|` in acceleration units; infinite when either model
    /// has no image.
    pub fn residual(&self, accel: f64) -> f64 {
        let idx = self.actions.nearest(accel);
        match self.induction.apply(idx).and_then(|s| self.policy.apply(s)) {
            Some(back) => (accel - self.actions.levels()[back]).abs(),
            None => f64::INFINITY,
        }
    }
}

pub fn gate(accel: f64, models: &GateModels<'_>, epsilon: f64, safety: &SafetyContext) -> Result<GateDecision> {
    models.check()?;
    let residual = models.residual(accel);
    let mut reasons = Vec::new();
    if !(residual <= epsilon) {
        reasons.push(GateReason::PolicyResidual);
    }
    reasons.extend(safety.violations(accel));
    Ok(GateDecision {
        action: accel,
        accepted: reasons.is_empty(),
        reasons,
        stage2_residual: residual,
        threshold: epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub p_map: Vec<Option<usize>>,
    pub initial_d_f: f64,
    pub d_f: f64,
    pub initial_violations: usize,
    pub violations: usize,
    pub iterations: usize,
    pub updates: usize,
    /// Violation count after each sweep.
    pub history: Vec<usize>,
}

fn policy_objective(
    traj: &StateActionTrajectory,
    induction: &InductionModel,
    p_map: &[Option<usize>],
    epsilon: f64,
) -> (usize, f64) {
    let steps = traj.steps();
    let m = steps.len() - 1;
    let na = traj.n_actions();
    let mut violations = 0;
    let mut total = 0.0;
    for st in &steps[..m] {
        let back = induction.apply(st.a).and_then(|s| p_map[s]);
        let r = index_distance(st.a, back, na);
        total += r;
        if r > epsilon {
            violations += 1;
        }
    }
    (violations, total / m as f64)
}

/// Coordinate descent on a tabular real-vehicle policy: each sweep visits
/// every state and applies the single-cell change that most improves
/// `(violations, mean residual)`. Residuals are action-index distances.
pub fn calibrate(
    traj: &StateActionTrajectory,
    induction: &InductionModel,
    initial: &PolicyModel,
    epsilon: f64,
    max_iters: usize,
) -> Result<Calibration> {
    if induction.n_actions() != traj.n_actions() || initial.n_states() != traj.n_states() {
        return Err(Error::Vocabulary("trajectory and models disagree on vocabulary".into()));
    }
    let mut p_map = initial.p_map.clone();
    let start = policy_objective(traj, induction, &p_map, epsilon);
    let mut current = start;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut updates = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        for s in 0..p_map.len() {
            let mut best = (current, p_map[s]);
            for a in 0..traj.n_actions() {
                if p_map[s] == Some(a) {
                    continue;
                }
                let old = p_map[s].replace(a);
                let obj = policy_objective(traj, induction, &p_map, epsilon);
                p_map[s] = old;
                if obj < best.0 {
                    best = (obj, Some(a));
                }
            }
            if best.1 != p_map[s] {
                p_map[s] = best.1;
                current = best.0;
                updates += 1;
                changed = true;
            }
        }
        history.push(current.0);
        if !changed {
            break;
        }
    }
    Ok(Calibration {
        p_map,
        initial_d_f: start.1,
        d_f: current.1,
        initial_violations: start.0,
        violations: current.0,
        iterations,
        updates,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptive;
    use crate::trace::Step;

    fn identity_models(n: usize) -> (InductionModel, PolicyModel) {
        let steps: Vec<Step> = (0..n)
            .flat_map(|s| [Step { s, a: s, r: 1.0 }, Step { s, a: s, r: 1.0 }])
            .collect();
        let traj = StateActionTrajectory::new(steps, n, n).unwrap();
        descriptive::fit(&traj, 0.0).unwrap()
    }

    fn safety() -> SafetyContext {
        SafetyContext {
            position: 0.0,
            speed: 10.0,
            dt: 1.0,
            v_max: 20.0,
            a_min: -3.0,
            a_max: 2.0,
            d_min: 10.0,
            leader: None,
            lookahead_steps: 2,
        }
    }

    #[test]
    fn argmax_selection() {
        let one = CandidateActionSet::new(vec![0.5], (-1.0, 1.0), ()).unwrap();
        assert_eq!(select_action(&one, |_, a| a), 0);
        let three = CandidateActionSet::new(vec![-1.0, 0.0, 1.0], (-1.0, 1.0), [1.0, 3.0, 2.0]).unwrap();
        assert_eq!(select_action(&three, |r, a| r[(a + 1.0) as usize]), 1);
        let tie = CandidateActionSet::new(vec![0.0, 0.0], (-1.0, 1.0), ()).unwrap();
        assert_eq!(select_action(&tie, |_, _| 1.0), 0);
        assert!(CandidateActionSet::new(vec![2.0], (-1.0, 1.0), ()).is_err());
        assert!(CandidateActionSet::<()>::new(vec![], (-1.0, 1.0), ()).is_err());
    }

    #[test]
    fn consistent_models_accept() {
        let grid = CrispStateSpace::uniform(3, (-1.0, 1.0)).unwrap();
        let (f, p) = identity_models(3);
        let models = GateModels { policy: &p, induction: &f, actions: &grid };
        let d = gate(1.0, &models, 0.0, &safety()).unwrap();
        assert!(d.accepted);
        assert!(d.reasons.is_empty());
        assert_eq!(d.stage2_residual, 0.0);
    }

    #[test]
    fn hard_accel_into_leader_is_rejected() {
        let grid = CrispStateSpace::uniform(3, (-2.0, 2.0)).unwrap();
        let (f, p) = identity_models(3);
        let models = GateModels { policy: &p, induction: &f, actions: &grid };
        // leader 10.5 m ahead at the same speed; holding +2 m/s² for two
        // steps gains 2 m: gap 10.5 - 2 = 8.5 < 10
        let ctx = SafetyContext { leader: Some((10.5, 10.0)), ..safety() };
        assert_eq!(ctx.projected_headway(2.0), Some(8.5));
        let d = gate(2.0, &models, 0.0, &ctx).unwrap();
        assert!(!d.accepted);
        assert_eq!(d.reasons, vec![GateReason::Headway]);
        assert!(gate(0.0, &models, 0.0, &ctx).unwrap().accepted);
    }

    #[test]
    fn strict_threshold_rejects_mismatch() {
        let grid = CrispStateSpace::uniform(2, (0.0, 1.0)).unwrap();
        let (f, _) = identity_models(2);
        let p = PolicyModel::from_rewards(vec![vec![Some(0.0), Some(1.0)], vec![Some(0.0), Some(1.0)]]);
        let models = GateModels { policy: &p, induction: &f, actions: &grid };
        let d = gate(0.0, &models, 0.0, &safety()).unwrap();
        assert!(!d.accepted);
        assert_eq!(d.reasons, vec![GateReason::PolicyResidual]);
        assert_eq!(d.stage2_residual, 1.0);
        assert_eq!(serde_json::to_string(&d.reasons).unwrap(), r#"["policy residual"]"#);
    }

    #[test]
    fn every_failed_predicate_is_listed() {
        let grid = CrispStateSpace::uniform(2, (0.0, 1.0)).unwrap();
        let (f, _) = identity_models(2);
        let p = PolicyModel::from_rewards(vec![vec![Some(0.0), Some(1.0)], vec![Some(0.0), Some(1.0)]]);
        let models = GateModels { policy: &p, induction: &f, actions: &grid };
        let ctx = SafetyContext { speed: 19.0, a_max: 0.5, leader: Some((5.0, 0.0)), ..safety() };
        let d = gate(2.0, &models, 0.0, &ctx).unwrap();
        assert_eq!(
            d.reasons,
            vec![GateReason::PolicyResidual, GateReason::Speed, GateReason::Accel, GateReason::Headway]
        );
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let grid = CrispStateSpace::uniform(4, (0.0, 1.0)).unwrap();
        let (f, p) = identity_models(3);
        let models = GateModels { policy: &p, induction: &f, actions: &grid };
        assert!(matches!(gate(0.0, &models, 1.0, &safety()), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn calibration_examples() {
        let (f, p) = identity_models(2);
        let traj = StateActionTrajectory::new(vec![Step { s: 1, a: 1, r: 0.0 }; 5], 2, 2).unwrap();
        let out = calibrate(&traj, &f, &p, 0.0, 10).unwrap();
        assert_eq!(out.updates, 0);
        assert_eq!(out.d_f, out.initial_d_f);

        let wrong = PolicyModel::from_rewards(vec![vec![Some(1.0), None], vec![Some(1.0), None]]);
        let out = calibrate(&traj, &f, &wrong, 0.0, 10).unwrap();
        assert_eq!(out.initial_violations, 4);
        assert_eq!(out.updates, 1);
        assert_eq!(out.violations, 0);
        assert_eq!(out.p_map[1], Some(1));

        let out = calibrate(&traj, &f, &wrong, 0.0, 0).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.p_map, wrong.p_map);
        assert_eq!(out.d_f, 1.0);
    }
}
