//! Descriptive vehicle: tabular induction and policy models learned from
//! observed trajectories, and their self-consistency measure.
//!
//! The induction model maps an action to the state it most likely leads to;
//! the policy maps a state to the action with the best observed long-term
//! reward. The pair is self-consistent when composing them reproduces the
//! observed states and actions.
//!
//! Distances between states (and between actions) are absolute index
//! differences. Evaluation runs over the transitions of a trajectory, i.e.
//! every record but the last.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::StateActionTrajectory;

pub const DEFAULT_GAMMA: f64 = 0.9;

/// Empirical next-state likelihoods per action and their argmax map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductionModel {
    /// `n_actions × n_states`; unobserved actions have an all-zero row.
    pub likelihood: Vec<Vec<f64>>,
    pub observed: Vec<bool>,
    pub f_map: Vec<Option<usize>>,
}

/// Empirical mean discounted return per `(state, action)` and the greedy map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    /// `n_states × n_actions`; `None` marks a pair never observed.
    pub reward: Vec<Vec<Option<f64>>>,
    pub p_map: Vec<Option<usize>>,
}

impl InductionModel {
    pub fn n_actions(&self) -> usize {
        self.likelihood.len()
    }

    pub fn n_states(&self) -> usize {
        self.likelihood.first().map_or(0, Vec::len)
    }

    /// Predicted state for `action`; `None` if the action was never seen.
    pub fn apply(&self, action: usize) -> Option<usize> {
        self.f_map.get(action).copied().flatten()
    }

    fn from_counts(counts: Vec<Vec<f64>>) -> Self {
        let mut observed = Vec::with_capacity(counts.len());
        let mut f_map = Vec::with_capacity(counts.len());
        let likelihood = counts
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    observed.push(true);
                    let row: Vec<f64> = row.iter().map(|c| c / total).collect();
                    f_map.push(Some(argmax(&row)));
                    row
                } else {
                    observed.push(false);
                    f_map.push(None);
                    row
                }
            })
            .collect();
        InductionModel {
            likelihood,
            observed,
            f_map,
        }
    }

    /// Keeps `prev`'s rows for actions this model has no data for.
    fn fill_from(mut self, prev: &InductionModel) -> Self {
        for a in 0..self.likelihood.len() {
            if !self.observed[a] && prev.observed[a] {
                self.likelihood[a] = prev.likelihood[a].clone();
                self.observed[a] = true;
                self.f_map[a] = prev.f_map[a];
            }
        }
        self
    }
}

impl PolicyModel {
    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.reward.first().map_or(0, Vec::len)
    }

    /// Chosen action for `state`; `None` if no action was seen there.
    pub fn apply(&self, state: usize) -> Option<usize> {
        self.p_map.get(state).copied().flatten()
    }

    /// Reward priority, `-∞` for unobserved pairs.
    pub fn priority(&self, state: usize, action: usize) -> f64 {
        self.reward[state][action].unwrap_or(f64::NEG_INFINITY)
    }

    /// Greedy policy over an explicit reward table.
    pub fn from_rewards(reward: Vec<Vec<Option<f64>>>) -> Self {
        let p_map = reward.iter().map(|row| greedy(row)).collect();
        PolicyModel { reward, p_map }
    }

    fn fill_from(mut self, prev: &PolicyModel) -> Self {
        for s in 0..self.reward.len() {
            if self.reward[s].iter().all(Option::is_none) {
                self.reward[s] = prev.reward[s].clone();
                self.p_map[s] = prev.p_map[s];
            }
        }
        self
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn greedy(row: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (a, r) in row.iter().enumerate() {
        if let Some(r) = *r {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((a, r));
            }
        }
    }
    best.map(|(a, _)| a)
}

/// `Σ_k γ^k r_{t+k}` to the end of the trajectory, for every `t`.
fn discounted_returns(traj: &StateActionTrajectory, gamma: f64) -> Vec<f64> {
    let steps = traj.steps();
    let mut out = vec![0.0; steps.len()];
    let mut acc = 0.0;
    for t in (0..steps.len()).rev() {
        acc = steps[t].r + gamma * acc;
        out[t] = acc;
    }
    out
}

fn fit_induction(traj: &StateActionTrajectory, mask: Option<&[bool]>) -> InductionModel {
    let steps = traj.steps();
    let mut counts = vec![vec![0.0; traj.n_states()]; traj.n_actions()];
    for t in 0..steps.len() - 1 {
        if mask.is_none_or(|m| m[t]) {
            counts[steps[t].a][steps[t + 1].s] += 1.0;
        }
    }
    InductionModel::from_counts(counts)
}

fn fit_policy(traj: &StateActionTrajectory, gamma: f64, mask: Option<&[bool]>) -> PolicyModel {
    let steps = traj.steps();
    let returns = discounted_returns(traj, gamma);
    let mut sums = vec![vec![0.0; traj.n_actions()]; traj.n_states()];
    let mut counts = vec![vec![0usize; traj.n_actions()]; traj.n_states()];
    for t in 0..steps.len() - 1 {
        if mask.is_none_or(|m| m[t]) {
            sums[steps[t].s][steps[t].a] += returns[t];
            counts[steps[t].s][steps[t].a] += 1;
        }
    }
    let reward = sums
        .iter()
        .zip(&counts)
        .map(|(srow, crow)| {
            srow.iter()
                .zip(crow)
                .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                .collect()
        })
        .collect();
    PolicyModel::from_rewards(reward)
}

pub fn fit(traj: &StateActionTrajectory, gamma: f64) -> Result<(InductionModel, PolicyModel)> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {gamma}")));
    }
    Ok((fit_induction(traj, None), fit_policy(traj, gamma, None)))
}

/// Self-consistency residuals and constraint violations over an evaluation
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Mean `|s_i − F(P(s_i))|`.
    pub d_state: f64,
    /// Mean `|a_i − P(F(a_i))|`.
    pub d_action: f64,
    /// Transitions with `|s_{i+1} − F(a_i)| > ε_f`.
    pub g_f_violations: usize,
    /// Transitions with `|a_i − P(s_i)| > ε_p`.
    pub g_p_violations: usize,
    pub steps: usize,
}

impl ConsistencyReport {
    pub fn violations(&self) -> usize {
        self.g_f_violations + self.g_p_violations
    }

    pub fn residual(&self) -> f64 {
        self.d_state + self.d_action
    }

    /// Lexicographic order on `(violations, d_state + d_action)`.
    pub fn better_than(&self, other: &ConsistencyReport) -> bool {
        (self.violations(), self.residual()) < (other.violations(), other.residual())
    }
}

impl fmt::Display for ConsistencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps           {}", self.steps)?;
        writeln!(f, "d_state         {:.6}", self.d_state)?;
        writeln!(f, "d_action        {:.6}", self.d_action)?;
        writeln!(f, "g_f_violations  {}", self.g_f_violations)?;
        write!(f, "g_p_violations  {}", self.g_p_violations)
    }
}

/// `|x − y|` on indices; an undefined image counts as the full range `n`.
pub(crate) fn index_distance(x: usize, y: Option<usize>, n: usize) -> f64 {
    match y {
        Some(y) => x.abs_diff(y) as f64,
        None => n as f64,
    }
}

fn check_vocab(f: &InductionModel, p: &PolicyModel, n_states: usize, n_actions: usize) -> Result<()> {
    for (what, got, want) in [
        ("induction actions", f.n_actions(), n_actions),
        ("induction states", f.n_states(), n_states),
        ("policy states", p.n_states(), n_states),
        ("policy actions", p.n_actions(), n_actions),
    ] {
        if got != want {
            return Err(Error::Vocabulary(format!("{what}: expected {want}, found {got}")));
        }
    }
    Ok(())
}

pub fn consistency(
    f: &InductionModel,
    p: &PolicyModel,
    eval: &StateActionTrajectory,
    eps_f: f64,
    eps_p: f64,
) -> Result<ConsistencyReport> {
    let (ns, na) = (eval.n_states(), eval.n_actions());
    check_vocab(f, p, ns, na)?;
    let steps = eval.steps();
    let m = steps.len() - 1;
    let mut d_state = 0.0;
    let mut d_action = 0.0;
    let mut g_f = 0;
    let mut g_p = 0;
    for i in 0..m {
        let (s, a) = (steps[i].s, steps[i].a);
        d_state += index_distance(s, p.apply(s).and_then(|a| f.apply(a)), ns);
        d_action += index_distance(a, f.apply(a).and_then(|s| p.apply(s)), na);
        if index_distance(steps[i + 1].s, f.apply(a), ns) > eps_f {
            g_f += 1;
        }
        if index_distance(a, p.apply(s), na) > eps_p {
            g_p += 1;
        }
    }
    Ok(ConsistencyReport {
        d_state: d_state / m as f64,
        d_action: d_action / m as f64,
        g_f_violations: g_f,
        g_p_violations: g_p,
        steps: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub induction: InductionModel,
    pub policy: PolicyModel,
    pub report: ConsistencyReport,
    pub initial_report: ConsistencyReport,
    pub rounds: usize,
}

/// Alternating refinement: each round refits the induction model on the
/// training transitions that obey the current policy, then the policy on
/// the transitions the new induction model explains. Returns the best
/// models seen under [`ConsistencyReport::better_than`].
pub fn refit_until_consistent(
    traj: &StateActionTrajectory,
    eval: &StateActionTrajectory,
    eps_f: f64,
    eps_p: f64,
    gamma: f64,
    max_rounds: usize,
) -> Result<Refinement> {
    if max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    let (mut f, mut p) = fit(traj, gamma)?;
    let initial = consistency(&f, &p, eval, eps_f, eps_p)?;
    let mut best = (f.clone(), p.clone(), initial.clone());
    let mut prev = initial.residual();
    let steps = traj.steps();
    let (ns, na) = (traj.n_states(), traj.n_actions());
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let obeys_policy: Vec<bool> = (0..steps.len() - 1)
            .map(|t| index_distance(steps[t].a, p.apply(steps[t].s), na) <= eps_p)
            .collect();
        f = fit_induction(traj, Some(&obeys_policy)).fill_from(&f);
        let explained: Vec<bool> = (0..steps.len() - 1)
            .map(|t| index_distance(steps[t + 1].s, f.apply(steps[t].a), ns) <= eps_f)
            .collect();
        p = fit_policy(traj, gamma, Some(&explained)).fill_from(&p);

        let report = consistency(&f, &p, eval, eps_f, eps_p)?;
        let current = report.residual();
        if report.better_than(&best.2) {
            best = (f.clone(), p.clone(), report);
        }
        let change = (current - prev).abs() / prev.abs().max(1e-12);
        prev = current;
        if change < 1e-6 {
            break;
        }
    }
    let (induction, policy, report) = best;
    Ok(Refinement {
        induction,
        policy,
        report,
        initial_report: initial,
        rounds,
    })
}
