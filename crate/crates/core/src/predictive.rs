//! Predictive vehicle: an ensemble of forecasters, each scored by a cost
//! objective over its predicted trajectory.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::{self, AssignmentRule, FamilySpec, FemBundle, MembershipFamily};
use crate::markov::{TransitionMatrix, ZeroRowPolicy};
use crate::trace::ScalarTrace;

/// How a fuzzy-encoded predictor reaches `k` steps ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiStep {
    /// Feed each one-step expected value back in as the next input.
    #[default]
    Iterated,
    /// Propagate the fuzzy distribution `k` steps, decode once.
    Propagated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemForecaster {
    family: MembershipFamily,
    transition: Option<TransitionMatrix>,
    pub mode: MultiStep,
}

impl FemForecaster {
    pub fn untrained(family: MembershipFamily) -> Self {
        FemForecaster {
            family,
            transition: None,
            mode: MultiStep::Iterated,
        }
    }

    pub fn trained(family: MembershipFamily, transition: TransitionMatrix, mode: MultiStep) -> Result<Self> {
        if family.n() != transition.n() {
            return Err(Error::DimensionMismatch { expected: family.n(), found: transition.n() });
        }
        Ok(FemForecaster {
            family,
            transition: Some(transition),
            mode,
        })
    }

    pub fn from_bundle(bundle: &FemBundle, mode: MultiStep) -> Result<Self> {
        FemForecaster::trained(bundle.family()?, bundle.transition.clone(), mode)
    }

    pub fn train(&mut self, trace: &ScalarTrace, rule: AssignmentRule, policy: ZeroRowPolicy) -> Result<()> {
        self.transition = Some(fuzzy::fem_train(trace, &self.family, rule, policy)?);
        Ok(())
    }

    pub fn family(&self) -> &MembershipFamily {
        &self.family
    }

    pub fn transition(&self) -> Option<&TransitionMatrix> {
        self.transition.as_ref()
    }

    fn matrix(&self) -> Result<&TransitionMatrix> {
        self.transition
            .as_ref()
            .ok_or_else(|| Error::Untrained("fuzzy encoding".into()))
    }

    /// Expected value `steps` ahead of `x`.
    pub fn predict(&self, x: f64, steps: usize) -> Result<f64> {
        let pi = self.matrix()?;
        match self.mode {
            MultiStep::Propagated => fuzzy::fem_predict(x, &self.family, pi, steps),
            MultiStep::Iterated => {
                let mut v = x;
                for _ in 0..steps {
                    v = fuzzy::fem_predict(v, &self.family, pi, 1)?;
                }
                Ok(v)
            }
        }
    }

    pub fn forecast(&self, x: f64, horizon: usize) -> Result<Vec<f64>> {
        let pi = self.matrix()?;
        let mut out = Vec::with_capacity(horizon);
        match self.mode {
            MultiStep::Iterated => {
                let mut v = x;
                for _ in 0..horizon {
                    v = fuzzy::fem_predict(v, &self.family, pi, 1)?;
                    out.push(v);
                }
            }
            MultiStep::Propagated => {
                let mut k1 = fuzzy::normalize(&fuzzy::fuzzify(x, &self.family))?;
                for _ in 0..horizon {
                    k1 = fuzzy::fem_step(&k1, pi)?;
                    out.push(fuzzy::decode(k1.values(), &self.family));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forecaster {
    /// `x⁺ = x`.
    Persistence,
    Fem(FemForecaster),
}

impl Forecaster {
    pub fn forecast(&self, x: f64, horizon: usize) -> Result<Vec<f64>> {
        match self {
            Forecaster::Persistence => Ok(vec![x; horizon]),
            Forecaster::Fem(f) => f.forecast(x, horizon),
        }
    }
}

/// Cost of a predicted trajectory sampled every `dt` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `Σ max(0, x)·dt`, the positive energy when `x` is a power.
    EnergyProxy,
    /// `Σ (x − target)²·dt`.
    Tracking { target: f64 },
}

impl Objective {
    pub fn cost(&self, trajectory: &[f64], dt: f64) -> f64 {
        match *self {
            Objective::EnergyProxy => trajectory.iter().map(|x| x.max(0.0) * dt).sum(),
            Objective::Tracking { target } => trajectory.iter().map(|x| (x - target).powi(2) * dt).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveMember {
    pub id: usize,
    pub forecaster: Forecaster,
    pub horizon_steps: usize,
    pub objective: Objective,
}

pub fn forecast(member: &PredictiveMember, current: f64) -> Result<Vec<f64>> {
    if member.horizon_steps == 0 {
        return Err(Error::Config(format!("member {} has an empty horizon", member.id)));
    }
    member.forecaster.forecast(current, member.horizon_steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberPrediction {
    pub id: usize,
    pub trajectory: Vec<f64>,
    pub cost: f64,
}

/// Per-member predictions, ordered by member id, and the cheapest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionKnowledge {
    pub members: Vec<MemberPrediction>,
    pub best_member: usize,
}

impl PredictionKnowledge {
    pub fn best(&self) -> &MemberPrediction {
        self.members
            .iter()
            .find(|m| m.id == self.best_member)
            .expect("best member is always present")
    }
}

pub fn evaluate_ensemble(members: &[PredictiveMember], current: f64, dt: f64) -> Result<PredictionKnowledge> {
    if members.is_empty() {
        return Err(Error::Config("ensemble has no members".into()));
    }
    let mut out = members
        .iter()
        .map(|m| {
            let trajectory = forecast(m, current).map_err(|e| Error::Member { id: m.id, source: Box::new(e) })?;
            let cost = m.objective.cost(&trajectory, dt);
            if !cost.is_finite() {
                return Err(Error::Member {
                    id: m.id,
                    source: Box::new(Error::Invariant("objective is not finite".into())),
                });
            }
            Ok(MemberPrediction { id: m.id, trajectory, cost })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|m| m.id);
    let best = out
        .iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.id.cmp(&b.id)))
        .map(|m| m.id)
        .expect("non-empty");
    Ok(PredictionKnowledge {
        members: out,
        best_member: best,
    })
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> f64 {
    let n = actual.len().min(predicted.len());
    if n == 0 {
        return 0.0;
    }
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    (sse / n as f64).sqrt()
}

/// Predictions for one horizon over the evaluation split. `t` is the time
/// (seconds from the start of the full trace) of the predicted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon_steps: usize,
    pub t: Vec<f64>,
    pub actual: Vec<f64>,
    pub fem: Vec<f64>,
    pub persistence: Vec<f64>,
    pub rmse_fem: f64,
    pub rmse_persistence: f64,
    /// RMSE of the propagate-then-decode variant, for comparison.
    pub rmse_fem_propagated: f64,
}

impl HorizonReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "t,actual,fem,persistence")?;
        for i in 0..self.t.len() {
            writeln!(f, "{},{},{},{}", self.t[i], self.actual[i], self.fem[i], self.persistence[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPredictionReport {
    pub label: String,
    pub dt: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub bundle: FemBundle,
    pub one_step: HorizonReport,
    pub horizon: HorizonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSetup {
    pub family: FamilySpec,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default = "default_horizon")]
    pub horizon_seconds: f64,
    #[serde(default)]
    pub rule: AssignmentRule,
    #[serde(default)]
    pub zero_rows: ZeroRowPolicy,
}

fn default_split() -> f64 {
    0.7
}

fn default_horizon() -> f64 {
    10.0
}

impl PredictionSetup {
    pub fn new(family: FamilySpec) -> Self {
        PredictionSetup {
            family,
            split: default_split(),
            horizon_seconds: default_horizon(),
            rule: AssignmentRule::default(),
            zero_rows: ZeroRowPolicy::default(),
        }
    }
}

fn horizon_report(
    trace: &ScalarTrace,
    offset: usize,
    fem: &FemForecaster,
    propagated: &FemForecaster,
    h: usize,
) -> Result<HorizonReport> {
    let x = &trace.samples()[offset..];
    let n = x.len() - h;
    let mut r = HorizonReport {
        horizon_steps: h,
        t: Vec::with_capacity(n),
        actual: Vec::with_capacity(n),
        fem: Vec::with_capacity(n),
        persistence: Vec::with_capacity(n),
        rmse_fem: 0.0,
        rmse_persistence: 0.0,
        rmse_fem_propagated: 0.0,
    };
    let mut prop = Vec::with_capacity(n);
    for i in 0..n {
        r.t.push((offset + i + h) as f64 * trace.dt());
        r.actual.push(x[i + h]);
        r.fem.push(fem.predict(x[i], h).map_err(|e| locate(e, offset + i, x[i]))?);
        prop.push(propagated.predict(x[i], h)?);
        r.persistence.push(x[i]);
    }
    r.rmse_fem = rmse(&r.actual, &r.fem);
    r.rmse_persistence = rmse(&r.actual, &r.persistence);
    r.rmse_fem_propagated = rmse(&r.actual, &prop);
    Ok(r)
}

fn locate(e: Error, sample: usize, value: f64) -> Error {
    match e {
        Error::Coverage(_) => Error::Coverage(format!("sample {sample} (value {value}) has no active membership function")),
        other => other,
    }
}

/// Trains on the first `split` of the trace and scores one-step and
/// `horizon_seconds`-ahead predictions on the rest against persistence.
pub fn predict_power_demand(trace: &ScalarTrace, setup: &PredictionSetup) -> Result<PowerPredictionReport> {
    if !(setup.split > 0.0 && setup.split < 1.0) {
        return Err(Error::Config(format!("split must lie in (0, 1), got {}", setup.split)));
    }
    let ratio = setup.horizon_seconds / trace.dt();
    let h = ratio.round();
    if !(h >= 1.0) || (ratio - h).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "horizon {} s is not a positive multiple of dt = {} s",
            setup.horizon_seconds,
            trace.dt()
        )));
    }
    let h = h as usize;
    let n_train = (setup.split * trace.len() as f64).floor() as usize;
    if n_train < 2 {
        return Err(Error::ShortSplit { available: n_train, horizon: 2 });
    }
    let eval_len = trace.len() - n_train;
    if eval_len <= h {
        return Err(Error::ShortSplit { available: eval_len, horizon: h });
    }
    let train = trace.slice(0, n_train)?;
    let (bundle, family) = FemBundle::train(&train, setup.family.clone(), setup.rule, setup.zero_rows)?;
    let iterated = FemForecaster::trained(family.clone(), bundle.transition.clone(), MultiStep::Iterated)?;
    let propagated = FemForecaster::trained(family, bundle.transition.clone(), MultiStep::Propagated)?;
    let one_step = horizon_report(trace, n_train, &iterated, &propagated, 1)?;
    let horizon = horizon_report(trace, n_train, &iterated, &propagated, h)?;
    Ok(PowerPredictionReport {
        label: trace.label().to_string(),
        dt: trace.dt(),
        train_samples: n_train,
        eval_samples: eval_len,
        bundle,
        one_step,
        horizon,
    })
}
