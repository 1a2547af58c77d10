//! Discrete-time world: simulated vehicles on a signalized corridor, each
//! paired with a descriptive, a predictive and a prescriptive agent.
//!
//! One tick runs five stages in a fixed order:
//!
//! 1. perception: every vehicle's state goes onto the bus;
//! 2. the predictive ensemble turns the perceived power demand into a
//!    [`PredictionKnowledge`];
//! 3. the planner (every `replan_every` ticks, or after a rejection) and the
//!    prescriptive agent produce a candidate action, which is gated;
//! 4. control integrates the accepted action, or the benchmark controller's
//!    action when the gate said no;
//! 5. the descriptive agent consumes the snapshot sent in stage 4 of the
//!    previous tick, so it lags control by one tick.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptive::{self, ConsistencyReport, InductionModel, PolicyModel};
use crate::fleet::{
    benchmark_accel, benchmark_controller, crossing_time, kinematic_step, plan_fleet_from,
    BenchmarkMemory, FleetScenario, SpeedPlan,
};
use crate::fuzzy::{AssignmentRule, FamilyKind, FamilySpec, FemBundle};
use crate::markov::ZeroRowPolicy;
use crate::predictive::{
    evaluate_ensemble, rmse, FemForecaster, Forecaster, MultiStep, Objective, PredictionKnowledge,
    PredictiveMember,
};
use crate::prescriptive::{calibrate, gate, select_action, CandidateActionSet, GateDecision, GateModels, SafetyContext};
use crate::trace::{CrispStateSpace, ScalarTrace, StateActionTrajectory, Step};
use crate::{Error, Result};

/// `P = m·a·v + c0 + c1·v + c2·v³` in watts; reported in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub mass: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            mass: 1500.0,
            c0: 300.0,
            c1: 150.0,
            c2: 0.4,
        }
    }
}

impl PowerModel {
    pub fn power_kw(&self, accel: f64, speed: f64) -> f64 {
        (self.mass * accel * speed + self.c0 + self.c1 * speed + self.c2 * speed.powi(3)) / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub power: PowerModel,
    pub replan_every: usize,
    pub speed_bins: usize,
    pub accel_bins: usize,
    /// Gate threshold in m/s²; one acceleration bin when absent. A negative
    /// value rejects every action.
    pub epsilon: Option<f64>,
    pub gamma: f64,
    pub lookahead_steps: usize,
    /// Ticks between descriptive refits.
    pub refit_every: usize,
    pub fem_states: usize,
    pub forecast_steps: usize,
    /// Standard deviation of the power sensor, kW.
    pub power_noise_kw: f64,
    /// Weight of predicted power in the prescriptive reward.
    pub energy_weight: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            power: PowerModel::default(),
            replan_every: 10,
            speed_bins: 9,
            accel_bins: 11,
            epsilon: None,
            gamma: descriptive::DEFAULT_GAMMA,
            lookahead_steps: 2,
            refit_every: 50,
            fem_states: 8,
            forecast_steps: 10,
            power_noise_kw: 0.2,
            energy_weight: 1e-3,
        }
    }
}

/// A fleet scenario plus the world-simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub fleet: FleetScenario,
    #[serde(default)]
    pub sim: SimConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scn: Scenario = serde_json::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, e.to_string()))?;
        let scn: Scenario = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<()> {
        self.fleet.validate()?;
        let s = &self.sim;
        if s.replan_every == 0 || s.replan_every > self.fleet.horizon_steps {
            return Err(Error::Config("replan_every must lie in [1, horizon_steps]".into()));
        }
        if s.speed_bins < 2 || s.accel_bins < 2 || s.fem_states < 2 {
            return Err(Error::Config("speed_bins, accel_bins and fem_states must be at least 2".into()));
        }
        if s.refit_every == 0 || s.forecast_steps == 0 {
            return Err(Error::Config("refit_every and forecast_steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&s.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(s.power_noise_kw >= 0.0 && s.energy_weight >= 0.0) {
            return Err(Error::Config("power_noise_kw and energy_weight must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 of the scenario serialized with sorted keys and defaults
    /// filled in.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("scenario serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub position: f64,
    pub speed: f64,
    /// Acceleration executed during the tick that produced this state.
    pub accel: f64,
    pub power_demand: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Real,
    Descriptive,
    Predictive,
    Prescriptive,
    Planner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    State(VehicleState),
    Prediction(PredictionKnowledge),
    Decision(GateDecision),
    Plan { t0: f64, accel: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub tick: u64,
    /// Pipeline stage, 1 to 5.
    pub stage: u8,
    pub sender: Agent,
    pub recipient: Agent,
    pub vehicle: usize,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionOrigin {
    Plan,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Executed {
    pub accel: f64,
    pub origin: ActionOrigin,
    pub benchmark_accel: f64,
    /// An accepted action overridden at control time because it would have
    /// closed the gap to the leader below `d_min`.
    #[serde(default)]
    pub vetoed: bool,
}

/// Everything that happened to one vehicle in one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTick {
    pub tick: u64,
    pub t: f64,
    pub vehicle: usize,
    /// State after control.
    pub state: VehicleState,
    pub decision: GateDecision,
    pub executed: Executed,
    pub messages: Vec<BusMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub replanned: bool,
    pub vehicles: Vec<VehicleTick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrupletLog {
    pub seed: u64,
    pub config_hash: String,
    pub dt: f64,
    pub initial: Vec<VehicleState>,
    pub ticks: Vec<TickRecord>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<'a> {
    Header { seed: u64, config_hash: &'a str, dt: f64, vehicles: usize },
    Initial(&'a VehicleState),
    Tick { replanned: bool, #[serde(flatten)] entry: &'a VehicleTick },
}

impl QuadrupletLog {
    /// One JSON object per line: a header, each vehicle's initial state,
    /// then one record per tick per vehicle.
    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<()> {
        let header = Line::Header {
            seed: self.seed,
            config_hash: &self.config_hash,
            dt: self.dt,
            vehicles: self.initial.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for s in &self.initial {
            writeln!(out, "{}", serde_json::to_string(&Line::Initial(s))?)?;
        }
        for rec in &self.ticks {
            for v in &rec.vehicles {
                let line = Line::Tick {
                    replanned: rec.replanned,
                    entry: v,
                };
                writeln!(out, "{}", serde_json::to_string(&line)?)?;
            }
        }
        Ok(())
    }

    /// Per-vehicle state sequences, initial state first.
    pub fn trajectories(&self) -> Vec<Vec<VehicleState>> {
        let mut out: Vec<Vec<VehicleState>> = self.initial.iter().map(|s| vec![*s]).collect();
        for rec in &self.ticks {
            for v in &rec.vehicles {
                out[v.vehicle].push(v.state);
            }
        }
        out
    }

    /// Realized trajectories as plans, so the planner's checks apply.
    pub fn realized_plans(&self, fleet: &FleetScenario) -> Vec<SpeedPlan> {
        self.trajectories()
            .into_iter()
            .enumerate()
            .map(|(i, tr)| {
                let position: Vec<f64> = tr.iter().map(|s| s.position).collect();
                let speed: Vec<f64> = tr.iter().map(|s| s.speed).collect();
                let crossings = fleet
                    .signals
                    .iter()
                    .map(|sig| crossing_time(0.0, self.dt, &position, &speed, sig.position))
                    .collect();
                SpeedPlan {
                    vehicle: i,
                    t0: 0.0,
                    dt: self.dt,
                    accel: tr[1..].iter().map(|s| s.accel).collect(),
                    speed,
                    position,
                    crossings,
                    fallback: false,
                }
            })
            .collect()
    }

    pub fn summary(&self, fleet: &FleetScenario) -> RunSummary {
        let plans = self.realized_plans(fleet);
        let mut vehicles = Vec::new();
        let mut decisions = 0usize;
        let mut accepted = 0usize;
        for (i, p) in plans.iter().enumerate() {
            let mut rejected = 0;
            for rec in &self.ticks {
                let d = &rec.vehicles[i].decision;
                decisions += 1;
                if d.accepted {
                    accepted += 1;
                } else {
                    rejected += 1;
                }
            }
            vehicles.push(VehicleSummary {
                vehicle: i,
                stops: p.stop_count(),
                min_speed: p.min_speed(),
                energy_proxy: p.energy_proxy(),
                crossings: p.crossings.clone(),
                crossings_on_green: fleet
                    .signals
                    .iter()
                    .zip(&p.crossings)
                    .all(|(sig, c)| c.is_none_or(|c| sig.green_at(c))),
                fallback_ticks: rejected,
            });
        }
        RunSummary {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            ticks: self.ticks.len(),
            acceptance_rate: if decisions == 0 {
                1.0
            } else {
                accepted as f64 / decisions as f64
            },
            min_headway: crate::fleet::min_headway(fleet, &plans),
            vehicles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub vehicle: usize,
    pub stops: usize,
    pub min_speed: f64,
    pub energy_proxy: f64,
    pub crossings: Vec<Option<f64>>,
    pub crossings_on_green: bool,
    pub fallback_ticks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_hash: String,
    pub ticks: usize,
    pub acceptance_rate: f64,
    pub min_headway: Option<f64>,
    pub vehicles: Vec<VehicleSummary>,
}

/// Tabular descriptive models of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveModels {
    pub induction: InductionModel,
    pub policy: PolicyModel,
}

/// Quantization of a vehicle's state (speed × current acceleration) and
/// actions (acceleration).
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub speeds: CrispStateSpace,
    pub actions: CrispStateSpace,
}

impl Grids {
    pub fn for_vehicle(fleet: &FleetScenario, sim: &SimConfig, vehicle: usize) -> Result<Grids> {
        let v = &fleet.vehicles[vehicle];
        Ok(Grids {
            speeds: CrispStateSpace::uniform(sim.speed_bins, (0.0, v.v_max))?,
            actions: CrispStateSpace::uniform(sim.accel_bins, (v.a_min, v.a_max))?,
        })
    }

    pub fn n_states(&self) -> usize {
        self.speeds.len() * self.actions.len()
    }

    pub fn state_index(&self, speed: f64, accel: f64) -> usize {
        self.speeds.nearest(speed) * self.actions.len() + self.actions.nearest(accel)
    }

    pub fn action_step(&self) -> f64 {
        let l = self.actions.levels();
        l[1] - l[0]
    }
}

fn stage_reward(fleet: &FleetScenario, vehicle: usize, next_speed: f64, accel: f64) -> f64 {
    let w = fleet.weights;
    let v_ref = fleet.vehicles[vehicle].v_ref;
    -(w.w_v * (next_speed - v_ref).powi(2) + w.w_a * accel * accel)
}

/// State-action steps of a state sequence; `states[k + 1].accel` is the
/// action taken in `states[k]`.
fn steps_of(fleet: &FleetScenario, vehicle: usize, grids: &Grids, states: &[(f64, f64)]) -> Vec<Step> {
    states
        .windows(2)
        .map(|w| {
            let ((v0, a_prev), (v1, a)) = (w[0], w[1]);
            Step {
                s: grids.state_index(v0, a_prev),
                a: grids.actions.nearest(a),
                r: stage_reward(fleet, vehicle, v1, a),
            }
        })
        .collect()
}

/// Fits both models, then calibrates the policy so it maps the induced
/// state of every observed action back to that action where possible.
fn fit_models(traj: &StateActionTrajectory, gamma: f64) -> Result<DescriptiveModels> {
    let (induction, mut policy) = descriptive::fit(traj, gamma)?;
    let cal = calibrate(traj, &induction, &policy, 0.5, 10)?;
    policy.p_map = cal.p_map;
    Ok(DescriptiveModels { induction, policy })
}

fn power_trace(model: &PowerModel, accels: &[f64], speeds: &[f64], dt: f64, label: &str) -> Result<ScalarTrace> {
    let samples = accels.iter().zip(speeds).map(|(&a, &v)| model.power_kw(a, v)).collect();
    ScalarTrace::new(samples, dt, label)
}

fn padded_bounds(trace: &ScalarTrace) -> (f64, f64) {
    let (lo, hi) = trace.range();
    (lo - 1.0, hi + 1.0)
}

fn train_bundle(trace: &ScalarTrace, fem_states: usize, bounds: (f64, f64)) -> Result<FemBundle> {
    let spec = FamilySpec::new(FamilyKind::Triangular, fem_states, bounds);
    Ok(FemBundle::train(trace, spec, AssignmentRule::Argmax, ZeroRowPolicy::SelfLoop)?.0)
}

/// True when the follower keeps `d_min` at every step while both vehicles
/// brake at full deceleration until they stop. Each tuple is
/// `(position, speed, a_min)` at the same instant.
fn brake_safe(d_min: f64, dt: f64, follower: (f64, f64, f64), leader: (f64, f64, f64)) -> bool {
    let (mut s, mut v, a) = follower;
    let (mut ls, mut lv, la) = leader;
    loop {
        (s, v) = (s + v * dt, (v + a * dt).max(0.0));
        (ls, lv) = (ls + lv * dt, (lv + la * dt).max(0.0));
        if ls - s < d_min - 1e-9 {
            return false;
        }
        if v == 0.0 {
            return true;
        }
    }
}

struct VehicleAgents {
    grids: Grids,
    warm: Vec<Step>,
    observed: Vec<Step>,
    models: DescriptiveModels,
    /// Last state the descriptive agent has seen and the snapshot in flight.
    seen: VehicleState,
    pending: Option<VehicleState>,
    bundle: FemBundle,
    members: Vec<PredictiveMember>,
}

type ActionSource = Box<dyn FnMut(u64, &VehicleState) -> f64>;

pub struct World {
    scn: Scenario,
    tick: u64,
    states: Vec<VehicleState>,
    agents: Vec<VehicleAgents>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    plans: Vec<SpeedPlan>,
    plan_origin: u64,
    replan: bool,
    bench: Vec<BenchmarkMemory>,
    log: QuadrupletLog,
    action_source: Option<ActionSource>,
    bypass_gate: bool,
}

impl World {
    pub fn new(scn: Scenario, seed: u64) -> Result<World> {
        scn.validate()?;
        let fleet = &scn.fleet;
        let sim = &scn.sim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sim.power_noise_kw)
            .map_err(|e| Error::Config(format!("power noise: {e}")))?;
        let states: Vec<VehicleState> = fleet
            .vehicles
            .iter()
            .enumerate()
            .map(|(id, v)| VehicleState {
                id,
                position: v.position,
                speed: v.speed,
                accel: 0.0,
                power_demand: sim.power.power_kw(0.0, v.speed),
            })
            .collect();
        let kin: Vec<(f64, f64)> = states.iter().map(|s| (s.position, s.speed)).collect();
        let plans = plan_fleet_from(fleet, 0.0, &kin);
        let bench_plans = benchmark_controller(fleet);

        let mut agents = Vec::with_capacity(states.len());
        for (i, plan) in plans.iter().enumerate() {
            let grids = Grids::for_vehicle(fleet, sim, i)?;
            // warm start the descriptive agent on the vehicle's first plan
            let seq: Vec<(f64, f64)> = plan
                .speed
                .iter()
                .enumerate()
                .map(|(k, &v)| (v, if k == 0 { 0.0 } else { plan.accel[k - 1] }))
                .collect();
            let warm = steps_of(fleet, i, &grids, &seq);
            let traj = StateActionTrajectory::new(warm.clone(), grids.n_states(), grids.actions.len())?;
            let models = fit_models(&traj, sim.gamma)?;

            // the FEM member learns from the benchmark profile's power demand
            let bp = &bench_plans[i];
            let mut trace = power_trace(&sim.power, &bp.accel, &bp.speed[1..], fleet.dt, "benchmark")?;
            let noisy: Vec<f64> = trace.samples().iter().map(|x| x + noise.sample(&mut rng)).collect();
            trace = ScalarTrace::new(noisy, fleet.dt, "benchmark")?;
            let bundle = train_bundle(&trace, sim.fem_states, padded_bounds(&trace))?;
            let fem = FemForecaster::from_bundle(&bundle, MultiStep::Iterated)?;
            let members = vec![
                PredictiveMember {
                    id: 0,
                    forecaster: Forecaster::Persistence,
                    horizon_steps: sim.forecast_steps,
                    objective: Objective::EnergyProxy,
                },
                PredictiveMember {
                    id: 1,
                    forecaster: Forecaster::Fem(fem),
                    horizon_steps: sim.forecast_steps,
                    objective: Objective::EnergyProxy,
                },
            ];
            agents.push(VehicleAgents {
                grids,
                warm,
                observed: Vec::new(),
                models,
                seen: states[i],
                pending: None,
                bundle,
                members,
            });
        }
        let log = QuadrupletLog {
            seed,
            config_hash: scn.config_hash(),
            dt: fleet.dt,
            initial: states.clone(),
            ticks: Vec::new(),
        };
        Ok(World {
            bench: vec![BenchmarkMemory::default(); states.len()],
            scn,
            tick: 0,
            states,
            agents,
            rng,
            noise,
            plans,
            plan_origin: 0,
            replan: false,
            log,
            action_source: None,
            bypass_gate: false,
        })
    }

    /// Replaces the planner and prescriptive choice with `f(tick, state)`;
    /// the result still goes through the gate.
    pub fn set_action_source(&mut self, f: impl FnMut(u64, &VehicleState) -> f64 + 'static) {
        self.action_source = Some(Box::new(f));
    }

    /// Executes every proposed action regardless of the gate's verdict. The
    /// verdict is still computed and logged with its reasons.
    pub fn bypass_gate(&mut self, on: bool) {
        self.bypass_gate = on;
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn log(&self) -> &QuadrupletLog {
        &self.log
    }

    pub fn into_log(self) -> QuadrupletLog {
        self.log
    }

    pub fn descriptive_models(&self) -> Vec<DescriptiveModels> {
        self.agents.iter().map(|a| a.models.clone()).collect()
    }

    pub fn fem_bundles(&self) -> Vec<FemBundle> {
        self.agents.iter().map(|a| a.bundle.clone()).collect()
    }

    pub fn step(&mut self) -> Result<()> {
        let fleet = &self.scn.fleet;
        let sim = &self.scn.sim;
        let dt = fleet.dt;
        let tick = self.tick;
        let t = tick as f64 * dt;
        let n = self.states.len();
        let mut msgs: Vec<Vec<BusMessage>> = vec![Vec::new(); n];
        let msg = |stage: u8, sender: Agent, recipient: Agent, vehicle: usize, payload: Payload| BusMessage {
            tick,
            stage,
            sender,
            recipient,
            vehicle,
            payload,
        };

        // 1. perception
        let mut perceived = Vec::with_capacity(n);
        for (i, s) in self.states.iter().enumerate() {
            perceived.push(s.power_demand + self.noise.sample(&mut self.rng));
            msgs[i].push(msg(1, Agent::Real, Agent::Predictive, i, Payload::State(*s)));
            msgs[i].push(msg(1, Agent::Real, Agent::Planner, i, Payload::State(*s)));
        }

        // 2. prediction
        let mut knowledge = Vec::with_capacity(n);
        for (i, ag) in self.agents.iter().enumerate() {
            let k = evaluate_ensemble(&ag.members, perceived[i], dt)?;
            msgs[i].push(msg(2, Agent::Predictive, Agent::Prescriptive, i, Payload::Prediction(k.clone())));
            knowledge.push(k);
        }

        // 3. planning and gating
        let offset = tick - self.plan_origin;
        let replanned = n > 0
            && tick > 0
            && (self.replan || offset as usize >= sim.replan_every.min(fleet.horizon_steps));
        if replanned {
            let kin: Vec<(f64, f64)> = self.states.iter().map(|s| (s.position, s.speed)).collect();
            self.plans = plan_fleet_from(fleet, t, &kin);
            self.plan_origin = tick;
            self.replan = false;
            for (i, p) in self.plans.iter().enumerate() {
                let seg = p.accel.iter().take(sim.replan_every).copied().collect();
                msgs[i].push(msg(3, Agent::Planner, Agent::Prescriptive, i, Payload::Plan { t0: t, accel: seg }));
            }
        }
        let offset = (tick - self.plan_origin) as usize;
        let leaders = fleet.leaders();
        let mut decisions = Vec::with_capacity(n);
        for i in 0..n {
            let spec = &fleet.vehicles[i];
            let st = self.states[i];
            let plan = &self.plans[i];
            let chosen = match self.action_source.as_mut() {
                Some(f) => f(tick, &st).clamp(spec.a_min, spec.a_max),
                None => {
                    let v_plan = plan.speed[offset + 1];
                    let p_ref = sim.power.power_kw(0.0, spec.v_ref).max(1e-9);
                    let ratio = knowledge[i].best().trajectory.iter().sum::<f64>()
                        / (sim.forecast_steps as f64 * p_ref);
                    let cands = CandidateActionSet::new(
                        vec![plan.accel[offset], 0.0],
                        (spec.a_min, spec.a_max),
                        (st.speed, v_plan, ratio),
                    )?;
                    let kappa = sim.energy_weight;
                    // track the plan's next speed; predicted power prices acceleration
                    let pick = select_action(&cands, |&(v, v_plan, ratio), a| {
                        -(v + a * dt - v_plan).abs() - kappa * a.max(0.0) * v * dt * ratio
                    });
                    cands.candidates()[pick]
                }
            };
            let ag = &self.agents[i];
            let models = GateModels {
                policy: &ag.models.policy,
                induction: &ag.models.induction,
                actions: &ag.grids.actions,
            };
            let safety = SafetyContext {
                position: st.position,
                speed: st.speed,
                dt,
                v_max: spec.v_max,
                a_min: spec.a_min,
                a_max: spec.a_max,
                d_min: fleet.d_min,
                leader: leaders[i].map(|l| (self.states[l].position, self.states[l].speed)),
                lookahead_steps: sim.lookahead_steps,
            };
            let eps = sim.epsilon.unwrap_or_else(|| ag.grids.action_step());
            let mut d = gate(chosen, &models, eps, &safety)?;
            if self.bypass_gate {
                d.accepted = true;
            }
            msgs[i].push(msg(3, Agent::Prescriptive, Agent::Real, i, Payload::Decision(d.clone())));
            decisions.push(d);
        }

        // 4. control, front to back so the benchmark sees its leader's next state
        let mut next = self.states.clone();
        let mut executed = vec![None; n];
        for i in fleet.front_to_back() {
            let spec = &fleet.vehicles[i];
            let st = self.states[i];
            let lead = leaders[i].map(|l| (next[l].position, next[l].speed));
            let b = benchmark_accel(fleet, spec, t, st.position, st.speed, lead, &mut self.bench[i]);
            let d = &decisions[i];
            // the gate saw the leader's pre-step state; its next state is known now
            let vetoed = d.accepted
                && leaders[i].is_some_and(|l| {
                    let (s1, v1) = kinematic_step(st.position, st.speed, d.action, dt, spec.v_max);
                    let lspec = &fleet.vehicles[l];
                    !brake_safe(fleet.d_min, dt, (s1, v1, spec.a_min), (next[l].position, next[l].speed, lspec.a_min))
                });
            let (a, origin) = if d.accepted && !vetoed {
                (d.action, ActionOrigin::Plan)
            } else {
                self.replan = true;
                (b, ActionOrigin::Fallback)
            };
            let (s1, v1) = kinematic_step(st.position, st.speed, a, dt, spec.v_max);
            next[i] = VehicleState {
                id: i,
                position: s1,
                speed: v1,
                accel: a,
                power_demand: sim.power.power_kw(a, v1),
            };
            executed[i] = Some(Executed {
                accel: a,
                origin,
                benchmark_accel: b,
                vetoed,
            });
        }

        // 5. descriptive agents consume last tick's snapshot
        let refit = tick > 0 && tick % sim.refit_every as u64 == 0;
        for (i, ag) in self.agents.iter_mut().enumerate() {
            if let Some(s) = ag.pending.take() {
                let seq = [(ag.seen.speed, ag.seen.accel), (s.speed, s.accel)];
                ag.observed.extend(steps_of(fleet, i, &ag.grids, &seq));
                ag.seen = s;
            }
            if refit {
                let mut all = ag.warm.clone();
                all.extend_from_slice(&ag.observed);
                let traj = StateActionTrajectory::new(all, ag.grids.n_states(), ag.grids.actions.len())?;
                ag.models = fit_models(&traj, sim.gamma)?;
            }
            ag.pending = Some(next[i]);
            msgs[i].push(msg(4, Agent::Real, Agent::Descriptive, i, Payload::State(next[i])));
        }

        self.states = next;
        let vehicles = (0..n)
            .zip(msgs)
            .map(|(i, messages)| VehicleTick {
                tick,
                t,
                vehicle: i,
                state: self.states[i],
                decision: decisions[i].clone(),
                executed: executed[i].expect("every vehicle is controlled"),
                messages,
            })
            .collect();
        self.log.ticks.push(TickRecord {
            tick,
            replanned,
            vehicles,
        });
        self.tick += 1;
        Ok(())
    }
}

/// Runs `n_ticks` ticks from the scenario's initial state.
pub fn run(scn: &Scenario, n_ticks: u64, seed: u64) -> Result<QuadrupletLog> {
    let mut world = World::new(scn.clone(), seed)?;
    for _ in 0..n_ticks {
        world.step()?;
    }
    Ok(world.into_log())
}

/// Replays a log against the scenario: Euler kinematics bit for bit, one
/// executed action per vehicle per tick, nondecreasing ticks, messages in
/// stage order, and the planner's invariants on the realized trajectories
/// (speed floor excepted, since fallbacks may stop).
pub fn check_log(scn: &Scenario, log: &QuadrupletLog) -> Result<()> {
    let fleet = &scn.fleet;
    let bad = |m: String| Err(Error::Invariant(m));
    let n = fleet.vehicles.len();
    if log.initial.len() != n {
        return bad(format!("{} initial states for {n} vehicles", log.initial.len()));
    }
    let mut prev = log.initial.clone();
    for (k, rec) in log.ticks.iter().enumerate() {
        if rec.tick != k as u64 {
            return bad(format!("record {k} carries tick {}", rec.tick));
        }
        let ids: Vec<usize> = rec.vehicles.iter().map(|v| v.vehicle).collect();
        if ids != (0..n).collect::<Vec<_>>() {
            return bad(format!("tick {k}: vehicles {ids:?}, expected one entry each"));
        }
        for v in &rec.vehicles {
            let spec = &fleet.vehicles[v.vehicle];
            let ex = &v.executed;
            let want = match ex.origin {
                ActionOrigin::Plan => v.decision.action,
                ActionOrigin::Fallback => ex.benchmark_accel,
            };
            if (ex.origin == ActionOrigin::Plan) != (v.decision.accepted && !ex.vetoed) {
                return bad(format!("tick {k}, vehicle {}: origin disagrees with the decision", v.vehicle));
            }
            if ex.accel != want || v.state.accel != ex.accel {
                return bad(format!("tick {k}, vehicle {}: executed action is not the chosen one", v.vehicle));
            }
            let p = prev[v.vehicle];
            let (s1, v1) = kinematic_step(p.position, p.speed, ex.accel, log.dt, spec.v_max);
            if s1 != v.state.position || v1 != v.state.speed {
                return bad(format!("tick {k}, vehicle {}: state breaks the Euler update", v.vehicle));
            }
            if !(v.state.speed >= 0.0 && v.state.power_demand.is_finite()) {
                return bad(format!("tick {k}, vehicle {}: invalid state", v.vehicle));
            }
            if !v.messages.windows(2).all(|w| w[0].stage <= w[1].stage)
                || v.messages.iter().any(|m| m.tick != rec.tick)
            {
                return bad(format!("tick {k}, vehicle {}: messages out of order", v.vehicle));
            }
            prev[v.vehicle] = v.state;
        }
    }
    let plans = log.realized_plans(fleet);
    if let Some(h) = crate::fleet::min_headway(fleet, &plans) {
        if h < fleet.d_min - 1e-9 {
            return bad(format!("headway {h} below d_min"));
        }
    }
    for p in &plans {
        for (sig, c) in fleet.signals.iter().zip(&p.crossings) {
            if let Some(t) = c {
                if !sig.green_at(*t) {
                    return bad(format!("vehicle {} crosses the signal at {} on red at {t}", p.vehicle, sig.position));
                }
            }
        }
    }
    Ok(())
}

/// Refit outcome for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleFeedback {
    pub vehicle: usize,
    pub consistency_before: ConsistencyReport,
    pub consistency_after: ConsistencyReport,
    pub rmse_before: f64,
    pub rmse_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub models: Vec<DescriptiveModels>,
    pub bundles: Vec<FemBundle>,
    pub vehicles: Vec<VehicleFeedback>,
    /// One-step FEM RMSE pooled over all vehicles' logged power demand.
    pub rmse_before: f64,
    pub rmse_after: f64,
}

/// `(actual, predicted)` one-step pairs. Inputs outside the family's
/// support are clamped into it, so a model trained on a narrower regime can
/// still be scored.
fn one_step_errors(bundle: &FemBundle, trace: &[f64]) -> Result<Vec<(f64, f64)>> {
    let fem = FemForecaster::from_bundle(bundle, MultiStep::Iterated)?;
    let (lo, hi) = bundle.family.bounds;
    trace
        .windows(2)
        .map(|w| Ok((w[1], fem.predict(w[0].clamp(lo, hi), 1)?)))
        .collect()
}

/// Refits every vehicle's descriptive models and FEM bundle on the logged
/// data. FEM families keep their kind and size; their bounds grow to cover
/// the logged range.
pub fn feedback_update(
    scn: &Scenario,
    log: &QuadrupletLog,
    models: &[DescriptiveModels],
    bundles: &[FemBundle],
) -> Result<FeedbackOutcome> {
    let fleet = &scn.fleet;
    let trajs = log.trajectories();
    if trajs.len() != models.len() || trajs.len() != bundles.len() {
        return Err(Error::DimensionMismatch {
            expected: trajs.len(),
            found: models.len().min(bundles.len()),
        });
    }
    if log.ticks.is_empty() {
        return Err(Error::Config("feedback needs at least one logged tick".into()));
    }
    let mut out_models = Vec::new();
    let mut out_bundles = Vec::new();
    let mut report = Vec::new();
    let (mut before_all, mut after_all) = (Vec::new(), Vec::new());
    let mut actual_all = Vec::new();
    for (i, tr) in trajs.iter().enumerate() {
        let grids = Grids::for_vehicle(fleet, &scn.sim, i)?;
        let seq: Vec<(f64, f64)> = tr.iter().map(|s| (s.speed, s.accel)).collect();
        let mut steps = steps_of(fleet, i, &grids, &seq);
        // the final state closes the sequence; its action is never scored
        let last = *tr.last().expect("non-empty");
        steps.push(Step {
            s: grids.state_index(last.speed, last.accel),
            a: grids.actions.nearest(last.accel),
            r: 0.0,
        });
        let traj = StateActionTrajectory::new(steps, grids.n_states(), grids.actions.len())?;
        let refit = fit_models(&traj, scn.sim.gamma)?;
        let old = &models[i];
        let before = descriptive::consistency(&old.induction, &old.policy, &traj, 0.0, 0.0)?;
        let after = descriptive::consistency(&refit.induction, &refit.policy, &traj, 0.0, 0.0)?;

        let power: Vec<f64> = tr.iter().map(|s| s.power_demand).collect();
        let trace = ScalarTrace::new(power.clone(), log.dt, format!("vehicle {i}"))?;
        let old_b = &bundles[i];
        let (lo, hi) = trace.range();
        let bounds = (old_b.family.bounds.0.min(lo), old_b.family.bounds.1.max(hi));
        let mut spec = old_b.family.clone();
        spec.bounds = bounds;
        let new_b = FemBundle::train(&trace, spec, old_b.rule, ZeroRowPolicy::SelfLoop)?.0;
        let eb = one_step_errors(old_b, &power)?;
        let ea = one_step_errors(&new_b, &power)?;
        let actual: Vec<f64> = eb.iter().map(|e| e.0).collect();
        let pb: Vec<f64> = eb.iter().map(|e| e.1).collect();
        let pa: Vec<f64> = ea.iter().map(|e| e.1).collect();
        report.push(VehicleFeedback {
            vehicle: i,
            consistency_before: before,
            consistency_after: after,
            rmse_before: rmse(&actual, &pb),
            rmse_after: rmse(&actual, &pa),
        });
        actual_all.extend(actual);
        before_all.extend(pb);
        after_all.extend(pa);
        out_models.push(refit);
        out_bundles.push(new_b);
    }
    Ok(FeedbackOutcome {
        models: out_models,
        bundles: out_bundles,
        vehicles: report,
        rmse_before: rmse(&actual_all, &before_all),
        rmse_after: rmse(&actual_all, &after_all),
    })
}
