//! Longitudinal speed planning for a vehicle fleet on a signalized corridor.
//!
//! Planning is split in two layers. [`assign_windows`] picks, for every
//! signal ahead of a vehicle, the earliest green window the vehicle can
//! physically reach. [`plan_profile`] then solves a convex QP for the
//! acceleration sequence that tracks `v_ref` while crossing each stop line
//! inside its window and never dropping below `v_floor`. [`plan_fleet`] runs
//! both front to back so followers respect the headway to their leader's
//! committed plan. [`benchmark_controller`] is the stop-at-red reference.

mod benchmark;
mod profile;
pub(crate) mod qp;
mod windows;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use benchmark::{
    benchmark_accel, benchmark_controller, stopping_distance, v_allow, BenchmarkMemory,
};
pub use profile::plan_profile;
pub use windows::{assign_windows, WindowTarget};

pub(crate) use profile::plan_from;
pub(crate) use windows::assign_from;

/// One vehicle's physical limits and initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub position: f64,
    pub speed: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    /// Stop-line position in metres.
    pub position: f64,
    pub cycle: f64,
    /// Green windows as `[start, end)` offsets within the cycle.
    pub green: Vec<[f64; 2]>,
    #[serde(default)]
    pub phase: f64,
}

/// One concrete occurrence of a green window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenInterval {
    pub cycle: i64,
    pub window: usize,
    pub start: f64,
    pub end: f64,
}

impl Signal {
    pub fn green_at(&self, t: f64) -> bool {
        let u = (t - self.phase).rem_euclid(self.cycle);
        self.green.iter().any(|w| w[0] <= u && u < w[1])
    }

    /// Green intervals, in time order, that end after `t`.
    pub fn intervals_from(&self, t: f64) -> impl Iterator<Item = GreenInterval> + '_ {
        let mut order: Vec<usize> = (0..self.green.len()).collect();
        order.sort_by(|&a, &b| self.green[a][0].total_cmp(&self.green[b][0]));
        let first = ((t - self.phase) / self.cycle).floor() as i64 - 1;
        (first..).flat_map(move |c| {
            let base = self.phase + c as f64 * self.cycle;
            order
                .clone()
                .into_iter()
                .map(move |w| GreenInterval {
                    cycle: c,
                    window: w,
                    start: base + self.green[w][0],
                    end: base + self.green[w][1],
                })
        })
        .filter(move |g| g.end > t)
    }
}

pub fn green_at(signal: &Signal, t: f64) -> bool {
    signal.green_at(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_v: f64,
    pub w_a: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w_v: 1.0, w_a: 0.5 }
    }
}

fn default_v_floor() -> f64 {
    1.0
}

fn default_comfort_decel() -> f64 {
    2.0
}

/// Corridor description shared by the planner, the benchmark controller and
/// the world simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetScenario {
    pub dt: f64,
    pub horizon_steps: usize,
    pub d_min: f64,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default = "default_v_floor")]
    pub v_floor: f64,
    /// Deceleration the benchmark controller uses for planned stops.
    #[serde(default = "default_comfort_decel")]
    pub comfort_decel: f64,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub signals: Vec<Signal>,
}

impl FleetScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scn: FleetScenario = serde_json::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let scn: FleetScenario = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizon_steps == 0 {
            return bad("horizon_steps must be at least 1".into());
        }
        if !(self.d_min > 0.0) {
            return bad(format!("d_min must be positive, got {}", self.d_min));
        }
        if !(self.v_floor > 0.0) {
            return bad(format!("v_floor must be positive, got {}", self.v_floor));
        }
        if !(self.comfort_decel > 0.0) {
            return bad("comfort_decel must be positive".into());
        }
        if !(self.weights.w_v >= 0.0 && self.weights.w_a > 0.0) {
            return bad("weights need w_v >= 0 and w_a > 0".into());
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let finite = [v.position, v.speed, v.v_max, v.a_min, v.a_max, v.v_ref]
                .iter()
                .all(|x| x.is_finite());
            if !finite {
                return bad(format!("vehicle {i}: non-finite field"));
            }
            if !(v.a_min < 0.0 && v.a_max > 0.0) {
                return bad(format!("vehicle {i}: need a_min < 0 < a_max"));
            }
            if !(v.v_ref > 0.0 && v.v_ref <= v.v_max) {
                return bad(format!("vehicle {i}: need 0 < v_ref <= v_max"));
            }
            if !(v.v_floor_ok(self.v_floor)) {
                return bad(format!("vehicle {i}: v_floor must be below v_max"));
            }
            if !(0.0..=v.v_max).contains(&v.speed) {
                return bad(format!("vehicle {i}: initial speed outside [0, v_max]"));
            }
        }
        let order = self.front_to_back();
        for pair in order.windows(2) {
            let gap = self.vehicles[pair[0]].position - self.vehicles[pair[1]].position;
            if gap < self.d_min {
                return bad(format!(
                    "vehicles {} and {} start {gap} m apart, below d_min",
                    pair[0], pair[1]
                ));
            }
        }
        for (j, s) in self.signals.iter().enumerate() {
            if !(s.cycle > 0.0 && s.position.is_finite() && s.phase.is_finite()) {
                return bad(format!("signal {j}: invalid cycle or position"));
            }
            if s.green.is_empty() {
                return bad(format!("signal {j}: no green window"));
            }
            for w in &s.green {
                if !(w[0] >= 0.0 && w[0] < w[1] && w[1] <= s.cycle && w[1] - w[0] < s.cycle) {
                    return bad(format!(
                        "signal {j}: green window [{}, {}) must lie inside the cycle and be shorter than it",
                        w[0], w[1]
                    ));
                }
            }
            if j > 0 && s.position <= self.signals[j - 1].position {
                return bad(format!("signal {j}: positions must be strictly increasing"));
            }
        }
        Ok(())
    }

    /// Vehicle indices sorted front (largest position) to back.
    pub fn front_to_back(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.vehicles.len()).collect();
        order.sort_by(|&a, &b| {
            self.vehicles[b]
                .position
                .total_cmp(&self.vehicles[a].position)
                .then(a.cmp(&b))
        });
        order
    }

    /// Leader of every vehicle (by scenario index), if any.
    pub fn leaders(&self) -> Vec<Option<usize>> {
        let order = self.front_to_back();
        let mut out = vec![None; self.vehicles.len()];
        for pair in order.windows(2) {
            out[pair[1]] = Some(pair[0]);
        }
        out
    }
}

impl VehicleSpec {
    fn v_floor_ok(&self, v_floor: f64) -> bool {
        v_floor < self.v_max
    }
}

/// Speed floor at step `k` of a plan starting at `v0`. Vehicles that start
/// below `v_floor` get a ramp they can actually follow.
pub(crate) fn speed_floor(k: usize, v0: f64, v_floor: f64, a_max: f64, dt: f64) -> f64 {
    if v0 >= v_floor {
        v_floor
    } else {
        v_floor.min(v0 + 0.5 * k as f64 * a_max * dt)
    }
}

/// Explicit Euler step: position advances with the pre-step speed.
pub fn kinematic_step(s: f64, v: f64, a: f64, dt: f64, v_max: f64) -> (f64, f64) {
    (s + v * dt, (v + a * dt).clamp(0.0, v_max))
}

/// Time at which a piecewise-linear position path first passes `line`,
/// i.e. the `k` with `s_k <= line < s_{k+1}`.
pub(crate) fn crossing_time(t0: f64, dt: f64, pos: &[f64], speed: &[f64], line: f64) -> Option<f64> {
    if pos.first().map_or(true, |&s| s > line) {
        return None;
    }
    pos.windows(2)
        .position(|w| w[0] <= line && line < w[1])
        .map(|k| t0 + k as f64 * dt + (line - pos[k]) / speed[k])
}

/// Per-vehicle planned (or executed) profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedPlan {
    pub vehicle: usize,
    pub t0: f64,
    pub dt: f64,
    pub accel: Vec<f64>,
    pub speed: Vec<f64>,
    pub position: Vec<f64>,
    /// Per signal; `None` when the line is behind the start or not reached
    /// within the plan.
    pub crossings: Vec<Option<f64>>,
    /// Set when the planner could not find a feasible no-stop profile and the
    /// benchmark controller was substituted.
    #[serde(default)]
    pub fallback: bool,
}

impl SpeedPlan {
    /// Integrates `accel` from `(s0, v0)`.
    pub fn from_accels(
        vehicle: usize,
        t0: f64,
        dt: f64,
        s0: f64,
        v0: f64,
        v_max: f64,
        accel: Vec<f64>,
        signals: &[Signal],
    ) -> SpeedPlan {
        let mut position = Vec::with_capacity(accel.len() + 1);
        let mut speed = Vec::with_capacity(accel.len() + 1);
        let (mut s, mut v) = (s0, v0);
        position.push(s);
        speed.push(v);
        for &a in &accel {
            (s, v) = kinematic_step(s, v, a, dt, v_max);
            position.push(s);
            speed.push(v);
        }
        let crossings = signals
            .iter()
            .map(|sig| crossing_time(t0, dt, &position, &speed, sig.position))
            .collect();
        SpeedPlan {
            vehicle,
            t0,
            dt,
            accel,
            speed,
            position,
            crossings,
            fallback: false,
        }
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Re-integrates the accelerations and checks every stored sequence
    /// against the replay within `tol`, plus the bound invariants.
    pub fn check_consistency(&self, spec: &VehicleSpec, tol: f64) -> Result<()> {
        let n = self.accel.len();
        if self.speed.len() != n + 1 || self.position.len() != n + 1 {
            return Err(Error::Invariant(format!(
                "plan for vehicle {} has mismatched sequence lengths",
                self.vehicle
            )));
        }
        for k in 0..n {
            let a = self.accel[k];
            if a < spec.a_min - tol || a > spec.a_max + tol {
                return Err(Error::Invariant(format!("accel {a} out of bounds at step {k}")));
            }
            let (s, v) = kinematic_step(self.position[k], self.speed[k], a, self.dt, spec.v_max);
            if (s - self.position[k + 1]).abs() > tol || (v - self.speed[k + 1]).abs() > tol {
                return Err(Error::Invariant(format!(
                    "vehicle {}: replay mismatch at step {k}",
                    self.vehicle
                )));
            }
            if self.position[k + 1] < self.position[k] {
                return Err(Error::Invariant(format!("position decreases at step {k}")));
            }
        }
        if let Some(v) = self.speed.iter().find(|v| !(0.0..=spec.v_max + tol).contains(*v)) {
            return Err(Error::Invariant(format!("speed {v} outside [0, v_max]")));
        }
        Ok(())
    }

    pub fn min_speed(&self) -> f64 {
        self.speed.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Σ max(0, a_k)·v_k·dt`.
    pub fn energy_proxy(&self) -> f64 {
        self.accel
            .iter()
            .zip(&self.speed)
            .map(|(&a, &v)| a.max(0.0) * v * self.dt)
            .sum()
    }

    /// Tracking-plus-effort cost of the plan.
    pub fn cost(&self, weights: &Weights, v_ref: f64) -> f64 {
        self.accel
            .iter()
            .zip(&self.speed[1..])
            .map(|(&a, &v)| weights.w_v * (v - v_ref).powi(2) + weights.w_a * a * a)
            .sum()
    }

    /// Number of transitions from moving to exactly zero speed.
    pub fn stop_count(&self) -> usize {
        self.speed
            .windows(2)
            .filter(|w| w[0] > 0.0 && w[1] == 0.0)
            .count()
    }

    /// Whether the vehicle is ever at rest within `tol` metres before a stop
    /// line.
    pub fn stops_at_line(&self, signals: &[Signal], tol: f64) -> bool {
        self.speed.iter().zip(&self.position).any(|(&v, &s)| {
            v == 0.0 && signals.iter().any(|sig| (0.0..=tol).contains(&(sig.position - s)))
        })
    }
}

/// Plans every vehicle from the scenario's initial state.
pub fn plan_fleet(scn: &FleetScenario) -> Result<Vec<SpeedPlan>> {
    scn.validate()?;
    let states: Vec<(f64, f64)> = scn.vehicles.iter().map(|v| (v.position, v.speed)).collect();
    Ok(plan_fleet_from(scn, 0.0, &states))
}

/// Plans every vehicle from `states[i] = (position, speed)` at time `t0`.
/// Vehicles without a feasible no-stop plan get the benchmark profile with
/// `fallback` set.
pub fn plan_fleet_from(scn: &FleetScenario, t0: f64, states: &[(f64, f64)]) -> Vec<SpeedPlan> {
    let mut plans: Vec<Option<SpeedPlan>> = vec![None; scn.vehicles.len()];
    let leaders = scn.leaders();
    for i in scn.front_to_back() {
        let leader = leaders[i].and_then(|l| plans[l].as_ref());
        let start = Start {
            t0,
            s0: states[i].0,
            v0: states[i].1,
        };
        let plan = plan_vehicle(scn, i, &start, leader.map(|p| p.position.as_slice()))
            .unwrap_or_else(|e| {
                log::info!("{e}; using benchmark profile");
                let mut p = benchmark::benchmark_vehicle(scn, i, &start, leader);
                p.fallback = true;
                p
            });
        plans[i] = Some(plan);
    }
    plans.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Start {
    pub t0: f64,
    pub s0: f64,
    pub v0: f64,
}

impl Start {
    pub(crate) fn initial(scn: &FleetScenario, vehicle: usize) -> Start {
        let v = &scn.vehicles[vehicle];
        Start {
            t0: 0.0,
            s0: v.position,
            v0: v.speed,
        }
    }
}

fn skip_patterns(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n]];
    for step in 1..=2 {
        for j in 0..n {
            let mut s = vec![0; n];
            s[j] = step;
            out.push(s);
        }
    }
    out
}

fn plan_vehicle(
    scn: &FleetScenario,
    vehicle: usize,
    start: &Start,
    leader: Option<&[f64]>,
) -> Result<SpeedPlan> {
    let mut last = None;
    for skip in skip_patterns(scn.signals.len()) {
        let targets = match assign_from(scn, vehicle, start, &skip) {
            Ok(t) => t,
            Err(e) => {
                last.get_or_insert(e);
                continue;
            }
        };
        match plan_from(scn, vehicle, start, &targets, leader) {
            Ok(p) => return Ok(p),
            Err(e) => {
                log::debug!("vehicle {vehicle}, skip {skip:?}: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or_else(|| Error::Infeasible {
        vehicle,
        reason: "no candidate windows".into(),
    }))
}

/// Writes plans as CSV rows `t,vehicle_id,pos,speed,accel`. The final state
/// of each plan has an empty accel field.
pub fn write_plans_csv(plans: &[SpeedPlan], out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "vehicle_id", "pos", "speed", "accel"])?;
    for p in plans {
        for k in 0..p.position.len() {
            let accel = p.accel.get(k).map_or(String::new(), |a| a.to_string());
            w.write_record([
                p.time(k).to_string(),
                p.vehicle.to_string(),
                p.position[k].to_string(),
                p.speed[k].to_string(),
                accel,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Minimum leader-minus-follower gap over all steps and consecutive pairs.
pub fn min_headway(scn: &FleetScenario, plans: &[SpeedPlan]) -> Option<f64> {
    let leaders = scn.leaders();
    let mut best: Option<f64> = None;
    for (i, l) in leaders.iter().enumerate() {
        let Some(l) = *l else { continue };
        let (f, lp) = (&plans[i].position, &plans[l].position);
        for (a, b) in lp.iter().zip(f) {
            let g = a - b;
            best = Some(best.map_or(g, |x: f64| x.min(g)));
        }
    }
    best
}
