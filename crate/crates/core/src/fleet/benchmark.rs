use super::{kinematic_step, FleetScenario, SpeedPlan, Start, VehicleSpec};

const SPEED_SNAP: f64 = 1e-6;

/// Distance covered from speed `u` when speed drops by `b·dt` every step,
/// positions advancing with the pre-step speed.
pub fn stopping_distance(u: f64, b: f64, dt: f64) -> f64 {
    let beta = b * dt;
    let mut d = 0.0;
    let mut v = u;
    while v > 0.0 {
        d += v * dt;
        v -= beta;
    }
    d
}

/// Largest speed `u` with `stopping_distance(u, b, dt) <= gap`.
pub fn v_allow(gap: f64, b: f64, dt: f64) -> f64 {
    if gap <= 0.0 {
        return 0.0;
    }
    let beta = b * dt;
    // largest n with dt·β·n(n+1)/2 <= gap
    let g = gap / (dt * beta);
    let mut n = ((-1.0 + (1.0 + 8.0 * g).sqrt()) / 2.0).floor().max(0.0);
    while n * (n + 1.0) / 2.0 > g {
        n -= 1.0;
    }
    while (n + 1.0) * (n + 2.0) / 2.0 <= g {
        n += 1.0;
    }
    let u = (gap / dt + beta * n * (n + 1.0) / 2.0) / (n + 1.0);
    if u < SPEED_SNAP {
        0.0
    } else {
        u
    }
}

/// Per-vehicle controller state: the signal the vehicle has committed to
/// stopping for, if any.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BenchmarkMemory {
    pub stopping_for: Option<usize>,
}

/// One step of the stop-at-red controller. `leader_next` is the leader's
/// position and speed at `t + dt`.
pub fn benchmark_accel(
    scn: &FleetScenario,
    veh: &VehicleSpec,
    t: f64,
    s: f64,
    v: f64,
    leader_next: Option<(f64, f64)>,
    mem: &mut BenchmarkMemory,
) -> f64 {
    let dt = scn.dt;
    let comfort = scn.comfort_decel.min(-veh.a_min);
    let hard = -veh.a_min;
    let floor_next = (v + veh.a_min * dt).max(0.0);
    let mut target = veh.v_ref.min(v + veh.a_max * dt).max(floor_next);
    let s_next = s + v * dt;
    let t_next = t + dt;

    let ahead = scn.signals.iter().position(|sig| sig.position >= s_next);
    if mem.stopping_for != ahead {
        mem.stopping_for = None;
    }
    if let Some(j) = ahead {
        let sig = &scn.signals[j];
        let gap = sig.position - s_next;
        let arrival = t_next + gap / target.max(1.0);
        let green_on_arrival = sig.green_at(arrival);
        if mem.stopping_for.is_some() {
            if sig.green_at(t_next) && green_on_arrival {
                mem.stopping_for = None;
            }
        } else if !green_on_arrival {
            mem.stopping_for = Some(j);
        }
        if mem.stopping_for.is_some() {
            let cap = v_allow(gap, comfort, dt);
            if cap >= floor_next {
                target = target.min(cap);
            } else {
                let cap = v_allow(gap, hard, dt);
                if cap >= floor_next {
                    target = target.min(cap);
                } else {
                    // too late to stop; go through
                    mem.stopping_for = None;
                }
            }
        }
    }
    if let Some((ls, lv)) = leader_next {
        let room = ls - scn.d_min - s_next + stopping_distance(lv, comfort, dt);
        target = target.min(v_allow(room, comfort, dt));
        // the leader's position two steps out is already fixed by its next speed
        target = target.min((ls + lv * dt - scn.d_min - s_next) / dt);
    }

    if target <= 0.0 {
        if v == 0.0 {
            0.0
        } else {
            // overshoot slightly so the clamp lands on exactly zero
            (-v / dt - 1e-9).max(veh.a_min)
        }
    } else {
        ((target - v) / dt).clamp(veh.a_min, veh.a_max)
    }
}

/// Benchmark profile for a single vehicle following `leader`'s profile.
pub(crate) fn benchmark_vehicle(
    scn: &FleetScenario,
    vehicle: usize,
    start: &Start,
    leader: Option<&SpeedPlan>,
) -> SpeedPlan {
    let veh = &scn.vehicles[vehicle];
    let mut mem = BenchmarkMemory::default();
    let (mut s, mut v) = (start.s0, start.v0);
    let mut accel = Vec::with_capacity(scn.horizon_steps);
    for k in 0..scn.horizon_steps {
        let t = start.t0 + k as f64 * scn.dt;
        let lead = leader.map(|p| (p.position[k + 1], p.speed[k + 1]));
        let a = benchmark_accel(scn, veh, t, s, v, lead, &mut mem);
        accel.push(a);
        (s, v) = kinematic_step(s, v, a, scn.dt, veh.v_max);
    }
    SpeedPlan::from_accels(
        vehicle,
        start.t0,
        scn.dt,
        start.s0,
        start.v0,
        veh.v_max,
        accel,
        &scn.signals,
    )
}

/// Stop-at-red reference profiles for the whole fleet, in scenario order.
pub fn benchmark_controller(scn: &FleetScenario) -> Vec<SpeedPlan> {
    let leaders = scn.leaders();
    let mut plans: Vec<Option<SpeedPlan>> = vec![None; scn.vehicles.len()];
    for i in scn.front_to_back() {
        let lead = leaders[i].and_then(|l| plans[l].as_ref());
        plans[i] = Some(benchmark_vehicle(scn, i, &Start::initial(scn, i), lead));
    }
    plans.into_iter().flatten().collect()
}
