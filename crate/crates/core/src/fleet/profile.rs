use super::qp::{Qp, Row, Settings};
use super::{kinematic_step, speed_floor, FleetScenario, SpeedPlan, Start, WindowTarget};
use crate::{Error, Result};

// Inner tightening so the replayed plan still satisfies the hard constraints
// after solver round-off.
const POS_MARGIN: f64 = 0.05;
const SPEED_MARGIN: f64 = 0.01;
const ACCEL_SNAP: f64 = 1e-6;
const CHECK_TOL: f64 = 1e-6;

/// Crossing margin inside a window: half a control period, shrunk for
/// windows too short to hold it.
pub(crate) fn window_margin(dt: f64, start: f64, end: f64) -> f64 {
    (0.5 * dt).min(0.25 * (end - start))
}

/// Variable layout per step `k`: `a_k`, `v_{k+1}`, `s_{k+1} - s0`.
fn ia(k: usize) -> usize {
    3 * k
}
fn iv(k: usize) -> usize {
    3 * (k - 1) + 1
}
fn is(k: usize) -> usize {
    3 * (k - 1) + 2
}

/// Position (relative to `s0`) at time `tau` as a linear expression, or a
/// constant when it only depends on the fixed initial state.
enum PosExpr {
    Const(f64),
    Linear(Vec<(usize, f64)>),
}

fn position_at(tau: f64, start: &Start, dt: f64, h: usize) -> Option<PosExpr> {
    let rel = tau - start.t0;
    if rel < 0.0 || rel > h as f64 * dt {
        return None;
    }
    let k = ((rel / dt).floor() as usize).min(h);
    let frac = rel - k as f64 * dt;
    if k == 0 {
        return Some(PosExpr::Const(frac * start.v0));
    }
    let mut e = vec![(is(k), 1.0)];
    if frac > 0.0 && k < h {
        e.push((iv(k), frac));
    }
    Some(PosExpr::Linear(e))
}

/// Single-vehicle profile from the scenario's initial state with no leader.
pub fn plan_profile(
    scn: &FleetScenario,
    vehicle: usize,
    targets: &[WindowTarget],
) -> Result<SpeedPlan> {
    scn.validate()?;
    plan_from(scn, vehicle, &Start::initial(scn, vehicle), targets, None)
}

pub(crate) fn plan_from(
    scn: &FleetScenario,
    vehicle: usize,
    start: &Start,
    targets: &[WindowTarget],
    leader: Option<&[f64]>,
) -> Result<SpeedPlan> {
    let veh = &scn.vehicles[vehicle];
    let infeasible = |reason: String| Error::Infeasible { vehicle, reason };
    let h = scn.horizon_steps;
    let dt = scn.dt;
    let n = 3 * h;
    let t_end = start.t0 + h as f64 * dt;
    let w = scn.weights;

    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut rows = Vec::with_capacity(6 * h);
    for k in 0..h {
        p[ia(k)] = 2.0 * w.w_a;
        p[iv(k + 1)] = 2.0 * w.w_v;
        q[iv(k + 1)] = -2.0 * w.w_v * veh.v_ref;
        if k == 0 {
            rows.push(Row::new(vec![(iv(1), 1.0), (ia(0), -dt)], start.v0, start.v0));
            rows.push(Row::new(vec![(is(1), 1.0)], dt * start.v0, dt * start.v0));
        } else {
            rows.push(Row::new(vec![(iv(k + 1), 1.0), (iv(k), -1.0), (ia(k), -dt)], 0.0, 0.0));
            rows.push(Row::new(vec![(is(k + 1), 1.0), (is(k), -1.0), (iv(k), -dt)], 0.0, 0.0));
        }
        rows.push(Row::new(vec![(ia(k), 1.0)], veh.a_min, veh.a_max));
        let floor = speed_floor(k + 1, start.v0, scn.v_floor, veh.a_max, dt);
        rows.push(Row::new(vec![(iv(k + 1), 1.0)], floor + SPEED_MARGIN, veh.v_max));
        if let Some(lp) = leader {
            let cap = lp[k + 1] - start.s0 - scn.d_min;
            rows.push(Row::new(vec![(is(k + 1), 1.0)], f64::NEG_INFINITY, cap));
        }
    }

    for tg in targets {
        let line = scn.signals[tg.signal].position - start.s0;
        let m = window_margin(dt, tg.start, tg.end);
        let (lo_t, hi_t) = (tg.start + m, tg.end - m);
        if hi_t <= start.t0 {
            return Err(infeasible(format!("window of signal {} already closed", tg.signal)));
        }
        if lo_t > start.t0 {
            // not yet across the line at the window opening
            let expr = position_at(lo_t, start, dt, h)
                .unwrap_or_else(|| PosExpr::Linear(vec![(is(h), 1.0)]));
            match expr {
                PosExpr::Const(c) if c > line - POS_MARGIN => {
                    return Err(infeasible(format!("signal {} is crossed too early", tg.signal)))
                }
                PosExpr::Const(_) => {}
                PosExpr::Linear(e) => rows.push(Row::new(e, f64::NEG_INFINITY, line - POS_MARGIN)),
            }
        }
        if hi_t <= t_end {
            match position_at(hi_t, start, dt, h) {
                Some(PosExpr::Const(c)) if c < line + POS_MARGIN => {
                    return Err(infeasible(format!("signal {} cannot be reached in time", tg.signal)))
                }
                Some(PosExpr::Linear(e)) => rows.push(Row::new(e, line + POS_MARGIN, f64::INFINITY)),
                _ => {}
            }
        }
    }

    // warm start from holding the current speed
    let mut warm = vec![0.0; n];
    for k in 1..=h {
        warm[iv(k)] = start.v0;
        warm[is(k)] = start.v0 * dt * k as f64;
    }
    let qp = Qp { p, q, rows };
    let sol = qp.solve(&Settings::default(), Some(&warm));
    log::debug!(
        "vehicle {vehicle}: qp {} iterations, converged {}, infeasible {}, primal residual {:e}",
        sol.iterations,
        sol.converged,
        sol.infeasible,
        sol.primal_residual
    );
    if sol.infeasible {
        return Err(infeasible("speed-profile constraints are contradictory".into()));
    }

    let mut accel = Vec::with_capacity(h);
    let (mut s, mut v) = (start.s0, start.v0);
    for k in 0..h {
        let mut a = sol.x[ia(k)].clamp(veh.a_min, veh.a_max);
        if a.abs() < ACCEL_SNAP {
            a = 0.0;
        }
        // headway is enforced exactly on replay; the solver only gets close
        if let Some(lp) = leader.filter(|lp| k + 2 < lp.len()) {
            let cap = ((lp[k + 2] - scn.d_min - s - v * dt) / dt - v) / dt;
            if a > cap + 1e-9 {
                a = cap.max(veh.a_min);
            }
        }
        accel.push(a);
        (s, v) = kinematic_step(s, v, a, dt, veh.v_max);
    }
    let plan = SpeedPlan::from_accels(
        vehicle,
        start.t0,
        dt,
        start.s0,
        start.v0,
        veh.v_max,
        accel,
        &scn.signals,
    );
    verify(scn, vehicle, start, &plan, targets, leader).map_err(infeasible)?;
    Ok(plan)
}

fn verify(
    scn: &FleetScenario,
    vehicle: usize,
    start: &Start,
    plan: &SpeedPlan,
    targets: &[WindowTarget],
    leader: Option<&[f64]>,
) -> std::result::Result<(), String> {
    let veh = &scn.vehicles[vehicle];
    for k in 1..plan.speed.len() {
        let floor = speed_floor(k, start.v0, scn.v_floor, veh.a_max, scn.dt);
        if plan.speed[k] < floor - CHECK_TOL {
            return Err(format!("speed {:.4} below floor at step {k}", plan.speed[k]));
        }
    }
    let t_end = plan.time(plan.len());
    for tg in targets {
        let m = window_margin(scn.dt, tg.start, tg.end);
        match plan.crossings[tg.signal] {
            Some(t) if t < tg.start + m - CHECK_TOL || t > tg.end - m + CHECK_TOL => {
                return Err(format!(
                    "signal {} crossed at {t:.3}, outside [{:.3}, {:.3})",
                    tg.signal, tg.start, tg.end
                ))
            }
            None if tg.end - m <= t_end => {
                return Err(format!("signal {} not crossed by {:.3}", tg.signal, tg.end))
            }
            _ => {}
        }
    }
    if let Some(lp) = leader {
        for (k, (a, b)) in lp.iter().zip(&plan.position).enumerate() {
            if a - b < scn.d_min - CHECK_TOL {
                return Err(format!("headway {:.4} below d_min at step {k}", a - b));
            }
        }
    }
    Ok(())
}
