use super::{speed_floor, FleetScenario, Start, VehicleSpec};
use crate::{Error, Result};

/// Target green window for one signal ahead of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTarget {
    pub signal: usize,
    /// Cycle number and window index within the cycle.
    pub cycle: i64,
    pub window: usize,
    pub start: f64,
    pub end: f64,
    /// Earliest and latest reachable crossing times.
    pub reach: (f64, f64),
}

const MAX_STEPS: usize = 10_000_000;

/// Crossing time of `line` for the profile produced by `next_speed`.
fn simulate_crossing(
    start: &Start,
    dt: f64,
    v_max: f64,
    line: f64,
    mut next_speed: impl FnMut(usize, f64) -> f64,
) -> Option<f64> {
    let (mut s, mut v) = (start.s0, start.v0);
    for k in 0..MAX_STEPS {
        let s1 = s + v * dt;
        if s <= line && line < s1 {
            return Some(start.t0 + k as f64 * dt + (line - s) / v);
        }
        s = s1;
        v = next_speed(k, v).clamp(0.0, v_max);
    }
    None
}

pub(crate) fn earliest_crossing(start: &Start, veh: &VehicleSpec, dt: f64, line: f64) -> Option<f64> {
    simulate_crossing(start, dt, veh.v_max, line, |_, v| (v + veh.a_max * dt).min(veh.v_max))
}

pub(crate) fn latest_crossing(
    start: &Start,
    veh: &VehicleSpec,
    dt: f64,
    v_floor: f64,
    line: f64,
) -> Option<f64> {
    simulate_crossing(start, dt, veh.v_max, line, |k, v| {
        (v + veh.a_min * dt).max(speed_floor(k + 1, start.v0, v_floor, veh.a_max, dt))
    })
}

/// Earliest reachable green window for every signal ahead of `vehicle`,
/// starting from the scenario's initial state.
pub fn assign_windows(scn: &FleetScenario, vehicle: usize) -> Result<Vec<WindowTarget>> {
    scn.validate()?;
    if vehicle >= scn.vehicles.len() {
        return Err(Error::IndexOutOfRange {
            index: vehicle,
            n: scn.vehicles.len(),
        });
    }
    assign_from(scn, vehicle, &Start::initial(scn, vehicle), &[])
}

/// As [`assign_windows`] from an arbitrary start. `skip[j]` passes over that
/// many otherwise-selectable windows of the `j`-th signal.
pub(crate) fn assign_from(
    scn: &FleetScenario,
    vehicle: usize,
    start: &Start,
    skip: &[usize],
) -> Result<Vec<WindowTarget>> {
    let veh = &scn.vehicles[vehicle];
    let infeasible = |reason: String| Error::Infeasible { vehicle, reason };
    let mut out = Vec::new();
    // committed crossing range at the previous signal
    let mut prev: Option<(f64, f64, f64)> = None;
    for (j, sig) in scn.signals.iter().enumerate() {
        if sig.position < start.s0 {
            continue;
        }
        let mut early = earliest_crossing(start, veh, scn.dt, sig.position)
            .ok_or_else(|| infeasible(format!("signal {j} is unreachable")))?;
        let mut late = latest_crossing(start, veh, scn.dt, scn.v_floor, sig.position)
            .ok_or_else(|| infeasible(format!("signal {j} is unreachable")))?;
        if let Some((lo, hi, line)) = prev {
            let gap = sig.position - line;
            early = early.max(lo + gap / veh.v_max);
            late = late.min(hi + gap / scn.v_floor);
        }
        if early > late {
            return Err(infeasible(format!("empty reachability interval at signal {j}")));
        }
        let mut to_skip = skip.get(j).copied().unwrap_or(0);
        let mut chosen = None;
        for g in sig.intervals_from(early) {
            if g.start > late {
                break;
            }
            if to_skip == 0 {
                chosen = Some(g);
                break;
            }
            to_skip -= 1;
        }
        let g = chosen.ok_or_else(|| {
            infeasible(format!(
                "no green window of signal {j} intersects [{early:.3}, {late:.3}]"
            ))
        })?;
        out.push(WindowTarget {
            signal: j,
            cycle: g.cycle,
            window: g.window,
            start: g.start,
            end: g.end,
            reach: (early, late),
        });
        prev = Some((early.max(g.start), late.min(g.end), sig.position));
    }
    Ok(out)
}
