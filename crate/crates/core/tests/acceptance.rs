//! Acceptance suite. Runs every criterion in sequence so the runtime budgets
//! are measured without interference, prints one PASS/FAIL line each, and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use quadsim::descriptive::{consistency, fit, DEFAULT_GAMMA};
use quadsim::fleet::{benchmark_controller, plan_fleet, FleetScenario, Signal, SpeedPlan};
use quadsim::fuzzy::{fem_predict, make_family, FamilyKind};
use quadsim::markov::{estimate, propagate, stationary, StateDistribution, TransitionCounts, TransitionMatrix, ZeroRowPolicy};
use quadsim::predictive::{predict_power_demand, PredictionSetup};
use quadsim::prescriptive::{calibrate, gate, select_action, CandidateActionSet, GateModels, SafetyContext};
use quadsim::trace::{load_trace, CrispStateSpace, StateActionTrajectory, Step, TraceFormat};
use quadsim::world::{feedback_update, Scenario, World};

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_stochastic(rng: &mut ChaCha8Rng, n: usize, zero_prob: f64) -> TransitionMatrix {
    let rows = (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(zero_prob) { 0.0 } else { rng.random_range(0.01..1.0) })
                .collect();
            if row.iter().all(|&x| x == 0.0) {
                row[rng.random_range(0..n)] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect();
    TransitionMatrix::from_rows(rows).expect("normalized rows")
}

// 1: with equal-width indicator cells the fuzzy predictor reduces to the
// crisp conditional mean over cell midpoints.
fn fem_crisp_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for case in 0..100 {
        let n = rng.random_range(3..=8);
        let lo = rng.random_range(-50.0..50.0);
        let width = rng.random_range(0.5..20.0);
        let hi = lo + width * n as f64;
        let fam = make_family(FamilyKind::IndicatorPartition, n, (lo, hi), &BTreeMap::new()).map_err(|e| e.to_string())?;
        let pi = random_stochastic(&mut rng, n, 0.3);
        let i = rng.random_range(0..n);
        let x = lo + (i as f64 + rng.random_range(0.05..0.95)) * width;
        let got = fem_predict(x, &fam, &pi, 1).map_err(|e| e.to_string())?;
        let want: f64 = (0..n).map(|j| pi.get(i, j) * (lo + (j as f64 + 0.5) * width)).sum();
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-10, || format!("case {case}: {got} vs crisp mean {want}"))?;
    }
    Ok(format!("max |error| {worst:.2e} over 100 chains"))
}

// 2
fn stochasticity_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut zero_rows = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        let counts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0..1000) as f64 }).collect()
                }
            })
            .collect();
        zero_rows += counts.iter().filter(|r| r.iter().all(|&c| c == 0.0)).count();
        let c = TransitionCounts::from_rows(counts).map_err(|e| e.to_string())?;
        for policy in [ZeroRowPolicy::SelfLoop, ZeroRowPolicy::Uniform] {
            let pi = estimate(&c, policy);
            for (i, row) in pi.rows().iter().enumerate() {
                let sum: f64 = row.iter().sum();
                ensure(row.iter().all(|&p| p >= 0.0) && (sum - 1.0).abs() <= 1e-12, || {
                    format!("case {case}, {policy:?}, row {i}: sums to {sum}")
                })?;
            }
        }
    }
    Ok(format!("1000 matrices, {zero_rows} zero rows, both policies"))
}

fn power_iteration(pi: &TransitionMatrix) -> Vec<f64> {
    let n = pi.n();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += v[i] * pi.get(i, j);
            }
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-15 {
            break;
        }
    }
    v
}

// 3
fn n_step_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for case in 0..50 {
        let n = rng.random_range(2..=8);
        // strictly positive rows: ergodic and aperiodic
        let pi = random_stochastic(&mut rng, n, 0.0);
        let p0 = {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            StateDistribution::new(raw.iter().map(|x| x / s).collect()).map_err(|e| e.to_string())?
        };
        let (a, b) = (rng.random_range(0..30), rng.random_range(0..30));
        let joint = propagate(&p0, &pi, a + b).map_err(|e| e.to_string())?;
        let split = propagate(&propagate(&p0, &pi, a).map_err(|e| e.to_string())?, &pi, b).map_err(|e| e.to_string())?;
        let gap = joint.probs().iter().zip(split.probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(gap <= 1e-12, || format!("case {case}: semigroup gap {gap:e}"))?;

        let oracle = power_iteration(&pi);
        let far = propagate(&p0, &pi, 10_000).map_err(|e| e.to_string())?;
        let err = far.probs().iter().zip(&oracle).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("case {case}: |p·Π^10000 − π| = {err:e}"))?;
        let st = stationary(&pi, 1e-14, 1_000_000).map_err(|e| e.to_string())?;
        let err = st.probs().iter().zip(&oracle).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(err <= 1e-8, || format!("case {case}: stationary off by {err:e}"))?;
    }
    Ok(format!("50 chains, max ‖p·Π^10000 − π‖∞ {worst:.2e}"))
}

// 4
fn convex_combination_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kinds = [
        FamilyKind::Triangular,
        FamilyKind::Trapezoidal,
        FamilyKind::GaussianTruncated,
        FamilyKind::IndicatorPartition,
    ];
    for case in 0..10_000 {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let n = rng.random_range(2..=8);
        let lo = rng.random_range(-100.0..100.0);
        let hi = lo + rng.random_range(0.1..200.0);
        let fam = make_family(kind, n, (lo, hi), &BTreeMap::new()).map_err(|e| e.to_string())?;
        let pi = random_stochastic(&mut rng, n, 0.5);
        let x = rng.random_range(lo..=hi);
        let steps = rng.random_range(1..=20);
        let y = fem_predict(x, &fam, &pi, steps).map_err(|e| format!("case {case}: {e}"))?;
        let c = fam.centroids();
        let (cmin, cmax) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        ensure(y >= cmin && y <= cmax, || format!("case {case}: {y} outside [{cmin}, {cmax}]"))?;
    }
    Ok("10000 cases inside the centroid hull".into())
}

// 5
fn power_prediction_reproduction() -> Outcome {
    let trace = load_trace(&data("drive_cycle.csv"), TraceFormat::Csv).map_err(|e| e.to_string())?;
    let setup: PredictionSetup =
        serde_json::from_str(&std::fs::read_to_string(data("drive_cycle.family.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let r = predict_power_demand(&trace, &setup).map_err(|e| e.to_string())?;
    ensure(r.one_step.rmse_fem <= r.one_step.rmse_persistence, || {
        format!("one-step FEM RMSE {} above persistence {}", r.one_step.rmse_fem, r.one_step.rmse_persistence)
    })?;
    ensure(r.horizon.horizon_steps as f64 * r.dt == 10.0 && r.horizon.rmse_fem.is_finite(), || {
        format!("horizon report: {} steps, RMSE {}", r.horizon.horizon_steps, r.horizon.rmse_fem)
    })?;
    let golden: Value =
        serde_json::from_str(&std::fs::read_to_string(data("golden/drive_cycle_rmse.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    for (key, h) in [("one_step", &r.one_step), ("horizon", &r.horizon)] {
        for (field, got) in [("rmse_fem", h.rmse_fem), ("rmse_persistence", h.rmse_persistence)] {
            let want = golden[key][field].as_f64().ok_or("golden file is malformed")?;
            ensure(got == want, || format!("{key}.{field} = {got}, golden {want}"))?;
        }
    }
    Ok(format!(
        "one-step RMSE {:.4} (persistence {:.4}), 10 s RMSE {:.4} (persistence {:.4})",
        r.one_step.rmse_fem, r.one_step.rmse_persistence, r.horizon.rmse_fem, r.horizon.rmse_persistence
    ))
}

fn green(sig: &Signal, t: f64) -> bool {
    let local = (t - sig.phase).rem_euclid(sig.cycle);
    sig.green.iter().any(|w| local >= w[0] && local < w[1])
}

/// Replays the kinematics and returns per-vehicle crossing times.
fn replay(scn: &FleetScenario, p: &SpeedPlan) -> Result<Vec<Option<f64>>, String> {
    let v = &scn.vehicles[p.vehicle];
    for k in 0..p.accel.len() {
        let s = p.position[k] + p.speed[k] * scn.dt;
        let u = (p.speed[k] + p.accel[k] * scn.dt).clamp(0.0, v.v_max);
        ensure(s == p.position[k + 1] && u == p.speed[k + 1], || format!("vehicle {} breaks the update at step {k}", p.vehicle))?;
        ensure(p.accel[k] >= v.a_min && p.accel[k] <= v.a_max, || format!("vehicle {} accel out of bounds", p.vehicle))?;
    }
    Ok(scn
        .signals
        .iter()
        .map(|sig| {
            (0..p.accel.len()).find_map(|k| {
                let (s0, s1) = (p.position[k], p.position[k + 1]);
                (s0 <= sig.position && sig.position < s1).then(|| p.t0 + k as f64 * scn.dt + (sig.position - s0) / p.speed[k])
            })
        })
        .collect())
}

fn energy(p: &SpeedPlan, dt: f64) -> f64 {
    p.accel.iter().zip(&p.speed).map(|(a, v)| a.max(0.0) * v * dt).sum()
}

// 6
fn corridor_reproduction() -> Outcome {
    let scn = FleetScenario::load(&data("corridor.json")).map_err(|e| e.to_string())?;
    let mpc = plan_fleet(&scn).map_err(|e| e.to_string())?;
    let bench = benchmark_controller(&scn);

    let mut stops_at_line = 0;
    for p in &bench {
        replay(&scn, p)?;
        for (k, &v) in p.speed.iter().enumerate() {
            let at_line = scn.signals.iter().any(|s| (0.0..=0.5).contains(&(s.position - p.position[k])));
            if v == 0.0 && at_line {
                stops_at_line += 1;
                break;
            }
        }
    }
    ensure(stops_at_line >= 1, || "benchmark never stops at a line".into())?;

    let mut on_green = 0;
    for p in &mpc {
        ensure(!p.fallback, || format!("vehicle {} fell back", p.vehicle))?;
        let crossings = replay(&scn, p)?;
        for (sig, c) in scn.signals.iter().zip(&crossings) {
            let t = c.ok_or_else(|| format!("vehicle {} never crosses {}", p.vehicle, sig.position))?;
            ensure(green(sig, t), || format!("vehicle {} crosses {} on red at {t}", p.vehicle, sig.position))?;
            on_green += 1;
        }
        let vmin = p.speed.iter().cloned().fold(f64::INFINITY, f64::min);
        ensure(vmin >= 1.0, || format!("vehicle {} slows to {vmin}", p.vehicle))?;
        ensure(p.speed.iter().all(|&v| v > 0.0), || format!("vehicle {} stops", p.vehicle))?;
    }
    ensure(on_green == 6, || format!("{on_green} crossings on green"))?;

    let mut min_gap = f64::INFINITY;
    let mut order: Vec<&SpeedPlan> = mpc.iter().collect();
    order.sort_by(|a, b| b.position[0].total_cmp(&a.position[0]));
    for pair in order.windows(2) {
        for k in 0..pair[0].position.len() {
            min_gap = min_gap.min(pair[0].position[k] - pair[1].position[k]);
        }
    }
    ensure(min_gap >= scn.d_min - 1e-9, || format!("headway {min_gap} below {}", scn.d_min))?;

    let (em, eb): (f64, f64) = (
        mpc.iter().map(|p| energy(p, scn.dt)).sum(),
        bench.iter().map(|p| energy(p, scn.dt)).sum(),
    );
    ensure(em < eb, || format!("energy {em} not below benchmark {eb}"))?;
    Ok(format!(
        "benchmark stops at a line for {stops_at_line} vehicles; plan: 0 stops, 6/6 green, headway {min_gap:.3} m, energy {em:.1} vs {eb:.1}"
    ))
}

// 7
fn descriptive_recovery() -> Outcome {
    // next state is the action; reward 1 when the action matches the state
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = 0;
    let steps: Vec<Step> = (0..200)
        .map(|_| {
            let a = rng.random_range(0..2);
            let st = Step { s, a, r: if s == a { 1.0 } else { 0.0 } };
            s = a;
            st
        })
        .collect();
    let explored = StateActionTrajectory::new(steps, 2, 2).map_err(|e| e.to_string())?;
    let (f, p) = fit(&explored, DEFAULT_GAMMA).map_err(|e| e.to_string())?;
    for start in 0..2 {
        // roll the fitted policy through the plant
        let mut s = start;
        let rollout: Vec<Step> = (0..50)
            .map(|_| {
                let a = p.p_map[s].expect("both states observed");
                let st = Step { s, a, r: if s == a { 1.0 } else { 0.0 } };
                s = a;
                st
            })
            .collect();
        let eval = StateActionTrajectory::new(rollout, 2, 2).map_err(|e| e.to_string())?;
        let r = consistency(&f, &p, &eval, 0.0, 0.0).map_err(|e| e.to_string())?;
        ensure(r.d_state == 0.0 && r.d_action == 0.0 && r.violations() == 0, || format!("from state {start}: {r:?}"))?;
    }
    Ok(format!("F_A {:?}, P_R {:?}, zero distances and violations", f.f_map, p.p_map))
}

fn random_trajectory(rng: &mut ChaCha8Rng, ns: usize, na: usize, len: usize) -> StateActionTrajectory {
    let steps = (0..len)
        .map(|_| Step {
            s: rng.random_range(0..ns),
            a: rng.random_range(0..na),
            r: rng.random_range(-1.0..1.0),
        })
        .collect();
    StateActionTrajectory::new(steps, ns, na).expect("indices in range")
}

// 8
fn prescriptive_gate_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let m = rng.random_range(1..=10);
        let cands: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..2.0)).collect();
        let table: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
        let set = CandidateActionSet::new(cands, (-3.0, 2.0), table).map_err(|e| e.to_string())?;
        let (alpha, beta) = (rng.random_range(0.1..10.0), rng.random_range(-50.0..50.0));
        let base = |t: &Vec<f64>, a: f64| t[set.candidates().iter().position(|&c| c == a).unwrap()];
        let i = select_action(&set, base);
        let j = select_action(&set, |t, a| alpha * base(t, a) + beta);
        ensure(i == j, || format!("case {case}: argmax moved from {i} to {j} under an affine map"))?;
    }

    for case in 0..1000 {
        let (ns, na) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let len = rng.random_range(3..40);
        let traj = random_trajectory(&mut rng, ns, na, len);
        let (f, p) = fit(&traj, 0.5).map_err(|e| e.to_string())?;
        let actions = CrispStateSpace::uniform(na, (-3.0, 2.0)).map_err(|e| e.to_string())?;
        let models = GateModels { policy: &p, induction: &f, actions: &actions };
        let safety = SafetyContext {
            position: 0.0,
            speed: rng.random_range(0.0..15.0),
            dt: 0.5,
            v_max: 15.0,
            a_min: -3.0,
            a_max: 2.0,
            d_min: 8.0,
            leader: rng.random_bool(0.5).then(|| (rng.random_range(8.0..30.0), rng.random_range(0.0..15.0))),
            lookahead_steps: 2,
        };
        let a = rng.random_range(-3.0..2.0);
        let eps = rng.random_range(0.0..3.0);
        let eps2 = eps + rng.random_range(0.0..3.0);
        let lo = gate(a, &models, eps, &safety).map_err(|e| e.to_string())?;
        let hi = gate(a, &models, eps2, &safety).map_err(|e| e.to_string())?;
        ensure(!lo.accepted || hi.accepted, || format!("case {case}: accepted at {eps}, rejected at {eps2}"))?;
    }

    for run in 0..100 {
        let (ns, na) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let len = rng.random_range(5..60);
        let traj = random_trajectory(&mut rng, ns, na, len);
        let (f, p) = fit(&traj, 0.5).map_err(|e| e.to_string())?;
        let cal = calibrate(&traj, &f, &p, rng.random_range(0.0..1.0), 20).map_err(|e| e.to_string())?;
        let monotone = cal.history.windows(2).all(|w| w[1] <= w[0]);
        ensure(monotone && cal.violations <= cal.initial_violations, || {
            format!("run {run}: violations {} -> {:?}", cal.initial_violations, cal.history)
        })?;
    }
    Ok("affine invariance 1000/1000, ε-monotonicity 1000/1000, calibration monotone 100/100".into())
}

fn sha256_file(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

// 9
fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir_in(env!("CARGO_TARGET_TMPDIR")).map_err(|e| e.to_string())?;
    let scenario = data("corridor.json");
    let mut hashes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = quadsim::cli::cmd_run(&scenario, 600, 17, &out).map_err(|e| e.to_string())?;
        ensure(code == 0, || format!("run exited with {code}"))?;
        hashes.push((sha256_file(&out.join("log.jsonl"))?, sha256_file(&out.join("summary.json"))?));
    }
    ensure(hashes[0] == hashes[1], || "logs differ between identical runs".into())?;

    let scn = FleetScenario::load(&scenario).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(dir.path().join("a/log.jsonl")).map_err(|e| e.to_string())?;
    let n = scn.vehicles.len();
    let mut state: Vec<(f64, f64)> = Vec::new();
    let mut per_tick: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut fallbacks = 0;
    let mut traces: Vec<Vec<f64>> = vec![Vec::new(); n];
    for line in text.lines() {
        let rec: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match rec["record"].as_str() {
            Some("initial") => {
                state.push((rec["position"].as_f64().unwrap(), rec["speed"].as_f64().unwrap()));
                traces[state.len() - 1].push(rec["position"].as_f64().unwrap());
            }
            Some("tick") => {
                let i = rec["vehicle"].as_u64().unwrap() as usize;
                per_tick.entry(rec["tick"].as_u64().unwrap()).or_default().push(i);
                let ex = &rec["executed"];
                let a = ex["accel"].as_f64().unwrap();
                let from_plan = ex["origin"] == "plan";
                let accepted = rec["decision"]["accepted"].as_bool().unwrap() && !ex["vetoed"].as_bool().unwrap();
                let source = if from_plan { rec["decision"]["action"].as_f64() } else { ex["benchmark_accel"].as_f64() };
                ensure(from_plan == accepted && source == Some(a), || format!("tick {}: vehicle {i} executed action has no single source", rec["tick"]))?;
                fallbacks += usize::from(!from_plan);
                let v = &scn.vehicles[i];
                let (s, u) = state[i];
                let next = (s + u * scn.dt, (u + a * scn.dt).clamp(0.0, v.v_max));
                let logged = (rec["state"]["position"].as_f64().unwrap(), rec["state"]["speed"].as_f64().unwrap());
                ensure(next == logged, || format!("tick {}: vehicle {i} breaks the Euler update", rec["tick"]))?;
                ensure(logged.1 > 0.0, || format!("tick {}: vehicle {i} stopped", rec["tick"]))?;
                state[i] = logged;
                traces[i].push(logged.0);
            }
            _ => {}
        }
    }
    ensure(per_tick.len() == 600, || format!("{} ticks logged", per_tick.len()))?;
    ensure(per_tick.values().all(|v| v.len() == n && (0..n).all(|i| v.contains(&i))), || {
        "some vehicle lacks exactly one executed action in some tick".into()
    })?;
    let mut gap = f64::INFINITY;
    for k in 0..traces[0].len() {
        let mut xs: Vec<f64> = traces.iter().map(|t| t[k]).collect();
        xs.sort_by(|a, b| b.total_cmp(a));
        for w in xs.windows(2) {
            gap = gap.min(w[0] - w[1]);
        }
    }
    ensure(gap >= scn.d_min - 1e-9, || format!("realized headway {gap}"))?;
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let stops: Vec<u64> = summary["vehicles"].as_array().unwrap().iter().map(|v| v["stops"].as_u64().unwrap()).collect();
    ensure(stops.iter().all(|&s| s == 0), || format!("stops {stops:?}"))?;
    Ok(format!(
        "identical hashes {}, 600 ticks × {n} vehicles, {fallbacks} fallbacks, headway {gap:.3} m",
        &hashes[0].0[..12]
    ))
}

// 10
fn feedback_improvement() -> Outcome {
    let cruise = Scenario::load(&data("cruise.json")).map_err(|e| e.to_string())?;
    let corridor = Scenario::load(&data("corridor.json")).map_err(|e| e.to_string())?;
    let before = World::new(cruise, 31).map_err(|e| e.to_string())?;
    let (models, bundles) = (before.descriptive_models(), before.fem_bundles());
    let mut world = World::new(corridor.clone(), 31).map_err(|e| e.to_string())?;
    for _ in 0..300 {
        world.step().map_err(|e| e.to_string())?;
    }
    let log = world.into_log();
    let fb = feedback_update(&corridor, &log, &models, &bundles).map_err(|e| e.to_string())?;
    ensure(fb.rmse_after <= fb.rmse_before, || format!("RMSE rose from {} to {}", fb.rmse_before, fb.rmse_after))?;
    Ok(format!("one-step RMSE {:.4} -> {:.4} kW on the corridor regime", fb.rmse_before, fb.rmse_after))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("1 FEM crisp-limit oracle", fem_crisp_limit, 5),
        ("2 stochasticity suite", stochasticity_suite, 1),
        ("3 n-step consistency", n_step_consistency, 2),
        ("4 convex-combination bound", convex_combination_bound, 10),
        ("5 power-demand prediction", power_prediction_reproduction, 10),
        ("6 no-stop corridor", corridor_reproduction, 30),
        ("7 descriptive exact recovery", descriptive_recovery, 1),
        ("8 prescriptive gate properties", prescriptive_gate_properties, 5),
        ("9 end-to-end determinism", end_to_end_determinism, 60),
        ("10 feedback improvement", feedback_improvement, 10),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let verdict = match outcome {
            Ok(detail) if took <= Duration::from_secs(budget) => format!("PASS {name} ({took:.2?} / {budget} s): {detail}"),
            Ok(detail) => format!("FAIL {name} ({took:.2?}, budget {budget} s): {detail}"),
            Err(why) => format!("FAIL {name} ({took:.2?}): {why}"),
        };
        if verdict.starts_with("FAIL") {
            failed += 1;
        }
        println!("{verdict}");
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
