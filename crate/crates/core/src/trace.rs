//! Sampled signals, crisp state spaces and state-action trajectories.
//!
//! Traces are read from two formats: a CSV file with a `t,value` header and
//! uniformly spaced timestamps, or a JSON document
//! `{"dt": <num>, "samples": [...], "label": <string>}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarTrace {
    dt: f64,
    samples: Vec<f64>,
    #[serde(default)]
    label: String,
}

#[derive(Deserialize)]
struct RawTrace {
    dt: f64,
    samples: Vec<f64>,
    #[serde(default)]
    label: String,
}

impl<'de> Deserialize<'de> for ScalarTrace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawTrace::deserialize(d)?;
        ScalarTrace::new(raw.samples, raw.dt, raw.label).map_err(serde::de::Error::custom)
    }
}

impl ScalarTrace {
    pub fn new(samples: Vec<f64>, dt: f64, label: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invariant("trace has no samples".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Invariant(format!("sampling period must be positive, got {dt}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("sample {i} is not finite ({})", samples[i])));
        }
        Ok(ScalarTrace {
            dt,
            samples,
            label: label.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Smallest and largest sample.
    pub fn range(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Samples `[start, end)` as a new trace with the same period.
    pub fn slice(&self, start: usize, end: usize) -> Result<ScalarTrace> {
        let end = end.min(self.samples.len());
        if start >= end {
            return Err(Error::Invariant(format!("empty slice {start}..{end}")));
        }
        ScalarTrace::new(self.samples[start..end].to_vec(), self.dt, self.label.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> TraceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => TraceFormat::Json,
            _ => TraceFormat::Csv,
        }
    }
}

pub fn load_trace(path: &Path, format: TraceFormat) -> Result<ScalarTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::parse(path, e.to_string()))?;
    match format {
        TraceFormat::Json => {
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
        }
        TraceFormat::Csv => parse_csv_trace(&text, path),
    }
}

fn parse_csv_trace(text: &str, path: &Path) -> Result<ScalarTrace> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
        return Err(Error::parse(path, "expected header `t,value`"));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::parse(path, format!("row {}: missing column", row + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", row + 1)))
        };
        times.push(field(0)?);
        samples.push(field(1)?);
    }
    if times.len() < 2 {
        return Err(Error::parse(path, "at least two rows are needed to infer the sampling period"));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::parse(path, "timestamps must increase"));
    }
    let tol = 1e-9 * dt;
    for (i, &t) in times.iter().enumerate() {
        if (t - times[0] - i as f64 * dt).abs() > tol {
            return Err(Error::parse(path, format!("non-uniform sampling at row {}", i + 1)));
        }
    }
    let label = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    ScalarTrace::new(samples, dt, label)
}

pub fn save_trace(trace: &ScalarTrace, path: &Path, format: TraceFormat) -> Result<()> {
    let mut file = fs::File::create(path)?;
    match format {
        TraceFormat::Json => {
            serde_json::to_writer(&mut file, trace)?;
        }
        TraceFormat::Csv => {
            writeln!(file, "t,value")?;
            for (i, v) in trace.samples.iter().enumerate() {
                writeln!(file, "{},{}", i as f64 * trace.dt, v)?;
            }
        }
    }
    Ok(())
}

/// Ordered crisp levels `x_1 < ... < x_N` inside `[x_min, x_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrispStateSpace {
    levels: Vec<f64>,
    bounds: (f64, f64),
}

impl CrispStateSpace {
    pub fn new(levels: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Invariant("a state space needs at least two levels".into()));
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invariant("levels must be strictly increasing".into()));
        }
        if !(bounds.0 <= levels[0] && levels[levels.len() - 1] <= bounds.1) {
            return Err(Error::Invariant("levels lie outside the bounds".into()));
        }
        Ok(CrispStateSpace { levels, bounds })
    }

    /// `n` evenly spaced levels spanning `bounds`, endpoints included.
    pub fn uniform(n: usize, bounds: (f64, f64)) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invariant("a state space needs at least two levels".into()));
        }
        let step = (bounds.1 - bounds.0) / (n - 1) as f64;
        let mut levels: Vec<f64> = (0..n).map(|i| bounds.0 + i as f64 * step).collect();
        levels[n - 1] = bounds.1;
        CrispStateSpace::new(levels, bounds)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Index of the nearest level; midpoints go to the lower index.
    pub fn nearest(&self, x: f64) -> usize {
        let hi = self.levels.partition_point(|&l| l < x);
        if hi == 0 {
            return 0;
        }
        if hi == self.levels.len() {
            return hi - 1;
        }
        let lo = hi - 1;
        if (x - self.levels[lo]).abs() <= (self.levels[hi] - x).abs() {
            lo
        } else {
            hi
        }
    }
}

pub fn quantize(trace: &ScalarTrace, space: &CrispStateSpace) -> Vec<usize> {
    trace.samples().iter().map(|&x| space.nearest(x)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub s: usize,
    pub a: usize,
    pub r: f64,
}

/// Discrete `(state, action, reward)` sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionTrajectory {
    steps: Vec<Step>,
    n_states: usize,
    n_actions: usize,
}

impl StateActionTrajectory {
    pub fn new(steps: Vec<Step>, n_states: usize, n_actions: usize) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Invariant(
                "a trajectory needs at least two steps (one transition)".into(),
            ));
        }
        for (i, st) in steps.iter().enumerate() {
            if st.s >= n_states {
                return Err(Error::IndexOutOfRange { index: st.s, n: n_states });
            }
            if st.a >= n_actions {
                return Err(Error::IndexOutOfRange { index: st.a, n: n_actions });
            }
            if !st.r.is_finite() {
                return Err(Error::Invariant(format!("reward at step {i} is not finite")));
            }
        }
        Ok(StateActionTrajectory {
            steps,
            n_states,
            n_actions,
        })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Synthetic signal generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Constant {
        value: f64,
    },
    Sine {
        amp: f64,
        period: f64,
        offset: f64,
    },
    Ar1 {
        phi: f64,
        sigma: f64,
        #[serde(default)]
        mean: f64,
    },
    DriveCycleLike(DriveCycleParams),
}

/// Power-demand generator: a random stop-and-go speed profile pushed through
/// a road-load model, `P = m·a·v + c0 + c1·v + c2·v³`, clipped at zero, plus
/// sensor noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveCycleParams {
    pub mass_kg: f64,
    pub c0_w: f64,
    pub c1_n: f64,
    pub c2_kg_per_m: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub noise_kw: f64,
}

impl Default for DriveCycleParams {
    fn default() -> Self {
        DriveCycleParams {
            mass_kg: 1500.0,
            c0_w: 300.0,
            c1_n: 150.0,
            c2_kg_per_m: 0.4,
            max_speed: 25.0,
            max_accel: 2.0,
            max_decel: 2.5,
            noise_kw: 1.0,
        }
    }
}

impl SynthKind {
    /// Builds a generator from a kind name and a flat parameter map; missing
    /// parameters take their defaults.
    pub fn from_params(kind: &str, params: &BTreeMap<String, f64>) -> Result<SynthKind> {
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        Ok(match kind {
            "constant" => SynthKind::Constant { value: get("value", 0.0) },
            "sine" => SynthKind::Sine {
                amp: get("amp", 1.0),
                period: get("period", 1.0),
                offset: get("offset", 0.0),
            },
            "ar1" => SynthKind::Ar1 {
                phi: get("phi", 0.9),
                sigma: get("sigma", 1.0),
                mean: get("mean", 0.0),
            },
            "drive_cycle_like" => {
                let d = DriveCycleParams::default();
                SynthKind::DriveCycleLike(DriveCycleParams {
                    mass_kg: get("mass_kg", d.mass_kg),
                    c0_w: get("c0_w", d.c0_w),
                    c1_n: get("c1_n", d.c1_n),
                    c2_kg_per_m: get("c2_kg_per_m", d.c2_kg_per_m),
                    max_speed: get("max_speed", d.max_speed),
                    max_accel: get("max_accel", d.max_accel),
                    max_decel: get("max_decel", d.max_decel),
                    noise_kw: get("noise_kw", d.noise_kw),
                })
            }
            other => {
                return Err(Error::UnknownKind {
                    what: "trace kind",
                    name: other.to_string(),
                })
            }
        })
    }

    fn name(&self) -> &'static str {
        match self {
            SynthKind::Constant { .. } => "constant",
            SynthKind::Sine { .. } => "sine",
            SynthKind::Ar1 { .. } => "ar1",
            SynthKind::DriveCycleLike(_) => "drive_cycle_like",
        }
    }
}

pub fn synth_trace(kind: &SynthKind, seed: u64, length: usize, dt: f64) -> Result<ScalarTrace> {
    if length == 0 {
        return Err(Error::Invariant("length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        SynthKind::Constant { value } => vec![*value; length],
        SynthKind::Sine { amp, period, offset } => (0..length)
            .map(|i| offset + amp * (std::f64::consts::TAU * i as f64 / period).sin())
            .collect(),
        SynthKind::Ar1 { phi, sigma, mean } => {
            if !(phi.abs() < 1.0) || !(*sigma >= 0.0) {
                return Err(Error::Config(format!("ar1 requires |phi| < 1 and sigma >= 0, got phi={phi}, sigma={sigma}")));
            }
            let noise = Normal::new(0.0, *sigma).map_err(|e| Error::Config(e.to_string()))?;
            let stationary_sd = sigma / (1.0 - phi * phi).sqrt();
            let mut x = mean + stationary_sd * standard_normal(&mut rng);
            let mut out = Vec::with_capacity(length);
            for _ in 0..length {
                out.push(x);
                x = mean + phi * (x - mean) + noise.sample(&mut rng);
            }
            out
        }
        SynthKind::DriveCycleLike(p) => drive_cycle(p, &mut rng, length, dt)?,
    };
    ScalarTrace::new(samples, dt, kind.name())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

#[derive(Clone, Copy)]
enum Phase {
    Idle(usize),
    Accel { target: f64, rate: f64 },
    Cruise(usize),
    Decel { target: f64, rate: f64 },
}

fn drive_cycle(p: &DriveCycleParams, rng: &mut ChaCha8Rng, length: usize, dt: f64) -> Result<Vec<f64>> {
    if !(p.max_speed > 0.0 && p.max_accel > 0.0 && p.max_decel > 0.0 && p.noise_kw >= 0.0) {
        return Err(Error::Config("drive cycle limits must be positive".into()));
    }
    let steps = |secs: f64| ((secs / dt).round() as usize).max(1);
    let mut v = 0.0_f64;
    let mut phase = Phase::Idle(steps(rng.random_range(3.0..12.0)));
    let mut out = Vec::with_capacity(length);
    while out.len() < length {
        let accel = match phase {
            Phase::Idle(_) | Phase::Cruise(_) => 0.0,
            Phase::Accel { rate, .. } => rate,
            Phase::Decel { rate, .. } => -rate,
        };
        // cruise speed wanders slightly
        let jitter = if matches!(phase, Phase::Cruise(_)) {
            0.15 * standard_normal(rng)
        } else {
            0.0
        };
        let a = accel + jitter;
        let power_w = p.mass_kg * a * v + if v > 0.0 { p.c0_w + p.c1_n * v + p.c2_kg_per_m * v.powi(3) } else { p.c0_w };
        let noisy = power_w / 1000.0 + p.noise_kw * standard_normal(rng);
        out.push(noisy.max(0.0));

        v = (v + a * dt).clamp(0.0, p.max_speed);
        phase = match phase {
            Phase::Idle(0) => Phase::Accel {
                target: rng.random_range(0.3 * p.max_speed..p.max_speed),
                rate: rng.random_range(0.3 * p.max_accel..p.max_accel),
            },
            Phase::Idle(k) => Phase::Idle(k - 1),
            Phase::Accel { target, rate } => {
                if v >= target {
                    Phase::Cruise(steps(rng.random_range(8.0..40.0)))
                } else {
                    Phase::Accel { target, rate }
                }
            }
            Phase::Cruise(0) => {
                let stop = rng.random_bool(0.5);
                let target = if stop { 0.0 } else { rng.random_range(0.2..0.8) * v };
                if !stop && rng.random_bool(0.4) && v < 0.9 * p.max_speed {
                    Phase::Accel {
                        target: rng.random_range(v..p.max_speed),
                        rate: rng.random_range(0.3 * p.max_accel..p.max_accel),
                    }
                } else {
                    Phase::Decel {
                        target,
                        rate: rng.random_range(0.3 * p.max_decel..p.max_decel),
                    }
                }
            }
            Phase::Cruise(k) => Phase::Cruise(k - 1),
            Phase::Decel { target, rate } => {
                if v <= target {
                    if v <= 0.0 {
                        Phase::Idle(steps(rng.random_range(3.0..15.0)))
                    } else {
                        Phase::Cruise(steps(rng.random_range(5.0..25.0)))
                    }
                } else {
                    Phase::Decel { target, rate }
                }
            }
        };
    }
    Ok(out)
}
