//! Fuzzy encoding of a bounded scalar state.
//!
//! A continuous value `x` is fuzzified into the membership degrees of `N`
//! fuzzy subsets, normalized into a probability vector, pushed through a
//! Markov transition matrix over the fuzzy states, and decoded back to a
//! scalar as the volume-weighted mean of the subset centroids:
//!
//! ```text
//! w     = normalize(θ(x))^T Π^n
//! x⁺    = Σ_j w_j V_j c̄_j / Σ_j w_j V_j
//! ```
//!
//! `V_j` is the volume of membership function `j` over the bounds and `c̄_j`
//! its normalized centroid, so `V_j c̄_j` is the first moment of `θ_j`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{self, TransitionCounts, TransitionMatrix, ZeroRowPolicy};
use crate::trace::ScalarTrace;

/// Panels used when a volume or centroid has no closed form.
pub const QUADRATURE_PANELS: usize = 10_000;

/// Grid size for the coverage check.
const COVERAGE_GRID: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Triangular,
    Trapezoidal,
    GaussianTruncated,
    IndicatorPartition,
}

/// Serializable description of a family: `{"kind", "n", "bounds", "params"}`.
///
/// Recognized parameters: `width` (triangular foot distance in grid steps,
/// default 1), `plateau` (trapezoidal plateau as a fraction of the grid
/// step, default 0.5), `sigma` (gaussian spread in grid steps, default 0.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub n: usize,
    pub bounds: (f64, f64),
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, n: usize, bounds: (f64, f64)) -> Self {
        FamilySpec {
            kind,
            n,
            bounds,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn build(&self) -> Result<MembershipFamily> {
        make_family(self.kind, self.n, self.bounds, &self.params)
    }
}

/// One membership function `θ: X → [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Membership {
    /// Piecewise-linear `a ≤ b ≤ c ≤ d`: rises on `[a, b]`, equals 1 on
    /// `[b, c]`, falls on `[c, d]`. A triangle has `b == c`; a shoulder has
    /// `a == b` or `c == d`.
    Trapezoid { a: f64, b: f64, c: f64, d: f64 },
    Gaussian { mean: f64, sigma: f64 },
    /// Indicator of `[lo, hi)`, or `[lo, hi]` when `closed`.
    Indicator { lo: f64, hi: f64, closed: bool },
}

impl Membership {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Membership::Trapezoid { a, b, c, d } => {
                if x < a || x > d {
                    0.0
                } else if x >= b && x <= c {
                    1.0
                } else if x < b {
                    (x - a) / (b - a)
                } else {
                    (d - x) / (d - c)
                }
            }
            Membership::Gaussian { mean, sigma } => (-(x - mean).powi(2) / (2.0 * sigma * sigma)).exp(),
            Membership::Indicator { lo, hi, closed } => {
                if x >= lo && (x < hi || (closed && x <= hi)) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Closed-form `(∫θ, ∫yθ)` over `bounds`, when the shape is fully inside.
    fn closed_moments(&self, bounds: (f64, f64)) -> Option<(f64, f64)> {
        match *self {
            Membership::Trapezoid { a, b, c, d } if a >= bounds.0 && d <= bounds.1 => {
                let area = ((d - a) + (c - b)) / 2.0;
                let moment = (b - a) * (a + 2.0 * b) / 6.0 + (c * c - b * b) / 2.0 + (d - c) * (2.0 * c + d) / 6.0;
                Some((area, moment))
            }
            Membership::Indicator { lo, hi, .. } if lo >= bounds.0 && hi <= bounds.1 => {
                Some((hi - lo, (hi * hi - lo * lo) / 2.0))
            }
            _ => None,
        }
    }
}

/// Composite trapezoid rule for `(∫θ, ∫yθ)` over `bounds`.
pub fn quadrature_moments(f: &Membership, bounds: (f64, f64), panels: usize) -> (f64, f64) {
    let h = (bounds.1 - bounds.0) / panels as f64;
    let mut area = 0.0;
    let mut moment = 0.0;
    for i in 0..=panels {
        let y = if i == panels { bounds.1 } else { bounds.0 + i as f64 * h };
        let w = if i == 0 || i == panels { 0.5 } else { 1.0 };
        let v = f.eval(y);
        area += w * v;
        moment += w * v * y;
    }
    (area * h, moment * h)
}

/// `N` membership functions over `[x_min, x_max]` with their volumes and
/// normalized centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipFamily {
    bounds: (f64, f64),
    functions: Vec<Membership>,
    volumes: Vec<f64>,
    centroids: Vec<f64>,
}

impl MembershipFamily {
    /// Builds a family from explicit functions, checking coverage, positive
    /// volumes and in-bounds centroids.
    pub fn from_functions(bounds: (f64, f64), functions: Vec<Membership>) -> Result<Self> {
        if !(bounds.0 < bounds.1) || !bounds.0.is_finite() || !bounds.1.is_finite() {
            return Err(Error::Config(format!("degenerate bounds [{}, {}]", bounds.0, bounds.1)));
        }
        if functions.len() < 2 {
            return Err(Error::Config("a family needs at least two functions".into()));
        }
        let mut volumes = Vec::with_capacity(functions.len());
        let mut centroids = Vec::with_capacity(functions.len());
        for (i, f) in functions.iter().enumerate() {
            let (v, m) = f
                .closed_moments(bounds)
                .unwrap_or_else(|| quadrature_moments(f, bounds, QUADRATURE_PANELS));
            if !(v > 0.0) {
                return Err(Error::Config(format!("membership function {i} has zero volume")));
            }
            let c = (m / v).clamp(bounds.0, bounds.1);
            volumes.push(v);
            centroids.push(c);
        }
        let fam = MembershipFamily {
            bounds,
            functions,
            volumes,
            centroids,
        };
        fam.check_coverage()?;
        Ok(fam)
    }

    fn check_coverage(&self) -> Result<()> {
        let (lo, hi) = self.bounds;
        for g in 0..COVERAGE_GRID {
            let x = if g + 1 == COVERAGE_GRID {
                hi
            } else {
                lo + (hi - lo) * g as f64 / (COVERAGE_GRID - 1) as f64
            };
            let total: f64 = self.functions.iter().map(|f| f.eval(x)).sum();
            if !(total > 0.0) {
                return Err(Error::Coverage(format!("no membership function covers x = {x}")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.functions.len()
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn functions(&self) -> &[Membership] {
        &self.functions
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Smallest and largest centroid: the range every prediction lands in.
    pub fn centroid_range(&self) -> (f64, f64) {
        self.centroids
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)))
    }

    /// Same functions listed in the order `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        MembershipFamily::from_functions(self.bounds, perm.iter().map(|&i| self.functions[i]).collect())
    }

    /// Fuzzy state with the largest membership at `x`, ties to the lower index.
    pub fn dominant(&self, x: f64) -> usize {
        let k = fuzzify(x, self);
        let mut best = 0;
        for (i, &v) in k.values().iter().enumerate() {
            if v > k.values()[best] {
                best = i;
            }
        }
        best
    }
}

pub fn make_family(
    kind: FamilyKind,
    n: usize,
    bounds: (f64, f64),
    params: &BTreeMap<String, f64>,
) -> Result<MembershipFamily> {
    if n < 2 {
        return Err(Error::Config(format!("a family needs n >= 2, got {n}")));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) {
        return Err(Error::Config(format!("degenerate bounds [{lo}, {hi}]")));
    }
    let param = |key: &str, default: f64| -> Result<f64> {
        let v = params.get(key).copied().unwrap_or(default);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!("parameter `{key}` must be positive, got {v}")));
        }
        Ok(v)
    };
    let functions: Vec<Membership> = match kind {
        FamilyKind::IndicatorPartition => {
            let h = (hi - lo) / n as f64;
            (0..n)
                .map(|i| Membership::Indicator {
                    lo: lo + i as f64 * h,
                    hi: if i + 1 == n { hi } else { lo + (i + 1) as f64 * h },
                    closed: i + 1 == n,
                })
                .collect()
        }
        FamilyKind::Triangular => {
            let width = param("width", 1.0)?;
            let peaks = grid(n, bounds);
            let h = (hi - lo) / (n - 1) as f64;
            peaks
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let a = if i == 0 { lo } else { p - width * h };
                    let d = if i + 1 == n { hi } else { p + width * h };
                    Membership::Trapezoid { a, b: p, c: p, d }
                })
                .collect()
        }
        FamilyKind::Trapezoidal => {
            let plateau = param("plateau", 0.5)?;
            if plateau >= 1.0 {
                return Err(Error::Config(format!("parameter `plateau` must be below 1, got {plateau}")));
            }
            let peaks = grid(n, bounds);
            let h = (hi - lo) / (n - 1) as f64;
            let half = plateau * h / 2.0;
            peaks
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let (a, b) = if i == 0 { (lo, lo) } else { (peaks[i - 1] + half, p - half) };
                    let (c, d) = if i + 1 == n { (hi, hi) } else { (p + half, peaks[i + 1] - half) };
                    Membership::Trapezoid { a, b, c, d }
                })
                .collect()
        }
        FamilyKind::GaussianTruncated => {
            let sigma = param("sigma", 0.5)?;
            let h = (hi - lo) / (n - 1) as f64;
            grid(n, bounds)
                .into_iter()
                .map(|mean| Membership::Gaussian { mean, sigma: sigma * h })
                .collect()
        }
    };
    MembershipFamily::from_functions(bounds, functions)
}

fn grid(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + i as f64 * h }).collect()
}

/// Raw membership degrees `K(x)`; not necessarily summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PossibilityVector(Vec<f64>);

impl PossibilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invariant("possibility degrees must lie in [0, 1]".into()));
        }
        Ok(PossibilityVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Normalized membership vector `K₁(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FuzzyProbabilityVector(Vec<f64>);

impl FuzzyProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        markov::StateDistribution::new(values.clone())?;
        Ok(FuzzyProbabilityVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Membership degrees at `x`, after clamping `x` into the family bounds.
pub fn fuzzify(x: f64, fam: &MembershipFamily) -> PossibilityVector {
    let x = x.clamp(fam.bounds.0, fam.bounds.1);
    PossibilityVector(fam.functions.iter().map(|f| f.eval(x)).collect())
}

pub fn normalize(k: &PossibilityVector) -> Result<FuzzyProbabilityVector> {
    let total: f64 = k.0.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Coverage("all membership degrees are zero".into()));
    }
    Ok(FuzzyProbabilityVector(k.0.iter().map(|v| v / total).collect()))
}

pub fn fem_step(k1: &FuzzyProbabilityVector, pi: &TransitionMatrix) -> Result<FuzzyProbabilityVector> {
    if k1.0.len() != pi.n() {
        return Err(Error::DimensionMismatch { expected: pi.n(), found: k1.0.len() });
    }
    Ok(FuzzyProbabilityVector(markov::step_vector(&k1.0, pi)))
}

/// Decodes a fuzzy-state weighting into a scalar: `Σ w V c̄ / Σ w V`.
pub fn decode(w: &[f64], fam: &MembershipFamily) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((wj, vj), cj) in w.iter().zip(&fam.volumes).zip(&fam.centroids) {
        num += wj * vj * cj;
        den += wj * vj;
    }
    let (lo, hi) = fam.centroid_range();
    (num / den).clamp(lo, hi)
}

/// Expected value of the state `n_steps` ahead of `x`.
pub fn fem_predict(x: f64, fam: &MembershipFamily, pi: &TransitionMatrix, n_steps: usize) -> Result<f64> {
    if fam.n() != pi.n() {
        return Err(Error::DimensionMismatch { expected: fam.n(), found: pi.n() });
    }
    if n_steps == 0 {
        return Err(Error::Config("prediction horizon must be at least one step".into()));
    }
    let mut k1 = normalize(&fuzzify(x, fam))
        .map_err(|_| Error::Coverage(format!("no membership function covers x = {x}")))?;
    for _ in 0..n_steps {
        k1 = fem_step(&k1, pi)?;
    }
    Ok(decode(&k1.0, fam))
}

/// How continuous samples are credited to fuzzy-state transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentRule {
    /// Each sample counts toward its dominant fuzzy state.
    #[default]
    Argmax,
    /// `M_ij += K₁,i(x_t)·K₁,j(x_{t+1})`.
    Soft,
}

pub fn fem_counts(trace: &ScalarTrace, fam: &MembershipFamily, rule: AssignmentRule) -> Result<TransitionCounts> {
    if trace.len() < 2 {
        return Err(Error::Invariant("training needs at least two samples".into()));
    }
    let probs = trace
        .samples()
        .iter()
        .enumerate()
        .map(|(t, &x)| {
            normalize(&fuzzify(x, fam))
                .map_err(|_| Error::Coverage(format!("sample {t} (value {x}) has no active membership function")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = TransitionCounts::zeros(fam.n());
    match rule {
        AssignmentRule::Argmax => {
            let states: Vec<usize> = probs.iter().map(|k| argmax(k.values())).collect();
            for w in states.windows(2) {
                counts.add(w[0], w[1], 1.0);
            }
        }
        AssignmentRule::Soft => {
            for w in probs.windows(2) {
                for (i, &ki) in w[0].values().iter().enumerate() {
                    if ki == 0.0 {
                        continue;
                    }
                    for (j, &kj) in w[1].values().iter().enumerate() {
                        if kj > 0.0 {
                            counts.add(i, j, ki * kj);
                        }
                    }
                }
            }
        }
    }
    Ok(counts)
}

pub fn fem_train(
    trace: &ScalarTrace,
    fam: &MembershipFamily,
    rule: AssignmentRule,
    policy: ZeroRowPolicy,
) -> Result<TransitionMatrix> {
    Ok(markov::estimate(&fem_counts(trace, fam, rule)?, policy))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A trained predictor: family description plus its transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemBundle {
    pub family: FamilySpec,
    pub transition: TransitionMatrix,
    #[serde(default)]
    pub rule: AssignmentRule,
}

impl FemBundle {
    pub fn train(
        trace: &ScalarTrace,
        family: FamilySpec,
        rule: AssignmentRule,
        policy: ZeroRowPolicy,
    ) -> Result<(FemBundle, MembershipFamily)> {
        let fam = family.build()?;
        let transition = fem_train(trace, &fam, rule, policy)?;
        Ok((FemBundle { family, transition, rule }, fam))
    }

    /// Rebuilds the family and checks it matches the matrix dimension.
    pub fn family(&self) -> Result<MembershipFamily> {
        let fam = self.family.build()?;
        if fam.n() != self.transition.n() {
            return Err(Error::DimensionMismatch { expected: fam.n(), found: self.transition.n() });
        }
        Ok(fam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fam(kind: FamilyKind, n: usize, bounds: (f64, f64)) -> MembershipFamily {
        make_family(kind, n, bounds, &BTreeMap::new()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn indicator_partition_moments() {
        let f = fam(FamilyKind::IndicatorPartition, 2, (0.0, 2.0));
        assert_eq!(f.volumes(), &[1.0, 1.0]);
        assert_eq!(f.centroids(), &[0.5, 1.5]);
        assert_eq!(fuzzify(0.99, &f).values(), &[1.0, 0.0]);
        assert_eq!(fuzzify(1.0, &f).values(), &[0.0, 1.0]);
        assert_eq!(fuzzify(2.0, &f).values(), &[0.0, 1.0]);
    }

    #[test]
    fn triangular_moments() {
        let f = fam(FamilyKind::Triangular, 2, (0.0, 1.0));
        assert_eq!(f.volumes(), &[0.5, 0.5]);
        assert!(close(f.centroids()[0], 1.0 / 3.0, 1e-15));
        assert!(close(f.centroids()[1], 2.0 / 3.0, 1e-15));
        assert!(close(fuzzify(0.25, &f).values()[0], 0.75, 1e-15));

        let f = fam(FamilyKind::Triangular, 3, (0.0, 2.0));
        assert_eq!(f.volumes(), &[0.5, 1.0, 0.5]);
        assert_eq!(f.centroids()[1], 1.0);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let specs = [
            FamilySpec::new(FamilyKind::Triangular, 3, (0.0, 2.0)),
            FamilySpec::new(FamilyKind::Triangular, 7, (-5.0, 40.0)),
            FamilySpec::new(FamilyKind::Trapezoidal, 5, (0.0, 10.0)),
            FamilySpec::new(FamilyKind::Trapezoidal, 4, (1.0, 3.0)).with_param("plateau", 0.2),
            FamilySpec::new(FamilyKind::IndicatorPartition, 6, (0.0, 1.0)),
        ];
        for spec in specs {
            let f = spec.build().unwrap();
            for (i, m) in f.functions().iter().enumerate() {
                let (v, mom) = quadrature_moments(m, f.bounds(), 100_000);
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
                // indicator edges cost the trapezoid rule up to half a panel
                let tol = if spec.kind == FamilyKind::IndicatorPartition { 1e-4 } else { 1e-6 };
                assert!(rel(v, f.volumes()[i]) < tol, "{spec:?} volume {i}");
                assert!(rel(mom / v, f.centroids()[i]) < tol, "{spec:?} centroid {i}");
            }
        }
    }

    #[test]
    fn family_validation() {
        let params: BTreeMap<String, f64> = [("width".to_string(), -1.0)].into();
        assert!(matches!(
            make_family(FamilyKind::Triangular, 3, (0.0, 1.0), &params),
            Err(Error::Config(_))
        ));
        // narrow triangles leave gaps between peaks
        let params: BTreeMap<String, f64> = [("width".to_string(), 0.5)].into();
        assert!(matches!(
            make_family(FamilyKind::Triangular, 3, (0.0, 1.0), &params),
            Err(Error::Coverage(_))
        ));
        assert!(make_family(FamilyKind::Triangular, 1, (0.0, 1.0), &BTreeMap::new()).is_err());
        assert!(make_family(FamilyKind::Triangular, 3, (1.0, 1.0), &BTreeMap::new()).is_err());
    }

    #[test]
    fn gaussian_family_uses_quadrature() {
        let f = fam(FamilyKind::GaussianTruncated, 5, (0.0, 4.0));
        assert!(f.volumes().iter().all(|&v| v > 0.0));
        // symmetric interior function keeps its centroid on the mean
        assert!(close(f.centroids()[2], 2.0, 1e-9));
        assert!(f.centroids()[0] > 0.0 && f.centroids()[0] < 1.0);
    }

    #[test]
    fn fuzzify_and_normalize() {
        let f = fam(FamilyKind::Triangular, 3, (0.0, 2.0));
        assert_eq!(fuzzify(1.0, &f).values(), &[0.0, 1.0, 0.0]);
        assert_eq!(fuzzify(0.5, &f).values(), &[0.5, 0.5, 0.0]);
        assert_eq!(fuzzify(-3.0, &f).values(), &[1.0, 0.0, 0.0]);
        let ind = fam(FamilyKind::IndicatorPartition, 4, (0.0, 4.0));
        for x in [0.1, 1.7, 2.2, 3.9] {
            assert_eq!(fuzzify(x, &ind).values().iter().filter(|&&v| v == 1.0).count(), 1);
        }
        let k = PossibilityVector::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(normalize(&k).unwrap().values(), &[0.5, 0.5, 0.0]);
        let k = PossibilityVector::new(vec![0.2, 0.2]).unwrap();
        assert_eq!(normalize(&k).unwrap().values(), &[0.5, 0.5]);
        let err = normalize(&PossibilityVector::new(vec![0.0; 3]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("coverage violation"));
    }

    #[test]
    fn fem_step_examples() {
        let k1 = FuzzyProbabilityVector::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(fem_step(&k1, &TransitionMatrix::identity(2)).unwrap(), k1);
        let pi = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let out = fem_step(&FuzzyProbabilityVector::new(vec![1.0, 0.0]).unwrap(), &pi).unwrap();
        assert_eq!(out.values(), &[0.5, 0.5]);
        let swap = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let half = FuzzyProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(fem_step(&half, &swap).unwrap(), half);
        assert!(fem_step(&half, &TransitionMatrix::identity(3)).is_err());
    }

    #[test]
    fn fem_predict_examples() {
        let ind = fam(FamilyKind::IndicatorPartition, 4, (0.0, 8.0));
        let id = TransitionMatrix::identity(4);
        assert_eq!(fem_predict(4.5, &ind, &id, 1).unwrap(), 5.0);
        assert_eq!(fem_predict(0.2, &ind, &id, 7).unwrap(), 1.0);

        let tri = fam(FamilyKind::Triangular, 2, (0.0, 1.0));
        let swap = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(close(fem_predict(0.0, &tri, &swap, 1).unwrap(), 2.0 / 3.0, 1e-15));
        assert!(fem_predict(0.0, &tri, &TransitionMatrix::identity(3), 1).is_err());
    }

    #[test]
    fn fem_predict_crisp_limit_five_states() {
        let ind = fam(FamilyKind::IndicatorPartition, 5, (0.0, 10.0));
        let pi = TransitionMatrix::from_rows(vec![
            vec![0.1, 0.2, 0.3, 0.4, 0.0],
            vec![0.0, 0.5, 0.5, 0.0, 0.0],
            vec![0.2, 0.2, 0.2, 0.2, 0.2],
            vec![0.0, 0.0, 0.0, 0.25, 0.75],
            vec![0.6, 0.0, 0.0, 0.0, 0.4],
        ])
        .unwrap();
        let centers = [1.0, 3.0, 5.0, 7.0, 9.0];
        for x in [0.0, 1.3, 2.0, 3.99, 4.5, 6.1, 7.7, 9.9, 10.0] {
            let cell = ((x / 2.0) as usize).min(4);
            let expected: f64 = (0..5).map(|j| pi.get(cell, j) * centers[j]).sum();
            assert!(close(fem_predict(x, &ind, &pi, 1).unwrap(), expected, 1e-10), "x = {x}");
        }
    }

    #[test]
    fn training_rules() {
        let tri = fam(FamilyKind::Triangular, 3, (0.0, 2.0));
        let constant = ScalarTrace::new(vec![1.0; 10], 1.0, "c").unwrap();
        let pi = fem_train(&constant, &tri, AssignmentRule::Argmax, ZeroRowPolicy::SelfLoop).unwrap();
        assert_eq!(pi, TransitionMatrix::identity(3));

        let ind = fam(FamilyKind::IndicatorPartition, 2, (0.0, 2.0));
        let alternating = ScalarTrace::new(vec![0.5, 1.5, 0.5, 1.5, 0.5], 1.0, "alt").unwrap();
        let pi = fem_train(&alternating, &ind, AssignmentRule::Argmax, ZeroRowPolicy::SelfLoop).unwrap();
        assert_eq!(pi.rows(), &[vec![0.0, 1.0], vec![1.0, 0.0]]);

        let ramp = fam(FamilyKind::Triangular, 2, (0.0, 1.0));
        let halves = ScalarTrace::new(vec![0.5; 6], 1.0, "h").unwrap();
        let counts = fem_counts(&halves, &ramp, AssignmentRule::Soft).unwrap();
        assert_eq!(counts.counts(), &[vec![1.25, 1.25], vec![1.25, 1.25]]);
        let pi = fem_train(&halves, &ramp, AssignmentRule::Soft, ZeroRowPolicy::SelfLoop).unwrap();
        assert_eq!(pi.rows(), &[vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn training_reports_uncovered_sample() {
        // gap narrower than the coverage grid spacing
        let f = MembershipFamily::from_functions(
            (0.0, 2.0),
            vec![
                Membership::Indicator { lo: 0.0, hi: 1.0001, closed: false },
                Membership::Indicator { lo: 1.0003, hi: 2.0, closed: true },
            ],
        )
        .unwrap();
        let t = ScalarTrace::new(vec![0.5, 1.5, 1.0002], 1.0, "").unwrap();
        let err = fem_train(&t, &f, AssignmentRule::Argmax, ZeroRowPolicy::SelfLoop).unwrap_err();
        assert!(matches!(err, Error::Coverage(_)));
        assert!(err.to_string().contains("sample 2"), "{err}");
    }

    #[test]
    fn bundle_json_roundtrip() {
        let spec = FamilySpec::new(FamilyKind::Triangular, 3, (0.0, 2.0));
        let t = ScalarTrace::new(vec![0.0, 1.0, 2.0, 1.0, 0.0], 1.0, "").unwrap();
        let (bundle, _) = FemBundle::train(&t, spec, AssignmentRule::Argmax, ZeroRowPolicy::SelfLoop).unwrap();
        let text = serde_json::to_string(&bundle).unwrap();
        assert!(text.contains(r#""kind":"triangular""#));
        let back: FemBundle = serde_json::from_str(&text).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.family().unwrap().n(), 3);
    }

    fn random_family() -> impl Strategy<Value = MembershipFamily> {
        (
            prop_oneof![
                Just(FamilyKind::Triangular),
                Just(FamilyKind::Trapezoidal),
                Just(FamilyKind::GaussianTruncated),
                Just(FamilyKind::IndicatorPartition)
            ],
            2usize..9,
            -50.0f64..50.0,
            0.5f64..100.0,
        )
            .prop_map(|(kind, n, lo, span)| make_family(kind, n, (lo, lo + span), &BTreeMap::new()).unwrap())
    }

    fn random_chain(n: usize, weights: &[f64]) -> TransitionMatrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| weights[(i * n + j) % weights.len()]).collect()).collect();
        markov::estimate(&TransitionCounts::from_rows(rows).unwrap(), ZeroRowPolicy::Uniform)
    }

    proptest! {
        #[test]
        fn prediction_stays_in_centroid_hull(
            f in random_family(),
            weights in prop::collection::vec(0.0f64..1.0, 64),
            u in -0.2f64..1.2,
            steps in 1usize..=20,
        ) {
            let pi = random_chain(f.n(), &weights);
            let (lo, hi) = f.bounds();
            let x = lo + u * (hi - lo);
            let y = fem_predict(x, &f, &pi, steps).unwrap();
            let (cmin, cmax) = f.centroid_range();
            prop_assert!(y >= cmin && y <= cmax);
        }

        #[test]
        fn iterated_step_matches_propagate(
            f in random_family(),
            weights in prop::collection::vec(0.0f64..1.0, 64),
            u in 0.0f64..1.0,
            steps in 0usize..50,
        ) {
            let pi = random_chain(f.n(), &weights);
            let (lo, hi) = f.bounds();
            let k1 = normalize(&fuzzify(lo + u * (hi - lo), &f)).unwrap();
            let mut fuzzy = k1.clone();
            for _ in 0..steps {
                fuzzy = fem_step(&fuzzy, &pi).unwrap();
            }
            let crisp = markov::propagate(&markov::StateDistribution::new(k1.values().to_vec()).unwrap(), &pi, steps).unwrap();
            let sum: f64 = fuzzy.values().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for (a, b) in fuzzy.values().iter().zip(crisp.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn relabeling_symmetry(
            f in random_family(),
            weights in prop::collection::vec(0.0f64..1.0, 64),
            u in 0.0f64..1.0,
            steps in 1usize..5,
            seed in any::<u64>(),
        ) {
            let pi = random_chain(f.n(), &weights);
            let mut perm: Vec<usize> = (0..f.n()).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let (lo, hi) = f.bounds();
            let x = lo + u * (hi - lo);
            let base = fem_predict(x, &f, &pi, steps).unwrap();
            let relabeled = fem_predict(x, &f.permuted(&perm).unwrap(), &pi.permuted(&perm), steps).unwrap();
            prop_assert!((base - relabeled).abs() <= 1e-9 * (1.0 + base.abs()));
        }
    }
}
