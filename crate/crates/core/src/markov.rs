//! Finite Markov chains over crisp states: maximum-likelihood transition
//! estimates and n-step propagation of state distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row and vector sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Transition counts `M_ij` and row totals `M_i`.
///
/// Counts are kept as `f64` so fractional (soft) accumulation shares the
/// same estimator; hard counting only ever stores whole numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    counts: Vec<Vec<f64>>,
    row_totals: Vec<f64>,
}

impl TransitionCounts {
    pub fn zeros(n: usize) -> Self {
        TransitionCounts {
            counts: vec![vec![0.0; n]; n],
            row_totals: vec![0.0; n],
        }
    }

    pub fn from_rows(counts: Vec<Vec<f64>>) -> Result<Self> {
        let n = counts.len();
        for row in &counts {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            if row.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
                return Err(Error::Invariant("transition counts must be finite and nonnegative".into()));
            }
        }
        let row_totals = counts.iter().map(|r| r.iter().sum()).collect();
        Ok(TransitionCounts { counts, row_totals })
    }

    pub fn add(&mut self, from: usize, to: usize, weight: f64) {
        self.counts[from][to] += weight;
        self.row_totals[from] += weight;
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    pub fn row_totals(&self) -> &[f64] {
        &self.row_totals
    }

    pub fn total(&self) -> f64 {
        self.row_totals.iter().sum()
    }
}

pub fn count_transitions(sequence: &[usize], n: usize) -> Result<TransitionCounts> {
    if sequence.len() < 2 {
        return Err(Error::Invariant("need at least two states to count a transition".into()));
    }
    if let Some(&bad) = sequence.iter().find(|&&s| s >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n });
    }
    let mut counts = TransitionCounts::zeros(n);
    for w in sequence.windows(2) {
        counts.add(w[0], w[1], 1.0);
    }
    Ok(counts)
}

/// Completion rule for states that were never left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroRowPolicy {
    #[default]
    SelfLoop,
    Uniform,
}

/// Row-stochastic matrix `Π`. Serializes as a row-major array of rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TransitionMatrix {
    probs: Vec<Vec<f64>>,
}

impl<'de> Deserialize<'de> for TransitionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        TransitionMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl TransitionMatrix {
    pub fn from_rows(probs: Vec<Vec<f64>>) -> Result<Self> {
        let n = probs.len();
        if n == 0 {
            return Err(Error::Invariant("transition matrix is empty".into()));
        }
        for (i, row) in probs.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: row.len() });
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Invariant(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Invariant(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(TransitionMatrix { probs })
    }

    pub fn identity(n: usize) -> Self {
        let probs = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        TransitionMatrix { probs }
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i][j]
    }

    /// Relabels states: entry `(i, j)` of the result is `(perm[i], perm[j])`
    /// of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let probs = perm
            .iter()
            .map(|&pi| perm.iter().map(|&pj| self.probs[pi][pj]).collect())
            .collect();
        TransitionMatrix { probs }
    }
}

/// `p_ij = M_ij / M_i`, with empty rows completed by `policy`.
pub fn estimate(counts: &TransitionCounts, policy: ZeroRowPolicy) -> TransitionMatrix {
    let n = counts.n();
    let probs = counts
        .counts()
        .iter()
        .zip(counts.row_totals())
        .enumerate()
        .map(|(i, (row, &total))| {
            if total > 0.0 {
                row.iter().map(|&m| m / total).collect()
            } else {
                match policy {
                    ZeroRowPolicy::SelfLoop => (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect(),
                    ZeroRowPolicy::Uniform => vec![1.0 / n as f64; n],
                }
            }
        })
        .collect();
    TransitionMatrix { probs }
}

/// Probability vector over the chain's states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StateDistribution {
    probs: Vec<f64>,
}

impl<'de> Deserialize<'de> for StateDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        StateDistribution::new(v).map_err(serde::de::Error::custom)
    }
}

impl StateDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invariant("distribution is empty".into()));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Invariant("probabilities must lie in [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Invariant(format!("distribution sums to {sum}, not 1")));
        }
        Ok(StateDistribution { probs })
    }

    pub fn uniform(n: usize) -> Self {
        StateDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        StateDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// One product `p^T Π`, renormalized so round-off cannot drift the sum.
pub(crate) fn step_vector(p: &[f64], pi: &TransitionMatrix) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n];
    for (pi_i, row) in p.iter().zip(pi.rows()) {
        if *pi_i == 0.0 {
            continue;
        }
        for (o, &pij) in out.iter_mut().zip(row) {
            *o += pi_i * pij;
        }
    }
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o = (*o / sum).clamp(0.0, 1.0);
    }
    out
}

/// `p^T Π^n` by `n` successive vector-matrix products.
pub fn propagate(p: &StateDistribution, pi: &TransitionMatrix, n_steps: usize) -> Result<StateDistribution> {
    if p.len() != pi.n() {
        return Err(Error::DimensionMismatch { expected: pi.n(), found: p.len() });
    }
    let mut v = p.probs.clone();
    for _ in 0..n_steps {
        v = step_vector(&v, pi);
    }
    Ok(StateDistribution { probs: v })
}

/// Fixed point of `π^T Π = π^T` reached by power iteration from the uniform
/// distribution.
pub fn stationary(pi: &TransitionMatrix, tol: f64, max_iter: usize) -> Result<StateDistribution> {
    let mut v = vec![1.0 / pi.n() as f64; pi.n()];
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let next = step_vector(&v, pi);
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return Ok(StateDistribution { probs: v });
        }
        v = next;
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn counts_by_hand() {
        let c = count_transitions(&[0, 0, 1, 0], 2).unwrap();
        assert_eq!(c.counts(), &[vec![1.0, 1.0], vec![1.0, 0.0]]);
        let c = count_transitions(&[0, 0, 0], 1).unwrap();
        assert_eq!(c.counts(), &[vec![2.0]]);
        assert!(matches!(
            count_transitions(&[0, 3], 2),
            Err(Error::IndexOutOfRange { index: 3, n: 2 })
        ));
    }

    #[test]
    fn total_transitions_is_length_minus_one() {
        let seq: Vec<usize> = (0..10_000u64).map(|i| ((i * 2654435761) % 5) as usize).collect();
        let c = count_transitions(&seq, 5).unwrap();
        assert_eq!(c.total(), 9999.0);
    }

    #[test]
    fn estimate_examples() {
        let c = TransitionCounts::from_rows(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(estimate(&c, ZeroRowPolicy::SelfLoop).rows(), &[vec![0.5, 0.5], vec![1.0, 0.0]]);
        let z = TransitionCounts::zeros(2);
        assert_eq!(estimate(&z, ZeroRowPolicy::SelfLoop), TransitionMatrix::identity(2));
        let c = TransitionCounts::from_rows(vec![vec![0.0, 0.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(estimate(&c, ZeroRowPolicy::Uniform).rows(), &[vec![0.5, 0.5], vec![0.75, 0.25]]);
    }

    #[test]
    fn propagate_examples() {
        let p = StateDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(propagate(&p, &TransitionMatrix::identity(3), 100).unwrap(), p);
        let swap = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let out = propagate(&StateDistribution::point(2, 0), &swap, 3).unwrap();
        assert_eq!(out.probs(), &[0.0, 1.0]);
        assert_eq!(propagate(&p, &swap, 0).unwrap_err().to_string(), "dimension mismatch: expected 2, found 3");
    }

    #[test]
    fn propagate_reaches_power_iteration_fixed_point() {
        let pi = TransitionMatrix::from_rows(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        // brute-force oracle from the last basis vector
        let mut oracle = vec![0.0, 0.0, 1.0];
        for _ in 0..20_000 {
            let mut next = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    next[j] += oracle[i] * pi.get(i, j);
                }
            }
            oracle = next.to_vec();
        }
        let got = propagate(&StateDistribution::point(3, 0), &pi, 10_000).unwrap();
        assert!(close(got.probs(), &oracle, 1e-8));
    }

    #[test]
    fn stationary_examples() {
        let id = stationary(&TransitionMatrix::identity(4), 1e-14, 10).unwrap();
        assert_eq!(id, StateDistribution::uniform(4));
        let half = TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(close(stationary(&half, 1e-14, 10).unwrap().probs(), &[0.5, 0.5], 1e-15));
        let pi = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let s = stationary(&pi, 1e-13, 10_000).unwrap();
        assert!(close(s.probs(), &[5.0 / 6.0, 1.0 / 6.0], 1e-11));
        let swap = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        // uniform start is already the fixed point of the periodic chain
        assert!(stationary(&swap, 1e-12, 5).is_ok());
        let periodic = TransitionMatrix::from_rows(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.0, 0.5],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(matches!(stationary(&periodic, 1e-6, 50), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn matrix_json_roundtrip_revalidates() {
        let pi = TransitionMatrix::from_rows(vec![vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        let text = serde_json::to_string(&pi).unwrap();
        assert_eq!(text, "[[0.25,0.75],[1.0,0.0]]");
        assert_eq!(serde_json::from_str::<TransitionMatrix>(&text).unwrap(), pi);
        assert!(serde_json::from_str::<TransitionMatrix>("[[0.5,0.4],[1.0,0.0]]").is_err());
    }

    fn counts_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..7).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(prop_oneof![Just(0u32), 0u32..50], n), n)
                .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
        })
    }

    fn chain_strategy() -> impl Strategy<Value = TransitionMatrix> {
        (2usize..6).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n).prop_map(|rows| {
                let counts = TransitionCounts::from_rows(rows).unwrap();
                estimate(&counts, ZeroRowPolicy::Uniform)
            })
        })
    }

    proptest! {
        #[test]
        fn estimate_is_row_stochastic(rows in counts_strategy(), uniform in any::<bool>()) {
            let policy = if uniform { ZeroRowPolicy::Uniform } else { ZeroRowPolicy::SelfLoop };
            let pi = estimate(&TransitionCounts::from_rows(rows).unwrap(), policy);
            prop_assert!(TransitionMatrix::from_rows(pi.rows().to_vec()).is_ok());
        }

        #[test]
        fn estimate_is_scale_invariant(rows in counts_strategy(), k in 1u32..20) {
            let base = estimate(&TransitionCounts::from_rows(rows.clone()).unwrap(), ZeroRowPolicy::SelfLoop);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|c| c * f64::from(k)).collect()).collect();
            let other = estimate(&TransitionCounts::from_rows(scaled).unwrap(), ZeroRowPolicy::SelfLoop);
            for (a, b) in base.rows().iter().zip(other.rows()) {
                prop_assert!(close(a, b, 1e-15));
            }
        }

        #[test]
        fn propagate_semigroup(pi in chain_strategy(), a in 0usize..200, b in 0usize..200) {
            let p = StateDistribution::point(pi.n(), 0);
            let direct = propagate(&p, &pi, a + b).unwrap();
            let split = propagate(&propagate(&p, &pi, a).unwrap(), &pi, b).unwrap();
            prop_assert!(close(direct.probs(), split.probs(), 1e-10));
            let sum: f64 = direct.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= STOCHASTIC_TOL);
            prop_assert!(direct.probs().iter().all(|&x| x >= 0.0));
        }
    }
}
