//! Directed weighted graphs with left-stochastic combination matrices.
//!
//! Entry `(l, k)` of a combination matrix is the weight agent `k` assigns to
//! its in-neighbor `l`, so every column sums to one. Ground-truth matrices are
//! built from a support (adjacency) with uniform averaging over each agent's
//! in-neighborhood, self included.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Column sums must match one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

pub const DEFAULT_RESAMPLE_BUDGET: usize = 1000;

/// Horizon used to fit the Property-1 constant `sigma`.
pub const DEFAULT_SIGMA_HORIZON: usize = 200;

const POWER_ITERATION_CAP: usize = 100_000;
const POWER_ITERATION_TOL: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("connectivity unreachable: no strongly connected graph after {attempts} attempts")]
    ConnectivityUnreachable { attempts: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("matrix is not left-stochastic: {0}")]
    NotStochastic(String),
    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

/// Directed support: bit `(l, k)` set means edge `l -> k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            n,
            bits: vec![true; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut adj = Self::empty(n);
        for l in 0..n {
            for k in 0..n {
                adj.set(l, k, f(l, k));
            }
        }
        adj
    }

    /// Builds a support from a list of directed edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = Self::empty(n);
        for &(l, k) in edges {
            adj.set(l, k, true);
        }
        adj
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, l: usize, k: usize) -> bool {
        self.bits[l * self.n + k]
    }

    pub fn set(&mut self, l: usize, k: usize, value: bool) {
        self.bits[l * self.n + k] = value;
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Row-major 0/1 encoding.
    pub fn to_row_major(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn with_self_loops(mut self) -> Self {
        for k in 0..self.n {
            self.set(k, k, true);
        }
        self
    }

    pub fn in_degree(&self, k: usize) -> usize {
        (0..self.n).filter(|&l| self.get(l, k)).count()
    }

    /// True iff every ordered pair of agents is joined by a directed path.
    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        self.reaches_all(0, false) && self.reaches_all(0, true)
    }

    fn reaches_all(&self, start: usize, reversed: bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for w in 0..self.n {
                let edge = if reversed {
                    self.get(w, v)
                } else {
                    self.get(v, w)
                };
                if edge && !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    /// Every ordered pair `(l, k)` where exactly one of the two supports has
    /// the edge.
    pub fn difference_count(&self, other: &Adjacency) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Left-stochastic combination matrix over `n` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    weights: DMatrix<f64>,
}

impl CombinationMatrix {
    /// Validates a weight matrix: square, entries in `[0, 1]`, columns summing
    /// to one.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(GraphError::NotStochastic(format!(
                "expected a non-empty square matrix, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if let Some(v) = weights.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GraphError::NotStochastic(format!(
                "entry {v} outside [0, 1]"
            )));
        }
        for (k, col) in weights.column_iter().enumerate() {
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(GraphError::NotStochastic(format!(
                    "column {k} sums to {sum}"
                )));
            }
        }
        Ok(Self { weights })
    }

    /// Uniform averaging over each agent's in-neighborhood.
    ///
    /// Every column of the support must be non-empty.
    pub fn uniform_from_support(adj: &Adjacency) -> Result<Self, GraphError> {
        let n = adj.n();
        let mut weights = DMatrix::zeros(n, n);
        for k in 0..n {
            let degree = adj.in_degree(k);
            if degree == 0 {
                return Err(GraphError::NotStochastic(format!(
                    "agent {k} has no in-neighbors"
                )));
            }
            let w = 1.0 / degree as f64;
            for l in 0..n {
                if adj.get(l, k) {
                    weights[(l, k)] = w;
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weights: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.weights[(l, k)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn support(&self) -> Adjacency {
        Adjacency::from_fn(self.n(), |l, k| self.weights[(l, k)] > 0.0)
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.support().is_strongly_connected()
    }

    pub fn has_self_loop(&self) -> bool {
        (0..self.n()).any(|k| self.weights[(k, k)] > 0.0)
    }

    pub fn max_column_error(&self) -> f64 {
        self.weights
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Draws an Erdos-Renyi support with all self-loops and uniform-averaging
/// weights, resampling until it is strongly connected.
pub fn generate_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<CombinationMatrix, GraphError> {
    generate_erdos_renyi_with_budget(n, p, seed, DEFAULT_RESAMPLE_BUDGET)
}

pub fn generate_erdos_renyi_with_budget(
    n: usize,
    p: f64,
    seed: u64,
    budget: usize,
) -> Result<CombinationMatrix, GraphError> {
    if n < 2 {
        return Err(GraphError::InvalidParameter {
            name: "n",
            reason: format!("need at least 2 agents, got {n}"),
        });
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(GraphError::InvalidParameter {
            name: "edge_prob",
            reason: format!("must lie in (0, 1), got {p}"),
        });
    }
    let mut rng = rng::stream(seed);
    for _ in 0..budget {
        let adj = Adjacency::from_fn(n, |l, k| l == k || rng.gen::<f64>() < p);
        if adj.is_strongly_connected() {
            return CombinationMatrix::uniform_from_support(&adj);
        }
    }
    Err(GraphError::ConnectivityUnreachable { attempts: budget })
}

/// Fresh Erdos-Renyi support with the same agent count.
pub fn regenerate_edges(
    a: &CombinationMatrix,
    p: f64,
    seed: u64,
) -> Result<CombinationMatrix, GraphError> {
    generate_erdos_renyi(a.n(), p, seed)
}

/// Flips every off-diagonal bit of `adj` independently with `flip_prob`.
/// Returns the new support and the number of flipped bits.
pub fn flip_support<R: Rng + ?Sized>(
    adj: &Adjacency,
    flip_prob: f64,
    rng: &mut R,
) -> (Adjacency, usize) {
    let mut out = adj.clone();
    let mut flips = 0;
    for l in 0..adj.n() {
        for k in 0..adj.n() {
            if l != k && rng.gen::<f64>() < flip_prob {
                out.set(l, k, !adj.get(l, k));
                flips += 1;
            }
        }
    }
    (out, flips)
}

/// Edge churn: flips off-diagonal support bits with `flip_prob`, keeps
/// self-loops, re-derives uniform weights and resamples the flips until the
/// result is strongly connected.
pub fn perturb_edges(
    a: &CombinationMatrix,
    flip_prob: f64,
    seed: u64,
) -> Result<CombinationMatrix, GraphError> {
    perturb_edges_with_budget(a, flip_prob, seed, DEFAULT_RESAMPLE_BUDGET)
}

pub fn perturb_edges_with_budget(
    a: &CombinationMatrix,
    flip_prob: f64,
    seed: u64,
    budget: usize,
) -> Result<CombinationMatrix, GraphError> {
    if !(0.0..1.0).contains(&flip_prob) {
        return Err(GraphError::InvalidParameter {
            name: "flip_prob",
            reason: format!("must lie in [0, 1), got {flip_prob}"),
        });
    }
    let support = a.support();
    let mut rng = rng::stream(seed);
    for _ in 0..budget {
        let (next, flips) = flip_support(&support, flip_prob, &mut rng);
        if flips == 0 {
            return Ok(a.clone());
        }
        let next = next.with_self_loops();
        if next.is_strongly_connected() {
            return CombinationMatrix::uniform_from_support(&next);
        }
    }
    Err(GraphError::ConnectivityUnreachable { attempts: budget })
}

/// Perron vector and mixing-rate constants of a primitive left-stochastic
/// matrix: `|[A^t]_{lk} - u_l| <= sigma * beta^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub perron: DVector<f64>,
    pub beta2: f64,
    pub sigma: f64,
    pub beta: f64,
}

impl SpectralProfile {
    pub fn envelope(&self, t: usize) -> f64 {
        self.sigma * self.beta.powi(t as i32)
    }
}

/// Right Perron vector `A u = u`, normalized to sum one.
pub fn perron_vector(a: &CombinationMatrix) -> Result<DVector<f64>, GraphError> {
    let n = a.n();
    let w = a.weights();
    let mut u = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITERATION_CAP {
        let mut next = w * &u;
        let s = next.sum();
        next /= s;
        let change = (&next - &u).amax();
        u = next;
        if change <= POWER_ITERATION_TOL {
            return Ok(u);
        }
    }
    Err(GraphError::NoConvergence(POWER_ITERATION_CAP))
}

/// Magnitude of the second-largest eigenvalue.
pub fn second_eigenvalue_magnitude(a: &CombinationMatrix) -> f64 {
    let mut mags: Vec<f64> = a
        .weights()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    mags.sort_by(|x, y| y.total_cmp(x));
    mags.get(1).copied().unwrap_or(0.0)
}

pub fn spectral_profile(a: &CombinationMatrix) -> Result<SpectralProfile, GraphError> {
    spectral_profile_with_horizon(a, DEFAULT_SIGMA_HORIZON)
}

pub fn spectral_profile_with_horizon(
    a: &CombinationMatrix,
    horizon: usize,
) -> Result<SpectralProfile, GraphError> {
    let perron = perron_vector(a)?;
    let beta2 = second_eigenvalue_magnitude(a).min(1.0);
    let beta = (1.0 + beta2) / 2.0;
    let w = a.weights();
    let mut power = w.clone();
    let mut sigma = 0.0_f64;
    for t in 1..=horizon {
        let mut gap = 0.0_f64;
        for l in 0..a.n() {
            for k in 0..a.n() {
                gap = gap.max((power[(l, k)] - perron[l]).abs());
            }
        }
        sigma = sigma.max(gap / beta.powi(t as i32));
        power = &power * w;
    }
    Ok(SpectralProfile {
        perron,
        beta2,
        sigma,
        beta,
    })
}

/// Serialized graph: the ground truth or a learned estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub n: usize,
    /// Row-major 0/1 support.
    pub adjacency: Vec<u8>,
    /// Row-major weights.
    pub weights: Vec<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub learned: bool,
}

impl GraphDocument {
    pub fn from_matrix(a: &CombinationMatrix, seed: Option<u64>) -> Self {
        Self::from_raw(a.weights(), seed, false)
    }

    /// Learned estimates are stored as-is; their support is the positive
    /// entries.
    pub fn from_estimate(estimate: &DMatrix<f64>, seed: Option<u64>) -> Self {
        Self::from_raw(estimate, seed, true)
    }

    fn from_raw(w: &DMatrix<f64>, seed: Option<u64>, learned: bool) -> Self {
        let n = w.nrows();
        let mut weights = Vec::with_capacity(n * n);
        let mut adjacency = Vec::with_capacity(n * n);
        for l in 0..n {
            for k in 0..n {
                weights.push(w[(l, k)]);
                adjacency.push(u8::from(w[(l, k)] > 0.0));
            }
        }
        Self {
            n,
            adjacency,
            weights,
            seed,
            learned,
        }
    }

    pub fn weight_matrix(&self) -> Result<DMatrix<f64>, GraphError> {
        if self.weights.len() != self.n * self.n || self.adjacency.len() != self.n * self.n {
            return Err(GraphError::Malformed(format!(
                "expected {} entries for n = {}",
                self.n * self.n,
                self.n
            )));
        }
        Ok(DMatrix::from_row_slice(self.n, self.n, &self.weights))
    }

    /// Loads a ground-truth matrix, validating stochasticity and that the
    /// stored support agrees with the weights.
    pub fn to_matrix(&self) -> Result<CombinationMatrix, GraphError> {
        let w = self.weight_matrix()?;
        for (i, (&bit, &v)) in self.adjacency.iter().zip(&self.weights).enumerate() {
            if (bit != 0) != (v > 0.0) {
                return Err(GraphError::Malformed(format!(
                    "adjacency bit {i} disagrees with weight {v}"
                )));
            }
        }
        CombinationMatrix::from_weights(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle_with_loop() -> CombinationMatrix {
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0), (1, 1)]);
        CombinationMatrix::uniform_from_support(&adj).unwrap()
    }

    #[test]
    fn identity_is_not_strongly_connected() {
        assert!(!CombinationMatrix::identity(3).is_strongly_connected());
    }

    #[test]
    fn three_cycle_is_strongly_connected() {
        let a = cycle_with_loop();
        assert!(a.is_strongly_connected());
        assert!(a.has_self_loop());
        assert!(a.max_column_error() <= STOCHASTIC_TOL);
        assert_eq!(a.weight(0, 1), 0.5);
        assert_eq!(a.weight(1, 1), 0.5);
    }

    #[test]
    fn reference_sized_graph_is_valid() {
        let a = generate_erdos_renyi(30, 0.2, 7).unwrap();
        assert_eq!(a.n(), 30);
        assert!(a.is_strongly_connected());
        assert!((0..30).all(|k| a.weight(k, k) > 0.0));
        assert!(a.max_column_error() <= STOCHASTIC_TOL);
        assert!(CombinationMatrix::from_weights(a.weights().clone()).is_ok());
    }

    #[test]
    fn dense_two_agent_graph_is_complete() {
        let a = generate_erdos_renyi(2, 0.999_999, 3).unwrap();
        assert_eq!(a.support(), Adjacency::complete(2));
        assert!(a.max_column_error() <= STOCHASTIC_TOL);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_erdos_renyi(5, 0.5, 1).unwrap();
        let b = generate_erdos_renyi(5, 0.5, 1).unwrap();
        assert_eq!(a.weights().as_slice(), b.weights().as_slice());
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(matches!(
            generate_erdos_renyi(1, 0.5, 0),
            Err(GraphError::InvalidParameter { name: "n", .. })
        ));
        assert!(generate_erdos_renyi(4, 0.0, 0).is_err());
        assert!(generate_erdos_renyi(4, 1.0, 0).is_err());
    }

    #[test]
    fn sparse_graph_exhausts_budget() {
        let err = generate_erdos_renyi_with_budget(40, 1e-6, 0, 5).unwrap_err();
        assert!(matches!(
            err,
            GraphError::ConnectivityUnreachable { attempts: 5 }
        ));
    }

    #[test]
    fn non_stochastic_weights_rejected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.4, 0.5]);
        assert!(matches!(
            CombinationMatrix::from_weights(w),
            Err(GraphError::NotStochastic(_))
        ));
    }

    #[test]
    fn doubly_stochastic_has_uniform_perron_vector() {
        let w = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.5, 0.25, 0.0, 0.25, //
                0.25, 0.5, 0.25, 0.0, //
                0.0, 0.25, 0.5, 0.25, //
                0.25, 0.0, 0.25, 0.5,
            ],
        );
        let a = CombinationMatrix::from_weights(w).unwrap();
        let profile = spectral_profile(&a).unwrap();
        for v in profile.perron.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert!(profile.beta2 < 1.0);
        assert!(profile.beta2 < profile.beta && profile.beta < 1.0);
    }

    #[test]
    fn perron_vector_is_positive_fixed_point() {
        let a = generate_erdos_renyi(12, 0.3, 5).unwrap();
        let p = spectral_profile(&a).unwrap();
        assert!(p.perron.iter().all(|v| *v > 0.0));
        assert!((p.perron.sum() - 1.0).abs() < 1e-12);
        let au = a.weights() * &p.perron;
        assert!((au - &p.perron).amax() <= 1e-10);
    }

    #[test]
    fn zero_flip_probability_is_identity() {
        let a = generate_erdos_renyi(10, 0.3, 2).unwrap();
        assert_eq!(perturb_edges(&a, 0.0, 9).unwrap(), a);
        assert!(perturb_edges(&a, 1.0, 9).is_err());
    }

    #[test]
    fn perturbation_keeps_loops_and_connectivity() {
        let a = generate_erdos_renyi(15, 0.2, 4).unwrap();
        for seed in 0..20 {
            let b = perturb_edges(&a, 0.05, seed).unwrap();
            assert!(b.is_strongly_connected());
            assert!((0..15).all(|k| b.weight(k, k) > 0.0));
            assert!(b.max_column_error() <= STOCHASTIC_TOL);
        }
    }

    #[test]
    fn regeneration_changes_support_deterministically() {
        let a = generate_erdos_renyi(30, 0.2, 1).unwrap();
        let b = regenerate_edges(&a, 0.2, 99).unwrap();
        let c = regenerate_edges(&a, 0.2, 99).unwrap();
        assert_eq!(b, c);
        assert_ne!(a.support(), b.support());
        let small = generate_erdos_renyi(2, 0.9, 3).unwrap();
        let d = regenerate_edges(&small, 0.9, 11).unwrap();
        assert!(d.max_column_error() <= STOCHASTIC_TOL);
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let a = generate_erdos_renyi(9, 0.4, 8).unwrap();
        let doc = GraphDocument::from_matrix(&a, Some(8));
        let back = GraphDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        let b = back.to_matrix().unwrap();
        for (x, y) in a.weights().iter().zip(b.weights().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn learned_document_keeps_negative_entries() {
        let est = DMatrix::from_row_slice(2, 2, &[0.7, -0.01, 0.3, 1.01]);
        let doc = GraphDocument::from_estimate(&est, None);
        assert!(doc.learned);
        assert_eq!(doc.adjacency, vec![1, 0, 1, 1]);
        let back = GraphDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back.weight_matrix().unwrap(), est);
        assert!(back.to_matrix().is_err());
    }
}
