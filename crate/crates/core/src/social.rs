//! Adaptive social learning engine.
//!
//! Each step every agent tempers its prior with its fresh likelihood (adapt)
//! and then takes a weighted geometric mean of its neighbors' intermediate
//! beliefs (combine). All arithmetic is carried in log space with a single
//! log-sum-exp normalization per row, so beliefs stay strictly positive.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::graph::CombinationMatrix;
use crate::observation::{LikelihoodModel, ObservationBatch};
use crate::ratio::{non_reference, LogRatioMatrix, RatioKind};

#[derive(Debug, Error)]
pub enum SocialError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid initial beliefs: {0}")]
    InvalidBeliefs(String),
}

/// Row-normalized log beliefs, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBeliefs(DMatrix<f64>);

impl LogBeliefs {
    /// Normalizes each row of unnormalized log weights.
    pub fn normalized(mut raw: DMatrix<f64>) -> Self {
        for mut row in raw.row_iter_mut() {
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.add_scalar_mut(-lse);
        }
        Self(raw)
    }

    pub fn uniform(n: usize, theta_count: usize) -> Self {
        Self(DMatrix::from_element(
            n,
            theta_count,
            -(theta_count as f64).ln(),
        ))
    }

    pub fn from_probabilities(p: &DMatrix<f64>) -> Result<Self, SocialError> {
        if p.iter().any(|v| !(*v > 0.0)) {
            return Err(SocialError::InvalidBeliefs(
                "every belief must be strictly positive".into(),
            ));
        }
        Ok(Self::normalized(p.map(f64::ln)))
    }

    pub fn logs(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn probabilities(&self) -> DMatrix<f64> {
        self.0.map(f64::exp)
    }

    pub fn agents(&self) -> usize {
        self.0.nrows()
    }

    pub fn theta_count(&self) -> usize {
        self.0.ncols()
    }

    /// Argmax of agent `k`'s row, ties to the lowest index.
    pub fn argmax(&self, k: usize) -> usize {
        let row = self.0.row(k);
        let mut best = 0;
        for t in 1..row.len() {
            if row[t] > row[best] {
                best = t;
            }
        }
        best
    }

    /// `log psi_k(theta_0) - log psi_k(theta_j)` for every non-reference `j`.
    pub fn ratio_matrix(&self, reference: usize) -> LogRatioMatrix {
        let n = self.agents();
        let t = self.theta_count();
        let mut values = DMatrix::zeros(n, t - 1);
        for k in 0..n {
            for (j, theta) in non_reference(t, reference).enumerate() {
                values[(k, j)] = self.0[(k, reference)] - self.0[(k, theta)];
            }
        }
        LogRatioMatrix::new(values, reference, RatioKind::Belief)
    }
}

/// Beliefs `mu` and public intermediate beliefs `psi` at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mu: LogBeliefs,
    pub psi: LogBeliefs,
    pub time: u64,
}

impl BeliefState {
    /// Uniform priors; at time zero `psi` is taken equal to `mu`.
    pub fn uniform(n: usize, theta_count: usize) -> Self {
        Self::from_prior(LogBeliefs::uniform(n, theta_count))
    }

    pub fn from_prior(prior: LogBeliefs) -> Self {
        Self {
            psi: prior.clone(),
            mu: prior,
            time: 0,
        }
    }

    pub fn mu(&self) -> DMatrix<f64> {
        self.mu.probabilities()
    }

    pub fn psi(&self) -> DMatrix<f64> {
        self.psi.probabilities()
    }
}

/// Adapt: `psi_k(theta) ∝ L_k(z_k | theta)^delta * mu_k(theta)^(1 - delta)`.
pub fn adapt_step(
    state: &BeliefState,
    model: &LikelihoodModel,
    batch: &ObservationBatch,
    delta: f64,
) -> LogBeliefs {
    let mut raw = state.mu.logs() * (1.0 - delta);
    for (k, &z) in batch.symbols.iter().enumerate() {
        for theta in 0..model.theta_count() {
            raw[(k, theta)] += delta * model.log_likelihood(k, z, theta);
        }
    }
    LogBeliefs::normalized(raw)
}

/// Combine: `mu_k(theta) ∝ prod_l psi_l(theta)^(a_lk)`, i.e. `A^T log psi`.
pub fn combine_step(psi: &LogBeliefs, a: &CombinationMatrix) -> LogBeliefs {
    LogBeliefs::normalized(a.weights().tr_mul(psi.logs()))
}

/// Samples observations under `true_theta`, then adapts and combines.
pub fn step<R: Rng + ?Sized>(
    state: &BeliefState,
    model: &LikelihoodModel,
    a: &CombinationMatrix,
    delta: f64,
    true_theta: usize,
    rng: &mut R,
) -> (BeliefState, ObservationBatch) {
    let batch = model.sample_observations(true_theta, state.time + 1, rng);
    let next = step_with_batch(state, model, a, delta, &batch);
    (next, batch)
}

pub fn step_with_batch(
    state: &BeliefState,
    model: &LikelihoodModel,
    a: &CombinationMatrix,
    delta: f64,
    batch: &ObservationBatch,
) -> BeliefState {
    let psi = adapt_step(state, model, batch, delta);
    let mu = combine_step(&psi, a);
    BeliefState {
        mu,
        psi,
        time: state.time + 1,
    }
}

/// Public log-belief matrix of the state's intermediate beliefs.
pub fn log_belief_matrix(state: &BeliefState, reference: usize) -> LogRatioMatrix {
    state.psi.ratio_matrix(reference)
}

/// `(1 - delta) A^T prev + delta * likelihood`: the linear recursion the
/// log-belief matrices obey.
pub fn recursion_reference(
    prev: &LogRatioMatrix,
    a: &CombinationMatrix,
    likelihood: &LogRatioMatrix,
    delta: f64,
) -> Result<LogRatioMatrix, SocialError> {
    let (pv, lv) = (prev.values(), likelihood.values());
    if pv.shape() != lv.shape() || a.n() != pv.nrows() {
        return Err(SocialError::Dimension(format!(
            "prev {:?}, likelihood {:?}, graph {}",
            pv.shape(),
            lv.shape(),
            a.n()
        )));
    }
    let values = a.weights().tr_mul(pv) * (1.0 - delta) + lv * delta;
    Ok(LogRatioMatrix::new(
        values,
        prev.reference(),
        RatioKind::Belief,
    ))
}

pub fn estimate_state_agent(state: &BeliefState, k: usize) -> usize {
    state.psi.argmax(k)
}

pub fn estimate_states(state: &BeliefState) -> Vec<usize> {
    (0..state.psi.agents())
        .map(|k| state.psi.argmax(k))
        .collect()
}

/// Most frequent estimate; ties go to the lowest hypothesis index.
pub fn majority_vote(estimates: &[usize]) -> Option<usize> {
    let mut counts = BTreeMap::new();
    for &e in estimates {
        *counts.entry(e).or_insert(0usize) += 1;
    }
    // BTreeMap iterates in ascending key order, so `>` keeps the lowest tie.
    let mut best: Option<(usize, usize)> = None;
    for (theta, c) in counts {
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((theta, c));
        }
    }
    best.map(|(theta, _)| theta)
}

/// Elementwise envelope on `|Lambda_i|`:
/// `(1-delta)^i (A^T)^i |Lambda_0| + delta b sum_t (1-delta)^t (A^t)^T 1 1^T`,
/// advanced one step at a time.
#[derive(Debug, Clone)]
pub struct LogBeliefEnvelope {
    current: DMatrix<f64>,
    delta: f64,
    bound: f64,
}

impl LogBeliefEnvelope {
    pub fn new(initial: &LogRatioMatrix, delta: f64, bound: f64) -> Self {
        Self {
            current: initial.values().abs(),
            delta,
            bound,
        }
    }

    pub fn current(&self) -> &DMatrix<f64> {
        &self.current
    }

    pub fn advance(&mut self, a: &CombinationMatrix) {
        let mut next = a.weights().tr_mul(&self.current) * (1.0 - self.delta);
        next.add_scalar_mut(self.delta * self.bound);
        self.current = next;
    }

    /// Number of entries where `|lambda|` exceeds the envelope by more than
    /// `slack`.
    pub fn violations(&self, lambda: &LogRatioMatrix, slack: f64) -> usize {
        self.current
            .iter()
            .zip(lambda.values().iter())
            .filter(|(env, v)| v.abs() > **env + slack)
            .count()
    }
}
