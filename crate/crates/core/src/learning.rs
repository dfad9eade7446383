//! Online graph learning: stochastic-gradient recovery of the combination
//! matrix from consecutive public log-belief matrices.
//!
//! The instantaneous loss is
//! `Q(A) = 1/2 || Lambda_i - (1 - delta) A^T Lambda_{i-1} - delta Lbar ||_F^2`
//! and the learner takes one unprojected gradient step per observation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, Adjacency, CombinationMatrix, GraphError};
use crate::observation::LikelihoodModel;
use crate::ratio::LogRatioMatrix;
use crate::rng::{self, tag};
use crate::social::{self, BeliefState};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("degenerate second moment: {0}")]
    DegenerateMoment(String),
    #[error("log-belief matrix is no longer finite at step {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// How the learner obtains the mean likelihood matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningMode {
    /// The true state is known to the observer.
    Known,
    /// The state is estimated by a majority vote over the agents' argmax.
    Vote,
}

impl LearningMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LearningMode::Known => "known",
            LearningMode::Vote => "vote",
        }
    }
}

fn residual(
    a: &DMatrix<f64>,
    lambda_now: &LogRatioMatrix,
    lambda_prev: &LogRatioMatrix,
    mean_lr: &LogRatioMatrix,
    delta: f64,
) -> Result<DMatrix<f64>, LearningError> {
    let (now, prev, mean) = (lambda_now.values(), lambda_prev.values(), mean_lr.values());
    if now.shape() != prev.shape()
        || now.shape() != mean.shape()
        || a.nrows() != a.ncols()
        || a.nrows() != now.nrows()
    {
        return Err(LearningError::Dimension(format!(
            "A {:?}, lambda {:?}/{:?}, mean {:?}",
            a.shape(),
            now.shape(),
            prev.shape(),
            mean.shape()
        )));
    }
    Ok(now - a.tr_mul(prev) * (1.0 - delta) - mean * delta)
}

/// Half squared Frobenius residual.
pub fn loss(
    a: &DMatrix<f64>,
    lambda_now: &LogRatioMatrix,
    lambda_prev: &LogRatioMatrix,
    mean_lr: &LogRatioMatrix,
    delta: f64,
) -> Result<f64, LearningError> {
    Ok(0.5 * residual(a, lambda_now, lambda_prev, mean_lr, delta)?.norm_squared())
}

/// `dQ/dA = -(1 - delta) Lambda_{i-1} R^T`.
pub fn gradient(
    a: &DMatrix<f64>,
    lambda_now: &LogRatioMatrix,
    lambda_prev: &LogRatioMatrix,
    mean_lr: &LogRatioMatrix,
    delta: f64,
) -> Result<DMatrix<f64>, LearningError> {
    let r = residual(a, lambda_now, lambda_prev, mean_lr, delta)?;
    Ok(lambda_prev.values() * r.transpose() * (-(1.0 - delta)))
}

pub fn msd(a_star: &DMatrix<f64>, estimate: &DMatrix<f64>) -> f64 {
    (a_star - estimate).norm_squared()
}

/// The learner's running estimate and step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub estimate: DMatrix<f64>,
    pub mu_step: f64,
    pub delta: f64,
    pub reference: usize,
    pub mode: LearningMode,
}

impl LearnerState {
    /// Starts from the uniform matrix `(1/n) 1 1^T`.
    pub fn new(
        n: usize,
        mu_step: f64,
        delta: f64,
        mode: LearningMode,
    ) -> Result<Self, LearningError> {
        if !(mu_step >= 0.0 && mu_step.is_finite()) {
            return Err(LearningError::InvalidParameter {
                name: "mu",
                reason: format!("must be non-negative, got {mu_step}"),
            });
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LearningError::InvalidParameter {
                name: "delta",
                reason: format!("must lie in (0, 1), got {delta}"),
            });
        }
        Ok(Self {
            estimate: DMatrix::from_element(n, n, 1.0 / n as f64),
            mu_step,
            delta,
            reference: 0,
            mode,
        })
    }

    /// One gradient step:
    /// `A += mu (1 - delta) Lambda_{i-1} (Lambda_i^T - (1 - delta) Lambda_{i-1}^T A - delta Lbar^T)`.
    pub fn ogl_update(
        &mut self,
        lambda_now: &LogRatioMatrix,
        lambda_prev: &LogRatioMatrix,
        mean_lr: &LogRatioMatrix,
    ) -> Result<(), LearningError> {
        let r = residual(&self.estimate, lambda_now, lambda_prev, mean_lr, self.delta)?;
        let scale = self.mu_step * (1.0 - self.delta);
        self.estimate
            .gemm(scale, lambda_prev.values(), &r.transpose(), 1.0);
        Ok(())
    }
}

/// A change to the ground truth applied at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduledChange {
    StateChange {
        step: u64,
        theta: usize,
    },
    RegenerateEdges {
        step: u64,
    },
    /// Edge churn applied at `step` and every `period` steps after it.
    Churn {
        step: u64,
        flip_prob: f64,
        #[serde(default = "default_churn_period")]
        period: u64,
    },
}

pub fn default_churn_period() -> u64 {
    500
}

impl ScheduledChange {
    pub fn step(&self) -> u64 {
        match *self {
            ScheduledChange::StateChange { step, .. }
            | ScheduledChange::RegenerateEdges { step }
            | ScheduledChange::Churn { step, .. } => step,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScheduledChange::StateChange { .. } => "state-change",
            ScheduledChange::RegenerateEdges { .. } => "regenerate-edges",
            ScheduledChange::Churn { .. } => "churn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub steps: u64,
    pub delta: f64,
    pub mu: f64,
    pub seed: u64,
    pub true_theta: usize,
    /// Edge probability used when edges are regenerated.
    pub edge_prob: f64,
    pub schedule: Vec<ScheduledChange>,
    pub record_beliefs: bool,
}

impl OnlineConfig {
    pub fn new(steps: u64, delta: f64, mu: f64, seed: u64) -> Self {
        Self {
            steps,
            delta,
            mu,
            seed,
            true_theta: 0,
            edge_prob: 0.2,
            schedule: Vec::new(),
            record_beliefs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdRecord {
    pub step: u64,
    pub msd: f64,
    /// Majority-vote estimate of the state at this step.
    pub theta_hat: usize,
    /// Labels of the changes applied at this step, `;`-joined.
    pub event: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdTrace {
    pub mode: LearningMode,
    pub records: Vec<MsdRecord>,
}

impl MsdTrace {
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.msd).collect()
    }

    /// Mean MSD over records with `from <= step < to`.
    pub fn mean_between(&self, from: u64, to: u64) -> f64 {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.step >= from && r.step < to)
            .map(|r| r.msd)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn tail_mean(&self, count: usize) -> f64 {
        let v = &self.records[self.records.len().saturating_sub(count)..];
        v.iter().map(|r| r.msd).sum::<f64>() / v.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefRecord {
    pub step: u64,
    pub psi: DMatrix<f64>,
    pub theta_hat: usize,
}

/// Output of a lockstep engine/learner run.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub learners: Vec<LearnerState>,
    pub traces: Vec<MsdTrace>,
    pub beliefs: Vec<BeliefRecord>,
    /// Ground truth at the end of the run.
    pub final_truth: CombinationMatrix,
    pub final_theta: usize,
}

impl OnlineRun {
    pub fn learner(&self) -> &LearnerState {
        &self.learners[0]
    }

    pub fn trace(&self) -> &MsdTrace {
        &self.traces[0]
    }
}

pub fn validate_schedule(schedule: &[ScheduledChange]) -> Result<(), LearningError> {
    for w in schedule.windows(2) {
        if w[1].step() <= w[0].step() {
            return Err(LearningError::InvalidParameter {
                name: "schedule",
                reason: format!(
                    "event steps must be strictly increasing ({} then {})",
                    w[0].step(),
                    w[1].step()
                ),
            });
        }
    }
    for e in schedule {
        if e.step() == 0 {
            return Err(LearningError::InvalidParameter {
                name: "schedule",
                reason: "event steps start at 1".into(),
            });
        }
        if let ScheduledChange::Churn {
            flip_prob, period, ..
        } = *e
        {
            if !(0.0..1.0).contains(&flip_prob) || period == 0 {
                return Err(LearningError::InvalidParameter {
                    name: "schedule",
                    reason: format!(
                        "churn needs flip_prob in [0, 1) and period > 0, got {flip_prob}, {period}"
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Runs the social learning engine and one learner in lockstep.
pub fn run_online(
    a_star: &CombinationMatrix,
    model: &LikelihoodModel,
    config: &OnlineConfig,
    mode: LearningMode,
) -> Result<OnlineRun, LearningError> {
    run_online_modes(a_star, model, config, &[mode])
}

/// Runs several learners on one shared engine and observation stream.
///
/// Step `i` (1-based) applies the changes scheduled at `i`, samples
/// observations under the current state, advances the beliefs and updates
/// every learner with `(Lambda_i, Lambda_{i-1})`. MSD is scored against the
/// ground truth in force at step `i`.
pub fn run_online_modes(
    a_star: &CombinationMatrix,
    model: &LikelihoodModel,
    config: &OnlineConfig,
    modes: &[LearningMode],
) -> Result<OnlineRun, LearningError> {
    validate_schedule(&config.schedule)?;
    if a_star.n() != model.n() {
        return Err(LearningError::Dimension(format!(
            "graph has {} agents, model has {}",
            a_star.n(),
            model.n()
        )));
    }
    if config.true_theta >= model.theta_count() {
        return Err(LearningError::InvalidParameter {
            name: "true_theta",
            reason: format!("{} out of range", config.true_theta),
        });
    }
    let n = a_star.n();
    let reference = 0;
    let mut learners = modes
        .iter()
        .map(|&m| LearnerState::new(n, config.mu, config.delta, m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut traces: Vec<MsdTrace> = modes
        .iter()
        .map(|&mode| MsdTrace {
            mode,
            records: Vec::with_capacity(config.steps as usize),
        })
        .collect();
    let means: Vec<LogRatioMatrix> = (0..model.theta_count())
        .map(|t| model.mean_likelihood_matrix(t, reference))
        .collect();

    let mut truth = a_star.clone();
    let mut theta = config.true_theta;
    let mut churn: Option<(u64, f64, u64)> = None;
    let mut events = config.schedule.iter().peekable();
    let mut observations = rng::derived_stream(config.seed, tag::OBSERVATIONS, 0);
    let mut state = BeliefState::uniform(n, model.theta_count());
    let mut lambda_prev = social::log_belief_matrix(&state, reference);
    let mut beliefs = Vec::new();

    for i in 1..=config.steps {
        let mut labels: Vec<&str> = Vec::new();
        while let Some(e) = events.next_if(|e| e.step() == i) {
            labels.push(e.label());
            match *e {
                ScheduledChange::StateChange { theta: t, .. } => {
                    if t >= model.theta_count() {
                        return Err(LearningError::InvalidParameter {
                            name: "schedule",
                            reason: format!("state {t} out of range"),
                        });
                    }
                    theta = t;
                }
                ScheduledChange::RegenerateEdges { step } => {
                    truth = graph::regenerate_edges(
                        &truth,
                        config.edge_prob,
                        rng::derive_seed(config.seed, tag::REGENERATE, step),
                    )?;
                }
                ScheduledChange::Churn {
                    step,
                    flip_prob,
                    period,
                } => churn = Some((step, flip_prob, period)),
            }
        }
        if let Some((start, flip_prob, period)) = churn {
            if i >= start && (i - start) % period == 0 {
                truth = graph::perturb_edges(
                    &truth,
                    flip_prob,
                    rng::derive_seed(config.seed, tag::CHURN, i),
                )?;
                if !labels.contains(&"churn") {
                    labels.push("churn");
                }
            }
        }

        let (next, _) = social::step(
            &state,
            model,
            &truth,
            config.delta,
            theta,
            &mut observations,
        );
        state = next;
        let lambda_now = social::log_belief_matrix(&state, reference);
        if !lambda_now.values().iter().all(|v| v.is_finite()) {
            return Err(LearningError::NonFinite(i));
        }
        let estimates = social::estimate_states(&state);
        let theta_hat = social::majority_vote(&estimates).unwrap_or(0);

        for (learner, trace) in learners.iter_mut().zip(traces.iter_mut()) {
            let mean = match learner.mode {
                LearningMode::Known => &means[theta],
                LearningMode::Vote => &means[theta_hat],
            };
            learner.ogl_update(&lambda_now, &lambda_prev, mean)?;
            trace.records.push(MsdRecord {
                step: i,
                msd: msd(truth.weights(), &learner.estimate),
                theta_hat,
                event: (!labels.is_empty()).then(|| labels.join(";")),
            });
        }
        if config.record_beliefs {
            beliefs.push(BeliefRecord {
                step: i,
                psi: state.psi(),
                theta_hat,
            });
        }
        lambda_prev = lambda_now;
    }

    Ok(OnlineRun {
        learners,
        traces,
        beliefs,
        final_truth: truth,
        final_theta: theta,
    })
}

/// Collects `(Lambda_{i-1}, L_i)` pairs from a fixed network, discarding a
/// burn-in prefix. Used to estimate moment-based constants.
pub fn collect_moment_samples<R: Rng + ?Sized>(
    a: &CombinationMatrix,
    model: &LikelihoodModel,
    delta: f64,
    true_theta: usize,
    burn_in: usize,
    samples: usize,
    rng: &mut R,
) -> (Vec<LogRatioMatrix>, Vec<LogRatioMatrix>) {
    let mut state = BeliefState::uniform(a.n(), model.theta_count());
    let mut lambdas = Vec::with_capacity(samples);
    let mut likelihoods = Vec::with_capacity(samples);
    for i in 0..burn_in + samples {
        let prev = social::log_belief_matrix(&state, 0);
        let (next, batch) = social::step(&state, model, a, delta, true_theta, rng);
        if i >= burn_in {
            lambdas.push(prev);
            likelihoods.push(model.log_likelihood_ratio_matrix(&batch, 0));
        }
        state = next;
    }
    (lambdas, likelihoods)
}

/// Moment-based constants of the steady-state MSD bound `mu^2 gamma / (1 - alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateBound {
    pub nu: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub bound: f64,
}

/// `E[X X^T]` estimated from samples.
pub fn second_moment(samples: &[LogRatioMatrix]) -> DMatrix<f64> {
    let n = samples[0].agents();
    let mut m = DMatrix::zeros(n, n);
    for s in samples {
        m.gemm(1.0, s.values(), &s.values().transpose(), 1.0);
    }
    m / samples.len() as f64
}

/// Diagnostic estimates of the steady-state constants from sampled
/// log-belief and log-likelihood matrices.
pub fn steady_state_bound(
    lambdas: &[LogRatioMatrix],
    likelihoods: &[LogRatioMatrix],
    delta: f64,
    mu: f64,
) -> Result<SteadyStateBound, LearningError> {
    let n = lambdas.first().map(|l| l.agents()).unwrap_or(0);
    if lambdas.len() < n.max(1) || likelihoods.len() < n.max(1) {
        return Err(LearningError::InvalidParameter {
            name: "samples",
            reason: format!("need at least n = {n} samples of each"),
        });
    }
    let eig = SymmetricEigen::new(second_moment(lambdas)).eigenvalues;
    let scale = (1.0 - delta).powi(2);
    let nu = scale * eig.min().max(0.0);
    let kappa = scale * eig.max().max(0.0);

    let mean = likelihoods
        .iter()
        .fold(DMatrix::zeros(n, likelihoods[0].columns()), |acc, l| {
            acc + l.values()
        })
        / likelihoods.len() as f64;
    let mut cov = DMatrix::zeros(n, n);
    for l in likelihoods {
        let c = l.values() - &mean;
        cov.gemm(1.0, &c, &c.transpose(), 1.0);
    }
    cov /= likelihoods.len() as f64;
    let r_max = SymmetricEigen::new(cov).eigenvalues.max();

    let gamma = delta * delta * kappa * n as f64 * r_max;
    let alpha = 1.0 - 2.0 * mu * nu;
    if nu <= 0.0 || kappa <= 0.0 {
        return Err(LearningError::DegenerateMoment(format!(
            "nu = {nu}, kappa = {kappa}; bound undefined"
        )));
    }
    Ok(SteadyStateBound {
        nu,
        kappa,
        alpha,
        gamma,
        bound: mu * mu * gamma / (1.0 - alpha),
    })
}

/// Edge `l -> k` wherever the estimate exceeds `tau_edge`.
pub fn threshold_edges(estimate: &DMatrix<f64>, tau_edge: f64) -> Adjacency {
    Adjacency::from_fn(estimate.nrows(), |l, k| estimate[(l, k)] > tau_edge)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub adjacency: Adjacency,
    /// All entries fell into one cluster; the adjacency is empty.
    pub degenerate: bool,
    pub centroids: (f64, f64),
}

/// One-dimensional 2-means over all entries, starting from the minimum and
/// maximum entry. Entries in the upper cluster become edges.
pub fn kmeans_binarize(estimate: &DMatrix<f64>) -> Binarized {
    let n = estimate.nrows();
    let lo0 = estimate.min();
    let hi0 = estimate.max();
    if !(hi0 > lo0) {
        return Binarized {
            adjacency: Adjacency::empty(n),
            degenerate: true,
            centroids: (lo0, hi0),
        };
    }
    let (mut lo, mut hi) = (lo0, hi0);
    let mut upper: Vec<bool> = Vec::new();
    for _ in 0..1000 {
        let next: Vec<bool> = estimate
            .iter()
            .map(|v| (v - hi).abs() < (v - lo).abs())
            .collect();
        if next == upper {
            break;
        }
        upper = next;
        let (mut s_lo, mut c_lo, mut s_hi, mut c_hi) = (0.0, 0usize, 0.0, 0usize);
        for (v, &u) in estimate.iter().zip(&upper) {
            if u {
                s_hi += v;
                c_hi += 1;
            } else {
                s_lo += v;
                c_lo += 1;
            }
        }
        if c_lo > 0 {
            lo = s_lo / c_lo as f64;
        }
        if c_hi > 0 {
            hi = s_hi / c_hi as f64;
        }
    }
    // nalgebra stores column-major, matching `estimate.iter()`.
    let adjacency = Adjacency::from_fn(n, |l, k| upper[k * n + l]);
    let degenerate = adjacency.edge_count() == 0;
    Binarized {
        adjacency,
        degenerate,
        centroids: (lo, hi),
    }
}

/// Post-processing of a learned estimate into a combination matrix: entries
/// at or below `tau_edge` are dropped and each column is renormalized. A
/// column left empty keeps only its self-loop.
pub fn project_to_stochastic(
    estimate: &DMatrix<f64>,
    tau_edge: f64,
) -> Result<CombinationMatrix, LearningError> {
    let n = estimate.nrows();
    let mut w = estimate.map(|v| if v > tau_edge { v } else { 0.0 });
    for k in 0..n {
        let s: f64 = w.column(k).sum();
        if s > 0.0 {
            w.column_mut(k).unscale_mut(s);
        } else {
            w[(k, k)] = 1.0;
        }
    }
    // Renormalized columns can be off by an ulp; fold the residue into the
    // largest entry.
    for k in 0..n {
        let s: f64 = w.column(k).sum();
        let (imax, _) = w.column(k).argmax();
        w[(imax, k)] += 1.0 - s;
    }
    Ok(CombinationMatrix::from_weights(w)?)
}

/// F1 score of a recovered support against the true one.
pub fn support_f1(truth: &Adjacency, estimate: &Adjacency) -> f64 {
    let n = truth.n();
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for l in 0..n {
        for k in 0..n {
            match (truth.get(l, k), estimate.get(l, k)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}
