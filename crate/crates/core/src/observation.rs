//! Categorical likelihood families over finite observation spaces.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::{non_reference, LogRatioMatrix, RatioKind};
use crate::rng;

/// Minimum KL divergence for a hypothesis to count as distinguishable.
pub const IDENTIFIABILITY_TOL: f64 = 1e-6;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("no identifiable model after {attempts} attempts")]
    IdentifiabilityUnreachable { attempts: usize },
    #[error("invalid likelihood table: {0}")]
    InvalidTable(String),
    #[error("malformed model document: {0}")]
    Malformed(String),
}

/// Parameters of the random likelihood generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub theta_count: usize,
    pub z_count: usize,
    /// Probability floor; rows are clipped to `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
    /// Symmetric Dirichlet concentration of each row before clipping.
    /// `1.0` is uniform on the simplex; larger values pull rows toward uniform.
    pub concentration: f64,
    pub true_theta: usize,
    pub max_attempts: usize,
}

impl ModelParams {
    pub fn new(n: usize, theta_count: usize, z_count: usize) -> Self {
        Self {
            n,
            theta_count,
            z_count,
            epsilon: 0.05,
            concentration: 16.0,
            true_theta: 0,
            max_attempts: 1000,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, reason: String| Err(ModelError::InvalidParameter { name, reason });
        if self.n == 0 {
            return bad("n", "need at least one agent".into());
        }
        if self.theta_count < 2 {
            return bad(
                "theta_count",
                format!("need at least 2, got {}", self.theta_count),
            );
        }
        if self.z_count < 2 {
            return bad("z_count", format!("need at least 2, got {}", self.z_count));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / self.z_count as f64) {
            return bad(
                "epsilon",
                format!("must lie in (0, 1/z_count), got {}", self.epsilon),
            );
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(
                "concentration",
                format!("must be positive, got {}", self.concentration),
            );
        }
        if self.true_theta >= self.theta_count {
            return bad("true_theta", format!("{} out of range", self.true_theta));
        }
        Ok(())
    }
}

/// Per-agent likelihood tables `beta[k][(theta, z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    theta_count: usize,
    tables: Vec<DMatrix<f64>>,
    log_tables: Vec<DMatrix<f64>>,
    bound: f64,
}

impl LikelihoodModel {
    /// Validates per-agent tables of shape `theta_count x |Z_k|`: rows sum to
    /// one and every entry is strictly positive.
    pub fn from_tables(tables: Vec<DMatrix<f64>>) -> Result<Self, ModelError> {
        let first = tables
            .first()
            .ok_or_else(|| ModelError::InvalidTable("no agents".into()))?;
        let theta_count = first.nrows();
        if theta_count < 2 {
            return Err(ModelError::InvalidTable(
                "need at least 2 hypotheses".into(),
            ));
        }
        for (k, t) in tables.iter().enumerate() {
            if t.nrows() != theta_count || t.ncols() < 1 {
                return Err(ModelError::InvalidTable(format!(
                    "agent {k} table is {}x{}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            if t.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(ModelError::InvalidTable(format!(
                    "agent {k} has a non-positive probability"
                )));
            }
            for (theta, row) in t.row_iter().enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(ModelError::InvalidTable(format!(
                        "agent {k} hypothesis {theta} sums to {s}"
                    )));
                }
            }
        }
        let log_tables: Vec<DMatrix<f64>> = tables.iter().map(|t| t.map(f64::ln)).collect();
        let bound = log_tables
            .iter()
            .map(|lt| {
                let mut b = 0.0_f64;
                for z in 0..lt.ncols() {
                    let col = lt.column(z);
                    b = b.max(col.max() - col.min());
                }
                b
            })
            .fold(0.0, f64::max);
        Ok(Self {
            theta_count,
            tables,
            log_tables,
            bound,
        })
    }

    pub fn n(&self) -> usize {
        self.tables.len()
    }

    pub fn theta_count(&self) -> usize {
        self.theta_count
    }

    pub fn z_counts(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.ncols()).collect()
    }

    /// `b`: the largest `|log L_k(z|theta) / L_k(z|theta')|`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn table(&self, k: usize) -> &DMatrix<f64> {
        &self.tables[k]
    }

    pub fn likelihood(&self, k: usize, z: usize, theta: usize) -> f64 {
        self.tables[k][(theta, z)]
    }

    pub fn log_likelihood(&self, k: usize, z: usize, theta: usize) -> f64 {
        self.log_tables[k][(theta, z)]
    }

    pub fn kl_divergence(&self, k: usize, theta_a: usize, theta_b: usize) -> f64 {
        let t = &self.tables[k];
        let lt = &self.log_tables[k];
        (0..t.ncols())
            .map(|z| t[(theta_a, z)] * (lt[(theta_a, z)] - lt[(theta_b, z)]))
            .sum::<f64>()
            .max(0.0)
    }

    /// Every wrong hypothesis is distinguishable from `true_theta` by some agent.
    pub fn is_identifiable(&self, true_theta: usize) -> bool {
        (0..self.theta_count).filter(|&t| t != true_theta).all(|t| {
            (0..self.n()).any(|k| self.kl_divergence(k, true_theta, t) > IDENTIFIABILITY_TOL)
        })
    }

    /// Draws one symbol per agent from `L_k(. | theta)`.
    pub fn sample_observations<R: Rng + ?Sized>(
        &self,
        theta: usize,
        time: u64,
        rng: &mut R,
    ) -> ObservationBatch {
        let symbols = self
            .tables
            .iter()
            .map(|t| {
                let row: Vec<f64> = t.row(theta).iter().copied().collect();
                sample_categorical(&row, rng)
            })
            .collect();
        ObservationBatch { time, symbols }
    }

    /// `[L]_{k,j} = log L_k(z_k | theta_0) / L_k(z_k | theta_j)`.
    pub fn log_likelihood_ratio_matrix(
        &self,
        batch: &ObservationBatch,
        reference: usize,
    ) -> LogRatioMatrix {
        let n = self.n();
        let mut values = DMatrix::zeros(n, self.theta_count - 1);
        for (k, &z) in batch.symbols.iter().enumerate() {
            let lt = &self.log_tables[k];
            for (j, theta) in non_reference(self.theta_count, reference).enumerate() {
                values[(k, j)] = lt[(reference, z)] - lt[(theta, z)];
            }
        }
        LogRatioMatrix::new(values, reference, RatioKind::Likelihood)
    }

    /// Expected log-likelihood ratio matrix when observations follow
    /// `assumed_theta`: `KL(assumed || theta_j) - KL(assumed || theta_0)`.
    pub fn mean_likelihood_matrix(&self, assumed_theta: usize, reference: usize) -> LogRatioMatrix {
        let n = self.n();
        let mut values = DMatrix::zeros(n, self.theta_count - 1);
        for k in 0..n {
            let base = self.kl_divergence(k, assumed_theta, reference);
            for (j, theta) in non_reference(self.theta_count, reference).enumerate() {
                values[(k, j)] = self.kl_divergence(k, assumed_theta, theta) - base;
            }
        }
        LogRatioMatrix::new(values, reference, RatioKind::MeanLikelihood)
    }

    /// Smallest eigenvalue of the sample second moment of the log-likelihood
    /// matrix. A value near zero flags a violated positive-definiteness
    /// assumption.
    pub fn min_second_moment_eigenvalue<R: Rng + ?Sized>(
        &self,
        reference: usize,
        true_theta: usize,
        samples: usize,
        rng: &mut R,
    ) -> f64 {
        let n = self.n();
        let mut moment = DMatrix::zeros(n, n);
        for i in 0..samples {
            let batch = self.sample_observations(true_theta, i as u64, rng);
            let lr = self.log_likelihood_ratio_matrix(&batch, reference);
            let v = lr.values();
            moment.gemm(1.0, v, &v.transpose(), 1.0);
        }
        moment /= samples.max(1) as f64;
        SymmetricEigen::new(moment).eigenvalues.min()
    }

    pub fn to_document(&self, true_theta: usize, seed: Option<u64>) -> ModelDocument {
        ModelDocument {
            n: self.n(),
            theta_count: self.theta_count,
            z_counts: self.z_counts(),
            true_theta,
            beta: self
                .tables
                .iter()
                .map(|t| t.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            b: self.bound,
            seed,
        }
    }
}

/// One observation per agent at a time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationBatch {
    pub time: u64,
    pub symbols: Vec<usize>,
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (z, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return z;
        }
    }
    // Rounding can leave `acc` a hair below one.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws a random identifiable model.
pub fn generate_model(params: &ModelParams, seed: u64) -> Result<LikelihoodModel, ModelError> {
    params.validate()?;
    let gamma =
        Gamma::new(params.concentration, 1.0).map_err(|e| ModelError::InvalidParameter {
            name: "concentration",
            reason: e.to_string(),
        })?;
    let mut rng = rng::stream(seed);
    generate_with(params, |rng| random_tables(params, &gamma, rng), &mut rng)
}

pub(crate) fn generate_with<R, F>(
    params: &ModelParams,
    mut draw: F,
    rng: &mut R,
) -> Result<LikelihoodModel, ModelError>
where
    R: Rng,
    F: FnMut(&mut R) -> Vec<DMatrix<f64>>,
{
    for _ in 0..params.max_attempts {
        let model = LikelihoodModel::from_tables(draw(rng))?;
        if model.is_identifiable(params.true_theta) {
            return Ok(model);
        }
    }
    Err(ModelError::IdentifiabilityUnreachable {
        attempts: params.max_attempts,
    })
}

fn random_tables<R: Rng>(
    params: &ModelParams,
    gamma: &Gamma<f64>,
    rng: &mut R,
) -> Vec<DMatrix<f64>> {
    (0..params.n)
        .map(|_| {
            let mut t = DMatrix::zeros(params.theta_count, params.z_count);
            for theta in 0..params.theta_count {
                let raw: Vec<f64> = (0..params.z_count).map(|_| gamma.sample(rng)).collect();
                let row = clip_row(&raw, params.epsilon);
                for (z, v) in row.into_iter().enumerate() {
                    t[(theta, z)] = v;
                }
            }
            t
        })
        .collect()
}

/// Normalizes, clips to `[epsilon, 1 - epsilon]` and renormalizes.
///
/// Renormalizing can push an entry past the clip range again, so the clip is
/// repeated until it is stable.
fn clip_row(raw: &[f64], epsilon: f64) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    };
    for _ in 0..64 {
        let clipped: Vec<f64> = row
            .iter()
            .map(|v| v.clamp(epsilon, 1.0 - epsilon))
            .collect();
        let s: f64 = clipped.iter().sum();
        let next: Vec<f64> = clipped.iter().map(|v| v / s).collect();
        let stable = next
            .iter()
            .all(|v| *v >= epsilon * (1.0 - 1e-9) && *v <= 1.0 - epsilon * (1.0 - 1e-9));
        row = next;
        if stable {
            break;
        }
    }
    row
}

/// Serialized likelihood model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: usize,
    pub theta_count: usize,
    pub z_counts: Vec<usize>,
    pub true_theta: usize,
    /// `beta[k][theta][z]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    pub b: f64,
    pub seed: Option<u64>,
}

impl ModelDocument {
    pub fn to_model(&self) -> Result<LikelihoodModel, ModelError> {
        if self.beta.len() != self.n || self.z_counts.len() != self.n {
            return Err(ModelError::Malformed(format!(
                "expected {} agents, found {} tables",
                self.n,
                self.beta.len()
            )));
        }
        let tables = self
            .beta
            .iter()
            .zip(&self.z_counts)
            .map(|(rows, &z)| {
                if rows.len() != self.theta_count || rows.iter().any(|r| r.len() != z) {
                    return Err(ModelError::Malformed("table shape mismatch".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(self.theta_count, z, &flat))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LikelihoodModel::from_tables(tables)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Malformed(e.to_string()))
    }
}
