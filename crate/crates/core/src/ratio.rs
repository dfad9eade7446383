//! Log-ratio matrices shared by the belief engine and the graph learner.
//!
//! Both the log-belief matrix and the log-likelihood matrix have one row per
//! agent and one column per non-reference hypothesis, in ascending hypothesis
//! order with the reference column removed.

use nalgebra::DMatrix;

/// Which quantity a [`LogRatioMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioKind {
    /// `log psi_k(theta_0) / psi_k(theta_j)` from public beliefs.
    Belief,
    /// `log L_k(z | theta_0) / L_k(z | theta_j)` from private observations.
    Likelihood,
    /// Expected likelihood ratio (difference of KL divergences).
    MeanLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioMatrix {
    values: DMatrix<f64>,
    reference: usize,
    kind: RatioKind,
}

impl LogRatioMatrix {
    pub fn new(values: DMatrix<f64>, reference: usize, kind: RatioKind) -> Self {
        Self {
            values,
            reference,
            kind,
        }
    }

    pub fn zeros(n: usize, theta_count: usize, reference: usize, kind: RatioKind) -> Self {
        Self::new(
            DMatrix::zeros(n, theta_count.saturating_sub(1)),
            reference,
            kind,
        )
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn kind(&self) -> RatioKind {
        self.kind
    }

    pub fn agents(&self) -> usize {
        self.values.nrows()
    }

    /// Number of non-reference hypotheses.
    pub fn columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Hypothesis index of column `j`.
    pub fn hypothesis_of_column(&self, j: usize) -> usize {
        column_hypothesis(self.reference, j)
    }
}

/// Maps a column index to the hypothesis it represents, skipping `reference`.
pub fn column_hypothesis(reference: usize, column: usize) -> usize {
    if column < reference {
        column
    } else {
        column + 1
    }
}

/// Iterates the non-reference hypotheses in column order.
pub fn non_reference(theta_count: usize, reference: usize) -> impl Iterator<Item = usize> {
    (0..theta_count).filter(move |&t| t != reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_skip_reference() {
        assert_eq!(non_reference(4, 0).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(non_reference(4, 2).collect::<Vec<_>>(), vec![0, 1, 3]);
        for reference in 0..4 {
            for (j, t) in non_reference(4, reference).enumerate() {
                assert_eq!(column_hypothesis(reference, j), t);
            }
        }
    }

    #[test]
    fn zeros_has_theta_minus_one_columns() {
        let m = LogRatioMatrix::zeros(3, 5, 0, RatioKind::Belief);
        assert_eq!(m.agents(), 3);
        assert_eq!(m.columns(), 4);
        assert_eq!(m.max_abs(), 0.0);
    }
}
