//! Adaptive social learning over hidden directed graphs, online recovery of
//! the combination matrix from public beliefs, and influence analysis of the
//! recovered network.
//!
//! - [`graph`]: Erdos-Renyi combination matrices, connectivity, churn,
//!   spectral profile.
//! - [`observation`]: categorical likelihood families and log-likelihood
//!   ratio matrices.
//! - [`social`]: the adapt/combine belief engine and state estimation.
//! - [`learning`]: online graph learning and its diagnostics.
//! - [`influence`]: walk influence, influence maps, most influential paths.
//! - [`experiment`]: configs, scenario runs and exported artifacts.

pub mod experiment;
pub mod graph;
pub mod influence;
pub mod io;
pub mod learning;
pub mod observation;
pub mod ratio;
pub mod rng;
pub mod social;

pub use graph::CombinationMatrix;
pub use learning::LearningMode;
pub use observation::LikelihoodModel;
pub use ratio::LogRatioMatrix;
