//! Exploratory factor analysis on the median-week observation matrix.
//!
//! Data flow: [`standardize`] → [`correlation_matrix`] → [`parallel_analysis`]
//! picks K → [`extract_factors`] (iterated principal axes) → [`varimax`] →
//! [`promax`] → [`finalize_model`].

mod correlation;
mod eigen;
mod extract;
mod model;
mod parallel;
mod rotate;
mod standardize;

use thiserror::Error;

pub use correlation::{correlation_matrix, CorrelationMatrix};
pub use eigen::{jacobi_eigen, sym_eigen, sym_eigenvalues, SymEigen};
pub use extract::{extract_factors, ExtractionConfig, HEYWOOD_FLOOR};
pub use model::{
    finalize_model, rotate_model, FactorModel, FactorModelDocument, FitDiagnostics,
    ModelParameters, Rotation,
};
pub use parallel::{parallel_analysis, quantile, ParallelAnalysisConfig, ParallelAnalysisResult};
pub use rotate::{
    promax, varimax, varimax_criterion, PromaxResult, VarimaxConfig, VarimaxResult,
};
pub use standardize::{standardize, Standardized};

#[derive(Debug, Error)]
pub enum EfaError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("zero-variance variables at slots {0:?}")]
    ZeroVarianceVariable(Vec<usize>),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("not a correlation matrix: {0}")]
    InvalidCorrelation(String),
    #[error("eigendecomposition did not converge within {0} iterations")]
    ConvergenceFailure(usize),
    #[error("factor count {k} must satisfy 1 <= K < {n}")]
    InvalidFactorCount { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parallel analysis retained no factors")]
    NoFactorsRetained,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("model document: {0}")]
    Document(String),
}
