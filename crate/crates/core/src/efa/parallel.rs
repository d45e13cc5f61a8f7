use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{correlation_matrix, standardize, sym_eigenvalues, EfaError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelAnalysisConfig {
    pub replicates: usize,
    /// Per-rank quantile of the random eigenvalues an observed eigenvalue must exceed.
    pub quantile: f64,
    pub seed: u64,
}

impl Default for ParallelAnalysisConfig {
    fn default() -> Self {
        Self {
            replicates: 100,
            quantile: 0.95,
            seed: 7,
        }
    }
}

impl ParallelAnalysisConfig {
    pub fn validate(&self) -> Result<(), EfaError> {
        if self.replicates == 0 {
            return Err(EfaError::InvalidParameter("replicates must be >= 1".into()));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(EfaError::InvalidParameter(format!(
                "quantile {} must lie in (0, 1)",
                self.quantile
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysisResult {
    /// Eigenvalues of the data correlation matrix, descending.
    pub observed: Vec<f64>,
    /// Per-rank quantile of the eigenvalues of random same-shaped data.
    pub random_quantiles: Vec<f64>,
    pub retained: usize,
    pub replicates: usize,
    pub quantile: f64,
    pub seed: u64,
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Correlation eigenvalues of one i.i.d. standard-normal n × p matrix. The
/// stream depends only on `(seed, replicate)`.
fn random_eigenvalues(n: usize, p: usize, seed: u64, replicate: u64) -> Result<Vec<f64>, EfaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut data = Vec::with_capacity(n * p);
    data.extend((0..n * p).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    let g = DMatrix::from_vec(n, p, data);
    let z = standardize(&g)?.z;
    Ok(sym_eigenvalues(correlation_matrix(&z).as_matrix())?
        .iter()
        .copied()
        .collect())
}

/// Horn's parallel analysis on a standardized matrix. Retains the longest
/// leading run of observed eigenvalues that exceed the random quantile of
/// the same rank. Replicates run concurrently; results do not depend on
/// scheduling.
pub fn parallel_analysis(
    z: &DMatrix<f64>,
    config: &ParallelAnalysisConfig,
) -> Result<ParallelAnalysisResult, EfaError> {
    config.validate()?;
    let (n, p) = z.shape();
    let observed: Vec<f64> = sym_eigenvalues(correlation_matrix(z).as_matrix())?
        .iter()
        .copied()
        .collect();

    let replicates: Vec<Vec<f64>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| random_eigenvalues(n, p, config.seed, r))
        .collect::<Result<_, _>>()?;

    let random_quantiles: Vec<f64> = (0..p)
        .map(|rank| {
            let mut column: Vec<f64> = replicates.iter().map(|ev| ev[rank]).collect();
            column.sort_by(f64::total_cmp);
            quantile(&column, config.quantile)
        })
        .collect();
    let retained = observed
        .iter()
        .zip(&random_quantiles)
        .take_while(|(o, q)| o > q)
        .count();

    Ok(ParallelAnalysisResult {
        observed,
        random_quantiles,
        retained,
        replicates: config.replicates,
        quantile: config.quantile,
        seed: config.seed,
    })
}
