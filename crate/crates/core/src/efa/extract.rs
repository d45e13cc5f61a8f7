use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::{FactorModel, FitDiagnostics, Rotation};
use super::{sym_eigen, CorrelationMatrix, EfaError};

/// Smallest uniqueness a variable may keep; larger communalities are Heywood cases.
pub const HEYWOOD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest communality change.
    pub tol: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), EfaError> {
        if self.max_iter == 0 || !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(EfaError::InvalidParameter(format!(
                "extraction needs max_iter >= 1 and tol > 0, got {} / {}",
                self.max_iter, self.tol
            )));
        }
        Ok(())
    }
}

/// Squared multiple correlations 1 − 1/(R⁻¹)ᵢᵢ, or `None` when R is not
/// positive definite.
fn squared_multiple_correlations(r: &DMatrix<f64>) -> Option<Vec<f64>> {
    let chol = r.clone().cholesky()?;
    let inv = chol.inverse();
    let smc: Vec<f64> = inv.diagonal().iter().map(|d| 1.0 - 1.0 / d).collect();
    smc.iter().all(|v| v.is_finite()).then_some(smc)
}

fn max_abs_offdiag(r: &DMatrix<f64>) -> Vec<f64> {
    let n = r.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| r[(i, j)].abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn clamp_communality(h: f64) -> f64 {
    h.clamp(0.0, 1.0 - HEYWOOD_FLOOR)
}

/// Iterated principal-axis factoring of `k` factors.
///
/// Communalities start at the squared multiple correlations (or the largest
/// absolute off-diagonal correlation when R is singular) and are refined by
/// repeated top-k eigendecompositions of the reduced correlation matrix.
pub fn extract_factors(
    r: &CorrelationMatrix,
    k: usize,
    config: &ExtractionConfig,
) -> Result<FactorModel, EfaError> {
    config.validate()?;
    let n = r.dim();
    if k == 0 || k >= n {
        return Err(EfaError::InvalidFactorCount { k, n });
    }
    let r = r.as_matrix();
    let mut diagnostics = FitDiagnostics::default();

    let mut h2 = match squared_multiple_correlations(r) {
        Some(smc) => smc,
        None => {
            log::warn!("correlation matrix not positive definite; SMC start replaced by max |r|");
            diagnostics.smc_fallback = true;
            max_abs_offdiag(r)
        }
    };
    for h in &mut h2 {
        *h = clamp_communality(*h);
    }

    let mut reduced = r.clone();
    let mut loadings = DMatrix::zeros(n, k);
    let mut eigenvalues = vec![0.0; k];
    for iter in 1..=config.max_iter {
        for (i, h) in h2.iter().enumerate() {
            reduced[(i, i)] = *h;
        }
        let eig = sym_eigen(&reduced)?;
        for j in 0..k {
            let lambda = eig.values[j].max(0.0);
            eigenvalues[j] = lambda;
            let scale = lambda.sqrt();
            loadings.set_column(j, &(eig.vectors.column(j) * scale));
        }
        let next: Vec<f64> = loadings
            .row_iter()
            .map(|row| clamp_communality(row.norm_squared()))
            .collect();
        let delta = next
            .iter()
            .zip(&h2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        h2 = next;
        diagnostics.extraction_iterations = iter;
        if delta <= config.tol {
            diagnostics.extraction_converged = true;
            break;
        }
    }
    if !diagnostics.extraction_converged {
        log::warn!(
            "principal-axis extraction stopped at {} iterations without converging",
            config.max_iter
        );
    }

    let raw: Vec<f64> = loadings.row_iter().map(|row| row.norm_squared()).collect();
    diagnostics.heywood = raw
        .iter()
        .enumerate()
        .filter(|(_, h)| **h > 1.0 - HEYWOOD_FLOOR)
        .map(|(i, _)| i)
        .collect();
    let communalities: Vec<f64> = raw.into_iter().map(clamp_communality).collect();
    let uniqueness = communalities.iter().map(|h| 1.0 - h).collect();

    Ok(FactorModel {
        pattern: loadings,
        phi: DMatrix::identity(k, k),
        uniqueness,
        communalities,
        explained_variance: eigenvalues,
        rotation: Rotation::None,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equicorrelated(n: usize, loading: f64) -> CorrelationMatrix {
        let mut m = DMatrix::from_element(n, n, loading * loading);
        m.fill_diagonal(1.0);
        CorrelationMatrix::from_matrix(m).unwrap()
    }

    #[test]
    fn one_factor_recovered() {
        let model = extract_factors(&equicorrelated(6, 0.8), 1, &ExtractionConfig::default()).unwrap();
        for v in model.pattern.column(0).iter() {
            assert!((v.abs() - 0.8).abs() <= 0.01, "loading {v}");
        }
        for (h, u) in model.communalities.iter().zip(&model.uniqueness) {
            assert!((h + u - 1.0).abs() <= 1e-8);
        }
        assert!(model.diagnostics.extraction_converged);
        assert!(!model.diagnostics.smc_fallback);
    }

    #[test]
    fn identity_has_no_common_variance() {
        let r = CorrelationMatrix::from_matrix(DMatrix::identity(5, 5)).unwrap();
        let model = extract_factors(&r, 1, &ExtractionConfig::default()).unwrap();
        assert!(model.pattern.amax() < 1e-12);
        assert!(model.communalities.iter().all(|h| h.abs() < 1e-12));
    }

    #[test]
    fn singular_r_falls_back_and_clamps() {
        // Two identical variables plus one unrelated: R is singular.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let r = CorrelationMatrix::from_matrix(m).unwrap();
        let model = extract_factors(&r, 1, &ExtractionConfig::default()).unwrap();
        assert!(model.diagnostics.smc_fallback);
        assert_eq!(model.diagnostics.heywood, vec![0, 1]);
        for (h, u) in model.communalities.iter().zip(&model.uniqueness) {
            assert!((0.0..=1.0).contains(h));
            assert!(*u >= HEYWOOD_FLOOR - 1e-15);
        }
    }

    #[test]
    fn factor_count_bounds() {
        let r = equicorrelated(4, 0.5);
        for k in [0, 4, 9] {
            assert!(matches!(
                extract_factors(&r, k, &ExtractionConfig::default()),
                Err(EfaError::InvalidFactorCount { .. })
            ));
        }
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let cfg = ExtractionConfig {
            max_iter: 1,
            tol: 1e-12,
        };
        let model = extract_factors(&equicorrelated(6, 0.8), 1, &cfg).unwrap();
        assert!(!model.diagnostics.extraction_converged);
        assert_eq!(model.diagnostics.extraction_iterations, 1);
    }
}
