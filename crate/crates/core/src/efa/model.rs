use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{promax, varimax, EfaError, ExtractionConfig, ParallelAnalysisConfig, VarimaxConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    None,
    Varimax,
    Promax,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub extraction_iterations: usize,
    pub extraction_converged: bool,
    /// R was not positive definite; communalities started from max |r|.
    pub smc_fallback: bool,
    /// Variables whose communality was clamped below 1.
    pub heywood: Vec<usize>,
    pub varimax_sweeps: usize,
    pub varimax_converged: bool,
    pub promax_singular: bool,
}

/// A fitted common-factor model over N variables and K factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// N × K pattern loadings.
    pub pattern: DMatrix<f64>,
    /// K × K factor correlations; identity for orthogonal solutions.
    pub phi: DMatrix<f64>,
    pub uniqueness: Vec<f64>,
    pub communalities: Vec<f64>,
    /// Per-factor sum of squared structure loadings.
    pub explained_variance: Vec<f64>,
    pub rotation: Rotation,
    pub diagnostics: FitDiagnostics,
}

impl FactorModel {
    pub fn n_variables(&self) -> usize {
        self.pattern.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.pattern.ncols()
    }

    /// Variable–factor correlations, pattern · Φ.
    pub fn structure(&self) -> DMatrix<f64> {
        &self.pattern * &self.phi
    }

    fn recompute_explained(&mut self) {
        self.explained_variance = self
            .structure()
            .column_iter()
            .map(|c| c.norm_squared())
            .collect();
    }
}

/// Rotates an unrotated model. Promax runs varimax first and fits the
/// oblique target to its loadings.
pub fn rotate_model(
    model: &FactorModel,
    rotation: Rotation,
    kappa: u32,
    varimax_config: &VarimaxConfig,
) -> Result<FactorModel, EfaError> {
    let mut out = model.clone();
    out.rotation = rotation;
    if rotation == Rotation::None {
        return Ok(out);
    }
    let v = varimax(&model.pattern, varimax_config);
    out.diagnostics.varimax_sweeps = v.sweeps;
    out.diagnostics.varimax_converged = v.converged;
    out.pattern = v.loadings;
    out.phi = DMatrix::identity(model.n_factors(), model.n_factors());
    if rotation == Rotation::Promax {
        let p = promax(&out.pattern, kappa)?;
        out.diagnostics.promax_singular = p.singular;
        if p.singular {
            out.rotation = Rotation::Varimax;
        }
        out.pattern = p.pattern;
        out.phi = p.phi;
    }
    out.recompute_explained();
    Ok(out)
}

/// Canonical ordering and orientation: factors sorted by explained variance
/// (descending, stable), each pattern column flipped to a non-negative sum,
/// Φ permuted and flipped to match. Idempotent.
pub fn finalize_model(model: &FactorModel) -> FactorModel {
    let k = model.n_factors();
    let signs: Vec<f64> = model
        .pattern
        .column_iter()
        .map(|c| if c.sum() < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut base = model.clone();
    base.recompute_explained();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| base.explained_variance[b].total_cmp(&base.explained_variance[a]));

    let mut out = base.clone();
    for (dst, &src) in order.iter().enumerate() {
        out.pattern
            .set_column(dst, &(base.pattern.column(src) * signs[src]));
        for (dst2, &src2) in order.iter().enumerate() {
            out.phi[(dst, dst2)] = base.phi[(src, src2)] * signs[src] * signs[src2];
        }
    }
    out.recompute_explained();
    out
}

/// Run parameters carried alongside a serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub n_observations: usize,
    pub parallel_analysis: Option<ParallelAnalysisConfig>,
    pub extraction: ExtractionConfig,
    pub kappa: u32,
}

/// JSON form of a [`FactorModel`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelDocument {
    pub n_variables: usize,
    pub n_factors: usize,
    pub rotation: Rotation,
    pub pattern: Vec<f64>,
    pub phi: Vec<f64>,
    pub uniqueness: Vec<f64>,
    pub communalities: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub seed: Option<u64>,
    pub parameters: ModelParameters,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl FactorModelDocument {
    pub fn new(model: &FactorModel, parameters: ModelParameters) -> Self {
        Self {
            n_variables: model.n_variables(),
            n_factors: model.n_factors(),
            rotation: model.rotation,
            pattern: row_major(&model.pattern),
            phi: row_major(&model.phi),
            uniqueness: model.uniqueness.clone(),
            communalities: model.communalities.clone(),
            explained_variance: model.explained_variance.clone(),
            diagnostics: model.diagnostics.clone(),
            seed: parameters.parallel_analysis.map(|p| p.seed),
            parameters,
        }
    }

    pub fn to_model(&self) -> Result<FactorModel, EfaError> {
        let (n, k) = (self.n_variables, self.n_factors);
        let check = |name: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(EfaError::Document(format!("{name} has {len} entries, expected {want}")))
            }
        };
        check("pattern", self.pattern.len(), n * k)?;
        check("phi", self.phi.len(), k * k)?;
        check("uniqueness", self.uniqueness.len(), n)?;
        check("communalities", self.communalities.len(), n)?;
        check("explained_variance", self.explained_variance.len(), k)?;
        Ok(FactorModel {
            pattern: DMatrix::from_row_slice(n, k, &self.pattern),
            phi: DMatrix::from_row_slice(k, k, &self.phi),
            uniqueness: self.uniqueness.clone(),
            communalities: self.communalities.clone(),
            explained_variance: self.explained_variance.clone(),
            rotation: self.rotation,
            diagnostics: self.diagnostics.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(pattern: DMatrix<f64>, phi: DMatrix<f64>) -> FactorModel {
        let n = pattern.nrows();
        FactorModel {
            explained_variance: vec![0.0; pattern.ncols()],
            pattern,
            phi,
            uniqueness: vec![0.5; n],
            communalities: vec![0.5; n],
            rotation: Rotation::Promax,
            diagnostics: FitDiagnostics::default(),
        }
    }

    #[test]
    fn negative_column_is_flipped() {
        let pattern = DMatrix::from_row_slice(3, 2, &[0.9, -1.0, 0.8, -1.0, 0.7, -1.0]);
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let out = finalize_model(&model(pattern, phi));
        // Column with sum -3 carries more variance, so it moves first and is negated.
        assert_eq!(out.pattern.column(0).sum(), 3.0);
        assert!(out.pattern.column(1).sum() > 0.0);
        assert_eq!(out.phi[(0, 1)], -0.3);
        assert_eq!(out.phi[(1, 0)], -0.3);
        assert_eq!(out.phi[(0, 0)], 1.0);
    }

    #[test]
    fn canonical_model_unchanged() {
        let pattern = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.8, 0.0, 0.1, 0.5]);
        let m = finalize_model(&model(pattern, DMatrix::identity(2, 2)));
        assert_eq!(finalize_model(&m), m);
    }

    #[test]
    fn document_round_trip() {
        let pattern = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.8, 0.0, 0.1, 0.5]);
        let m = finalize_model(&model(pattern, DMatrix::identity(2, 2)));
        let doc = FactorModelDocument::new(
            &m,
            ModelParameters {
                n_observations: 10,
                parallel_analysis: Some(ParallelAnalysisConfig::default()),
                extraction: ExtractionConfig::default(),
                kappa: 4,
            },
        );
        assert_eq!(doc.pattern[..2], [0.9, 0.1]);
        let json = serde_json::to_string(&doc).unwrap();
        let back: FactorModelDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
        let mut broken = back;
        broken.phi.pop();
        assert!(matches!(broken.to_model(), Err(EfaError::Document(_))));
    }

    proptest! {
        #[test]
        fn finalize_is_idempotent(
            vals in proptest::collection::vec(-1.0f64..1.0, 12),
            r in -0.6f64..0.6,
        ) {
            let pattern = DMatrix::from_row_slice(4, 3, &vals);
            let phi = DMatrix::from_row_slice(3, 3, &[1.0, r, 0.0, r, 1.0, r / 2.0, 0.0, r / 2.0, 1.0]);
            let once = finalize_model(&model(pattern, phi));
            let twice = finalize_model(&once);
            prop_assert_eq!(&once, &twice);
            for c in once.pattern.column_iter() {
                prop_assert!(c.sum() >= 0.0);
            }
            prop_assert!(once.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
