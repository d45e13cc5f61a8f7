use nalgebra::DMatrix;

use super::EfaError;

/// Symmetric unit-diagonal matrix of Pearson correlations between variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    /// Validates symmetry (≤ 1e-12), unit diagonal and entries in [-1, 1].
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self, EfaError> {
        if !m.is_square() {
            return Err(EfaError::InvalidCorrelation(format!(
                "{}x{} is not square",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut asym = 0.0f64;
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(EfaError::InvalidCorrelation(format!(
                    "diagonal entry {i} is {}",
                    m[(i, i)]
                )));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                    return Err(EfaError::InvalidCorrelation(format!(
                        "entry ({i}, {j}) = {v} outside [-1, 1]"
                    )));
                }
                asym = asym.max((v - m[(j, i)]).abs());
            }
        }
        if asym > 1e-12 {
            return Err(EfaError::NotSymmetric(asym));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// R = ZᵀZ / (n − 1) for a standardized matrix, with the diagonal pinned to
/// 1 and the upper triangle mirrored so the result is exactly symmetric.
pub fn correlation_matrix(z: &DMatrix<f64>) -> CorrelationMatrix {
    let (n, p) = z.shape();
    let denom = (n.max(2) - 1) as f64;
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        let ci = z.column(i);
        for j in (i + 1)..p {
            let v = (ci.dot(&z.column(j)) / denom).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    CorrelationMatrix(r)
}
