use nalgebra::DMatrix;

use super::EfaError;

/// Column z-scores of an observation matrix (rows = observations).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub z: DMatrix<f64>,
    pub means: Vec<f64>,
    /// Sample standard deviations (divisor n − 1).
    pub std_devs: Vec<f64>,
}

impl Standardized {
    pub fn n_observations(&self) -> usize {
        self.z.nrows()
    }

    pub fn n_variables(&self) -> usize {
        self.z.ncols()
    }
}

/// z-scores are snapped to this grid before a second centering pass, so
/// that ulp-level differences in the raw data (e.g. from rescaling a
/// column) cannot reach the correlation matrix.
const SNAP: f64 = (1u64 << 24) as f64;

fn mean_sd(col: &[f64]) -> (f64, f64) {
    let n = col.len();
    let mean = col.iter().sum::<f64>() / n as f64;
    let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Centers every column to mean 0 and scales it to sample standard deviation 1.
pub fn standardize(x: &DMatrix<f64>) -> Result<Standardized, EfaError> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(EfaError::TooFewObservations(n));
    }
    let mut z = DMatrix::zeros(n, p);
    let mut means = Vec::with_capacity(p);
    let mut std_devs = Vec::with_capacity(p);
    let mut constant = Vec::new();

    for j in 0..p {
        let col = x.column(j);
        let (mean, sd) = mean_sd(col.as_slice());
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        means.push(mean);
        std_devs.push(sd);
        if !(sd.is_finite() && sd > 0.0) || lo == hi || sd <= 16.0 * f64::EPSILON * mean.abs() {
            constant.push(j);
            continue;
        }
        let mut out = z.column_mut(j);
        for (o, &v) in out.iter_mut().zip(col.iter()) {
            *o = (((v - mean) / sd) * SNAP).round() / SNAP;
        }
        let (m2, s2) = mean_sd(out.as_slice());
        for o in out.iter_mut() {
            *o = (*o - m2) / s2;
        }
    }
    if !constant.is_empty() {
        return Err(EfaError::ZeroVarianceVariable(constant));
    }
    Ok(Standardized { z, means, std_devs })
}
