use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::EfaError;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and
/// eigenvectors as orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

const ASYMMETRY_TOL: f64 = 1e-10;

fn check_symmetric(a: &DMatrix<f64>) -> Result<(), EfaError> {
    if !a.is_square() {
        return Err(EfaError::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let scale = a.amax().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > ASYMMETRY_TOL * scale {
        return Err(EfaError::NotSymmetric(asym));
    }
    Ok(())
}

/// Sorts eigenpairs by descending eigenvalue (stable on ties) and orients
/// each eigenvector so its largest-magnitude component is positive.
fn canonicalize(values: &DVector<f64>, vectors: &DMatrix<f64>) -> SymEigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut out = DMatrix::zeros(vectors.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        let col = vectors.column(src);
        let pivot = col.iter().copied().fold(0.0f64, |best, v| {
            if v.abs() > best.abs() {
                v
            } else {
                best
            }
        });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        out.set_column(dst, &(col * sign));
    }
    SymEigen {
        values: DVector::from_iterator(n, order.iter().map(|&i| values[i])),
        vectors: out,
    }
}

/// Full symmetric eigendecomposition (Householder tridiagonalization + implicit QL).
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen, EfaError> {
    check_symmetric(a)?;
    let max_iter = 1000 * a.nrows().max(1);
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, max_iter)
        .ok_or(EfaError::ConvergenceFailure(max_iter))?;
    Ok(canonicalize(&eig.eigenvalues, &eig.eigenvectors))
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<DVector<f64>, EfaError> {
    check_symmetric(a)?;
    let max_iter = 1000 * a.nrows().max(1);
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, max_iter)
        .ok_or(EfaError::ConvergenceFailure(max_iter))?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(DVector::from_vec(v))
}

/// Cyclic Jacobi eigendecomposition.
///
/// Slower than [`sym_eigen`] but entirely independent of it; each sweep
/// annihilates every off-diagonal pair once with a plane rotation.
pub fn jacobi_eigen(a: &DMatrix<f64>, max_sweeps: usize) -> Result<SymEigen, EfaError> {
    check_symmetric(a)?;
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let frob2: f64 = m.iter().map(|x| x * x).sum();
    let target = (f64::EPSILON * f64::EPSILON) * frob2.max(f64::MIN_POSITIVE);

    let off = |m: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s
    };

    let mut converged = off(&m) <= target;
    let mut sweep = 0;
    while !converged && sweep < max_sweeps {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweep += 1;
        converged = off(&m) <= target;
    }
    if !converged {
        return Err(EfaError::ConvergenceFailure(max_sweeps));
    }
    Ok(canonicalize(&m.diagonal(), &v))
}
