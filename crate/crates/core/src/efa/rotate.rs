use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EfaError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarimaxConfig {
    pub max_sweeps: usize,
    /// Convergence threshold on the criterion gain over one sweep.
    pub tol: f64,
    /// Kaiser row normalization during rotation.
    pub normalize: bool,
}

impl Default for VarimaxConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tol: 1e-8,
            normalize: true,
        }
    }
}

/// Largest planar angle (radians) a sweep may still apply once converged.
const ANGLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct VarimaxResult {
    pub loadings: DMatrix<f64>,
    /// Orthogonal K × K transform with `loadings = input · rotation`.
    pub rotation: DMatrix<f64>,
    /// Criterion of the (row-normalized) loadings before the first sweep and after each sweep.
    pub criterion: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Σⱼ [Σᵢ λᵢⱼ⁴ − (Σᵢ λᵢⱼ²)² / N].
pub fn varimax_criterion(loadings: &DMatrix<f64>) -> f64 {
    let n = loadings.nrows() as f64;
    loadings.column_iter().map(|c| column_term(c.iter().copied(), n)).sum()
}

fn column_term(col: impl Iterator<Item = f64>, n: f64) -> f64 {
    let (mut s2, mut s4) = (0.0, 0.0);
    for v in col {
        let sq = v * v;
        s2 += sq;
        s4 += sq * sq;
    }
    s4 - s2 * s2 / n
}

fn pair_term(x: &[f64], y: &[f64], n: f64) -> f64 {
    column_term(x.iter().copied(), n) + column_term(y.iter().copied(), n)
}

/// Kaiser's closed-form angle maximizing the criterion of one column pair.
fn pair_angle(x: &[f64], y: &[f64], n: f64) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let u = xi * xi - yi * yi;
        let v = 2.0 * xi * yi;
        a += u;
        b += v;
        c += u * u - v * v;
        d += 2.0 * u * v;
    }
    let num = d - 2.0 * a * b / n;
    let den = c - (a * a - b * b) / n;
    num.atan2(den) / 4.0
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, cos: f64, sin: f64) {
    for i in 0..m.nrows() {
        let x = m[(i, p)];
        let y = m[(i, q)];
        m[(i, p)] = cos * x + sin * y;
        m[(i, q)] = -sin * x + cos * y;
    }
}

/// Varimax rotation by cyclic pairwise planar rotations.
///
/// A planar rotation is applied only if it raises the pair's criterion, so
/// the recorded criterion never decreases from one sweep to the next.
pub fn varimax(loadings: &DMatrix<f64>, config: &VarimaxConfig) -> VarimaxResult {
    let (rows, k) = loadings.shape();
    if k < 2 {
        return VarimaxResult {
            loadings: loadings.clone(),
            rotation: DMatrix::identity(k, k),
            criterion: vec![varimax_criterion(loadings)],
            sweeps: 0,
            converged: true,
        };
    }
    let norms: Vec<f64> = loadings
        .row_iter()
        .map(|r| if config.normalize { r.norm() } else { 1.0 })
        .collect();
    let mut a = loadings.clone();
    for (i, &h) in norms.iter().enumerate() {
        if h > 0.0 {
            a.row_mut(i).unscale_mut(h);
        }
    }
    let n = rows as f64;
    let mut rotation = DMatrix::<f64>::identity(k, k);
    let mut criterion = vec![varimax_criterion(&a)];
    let mut converged = false;
    let mut sweeps = 0;

    let mut x = vec![0.0; rows];
    let mut y = vec![0.0; rows];
    let mut xr = vec![0.0; rows];
    let mut yr = vec![0.0; rows];
    while sweeps < config.max_sweeps {
        let mut max_angle = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                for i in 0..rows {
                    x[i] = a[(i, p)];
                    y[i] = a[(i, q)];
                }
                let phi = pair_angle(&x, &y, n);
                if phi == 0.0 {
                    continue;
                }
                let (sin, cos) = phi.sin_cos();
                for i in 0..rows {
                    xr[i] = cos * x[i] + sin * y[i];
                    yr[i] = -sin * x[i] + cos * y[i];
                }
                if pair_term(&xr, &yr, n) <= pair_term(&x, &y, n) {
                    continue;
                }
                for i in 0..rows {
                    a[(i, p)] = xr[i];
                    a[(i, q)] = yr[i];
                }
                rotate_columns(&mut rotation, p, q, cos, sin);
                max_angle = max_angle.max(phi.abs());
            }
        }
        sweeps += 1;
        let before = *criterion.last().unwrap();
        let after = varimax_criterion(&a);
        criterion.push(after);
        if after - before <= config.tol && max_angle <= ANGLE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("varimax hit the sweep cap ({}) before converging", config.max_sweeps);
    }
    for (i, &h) in norms.iter().enumerate() {
        if h > 0.0 {
            a.row_mut(i).scale_mut(h);
        }
    }
    VarimaxResult {
        loadings: a,
        rotation,
        criterion,
        sweeps,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromaxResult {
    /// Oblique pattern matrix.
    pub pattern: DMatrix<f64>,
    /// Factor correlations, unit diagonal.
    pub phi: DMatrix<f64>,
    /// K × K transform with `pattern = varimax_loadings · transform`.
    pub transform: DMatrix<f64>,
    /// The transform was singular; the varimax solution was returned with Φ = I.
    pub singular: bool,
}

/// Promax: fit the varimax loadings by least squares to the target
/// `sign(λ)·|λ|^κ`, rescale so the implied factor correlations have unit
/// diagonal.
pub fn promax(varimax_loadings: &DMatrix<f64>, kappa: u32) -> Result<PromaxResult, EfaError> {
    if kappa < 1 {
        return Err(EfaError::InvalidParameter("promax kappa must be >= 1".into()));
    }
    let k = varimax_loadings.ncols();
    let fallback = || PromaxResult {
        pattern: varimax_loadings.clone(),
        phi: DMatrix::identity(k, k),
        transform: DMatrix::identity(k, k),
        singular: true,
    };
    if k < 2 {
        return Ok(PromaxResult {
            singular: false,
            ..fallback()
        });
    }
    let lambda = varimax_loadings;
    let target = lambda.map(|v| if v == 0.0 { 0.0 } else { v.signum() * v.abs().powi(kappa as i32) });

    let gram = lambda.transpose() * lambda;
    let Some(gram_inv) = invert(&gram) else {
        log::warn!("promax: varimax loadings are rank deficient; keeping varimax solution");
        return Ok(fallback());
    };
    let fit = gram_inv * lambda.transpose() * target;
    let Some(ftf_inv) = invert(&(fit.transpose() * &fit)) else {
        log::warn!("promax: singular transform; keeping varimax solution");
        return Ok(fallback());
    };
    let d = ftf_inv.diagonal();
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Ok(fallback());
    }
    let scale = DMatrix::from_diagonal(&d.map(f64::sqrt));
    let transform = fit * scale;
    let Some(mut phi) = invert(&(transform.transpose() * &transform)) else {
        return Ok(fallback());
    };
    for i in 0..k {
        for j in (i + 1)..k {
            let v = ((phi[(i, j)] + phi[(j, i)]) / 2.0).clamp(-1.0, 1.0);
            phi[(i, j)] = v;
            phi[(j, i)] = v;
        }
        phi[(i, i)] = 1.0;
    }
    Ok(PromaxResult {
        pattern: lambda * &transform,
        phi,
        transform,
        singular: false,
    })
}

/// Inverse via LU with a conditioning guard.
fn invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().try_inverse()?;
    let cond = m.amax() * inv.amax() * m.nrows() as f64;
    (inv.iter().all(|v| v.is_finite()) && cond < 1e12).then_some(inv)
}
