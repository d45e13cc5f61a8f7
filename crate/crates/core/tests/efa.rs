use cellfactor::efa::{
    extract_factors, jacobi_eigen, rotate_model, varimax, varimax_criterion, CorrelationMatrix,
    ExtractionConfig, Rotation, VarimaxConfig,
};
use cellfactor::{
    correlation_matrix, finalize_model, parallel_analysis, standardize, sym_eigen,
    ParallelAnalysisConfig,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// `groups` latent factors, each driving `per` variables, plus noise.
fn planted(n: usize, groups: usize, per: usize, noise: f64, seed: u64) -> DMatrix<f64> {
    let f = normal_matrix(n, groups, seed);
    let e = normal_matrix(n, groups * per, seed + 1);
    DMatrix::from_fn(n, groups * per, |i, j| f[(i, j / per)] + noise * e[(i, j)])
}

fn fit(x: &DMatrix<f64>, k: usize) -> cellfactor::FactorModel {
    let z = standardize(x).unwrap().z;
    let r = correlation_matrix(&z);
    let m = extract_factors(&r, k, &ExtractionConfig::default()).unwrap();
    finalize_model(&rotate_model(&m, Rotation::Promax, 4, &VarimaxConfig::default()).unwrap())
}

#[test]
fn identical_and_negated_columns() {
    let x = normal_matrix(50, 1, 3);
    let both = DMatrix::from_fn(50, 3, |i, j| match j {
        0 | 1 => x[(i, 0)],
        _ => -x[(i, 0)],
    });
    let r = correlation_matrix(&standardize(&both).unwrap().z);
    assert_eq!(r.as_matrix()[(0, 1)], 1.0);
    assert_eq!(r.as_matrix()[(0, 2)], -1.0);
}

#[test]
fn three_planted_factors_are_retained() {
    // Signal-to-noise 5:1 in standard deviation.
    let x = planted(300, 3, 8, 0.2, 40);
    let pa = parallel_analysis(&standardize(&x).unwrap().z, &ParallelAnalysisConfig::default()).unwrap();
    assert_eq!(pa.retained, 3, "observed {:?}", &pa.observed[..5]);
}

#[test]
fn parallel_analysis_is_seed_deterministic() {
    let z = standardize(&planted(120, 2, 5, 0.5, 9)).unwrap().z;
    let cfg = ParallelAnalysisConfig { replicates: 30, ..Default::default() };
    let a = parallel_analysis(&z, &cfg).unwrap();
    let b = parallel_analysis(&z, &cfg).unwrap();
    assert_eq!(a, b);
    let c = parallel_analysis(&z, &ParallelAnalysisConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.random_quantiles, c.random_quantiles);
}

#[test]
fn three_factor_reconstruction_residual() {
    // Population R = ΛΛᵀ with unit diagonal, including some cross-loadings.
    let lambda = DMatrix::from_fn(15, 3, |i, j| {
        if i / 5 == j {
            0.55 + 0.07 * (i % 5) as f64
        } else if (i + j) % 7 == 0 {
            0.2
        } else {
            0.0
        }
    });
    let mut r = &lambda * lambda.transpose();
    for i in 0..15 {
        r[(i, i)] = 1.0;
    }
    let r = CorrelationMatrix::from_matrix(r).unwrap();
    let m = extract_factors(&r, 3, &ExtractionConfig::default()).unwrap();
    assert!(m.diagnostics.extraction_converged);
    let implied = &m.pattern * &m.phi * m.pattern.transpose();
    let mut worst = 0.0f64;
    for i in 0..15 {
        for j in 0..15 {
            if i != j {
                worst = worst.max((r.as_matrix()[(i, j)] - implied[(i, j)]).abs());
            }
        }
    }
    assert!(worst <= 0.05, "max off-diagonal residual {worst}");
}

fn random_correlation(p: usize, seed: u64) -> DMatrix<f64> {
    let x = planted(3 * p + 10, 2, p.div_ceil(2), 1.0, seed);
    let x = x.columns(0, p).into_owned();
    correlation_matrix(&standardize(&x).unwrap().z).into_inner()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eigen_identities(p in 2usize..40, seed in any::<u64>()) {
        let r = random_correlation(p, seed);
        let e = sym_eigen(&r).unwrap();
        prop_assert!((e.values.sum() - p as f64).abs() <= 1e-8);
        prop_assert!(e.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let q = &e.vectors;
        prop_assert!((q * DMatrix::from_diagonal(&e.values) * q.transpose() - &r).amax() <= 1e-8);
        prop_assert!((q.transpose() * q - DMatrix::identity(p, p)).amax() <= 1e-10);
        let j = jacobi_eigen(&r, 100).unwrap();
        prop_assert!((j.values - e.values).amax() <= 1e-9);
    }

    #[test]
    fn varimax_monotone_and_orthogonal(
        vals in proptest::collection::vec(-1.0f64..1.0, 60),
        k in 2usize..5,
    ) {
        let n = 60 / k;
        let a = DMatrix::from_row_slice(n, k, &vals[..n * k]);
        let v = varimax(&a, &VarimaxConfig::default());
        prop_assert!(v.criterion.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((v.rotation.transpose() * &v.rotation - DMatrix::identity(k, k)).amax() <= 1e-10);
        for i in 0..n {
            prop_assert!((a.row(i).norm_squared() - v.loadings.row(i).norm_squared()).abs() <= 1e-10);
        }
        let raw = VarimaxConfig { normalize: false, ..VarimaxConfig::default() };
        let u = varimax(&a, &raw);
        prop_assert!(varimax_criterion(&u.loadings) >= varimax_criterion(&a) - 1e-12);
    }

    #[test]
    fn rescaling_a_variable_changes_nothing(
        seed in 0u64..1000,
        col in 0usize..12,
        factor in prop_oneof![Just(3.7), 0.01f64..100.0],
    ) {
        let x = planted(80, 2, 6, 0.6, seed);
        let mut y = x.clone();
        for i in 0..y.nrows() {
            y[(i, col)] *= factor;
        }
        let zx = standardize(&x).unwrap().z;
        let zy = standardize(&y).unwrap().z;
        let rx = correlation_matrix(&zx);
        let ry = correlation_matrix(&zy);
        prop_assert!((rx.as_matrix() - ry.as_matrix()).amax() <= 1e-12);
        let cfg = ParallelAnalysisConfig { replicates: 20, ..Default::default() };
        prop_assert_eq!(parallel_analysis(&zx, &cfg).unwrap(), parallel_analysis(&zy, &cfg).unwrap());
        let (mx, my) = (fit(&x, 2), fit(&y, 2));
        let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&mx.pattern), bits(&my.pattern));
        prop_assert_eq!(bits(&mx.phi), bits(&my.phi));
    }

    #[test]
    fn promax_identities(seed in any::<u64>(), k in 2usize..5) {
        let m = fit(&planted(150, k, 4, 0.7, seed), k);
        for i in 0..k {
            prop_assert_eq!(m.phi[(i, i)], 1.0);
        }
        prop_assert!((&m.phi - m.phi.transpose()).amax() == 0.0);
        prop_assert!((m.structure() - &m.pattern * &m.phi).amax() <= 1e-10);
        for c in m.pattern.column_iter() {
            prop_assert!(c.sum() >= 0.0);
        }
    }
}
