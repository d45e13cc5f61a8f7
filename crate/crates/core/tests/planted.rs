//! End-to-end checks against synthetic ground truth.

use cellfactor::export::heatmaps;
use cellfactor::pipeline::{analyze_matrix, Analysis};
use cellfactor::synth::{template_matrix, tucker};
use cellfactor::{
    build_median_week, built_in_profiles, congruence, generate, regression_scores, top_cells,
    CompletenessPolicy, Metric, PipelineConfig, ProfileSpec, SyntheticGroundTruth,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn analyse(profiles: &[ProfileSpec], days: u32, seed: u64) -> (Analysis, SyntheticGroundTruth) {
    let (ds, truth) = generate(profiles, days, seed).unwrap();
    let matrix = build_median_week(&ds, Metric::Dl, &CompletenessPolicy::default())
        .unwrap()
        .matrix;
    (analyze_matrix(&matrix, &PipelineConfig::default()).unwrap(), truth)
}

#[test]
fn four_profiles_give_four_factors() {
    let profiles: Vec<_> = built_in_profiles()
        .into_iter()
        .take(4)
        .map(|mut p| {
            p.cell_count = 125;
            p
        })
        .collect();
    let (a, _) = analyse(&profiles, 28, 7);
    assert_eq!(a.parallel.retained, 4);
    let report = congruence(&a.model.pattern, &template_matrix(&profiles)).unwrap();
    for m in &report.matches {
        assert!(m.abs() >= 0.95, "{m:?}");
    }
}

#[test]
fn recovered_factors_rank_their_planted_cells_first() {
    let profiles = built_in_profiles();
    let (a, truth) = analyse(&profiles, 28, 7);
    let report = congruence(&a.model.pattern, &template_matrix(&profiles)).unwrap();
    for name in ["morning_commute", "evening_commute", "business"] {
        let j = profiles.iter().position(|p| p.name == name).unwrap();
        let m = report.match_for_planted(j).unwrap();
        assert!(!m.negative);
        let planted = truth.cells_of(name);
        let top = top_cells(&a.scores, m.recovered, planted.len()).unwrap();
        let hits = top.iter().filter(|c| planted.contains(&c.cell_id.as_str())).count();
        let precision = hits as f64 / planted.len() as f64;
        assert!(precision >= 0.9, "{name}: precision {precision}");
    }

    let business = profiles.iter().position(|p| p.name == "business").unwrap();
    let f = report.match_for_planted(business).unwrap().recovered;
    let (day, hour) = heatmaps(&a.model).unwrap()[f].argmax();
    assert!(day < 5 && (8..=17).contains(&hour), "peak at day {day} hour {hour}");
}

#[test]
fn scores_are_centered_and_orthogonal_shortcut_holds() {
    let profiles: Vec<_> = built_in_profiles()
        .into_iter()
        .map(|mut p| {
            // Residential spans 77 active slots; fewer cells leave R rank-deficient.
            p.cell_count = 90;
            p
        })
        .collect();
    let (a, _) = analyse(&profiles, 14, 2);
    assert!(!a.scores.ridge);
    for c in a.scores.scores.column_iter() {
        assert!(c.mean().abs() <= 1e-8);
    }

    // With Φ = I the structure is the pattern itself.
    let mut orthogonal = a.model.clone();
    let k = orthogonal.n_factors();
    orthogonal.phi = DMatrix::identity(k, k);
    let ids = a.scores.cell_ids.clone();
    let coords = a.scores.coordinates.clone();
    let via_model = regression_scores(&a.standardized.z, &a.correlation, &orthogonal, &ids, &coords).unwrap();
    let w = a
        .correlation
        .as_matrix()
        .clone()
        .cholesky()
        .unwrap()
        .solve(&orthogonal.pattern);
    let direct = &a.standardized.z * w;
    assert!((via_model.scores - direct).amax() <= 1e-10);
}

#[test]
fn rankings_are_a_function_of_the_table() {
    let profiles: Vec<_> = built_in_profiles()
        .into_iter()
        .map(|mut p| {
            p.cell_count = 20;
            p
        })
        .collect();
    let (a, _) = analyse(&profiles, 14, 4);
    let (b, _) = analyse(&profiles, 14, 4);
    for f in 0..a.scores.n_factors() {
        assert_eq!(top_cells(&a.scores, f, 25).unwrap(), top_cells(&b.scores, f, 25).unwrap());
    }
}

proptest! {
    #[test]
    fn tucker_is_bounded(
        x in proptest::collection::vec(-1e3f64..1e3, 1..50),
        y in proptest::collection::vec(-1e3f64..1e3, 1..50),
    ) {
        let n = x.len().min(y.len());
        let c = tucker(&x[..n], &y[..n]);
        prop_assert!(c.abs() <= 1.0);
        prop_assert!((tucker(&x[..n], &x[..n]) - 1.0).abs() <= 1e-12 || x[..n].iter().all(|v| *v == 0.0));
    }
}
