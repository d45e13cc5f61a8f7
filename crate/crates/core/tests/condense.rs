use std::collections::BTreeMap;

use cellfactor::condense::{median, CellCoverage};
use cellfactor::{
    build_median_week, completeness_report, slot_index, CellDataset, CompletenessPolicy,
    KpiRecord, Metric, SLOTS,
};
use chrono::{Datelike, NaiveDate};
use proptest::prelude::*;

const MONDAY: (i32, u32, u32) = (2017, 12, 4);

fn rec(cell: &str, day: i64, hour: u8, dl: f64) -> KpiRecord {
    let (y, m, d) = MONDAY;
    KpiRecord {
        date: NaiveDate::from_ymd_opt(y, m, d).unwrap() + chrono::Duration::days(day),
        hour,
        region: "R".into(),
        city: "C".into(),
        district: "D".into(),
        site_id: "S".into(),
        cell_id: cell.into(),
        dl_gb: dl,
        ul_gb: 0.0,
        active_users: 0.0,
    }
}

/// One full week per cell plus extra draws, as (cell, day offset, hour, value).
fn full_weeks() -> impl Strategy<Value = Vec<(usize, i64, u8, f64)>> {
    let cells = 1usize..4;
    cells.prop_flat_map(|n| {
        let base = proptest::collection::vec(0.0f64..100.0, n * SLOTS);
        let extra = proptest::collection::vec((0..n, 0i64..21, 0u8..24, 0.0f64..100.0), 0..300);
        (Just(n), base, extra).prop_map(|(n, base, extra)| {
            let mut out: Vec<_> = (0..n * SLOTS)
                .map(|i| (i / SLOTS, ((i % SLOTS) / 24) as i64, (i % 24) as u8, base[i]))
                .collect();
            out.extend(extra);
            out
        })
    })
}

fn to_records(draws: &[(usize, i64, u8, f64)]) -> Vec<KpiRecord> {
    draws
        .iter()
        .map(|&(c, d, h, v)| rec(&format!("c{c}"), d, h, v))
        .collect()
}

fn dl_matrix(records: Vec<KpiRecord>) -> nalgebra::DMatrix<f64> {
    build_median_week(&CellDataset::new(records), Metric::Dl, &CompletenessPolicy::default())
        .unwrap()
        .matrix
        .values
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shuffling_records_changes_nothing(draws in full_weeks(), seed in any::<u64>()) {
        let records = to_records(&draws);
        let mut shuffled = records.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(dl_matrix(records), dl_matrix(shuffled));
    }

    #[test]
    fn median_within_bucket_range(draws in full_weeks()) {
        let m = dl_matrix(to_records(&draws));
        let mut buckets: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
        for &(c, d, h, v) in &draws {
            let e = buckets.entry((c, d as usize % 7 * 24 + h as usize)).or_insert((v, v));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
        for ((c, s), (lo, hi)) in buckets {
            prop_assert!(lo <= m[(c, s)] && m[(c, s)] <= hi);
        }
    }

    #[test]
    fn duplicating_the_median_is_a_no_op(draws in full_weeks(), pick in any::<proptest::sample::Index>()) {
        let records = to_records(&draws);
        let m = dl_matrix(records.clone());
        let (c, d, h, _) = draws[pick.index(draws.len())];
        let s = d as usize % 7 * 24 + h as usize;
        let mut more = records;
        more.push(rec(&format!("c{c}"), d, h, m[(c, s)]));
        prop_assert_eq!(dl_matrix(more)[(c, s)], m[(c, s)]);
    }

    #[test]
    fn coverage_matches_slot_counting(
        draws in proptest::collection::vec((0usize..4, 0i64..14, 0u8..24, 0.0f64..10.0), 1..500)
    ) {
        let report = completeness_report(&CellDataset::new(to_records(&draws)), Metric::Dl);
        let mut seen: BTreeMap<String, std::collections::BTreeSet<usize>> = BTreeMap::new();
        for &(c, d, h, _) in &draws {
            let date = NaiveDate::from_ymd_opt(MONDAY.0, MONDAY.1, MONDAY.2).unwrap() + chrono::Duration::days(d);
            let slot = date.weekday().num_days_from_monday() as usize * 24 + h as usize;
            seen.entry(format!("c{c}")).or_default().insert(slot);
        }
        let expected: Vec<CellCoverage> = seen
            .into_iter()
            .map(|(cell_id, slots)| CellCoverage { cell_id, covered: slots.len() })
            .collect();
        prop_assert_eq!(report, expected);
    }
}

#[test]
fn odd_and_even_medians() {
    assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
    assert_eq!(median(&mut []), None);
}

#[test]
fn slot_index_examples() {
    assert_eq!(slot_index(0, 0).unwrap(), 0);
    assert_eq!(slot_index(6, 23).unwrap(), 167);
    assert_eq!(slot_index(2, 5).unwrap(), 53);
    assert!(slot_index(7, 0).is_err());
    assert!(slot_index(0, 24).is_err());
}

#[test]
fn coverage_examples() {
    let mut records = Vec::new();
    for s in 0..SLOTS {
        records.push(rec("full", (s / 24) as i64, (s % 24) as u8, 1.0));
    }
    for week in 0..3 {
        for h in 0..24 {
            records.push(rec("mondays", week * 7, h, 1.0));
        }
    }
    let report = completeness_report(&CellDataset::new(records.clone()), Metric::Dl);
    let covered: BTreeMap<&str, usize> =
        report.iter().map(|c| (c.cell_id.as_str(), c.covered)).collect();
    assert_eq!(covered["full"], 168);
    assert_eq!(covered["mondays"], 24);

    let strict = build_median_week(&CellDataset::new(records.clone()), Metric::Dl, &CompletenessPolicy::default())
        .unwrap();
    assert_eq!(strict.matrix.cell_ids, vec!["full"]);
    assert_eq!(strict.dropped.len(), 1);

    let relaxed = CompletenessPolicy { min_coverage: 24.0 / 168.0 };
    let both = build_median_week(&CellDataset::new(records), Metric::Dl, &relaxed).unwrap();
    assert_eq!(both.matrix.n_cells(), 2);
    assert_eq!(both.imputed, vec![("mondays".to_string(), 144)]);
}
