//! Median-week condensation: every cell's observation window collapsed into
//! one 7 × 24 signature, giving a cells × 168 observation matrix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::Datelike;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CellDataset, GeoPoint, Metric};

/// Hour-of-week slots: 7 days × 24 hours.
pub const SLOTS: usize = 168;

pub const DAY_LABELS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

#[derive(Debug, Error)]
pub enum CondenseError {
    #[error("slot ({day}, {hour}) out of range; day must be 0..=6 and hour 0..=23")]
    OutOfRange { day: u32, hour: u32 },
    #[error("no cell meets the completeness policy ({dropped} dropped)")]
    NoEligibleCells { dropped: usize },
    #[error("min_coverage {0} must lie in (0, 1]")]
    InvalidPolicy(f64),
    #[error("matrix csv: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A (day-of-week, hour) slot with Monday = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotIndex {
    day: u8,
    hour: u8,
}

impl SlotIndex {
    pub fn new(day: u32, hour: u32) -> Result<Self, CondenseError> {
        if day > 6 || hour > 23 {
            return Err(CondenseError::OutOfRange { day, hour });
        }
        Ok(Self {
            day: day as u8,
            hour: hour as u8,
        })
    }

    pub fn from_flat(flat: usize) -> Option<Self> {
        (flat < SLOTS).then(|| Self {
            day: (flat / 24) as u8,
            hour: (flat % 24) as u8,
        })
    }

    pub fn day(self) -> u32 {
        self.day as u32
    }

    pub fn hour(self) -> u32 {
        self.hour as u32
    }

    pub fn flat(self) -> usize {
        self.day as usize * 24 + self.hour as usize
    }

    /// Column label `d<day>h<hour>`.
    pub fn label(self) -> String {
        format!("d{}h{}", self.day, self.hour)
    }
}

/// Flat slot index `day * 24 + hour`.
pub fn slot_index(day: u32, hour: u32) -> Result<usize, CondenseError> {
    SlotIndex::new(day, hour).map(SlotIndex::flat)
}

/// Median with the even-count convention of averaging the two middle values.
/// Sorts `values` in place. Returns `None` for an empty slice.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletenessPolicy {
    /// Minimum fraction of the 168 slots a cell must have observed. Missing
    /// slots of retained cells are imputed with the cell's same-hour median.
    pub min_coverage: f64,
}

impl Default for CompletenessPolicy {
    fn default() -> Self {
        Self { min_coverage: 1.0 }
    }
}

impl CompletenessPolicy {
    pub fn validate(&self) -> Result<(), CondenseError> {
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(CondenseError::InvalidPolicy(self.min_coverage));
        }
        Ok(())
    }

    fn required_slots(&self) -> usize {
        (self.min_coverage * SLOTS as f64 - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellCoverage {
    pub cell_id: String,
    /// Slots with at least one observation, out of 168.
    pub covered: usize,
}

struct CellBuckets {
    site_id: String,
    buckets: Vec<Vec<f64>>,
}

fn group_by_cell(dataset: &CellDataset, metric: Metric) -> BTreeMap<&str, CellBuckets> {
    let mut cells: BTreeMap<&str, CellBuckets> = BTreeMap::new();
    for r in dataset.records() {
        let day = r.date.weekday().num_days_from_monday() as usize;
        let slot = day * 24 + r.hour as usize;
        let entry = cells.entry(&r.cell_id).or_insert_with(|| CellBuckets {
            site_id: r.site_id.clone(),
            buckets: vec![Vec::new(); SLOTS],
        });
        entry.buckets[slot].push(r.metric(metric));
    }
    cells
}

/// Per-cell count of slots with at least one observation, ordered by cell id.
pub fn completeness_report(dataset: &CellDataset, metric: Metric) -> Vec<CellCoverage> {
    group_by_cell(dataset, metric)
        .into_iter()
        .map(|(cell_id, b)| CellCoverage {
            cell_id: cell_id.to_string(),
            covered: b.buckets.iter().filter(|v| !v.is_empty()).count(),
        })
        .collect()
}

pub fn write_coverage_csv<W: Write>(
    coverage: &[CellCoverage],
    writer: W,
) -> Result<(), CondenseError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell_id", "covered", "slots"])?;
    for c in coverage {
        w.write_record([c.cell_id.clone(), c.covered.to_string(), SLOTS.to_string()])?;
    }
    w.flush().map_err(|source| CondenseError::Io {
        path: "<writer>".into(),
        source,
    })
}

/// Cells × 168 matrix of median hourly values for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianWeekMatrix {
    pub metric: Metric,
    pub cell_ids: Vec<String>,
    /// Row per cell, column per slot.
    pub values: DMatrix<f64>,
    pub coordinates: Vec<Option<GeoPoint>>,
}

impl MedianWeekMatrix {
    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CondenseError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cell_id".to_string()];
        header.extend((0..SLOTS).map(|s| SlotIndex::from_flat(s).unwrap().label()));
        w.write_record(&header)?;
        for (i, id) in self.cell_ids.iter().enumerate() {
            let mut row = Vec::with_capacity(SLOTS + 1);
            row.push(id.clone());
            row.extend(self.values.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| CondenseError::Io {
            path: "<writer>".into(),
            source,
        })
    }

    /// Companion `cell_id,lat,lon` table; unknown coordinates are left blank.
    pub fn write_coordinates_csv<W: Write>(&self, writer: W) -> Result<(), CondenseError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell_id", "lat", "lon"])?;
        for (id, p) in self.cell_ids.iter().zip(&self.coordinates) {
            match p {
                Some(p) => w.write_record([id.clone(), p.lat.to_string(), p.lon.to_string()])?,
                None => w.write_record([id.as_str(), "", ""])?,
            }
        }
        w.flush().map_err(|source| CondenseError::Io {
            path: "<writer>".into(),
            source,
        })
    }

    pub fn read_csv<R: Read>(reader: R, metric: Metric) -> Result<Self, CondenseError> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.len() != SLOTS + 1 || &headers[0] != "cell_id" {
            return Err(CondenseError::Format(format!(
                "expected cell_id + {SLOTS} slot columns, got {} columns",
                headers.len()
            )));
        }
        for (s, h) in headers.iter().skip(1).enumerate() {
            if h != SlotIndex::from_flat(s).unwrap().label() {
                return Err(CondenseError::Format(format!("column {} is `{h}`", s + 1)));
            }
        }
        let mut cell_ids = Vec::new();
        let mut data = Vec::new();
        for row in csv.records() {
            let row = row?;
            cell_ids.push(row[0].to_string());
            for f in row.iter().skip(1) {
                let v: f64 = f
                    .parse()
                    .map_err(|_| CondenseError::Format(format!("`{f}` is not a number")))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CondenseError::Format(format!("entry {v} is negative")));
                }
                data.push(v);
            }
        }
        let n = cell_ids.len();
        Ok(Self {
            metric,
            coordinates: vec![None; n],
            cell_ids,
            values: DMatrix::from_row_slice(n, SLOTS, &data),
        })
    }

    /// Fills `coordinates` from a `cell_id,lat,lon` table.
    pub fn read_coordinates_csv<R: Read>(&mut self, reader: R) -> Result<(), CondenseError> {
        let mut csv = csv::Reader::from_reader(reader);
        let mut table = BTreeMap::new();
        for row in csv.records() {
            let row = row?;
            if row.len() < 3 || row[1].is_empty() || row[2].is_empty() {
                continue;
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| CondenseError::Format(format!("`{s}` is not a coordinate")))
            };
            table.insert(
                row[0].to_string(),
                GeoPoint {
                    lat: parse(&row[1])?,
                    lon: parse(&row[2])?,
                },
            );
        }
        self.coordinates = self.cell_ids.iter().map(|id| table.get(id).copied()).collect();
        Ok(())
    }

    pub fn read_files(
        matrix: &Path,
        coordinates: Option<&Path>,
        metric: Metric,
    ) -> Result<Self, CondenseError> {
        let open = |p: &Path| {
            File::open(p).map_err(|source| CondenseError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let mut m = Self::read_csv(open(matrix)?, metric)?;
        if let Some(c) = coordinates {
            m.read_coordinates_csv(open(c)?)?;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct CondenseOutcome {
    pub matrix: MedianWeekMatrix,
    /// Cells below the coverage threshold.
    pub dropped: Vec<CellCoverage>,
    /// Retained cells that had slots imputed, with the number of imputed slots.
    pub imputed: Vec<(String, usize)>,
}

fn condense_cell(buckets: &mut [Vec<f64>]) -> ([f64; SLOTS], usize) {
    let mut row = [0.0; SLOTS];
    let mut missing = Vec::new();
    for (s, bucket) in buckets.iter_mut().enumerate() {
        match median(bucket) {
            Some(m) => row[s] = m,
            None => missing.push(s),
        }
    }
    if !missing.is_empty() {
        // Same-hour median over every observed day; falls back to the cell's overall median.
        let mut overall: Vec<f64> = buckets.iter().flatten().copied().collect();
        let overall = median(&mut overall).unwrap_or(0.0);
        for &s in &missing {
            let hour = s % 24;
            let mut same_hour: Vec<f64> = (0..7)
                .flat_map(|d| buckets[d * 24 + hour].iter().copied())
                .collect();
            row[s] = median(&mut same_hour).unwrap_or(overall);
        }
    }
    (row, missing.len())
}

/// Builds the median week for `metric`. Cells with fewer observed slots than
/// the policy requires are dropped and reported; rows are ordered by cell id.
pub fn build_median_week(
    dataset: &CellDataset,
    metric: Metric,
    policy: &CompletenessPolicy,
) -> Result<CondenseOutcome, CondenseError> {
    policy.validate()?;
    let required = policy.required_slots();
    let mut cells: Vec<(&str, CellBuckets)> = group_by_cell(dataset, metric).into_iter().collect();

    let mut dropped = Vec::new();
    cells.retain(|(id, b)| {
        let covered = b.buckets.iter().filter(|v| !v.is_empty()).count();
        if covered < required {
            dropped.push(CellCoverage {
                cell_id: id.to_string(),
                covered,
            });
            false
        } else {
            true
        }
    });
    if cells.is_empty() {
        return Err(CondenseError::NoEligibleCells {
            dropped: dropped.len(),
        });
    }

    let rows: Vec<([f64; SLOTS], usize)> = cells
        .par_iter_mut()
        .map(|(_, b)| condense_cell(&mut b.buckets))
        .collect();

    let n = cells.len();
    let values = DMatrix::from_fn(n, SLOTS, |i, j| rows[i].0[j]);
    let imputed = cells
        .iter()
        .zip(&rows)
        .filter(|(_, (_, m))| *m > 0)
        .map(|((id, _), (_, m))| (id.to_string(), *m))
        .collect();
    let matrix = MedianWeekMatrix {
        metric,
        cell_ids: cells.iter().map(|(id, _)| id.to_string()).collect(),
        coordinates: cells
            .iter()
            .map(|(_, b)| dataset.location_of(&b.site_id))
            .collect(),
        values,
    };
    if !dropped.is_empty() {
        log::info!("dropped {} incomplete cells", dropped.len());
    }
    Ok(CondenseOutcome {
        matrix,
        dropped,
        imputed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::KpiRecord;
    use chrono::NaiveDate;

    // 2017-11-27 is a Monday.
    fn monday() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 11, 27).unwrap()
    }

    fn rec(cell: &str, day_offset: i64, hour: u8, dl: f64) -> KpiRecord {
        KpiRecord {
            date: monday() + chrono::Duration::days(day_offset),
            hour,
            region: "R".into(),
            city: "C".into(),
            district: "D".into(),
            site_id: format!("site-{cell}"),
            cell_id: cell.into(),
            dl_gb: dl,
            ul_gb: dl / 10.0,
            active_users: 1.0,
        }
    }

    fn full_week(cell: &str, value: f64) -> Vec<KpiRecord> {
        (0..7)
            .flat_map(|d| (0..24).map(move |h| (d, h)))
            .map(|(d, h)| rec(cell, d, h, value))
            .collect()
    }

    #[test]
    fn slot_index_examples() {
        assert_eq!(slot_index(0, 0).unwrap(), 0);
        assert_eq!(slot_index(6, 23).unwrap(), 167);
        assert_eq!(slot_index(2, 5).unwrap(), 53);
        assert!(matches!(slot_index(7, 0), Err(CondenseError::OutOfRange { .. })));
        assert!(matches!(slot_index(0, 24), Err(CondenseError::OutOfRange { .. })));
        for flat in 0..SLOTS {
            let s = SlotIndex::from_flat(flat).unwrap();
            assert_eq!(slot_index(s.day(), s.hour()).unwrap(), flat);
        }
        assert!(SlotIndex::from_flat(168).is_none());
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn slot_median_from_records() {
        let mut records = full_week("A", 0.0);
        // Three more Mondays at hour 0 with values 1, 2, 3 replace the zero.
        records.retain(|r| !(r.date == monday() && r.hour == 0));
        for (w, v) in [(1, 1.0), (2, 3.0), (3, 2.0)] {
            records.push(rec("A", 7 * w, 0, v));
        }
        let ds = CellDataset::new(records);
        let out = build_median_week(&ds, Metric::Dl, &CompletenessPolicy::default()).unwrap();
        assert_eq!(out.matrix.values[(0, 0)], 2.0);
        assert_eq!(out.matrix.values[(0, 1)], 0.0);
    }

    #[test]
    fn completeness_counts() {
        let mut records = full_week("full", 1.0);
        records.extend(
            full_week("mondays", 1.0)
                .into_iter()
                .filter(|r| r.date == monday()),
        );
        let ds = CellDataset::new(records);
        let cov = completeness_report(&ds, Metric::Dl);
        assert_eq!(
            cov,
            vec![
                CellCoverage {
                    cell_id: "full".into(),
                    covered: 168
                },
                CellCoverage {
                    cell_id: "mondays".into(),
                    covered: 24
                },
            ]
        );

        let out = build_median_week(&ds, Metric::Dl, &CompletenessPolicy::default()).unwrap();
        assert_eq!(out.matrix.cell_ids, vec!["full"]);
        assert_eq!(out.dropped.len(), 1);
    }

    #[test]
    fn relaxed_policy_imputes_same_hour() {
        let mut records = full_week("A", 1.0);
        // Sunday 10:00 missing; Monday..Saturday 10:00 carry 1..6.
        records.retain(|r| r.hour != 10);
        for d in 0..6 {
            records.push(rec("A", d, 10, (d + 1) as f64));
        }
        let ds = CellDataset::new(records);
        assert!(matches!(
            build_median_week(&ds, Metric::Dl, &CompletenessPolicy::default()),
            Err(CondenseError::NoEligibleCells { dropped: 1 })
        ));
        let policy = CompletenessPolicy { min_coverage: 0.9 };
        let out = build_median_week(&ds, Metric::Dl, &policy).unwrap();
        let sunday_10 = slot_index(6, 10).unwrap();
        assert_eq!(out.matrix.values[(0, sunday_10)], 3.5);
        assert_eq!(out.imputed, vec![("A".to_string(), 1)]);
    }

    #[test]
    fn invalid_policy() {
        let ds = CellDataset::new(full_week("A", 1.0));
        for bad in [0.0, -0.5, 1.5, f64::NAN] {
            let policy = CompletenessPolicy { min_coverage: bad };
            assert!(matches!(
                build_median_week(&ds, Metric::Dl, &policy),
                Err(CondenseError::InvalidPolicy(_))
            ));
        }
    }

    #[test]
    fn metric_selection() {
        let ds = CellDataset::new(full_week("A", 5.0));
        let ul = build_median_week(&ds, Metric::Ul, &CompletenessPolicy::default()).unwrap();
        assert_eq!(ul.matrix.values[(0, 7)], 0.5);
        let users = build_median_week(&ds, Metric::Users, &CompletenessPolicy::default()).unwrap();
        assert_eq!(users.matrix.values[(0, 7)], 1.0);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let mut records = full_week("B", 0.1);
        records.extend(full_week("A", 1.0 / 3.0));
        let ds = CellDataset::new(records);
        let m = build_median_week(&ds, Metric::Dl, &CompletenessPolicy::default())
            .unwrap()
            .matrix;
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cell_id,d0h0,d0h1,"));
        assert!(text.lines().next().unwrap().ends_with(",d6h23"));
        let back = MedianWeekMatrix::read_csv(buf.as_slice(), Metric::Dl).unwrap();
        assert_eq!(back.cell_ids, vec!["A", "B"]);
        assert_eq!(back.values, m.values);
    }
}
