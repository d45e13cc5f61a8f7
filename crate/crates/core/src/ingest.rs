//! KPI export ingestion: CSV parsing, site-location join and descriptive aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("file is empty or has no data rows")]
    EmptyFile,
    #[error("{rejected} of {total} rows malformed (limit {limit:.2}%), first: {first}")]
    MalformedRows {
        rejected: usize,
        total: usize,
        limit: f64,
        first: String,
    },
    #[error("site `{0}` appears more than once with different coordinates")]
    DuplicateSiteId(String),
    #[error("site `{site_id}` has invalid coordinates ({lat}, {lon})")]
    InvalidCoordinates { site_id: String, lat: f64, lon: f64 },
    #[error("unknown district `{0}`")]
    UnknownDistrict(String),
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("record dated {date} lies outside the observation window {start}..={end}")]
    OutsideWindow {
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Traffic variable a median week is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Dl,
    Ul,
    Users,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dl, Metric::Ul, Metric::Users];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dl => "DL",
            Metric::Ul => "UL",
            Metric::Users => "USERS",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DL" => Ok(Metric::Dl),
            "UL" => Ok(Metric::Ul),
            "USERS" => Ok(Metric::Users),
            other => Err(format!("unknown metric `{other}` (expected DL, UL or USERS)")),
        }
    }
}

/// One hourly measurement of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub date: NaiveDate,
    pub hour: u8,
    pub region: String,
    pub city: String,
    pub district: String,
    pub site_id: String,
    pub cell_id: String,
    pub dl_gb: f64,
    pub ul_gb: f64,
    /// Average number of active UEs over the hour; fractional in operator exports.
    pub active_users: f64,
}

impl KpiRecord {
    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Dl => self.dl_gb,
            Metric::Ul => self.ul_gb,
            Metric::Users => self.active_users,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hour > 23 {
            return Err(format!("hour {} out of range 0..=23", self.hour));
        }
        if self.cell_id.is_empty() {
            return Err("empty cell_id".into());
        }
        if self.site_id.is_empty() {
            return Err("empty site_id".into());
        }
        for (name, v) in [
            ("dl_gb", self.dl_gb),
            ("ul_gb", self.ul_gb),
            ("active_users", self.active_users),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v} is not a finite non-negative value"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteLocation {
    pub site_id: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl SiteLocation {
    pub fn point(&self) -> GeoPoint {
        GeoPoint {
            lat: self.latitude,
            lon: self.longitude,
        }
    }
}

/// Column names of the KPI export. Defaults follow the canonical header
/// `date,hour,region,city,district,site_id,cell_id,dl_gb,ul_gb,active_users`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub date: String,
    pub hour: String,
    pub region: String,
    pub city: String,
    pub district: String,
    pub site_id: String,
    pub cell_id: String,
    pub dl_gb: String,
    pub ul_gb: String,
    pub active_users: String,
    /// chrono format string for the date column.
    pub date_format: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            hour: "hour".into(),
            region: "region".into(),
            city: "city".into(),
            district: "district".into(),
            site_id: "site_id".into(),
            cell_id: "cell_id".into(),
            dl_gb: "dl_gb".into(),
            ul_gb: "ul_gb".into(),
            active_users: "active_users".into(),
            date_format: "%Y-%m-%d".into(),
        }
    }
}

impl ColumnSchema {
    fn names(&self) -> [&str; 10] {
        [
            &self.date,
            &self.hour,
            &self.region,
            &self.city,
            &self.district,
            &self.site_id,
            &self.cell_id,
            &self.dl_gb,
            &self.ul_gb,
            &self.active_users,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub schema: ColumnSchema,
    /// Fraction of data rows that may be rejected before the parse fails.
    pub max_reject_rate: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            schema: ColumnSchema::default(),
            max_reject_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowReject {
    /// 1-based line number in the file (header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub rows_read: usize,
    pub rows_rejected: usize,
    /// The first few rejected rows.
    pub rejects: Vec<RowReject>,
}

const KEPT_REJECTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl ObservationWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    /// Number of calendar days, both ends inclusive.
    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }
}

/// A parsed KPI export. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDataset {
    records: Vec<KpiRecord>,
    locations: BTreeMap<String, SiteLocation>,
    window: Option<ObservationWindow>,
    report: ParseReport,
}

impl CellDataset {
    /// Builds a dataset whose window spans the earliest to the latest record.
    pub fn new(records: Vec<KpiRecord>) -> Self {
        let window = records
            .iter()
            .map(|r| r.date)
            .fold(None, |acc: Option<ObservationWindow>, d| match acc {
                None => Some(ObservationWindow { start: d, end: d }),
                Some(w) => Some(ObservationWindow {
                    start: w.start.min(d),
                    end: w.end.max(d),
                }),
            });
        Self {
            records,
            locations: BTreeMap::new(),
            window,
            report: ParseReport::default(),
        }
    }

    /// Builds a dataset over an explicit window, which must cover every record.
    pub fn with_window(
        records: Vec<KpiRecord>,
        window: ObservationWindow,
    ) -> Result<Self, IngestError> {
        if let Some(r) = records.iter().find(|r| !window.contains(r.date)) {
            return Err(IngestError::OutsideWindow {
                date: r.date,
                start: window.start,
                end: window.end,
            });
        }
        Ok(Self {
            records,
            locations: BTreeMap::new(),
            window: Some(window),
            report: ParseReport::default(),
        })
    }

    pub fn records(&self) -> &[KpiRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn window(&self) -> Option<ObservationWindow> {
        self.window
    }

    pub fn locations(&self) -> &BTreeMap<String, SiteLocation> {
        &self.locations
    }

    pub fn report(&self) -> &ParseReport {
        &self.report
    }

    pub fn location_of(&self, site_id: &str) -> Option<GeoPoint> {
        self.locations.get(site_id).map(SiteLocation::point)
    }

    /// Sites referenced by records but missing from the location table.
    pub fn unlocated(&self) -> UnlocatedReport {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            if !self.locations.contains_key(&r.site_id) {
                *counts.entry(&r.site_id).or_default() += 1;
            }
        }
        UnlocatedReport {
            sites: counts
                .into_iter()
                .map(|(site_id, records)| UnlocatedSite {
                    site_id: site_id.to_string(),
                    records,
                })
                .collect(),
        }
    }

    pub fn districts(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.district.as_str()).collect()
    }
}

fn parse_number(field: &str) -> Result<f64, String> {
    let cleaned: String = field
        .trim()
        .chars()
        .filter(|c| *c != ',' && *c != '_')
        .collect();
    cleaned
        .parse::<f64>()
        .map_err(|_| format!("`{field}` is not a number"))
}

struct ColumnIndex([usize; 10]);

impl ColumnIndex {
    fn resolve(headers: &csv::StringRecord, schema: &ColumnSchema) -> Result<Self, IngestError> {
        let mut idx = [0usize; 10];
        for (slot, name) in idx.iter_mut().zip(schema.names()) {
            *slot = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
        }
        Ok(Self(idx))
    }

    fn record(&self, row: &csv::StringRecord, date_format: &str) -> Result<KpiRecord, String> {
        let field = |i: usize| -> Result<&str, String> {
            row.get(self.0[i])
                .map(str::trim)
                .ok_or_else(|| format!("row has {} fields, too few", row.len()))
        };
        let date = NaiveDate::parse_from_str(field(0)?, date_format)
            .map_err(|e| format!("bad date `{}`: {e}", field(0).unwrap_or_default()))?;
        let hour: u8 = field(1)?
            .parse()
            .map_err(|_| format!("bad hour `{}`", field(1).unwrap_or_default()))?;
        let record = KpiRecord {
            date,
            hour,
            region: field(2)?.to_string(),
            city: field(3)?.to_string(),
            district: field(4)?.to_string(),
            site_id: field(5)?.to_string(),
            cell_id: field(6)?.to_string(),
            dl_gb: parse_number(field(7)?)?,
            ul_gb: parse_number(field(8)?)?,
            active_users: parse_number(field(9)?)?,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Parses a KPI export. Malformed rows are skipped and counted; the parse
/// fails only when they exceed `max_reject_rate` of all data rows.
pub fn parse_kpi_csv(path: &Path, options: &ParseOptions) -> Result<CellDataset, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kpi_reader(file, options)
}

pub fn parse_kpi_reader<R: Read>(
    reader: R,
    options: &ParseOptions,
) -> Result<CellDataset, IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(IngestError::EmptyFile);
    }
    let columns = ColumnIndex::resolve(&headers, &options.schema)?;

    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut row = csv::StringRecord::new();
    loop {
        let line = csv.position().line();
        let parsed = match csv.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => columns.record(&row, &options.schema.date_format),
            Err(e) => Err(e.to_string()),
        };
        report.rows_read += 1;
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => {
                report.rows_rejected += 1;
                if report.rejects.len() < KEPT_REJECTS {
                    report.rejects.push(RowReject { line, reason });
                }
            }
        }
    }
    if report.rows_read == 0 {
        return Err(IngestError::EmptyFile);
    }
    let rate = report.rows_rejected as f64 / report.rows_read as f64;
    if rate > options.max_reject_rate {
        return Err(IngestError::MalformedRows {
            rejected: report.rows_rejected,
            total: report.rows_read,
            limit: options.max_reject_rate * 100.0,
            first: report
                .rejects
                .first()
                .map(|r| format!("line {}: {}", r.line, r.reason))
                .unwrap_or_default(),
        });
    }
    if report.rows_rejected > 0 {
        log::warn!(
            "rejected {} of {} KPI rows",
            report.rows_rejected,
            report.rows_read
        );
    }
    let mut dataset = CellDataset::new(records);
    dataset.report = report;
    Ok(dataset)
}

/// Writes records in the ingest schema; floats use shortest round-trip formatting.
pub fn write_kpi_csv<W: Write>(
    records: &[KpiRecord],
    schema: &ColumnSchema,
    writer: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.names())?;
    for r in records {
        w.write_record([
            r.date.format(&schema.date_format).to_string(),
            r.hour.to_string(),
            r.region.clone(),
            r.city.clone(),
            r.district.clone(),
            r.site_id.clone(),
            r.cell_id.clone(),
            r.dl_gb.to_string(),
            r.ul_gb.to_string(),
            r.active_users.to_string(),
        ])?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct LocationRow {
    site_id: String,
    lat: String,
    lon: String,
}

/// Reads a `site_id,lat,lon` table.
pub fn read_locations(path: &Path) -> Result<Vec<SiteLocation>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_locations_from(file)
}

pub fn read_locations_from<R: Read>(reader: R) -> Result<Vec<SiteLocation>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    for col in ["site_id", "lat", "lon"] {
        if !headers.iter().any(|h| h == col) {
            return Err(IngestError::MissingColumn(col.into()));
        }
    }
    let mut out = Vec::new();
    for row in csv.deserialize::<LocationRow>() {
        let row = row?;
        let lat = parse_number(&row.lat).map_err(|_| IngestError::InvalidCoordinates {
            site_id: row.site_id.clone(),
            lat: f64::NAN,
            lon: f64::NAN,
        })?;
        let lon = parse_number(&row.lon).map_err(|_| IngestError::InvalidCoordinates {
            site_id: row.site_id.clone(),
            lat,
            lon: f64::NAN,
        })?;
        let loc = SiteLocation {
            site_id: row.site_id,
            latitude: lat,
            longitude: lon,
        };
        if !loc.point().is_valid() {
            return Err(IngestError::InvalidCoordinates {
                site_id: loc.site_id,
                lat,
                lon,
            });
        }
        out.push(loc);
    }
    Ok(out)
}

pub fn write_locations<W: Write>(locations: &[SiteLocation], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site_id", "lat", "lon"])?;
    for l in locations {
        w.write_record([
            l.site_id.clone(),
            l.latitude.to_string(),
            l.longitude.to_string(),
        ])?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnlocatedSite {
    pub site_id: String,
    pub records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnlocatedReport {
    pub sites: Vec<UnlocatedSite>,
}

impl UnlocatedReport {
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["site_id", "records"])?;
        for s in &self.sites {
            w.serialize((&s.site_id, s.records))?;
        }
        w.flush().map_err(|source| IngestError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Appends site coordinates to the dataset. Records whose site has no
/// location are kept and listed in the returned report.
pub fn join_locations(
    dataset: &CellDataset,
    locations: &[SiteLocation],
) -> Result<(CellDataset, UnlocatedReport), IngestError> {
    let mut table = dataset.locations.clone();
    for loc in locations {
        if !loc.point().is_valid() {
            return Err(IngestError::InvalidCoordinates {
                site_id: loc.site_id.clone(),
                lat: loc.latitude,
                lon: loc.longitude,
            });
        }
        match table.get(&loc.site_id) {
            Some(existing) if existing != loc => {
                return Err(IngestError::DuplicateSiteId(loc.site_id.clone()))
            }
            Some(_) => {}
            None => {
                table.insert(loc.site_id.clone(), loc.clone());
            }
        }
    }
    let joined = CellDataset {
        records: dataset.records.clone(),
        locations: table,
        window: dataset.window,
        report: dataset.report.clone(),
    };
    let unlocated = joined.unlocated();
    if !unlocated.is_empty() {
        log::warn!("{} sites have no coordinates", unlocated.sites.len());
    }
    Ok((joined, unlocated))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistrictSummary {
    pub district: String,
    pub records: usize,
    pub dl_gb: f64,
    pub ul_gb: f64,
    pub mean_active_users: f64,
}

fn summarize<'a>(district: &str, records: impl Iterator<Item = &'a KpiRecord>) -> DistrictSummary {
    let (mut n, mut dl, mut ul, mut users) = (0usize, 0.0, 0.0, 0.0);
    for r in records {
        n += 1;
        dl += r.dl_gb;
        ul += r.ul_gb;
        users += r.active_users;
    }
    DistrictSummary {
        district: district.to_string(),
        records: n,
        dl_gb: dl,
        ul_gb: ul,
        mean_active_users: if n == 0 { 0.0 } else { users / n as f64 },
    }
}

/// Traffic sums and mean active users over one district's records.
pub fn district_summary(
    dataset: &CellDataset,
    district: &str,
) -> Result<DistrictSummary, IngestError> {
    let summary = summarize(
        district,
        dataset.records.iter().filter(|r| r.district == district),
    );
    if summary.records == 0 {
        return Err(IngestError::UnknownDistrict(district.to_string()));
    }
    Ok(summary)
}

/// One summary per district, ordered by district name.
pub fn district_summaries(dataset: &CellDataset) -> Vec<DistrictSummary> {
    let mut groups: BTreeMap<&str, Vec<&KpiRecord>> = BTreeMap::new();
    for r in &dataset.records {
        groups.entry(&r.district).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(d, rs)| summarize(d, rs.into_iter()))
        .collect()
}

pub fn write_district_summaries<W: Write>(
    summaries: &[DistrictSummary],
    writer: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in summaries {
        w.serialize(s)?;
    }
    if summaries.is_empty() {
        w.write_record(["district", "records", "dl_gb", "ul_gb", "mean_active_users"])?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub rows: usize,
    pub districts: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub days: i64,
    pub dl_gb_per_day: f64,
    pub ul_gb_per_day: f64,
    pub mean_active_users: f64,
}

/// Dataset-level statistics; per-day means divide window totals by the
/// number of calendar days in the window.
pub fn dataset_stats(dataset: &CellDataset) -> Result<DatasetStats, IngestError> {
    let window = match dataset.window {
        Some(w) if !dataset.records.is_empty() => w,
        _ => return Err(IngestError::EmptyDataset),
    };
    let totals = summarize("", dataset.records.iter());
    let days = window.days();
    Ok(DatasetStats {
        rows: totals.records,
        districts: dataset.districts().len(),
        start: window.start,
        end: window.end,
        days,
        dl_gb_per_day: totals.dl_gb / days as f64,
        ul_gb_per_day: totals.ul_gb / days as f64,
        mean_active_users: totals.mean_active_users,
    })
}

impl DatasetStats {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.serialize(self)?;
        w.flush().map_err(|source| IngestError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }
}
