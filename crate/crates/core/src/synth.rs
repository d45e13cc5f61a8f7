//! Synthetic KPI datasets with planted land-use profiles, and Tucker
//! congruence matching of recovered loadings against the planted templates.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condense::SLOTS;
use crate::ingest::{CellDataset, KpiRecord, SiteLocation};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("profile config: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(#[from] crate::ingest::IngestError),
}

/// First day of every generated dataset.
pub const SYNTH_START: (i32, u32, u32) = (2017, 11, 29);
/// Cells sharing one site.
const CELLS_PER_SITE: usize = 3;
const UL_SHARE: f64 = 0.15;
const USERS_PER_GB: f64 = 40.0;

/// One planted land-use profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub name: String,
    /// Activity level of each hour-of-week slot (Monday 00:00 first).
    pub template: Vec<f64>,
    pub cell_count: usize,
    /// Traffic scale in GB per hour at template level 1.
    pub base_volume: f64,
    /// Standard deviation of the multiplicative per-record noise.
    pub noise_sigma: f64,
    /// Per-cell amplitude is `exp(amplitude_sigma · N(0, 1))`; 0 gives identical cells.
    #[serde(default)]
    pub amplitude_sigma: f64,
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidProfile(format!("{}: {msg}", self.name)));
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if self.template.len() != SLOTS {
            return bad(format!("template has {} slots, expected {SLOTS}", self.template.len()));
        }
        if self.template.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("template entries must be finite and non-negative".into());
        }
        if !self.template.iter().any(|v| *v > 0.0) {
            return bad("template has no nonzero slot".into());
        }
        if !(self.base_volume.is_finite() && self.base_volume > 0.0) {
            return bad(format!("base_volume {} must be positive", self.base_volume));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.amplitude_sigma.is_finite() && self.amplitude_sigma >= 0.0) {
            return bad(format!("amplitude_sigma {} must be >= 0", self.amplitude_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaySet {
    All,
    Weekdays,
    Weekend,
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl DaySet {
    fn contains(self, day: usize) -> bool {
        match self {
            DaySet::All => true,
            DaySet::Weekdays => day < 5,
            DaySet::Weekend => day >= 5,
            single => single as usize - DaySet::Mon as usize == day,
        }
    }
}

/// `value` on hours `from..=to` of the given days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub days: DaySet,
    pub from: u8,
    pub to: u8,
    pub value: f64,
}

impl Window {
    pub fn new(days: DaySet, from: u8, to: u8, value: f64) -> Self {
        Self { days, from, to, value }
    }
}

/// Builds a 168-slot template from a baseline and windows; later windows overwrite earlier ones.
pub fn template_from_windows(baseline: f64, windows: &[Window]) -> Vec<f64> {
    let mut t = vec![baseline; SLOTS];
    for w in windows {
        for (day, chunk) in t.chunks_mut(24).enumerate() {
            if w.days.contains(day) {
                for slot in chunk.iter_mut().take(w.to as usize + 1).skip(w.from as usize) {
                    *slot = w.value;
                }
            }
        }
    }
    t
}

/// Five land-use templates: residential (weekday nights and weekends),
/// business (weekdays 8–17), morning commute (weekdays 7–9, tapering),
/// evening commute (weekdays 17–20) and nightlife (every day 2–4).
/// 100 cells each, noise 0.2, amplitude spread 0.5.
pub fn built_in_profiles() -> Vec<ProfileSpec> {
    use DaySet::*;
    let spec = |name: &str, base_volume: f64, template: Vec<f64>| ProfileSpec {
        name: name.into(),
        template,
        cell_count: 100,
        base_volume,
        noise_sigma: 0.2,
        amplitude_sigma: 0.5,
    };
    vec![
        spec(
            "residential",
            2.0,
            template_from_windows(
                0.0,
                &[
                    Window::new(Weekdays, 21, 23, 1.0),
                    Window::new(Weekdays, 0, 1, 1.0),
                    Window::new(Weekdays, 5, 6, 1.0),
                    Window::new(Weekend, 0, 1, 1.0),
                    Window::new(Weekend, 5, 23, 1.0),
                ],
            ),
        ),
        spec(
            "business",
            3.0,
            template_from_windows(0.0, &[Window::new(Weekdays, 8, 17, 1.0)]),
        ),
        spec(
            "morning_commute",
            1.5,
            template_from_windows(
                0.0,
                &[
                    Window::new(Weekdays, 7, 7, 1.0),
                    Window::new(Weekdays, 8, 8, 0.5),
                    Window::new(Weekdays, 9, 9, 0.25),
                ],
            ),
        ),
        spec(
            "evening_commute",
            1.5,
            template_from_windows(
                0.0,
                &[
                    Window::new(Weekdays, 17, 17, 0.5),
                    Window::new(Weekdays, 18, 20, 1.0),
                ],
            ),
        ),
        spec(
            "nightlife",
            1.0,
            template_from_windows(0.0, &[Window::new(All, 2, 4, 1.0)]),
        ),
    ]
}

/// Which profile every generated cell was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub profiles: Vec<ProfileSpec>,
    pub assignment: BTreeMap<String, String>,
    pub seed: u64,
    pub days: u32,
    pub start: NaiveDate,
}

impl SyntheticGroundTruth {
    /// Cell ids assigned to `profile`, ascending.
    pub fn cells_of(&self, profile: &str) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, p)| p.as_str() == profile)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

/// The planted templates as the columns of a 168 × M matrix.
pub fn template_matrix(profiles: &[ProfileSpec]) -> DMatrix<f64> {
    DMatrix::from_fn(SLOTS, profiles.len(), |i, j| profiles[j].template[i])
}

struct CellPlan<'a> {
    index: usize,
    profile: &'a ProfileSpec,
    profile_index: usize,
    site: usize,
}

fn cluster_center(profile_index: usize, n_profiles: usize) -> (f64, f64) {
    let angle = std::f64::consts::TAU * profile_index as f64 / n_profiles.max(1) as f64;
    (41.02 + 0.06 * angle.cos(), 28.98 + 0.09 * angle.sin())
}

/// Hourly records for every cell over `days` days starting at [`SYNTH_START`].
///
/// Each record is `base_volume · amplitude · template[slot] · (1 + ε)`,
/// ε ~ N(0, noise_sigma), clamped at 0. Cells draw from RNG streams keyed
/// by (seed, cell index), so output is independent of thread scheduling.
pub fn generate(
    profiles: &[ProfileSpec],
    days: u32,
    seed: u64,
) -> Result<(CellDataset, SyntheticGroundTruth), SynthError> {
    if profiles.is_empty() {
        return Err(SynthError::InvalidProfile("no profiles given".into()));
    }
    if days < 7 {
        return Err(SynthError::InvalidProfile(format!(
            "days = {days}; at least 7 needed to cover every weekday"
        )));
    }
    for p in profiles {
        p.validate()?;
    }
    let mut names = std::collections::BTreeSet::new();
    for p in profiles {
        if !names.insert(&p.name) {
            return Err(SynthError::InvalidProfile(format!("duplicate name `{}`", p.name)));
        }
    }
    let (y, m, d) = SYNTH_START;
    let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid start date");

    let mut plans = Vec::new();
    let mut site = 0;
    for (pi, profile) in profiles.iter().enumerate() {
        for c in 0..profile.cell_count {
            if c % CELLS_PER_SITE == 0 && c > 0 {
                site += 1;
            }
            plans.push(CellPlan {
                index: plans.len(),
                profile,
                profile_index: pi,
                site,
            });
        }
        site += 1;
    }

    let per_cell: Vec<Vec<KpiRecord>> = plans
        .par_iter()
        .map(|plan| cell_records(plan, days, seed, start))
        .collect();

    let mut locations: BTreeMap<usize, SiteLocation> = BTreeMap::new();
    for plan in &plans {
        locations
            .entry(plan.site)
            .or_insert_with(|| site_location(plan, profiles.len(), seed));
    }
    let assignment = plans
        .iter()
        .map(|p| (cell_id(p.index), p.profile.name.clone()))
        .collect();

    let records: Vec<KpiRecord> = per_cell.into_iter().flatten().collect();
    let dataset = CellDataset::new(records);
    let locations: Vec<SiteLocation> = locations.into_values().collect();
    let (dataset, _) = crate::ingest::join_locations(&dataset, &locations)?;
    Ok((
        dataset,
        SyntheticGroundTruth {
            profiles: profiles.to_vec(),
            assignment,
            seed,
            days,
            start,
        },
    ))
}

fn cell_id(index: usize) -> String {
    format!("C{index:05}")
}

fn site_id(index: usize) -> String {
    format!("S{index:05}")
}

fn site_location(plan: &CellPlan<'_>, n_profiles: usize, seed: u64) -> SiteLocation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 40) + plan.site as u64);
    let (lat0, lon0) = cluster_center(plan.profile_index, n_profiles);
    let dlat: f64 = StandardNormal.sample(&mut rng);
    let dlon: f64 = StandardNormal.sample(&mut rng);
    SiteLocation {
        site_id: site_id(plan.site),
        latitude: lat0 + 0.012 * dlat,
        longitude: lon0 + 0.015 * dlon,
    }
}

fn cell_records(plan: &CellPlan<'_>, days: u32, seed: u64, start: NaiveDate) -> Vec<KpiRecord> {
    let p = plan.profile;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(plan.index as u64);
    let z: f64 = StandardNormal.sample(&mut rng);
    let amplitude = (p.amplitude_sigma * z).exp();
    let id = cell_id(plan.index);
    let site = site_id(plan.site);
    let district = format!("{}-district", p.name);

    let mut out = Vec::with_capacity(days as usize * 24);
    for day in 0..days {
        let date = start + chrono::Duration::days(day as i64);
        let weekday = date.weekday().num_days_from_monday() as usize;
        for hour in 0..24u8 {
            let level = p.base_volume * amplitude * p.template[weekday * 24 + hour as usize];
            let mut noisy = |scale: f64| -> f64 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                (level * scale * (1.0 + p.noise_sigma * eps)).max(0.0)
            };
            let dl_gb = noisy(1.0);
            let ul_gb = noisy(UL_SHARE);
            let active_users = noisy(USERS_PER_GB);
            out.push(KpiRecord {
                date,
                hour,
                region: "Synthetic".into(),
                city: "Istanbul".into(),
                district: district.clone(),
                site_id: site.clone(),
                cell_id: id.clone(),
                dl_gb,
                ul_gb,
                active_users,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Deserialize)]
struct ProfileFile {
    #[serde(rename = "profile", default)]
    profiles: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    name: String,
    cell_count: usize,
    base_volume: f64,
    noise_sigma: f64,
    #[serde(default)]
    amplitude_sigma: f64,
    #[serde(default)]
    baseline: f64,
    #[serde(default)]
    windows: Vec<Window>,
    values: Option<Vec<f64>>,
}

/// Parses a TOML profile configuration:
///
/// ```toml
/// [[profile]]
/// name = "business"
/// cell_count = 100
/// base_volume = 3.0
/// noise_sigma = 0.2
/// amplitude_sigma = 0.5
/// windows = [{ days = "weekdays", from = 8, to = 17, value = 1.0 }]
/// ```
///
/// A profile may give `values` (168 numbers) instead of `baseline`/`windows`.
pub fn parse_profiles(text: &str) -> Result<Vec<ProfileSpec>, SynthError> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| SynthError::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(file.profiles.len());
    for e in file.profiles {
        for w in &e.windows {
            if w.from > w.to || w.to > 23 {
                return Err(SynthError::InvalidProfile(format!(
                    "{}: window hours {}..={} out of order or range",
                    e.name, w.from, w.to
                )));
            }
        }
        let template = match e.values {
            Some(v) if e.windows.is_empty() => v,
            Some(_) => {
                return Err(SynthError::Config(format!(
                    "{}: give either values or windows, not both",
                    e.name
                )))
            }
            None => template_from_windows(e.baseline, &e.windows),
        };
        let spec = ProfileSpec {
            name: e.name,
            template,
            cell_count: e.cell_count,
            base_volume: e.base_volume,
            noise_sigma: e.noise_sigma,
            amplitude_sigma: e.amplitude_sigma,
        };
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}

pub fn read_profiles(path: &Path) -> Result<Vec<ProfileSpec>, SynthError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SynthError::Config(format!("{}: {e}", path.display())))?;
    parse_profiles(&text)
}

/// Tucker congruence Σxy / √(Σx² Σy²); 0 when either vector is zero.
pub fn tucker(x: &[f64], y: &[f64]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let denom = (xx * yy).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (xy / denom).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongruenceMatch {
    pub recovered: usize,
    pub planted: usize,
    /// Signed coefficient; `negative` marks a sign-flipped match.
    pub coefficient: f64,
    pub negative: bool,
}

impl CongruenceMatch {
    pub fn abs(&self) -> f64 {
        self.coefficient.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CongruenceReport {
    /// K × M coefficients, recovered columns by planted columns.
    pub coefficients: DMatrix<f64>,
    /// Greedy max-|c| matching without replacement, in the order chosen.
    pub matches: Vec<CongruenceMatch>,
}

impl CongruenceReport {
    pub fn match_for_planted(&self, planted: usize) -> Option<&CongruenceMatch> {
        self.matches.iter().find(|m| m.planted == planted)
    }
}

/// Tucker congruence of every recovered column against every planted
/// column, then greedy sign-blind matching.
pub fn congruence(
    recovered: &DMatrix<f64>,
    planted: &DMatrix<f64>,
) -> Result<CongruenceReport, SynthError> {
    if recovered.nrows() != planted.nrows() {
        return Err(SynthError::DimensionMismatch(format!(
            "recovered has {} rows, planted {}",
            recovered.nrows(),
            planted.nrows()
        )));
    }
    let (k, m) = (recovered.ncols(), planted.ncols());
    let coefficients = DMatrix::from_fn(k, m, |i, j| {
        tucker(recovered.column(i).as_slice(), planted.column(j).as_slice())
    });
    let mut used_r = vec![false; k];
    let mut used_p = vec![false; m];
    let mut matches = Vec::new();
    for _ in 0..k.min(m) {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..k).filter(|&i| !used_r[i]) {
            for j in (0..m).filter(|&j| !used_p[j]) {
                let better = match best {
                    None => true,
                    Some((bi, bj)) => coefficients[(i, j)].abs() > coefficients[(bi, bj)].abs(),
                };
                if better {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("unmatched pair remains");
        used_r[i] = true;
        used_p[j] = true;
        let c = coefficients[(i, j)];
        matches.push(CongruenceMatch {
            recovered: i,
            planted: j,
            coefficient: c,
            negative: c < 0.0,
        });
    }
    Ok(CongruenceReport {
        coefficients,
        matches,
    })
}
