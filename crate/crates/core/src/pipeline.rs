//! End-to-end runs: KPI CSV (or a saved median week) → median week →
//! factor model → scores → heatmaps and score map, one output directory per
//! metric plus a run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::condense::{build_median_week, write_coverage_csv, CompletenessPolicy, MedianWeekMatrix};
use crate::efa::{
    correlation_matrix, extract_factors, finalize_model, parallel_analysis, rotate_model,
    standardize, CorrelationMatrix, EfaError, ExtractionConfig, FactorModel, FactorModelDocument,
    ModelParameters, ParallelAnalysisConfig, ParallelAnalysisResult, Rotation, Standardized,
    VarimaxConfig,
};
use crate::error::{Error, Result};
use crate::export::{export_heatmaps, export_score_map, ExportError};
use crate::ingest::{join_locations, parse_kpi_csv, read_locations, CellDataset, Metric, ParseOptions};
use crate::scoring::{regression_scores, write_rankings, ScoreTable};

/// Every knob of a run. Serialized into the output directory as `config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw hourly KPI export.
    pub kpi_csv: Option<PathBuf>,
    /// `site_id,latitude,longitude` table joined onto `kpi_csv`.
    pub locations_csv: Option<PathBuf>,
    /// A saved median week, used instead of `kpi_csv`.
    pub median_week_csv: Option<PathBuf>,
    /// `cell_id,lat,lon` companion of `median_week_csv`.
    pub coordinates_csv: Option<PathBuf>,
    pub metrics: Vec<Metric>,
    pub parse: ParseOptions,
    pub completeness: CompletenessPolicy,
    pub parallel_analysis: ParallelAnalysisConfig,
    pub extraction: ExtractionConfig,
    pub rotation: Rotation,
    pub kappa: u32,
    /// Cells listed per factor in `top_cells.csv`.
    pub top_n: usize,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kpi_csv: None,
            locations_csv: None,
            median_week_csv: None,
            coordinates_csv: None,
            metrics: vec![Metric::Dl],
            parse: ParseOptions::default(),
            completeness: CompletenessPolicy::default(),
            parallel_analysis: ParallelAnalysisConfig::default(),
            extraction: ExtractionConfig::default(),
            rotation: Rotation::Promax,
            kappa: 4,
            top_n: 20,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        match (&self.kpi_csv, &self.median_week_csv) {
            (None, None) => return cfg("one of kpi_csv or median_week_csv is required".into()),
            (Some(_), Some(_)) => {
                return cfg("kpi_csv and median_week_csv are mutually exclusive".into())
            }
            _ => {}
        }
        if self.median_week_csv.is_some() && self.metrics.len() != 1 {
            return cfg("a median_week_csv input carries exactly one metric".into());
        }
        if self.metrics.is_empty() {
            return cfg("metrics must not be empty".into());
        }
        let mut seen = self.metrics.clone();
        seen.sort_by_key(|m| m.as_str());
        seen.dedup();
        if seen.len() != self.metrics.len() {
            return cfg("metrics contains duplicates".into());
        }
        if !(0.0..=1.0).contains(&self.parse.max_reject_rate) {
            return cfg(format!("max_reject_rate {} outside [0, 1]", self.parse.max_reject_rate));
        }
        if self.kappa < 2 {
            return cfg(format!("kappa {} must be >= 2", self.kappa));
        }
        if self.top_n == 0 {
            return cfg("top_n must be >= 1".into());
        }
        self.completeness
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.parallel_analysis
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.extraction
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// In-memory result of analysing one median week.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub standardized: Standardized,
    pub correlation: CorrelationMatrix,
    pub parallel: ParallelAnalysisResult,
    /// Finalized model over all 168 slots; excluded slots have zero loadings.
    pub model: FactorModel,
    pub scores: ScoreTable,
    /// Slots with zero variance across cells, left out of the fit.
    pub excluded_slots: Vec<usize>,
}

fn select_columns(x: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), keep.len(), |i, j| x[(i, keep[j])])
}

fn expand_model(model: FactorModel, keep: &[usize], p: usize) -> FactorModel {
    if keep.len() == p {
        return model;
    }
    let k = model.n_factors();
    let mut pattern = DMatrix::zeros(p, k);
    let mut communalities = vec![0.0; p];
    let mut uniqueness = vec![1.0; p];
    for (row, &slot) in keep.iter().enumerate() {
        pattern.set_row(slot, &model.pattern.row(row));
        communalities[slot] = model.communalities[row];
        uniqueness[slot] = model.uniqueness[row];
    }
    FactorModel {
        pattern,
        communalities,
        uniqueness,
        ..model
    }
}

/// Parallel analysis, extraction, rotation, finalization and scoring of a
/// median week. Pure and deterministic for a fixed config.
pub fn analyze_matrix(matrix: &MedianWeekMatrix, config: &PipelineConfig) -> Result<Analysis> {
    let p = matrix.values.ncols();
    let (standardized, keep) = match standardize(&matrix.values) {
        Ok(s) => (s, (0..p).collect::<Vec<_>>()),
        Err(EfaError::ZeroVarianceVariable(constant)) => {
            log::warn!("{} zero-variance slots excluded from the fit", constant.len());
            let keep: Vec<usize> = (0..p).filter(|j| !constant.contains(j)).collect();
            (standardize(&select_columns(&matrix.values, &keep))?, keep)
        }
        Err(e) => return Err(e.into()),
    };
    let excluded_slots: Vec<usize> = (0..p).filter(|j| !keep.contains(j)).collect();
    let z = &standardized.z;
    let correlation = correlation_matrix(z);
    let parallel = parallel_analysis(z, &config.parallel_analysis)?;
    log::info!(
        "{}: parallel analysis retained {} of {} factors",
        matrix.metric,
        parallel.retained,
        keep.len()
    );
    if parallel.retained == 0 {
        return Err(EfaError::NoFactorsRetained.into());
    }
    let unrotated = extract_factors(&correlation, parallel.retained, &config.extraction)?;
    let rotated = rotate_model(&unrotated, config.rotation, config.kappa, &VarimaxConfig::default())?;
    let model = finalize_model(&rotated);
    let scores = regression_scores(z, &correlation, &model, &matrix.cell_ids, &matrix.coordinates)?;
    Ok(Analysis {
        model: expand_model(model, &keep, p),
        standardized,
        correlation,
        parallel,
        scores,
        excluded_slots,
    })
}

/// Outcome of one metric's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRun {
    pub metric: Metric,
    pub cells: usize,
    pub dropped_cells: usize,
    pub imputed_cells: usize,
    pub excluded_slots: Vec<usize>,
    pub retained: usize,
    pub extraction_converged: bool,
    pub extraction_iterations: usize,
    pub varimax_converged: bool,
    pub promax_singular: bool,
    pub heywood: Vec<usize>,
    pub ridge: bool,
    /// Cells without coordinates; the score map is skipped when nonzero.
    pub unlocated_cells: usize,
    /// Output files relative to the run directory.
    pub files: Vec<String>,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub records: Option<usize>,
    pub rows_rejected: Option<usize>,
    pub unlocated_sites: Option<usize>,
    pub config: PipelineConfig,
    pub runs: Vec<MetricRun>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn relative(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Reads and location-joins the KPI input of `config`.
pub fn load_dataset(config: &PipelineConfig) -> Result<CellDataset> {
    let path = config
        .kpi_csv
        .as_deref()
        .ok_or_else(|| Error::Config("kpi_csv is not set".into()))?;
    let dataset = parse_kpi_csv(path, &config.parse)?;
    match &config.locations_csv {
        Some(loc) => {
            let locations = read_locations(loc)?;
            let (joined, unlocated) = join_locations(&dataset, &locations)?;
            if !unlocated.is_empty() {
                log::warn!("{} sites have no coordinates", unlocated.sites.len());
            }
            Ok(joined)
        }
        None => Ok(dataset),
    }
}

/// Runs every configured metric and writes results under `config.out_dir`.
pub fn run(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut summary = RunSummary {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.parallel_analysis.seed,
        records: None,
        rows_rejected: None,
        unlocated_sites: None,
        config: config.clone(),
        runs: Vec::new(),
    };

    if let Some(path) = &config.median_week_csv {
        let matrix = MedianWeekMatrix::read_files(path, config.coordinates_csv.as_deref(), config.metrics[0])?;
        let dir = out.join(matrix.metric.as_str().to_lowercase());
        summary.runs.push(run_metric(&matrix, 0, 0, config, &dir, out)?);
    } else {
        let dataset = load_dataset(config)?;
        summary.records = Some(dataset.len());
        summary.rows_rejected = Some(dataset.report().rows_rejected);
        let unlocated = dataset.unlocated();
        if config.locations_csv.is_some() {
            summary.unlocated_sites = Some(unlocated.sites.len());
            let path = out.join("unlocated_sites.csv");
            unlocated.write_csv(create(&path)?)?;
        }
        for &metric in &config.metrics {
            let dir = out.join(metric.as_str().to_lowercase());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let outcome = build_median_week(&dataset, metric, &config.completeness)?;
            let coverage = dir.join("dropped_cells.csv");
            write_coverage_csv(&outcome.dropped, create(&coverage)?)?;
            let mut run = run_metric(
                &outcome.matrix,
                outcome.dropped.len(),
                outcome.imputed.len(),
                config,
                &dir,
                out,
            )?;
            run.files.insert(0, relative(&coverage, out));
            summary.runs.push(run);
        }
    }

    let config_path = out.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let manifest = out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(summary)
}

fn run_metric(
    matrix: &MedianWeekMatrix,
    dropped: usize,
    imputed: usize,
    config: &PipelineConfig,
    dir: &Path,
    base: &Path,
) -> Result<MetricRun> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();

    let mw = dir.join("median_week.csv");
    matrix.write_csv(create(&mw)?)?;
    files.push(mw);
    let coords = dir.join("coordinates.csv");
    matrix.write_coordinates_csv(create(&coords)?)?;
    files.push(coords);

    let analysis = analyze_matrix(matrix, config)?;

    let pa = dir.join("parallel_analysis.csv");
    write_parallel_analysis(&analysis.parallel, &pa)?;
    files.push(pa);

    let doc = FactorModelDocument::new(
        &analysis.model,
        ModelParameters {
            n_observations: matrix.n_cells(),
            parallel_analysis: Some(config.parallel_analysis),
            extraction: config.extraction,
            kappa: config.kappa,
        },
    );
    let model_path = dir.join("model.json");
    let mut text = serde_json::to_string_pretty(&doc).expect("model serializes");
    text.push('\n');
    std::fs::write(&model_path, text).map_err(|e| Error::io(&model_path, e))?;
    files.push(model_path);

    let scores = dir.join("scores.csv");
    analysis.scores.write_csv(create(&scores)?)?;
    files.push(scores);
    let top = dir.join("top_cells.csv");
    write_rankings(&analysis.scores, config.top_n, create(&top)?)?;
    files.push(top);

    files.extend(export_heatmaps(&analysis.model, &dir.join("heatmaps"))?);

    let unlocated_cells = analysis.scores.coordinates.iter().filter(|c| c.is_none()).count();
    if unlocated_cells == 0 {
        let map = dir.join("score_map.geojson");
        match export_score_map(&analysis.scores, &map) {
            Ok(_) => files.push(map),
            Err(ExportError::MissingCoordinates(ids)) => {
                log::warn!("score map skipped: {} cells with invalid coordinates", ids.len())
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        log::warn!("score map skipped: {unlocated_cells} cells without coordinates");
    }

    let d = &analysis.model.diagnostics;
    Ok(MetricRun {
        metric: matrix.metric,
        cells: matrix.n_cells(),
        dropped_cells: dropped,
        imputed_cells: imputed,
        excluded_slots: analysis.excluded_slots.clone(),
        retained: analysis.parallel.retained,
        extraction_converged: d.extraction_converged,
        extraction_iterations: d.extraction_iterations,
        varimax_converged: d.varimax_converged,
        promax_singular: d.promax_singular,
        heywood: d.heywood.clone(),
        ridge: analysis.scores.ridge,
        unlocated_cells,
        files: files.iter().map(|f| relative(f, base)).collect(),
    })
}

fn write_parallel_analysis(pa: &ParallelAnalysisResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["rank", "observed", "random_quantile", "retained"])
        .map_err(io)?;
    for (i, (o, q)) in pa.observed.iter().zip(&pa.random_quantiles).enumerate() {
        w.write_record([
            (i + 1).to_string(),
            o.to_string(),
            q.to_string(),
            (i < pa.retained).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
