//! Cell-level mobile network traffic profiling by exploratory factor analysis.
//!
//! The pipeline condenses hourly KPI records into one median week per cell
//! (a cells × 168 matrix), selects the number of common factors with Horn's
//! parallel analysis, extracts them by iterated principal-axis factoring,
//! rotates with varimax followed by promax, and scores every cell on every
//! factor. Results are exported as per-factor 7 × 24 heatmap tables and as a
//! GeoJSON point layer.
//!
//! ```no_run
//! use cellfactor::{pipeline, PipelineConfig};
//!
//! let config = PipelineConfig::default();
//! let summary = pipeline::run(&config).unwrap();
//! println!("retained {} factors", summary.runs[0].retained);
//! ```

pub mod condense;
pub mod efa;
mod error;
pub mod export;
pub mod ingest;
pub mod pipeline;
pub mod scoring;
pub mod synth;

pub use condense::{
    build_median_week, completeness_report, slot_index, CompletenessPolicy, MedianWeekMatrix,
    SlotIndex, SLOTS,
};
pub use efa::{
    correlation_matrix, extract_factors, finalize_model, parallel_analysis, promax,
    standardize, sym_eigen, varimax, CorrelationMatrix, FactorModel, ParallelAnalysisConfig,
    ParallelAnalysisResult, Rotation,
};
pub use error::{Error, Result};
pub use export::{export_heatmaps, export_score_map, HeatmapTable, ScoreMapDocument};
pub use ingest::{
    dataset_stats, district_summary, join_locations, parse_kpi_csv, CellDataset, ColumnSchema,
    GeoPoint, KpiRecord, Metric, SiteLocation,
};
pub use pipeline::PipelineConfig;
pub use scoring::{regression_scores, top_cells, ScoreTable};
pub use synth::{built_in_profiles, congruence, generate, ProfileSpec, SyntheticGroundTruth};
