//! `cellfactor` command-line tool.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellfactor::condense::write_coverage_csv;
use cellfactor::efa::FactorModelDocument;
use cellfactor::ingest::{district_summaries, write_district_summaries, write_kpi_csv, write_locations};
use cellfactor::pipeline::{self, load_dataset};
use cellfactor::synth::read_profiles;
use cellfactor::{
    build_median_week, built_in_profiles, dataset_stats, export_heatmaps, export_score_map,
    generate, ColumnSchema, Error, Metric, PipelineConfig, Result, ScoreTable,
};
use clap::{Args, Parser, Subcommand};

const LOG_ENV: &str = "CELLFACTOR_LOG";

#[derive(Debug, Parser)]
#[command(name = "cellfactor", version, about = "Median-week factor analysis of cell-level KPI exports")]
#[command(after_help = "Log verbosity is read from CELLFACTOR_LOG (error, warn, info, debug, trace).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Row, district and per-day traffic statistics of a KPI export.
    Stats(StatsArgs),
    /// Condense a KPI export into per-cell median weeks.
    Condense(CondenseArgs),
    /// Run the full analysis and write every result file.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic KPI export with planted profiles.
    Synth(SynthArgs),
    /// Re-export heatmaps and the score map from saved model and score files.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Hourly KPI CSV.
    #[arg(long)]
    kpi: Option<PathBuf>,
    /// Site coordinates CSV (`site_id,lat,lon`).
    #[arg(long)]
    locations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Directory for stats.csv and districts.csv; stats go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CondenseArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Metrics to condense (DL, UL, USERS); repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_value = "DL")]
    metric: Vec<Metric>,
    /// Minimum fraction of the 168 weekly slots a cell must cover.
    #[arg(long)]
    min_coverage: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Saved median-week CSV to analyse instead of a KPI export.
    #[arg(long, conflicts_with = "kpi")]
    median_week: Option<PathBuf>,
    /// `cell_id,lat,lon` table accompanying --median-week.
    #[arg(long, requires = "median_week")]
    coordinates: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    metric: Vec<Metric>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa: Option<u32>,
    #[arg(long)]
    min_coverage: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML profile definitions; the five built-in profiles when omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 28)]
    days: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// model.json written by `analyze`.
    #[arg(long)]
    model: PathBuf,
    /// scores.csv written by `analyze`; enables the score map.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value = "export")]
    out: PathBuf,
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn input_config(input: &InputArgs) -> Result<PipelineConfig> {
    let kpi = input
        .kpi
        .clone()
        .ok_or_else(|| Error::Config("--kpi is required".into()))?;
    Ok(PipelineConfig {
        kpi_csv: Some(kpi),
        locations_csv: input.locations.clone(),
        ..PipelineConfig::default()
    })
}

fn stats(args: StatsArgs) -> Result<()> {
    let dataset = load_dataset(&input_config(&args.input)?)?;
    let stats = dataset_stats(&dataset)?;
    match args.out {
        Some(dir) => {
            mkdir(&dir)?;
            stats.write_csv(create(&dir.join("stats.csv"))?)?;
            write_district_summaries(&district_summaries(&dataset), create(&dir.join("districts.csv"))?)?;
            if args.input.locations.is_some() {
                dataset.unlocated().write_csv(create(&dir.join("unlocated_sites.csv"))?)?;
            }
        }
        None => stats.write_csv(io::stdout().lock())?,
    }
    if dataset.report().rows_rejected > 0 {
        log::warn!("{} malformed rows skipped", dataset.report().rows_rejected);
    }
    Ok(())
}

fn condense(args: CondenseArgs) -> Result<()> {
    let mut config = input_config(&args.input)?;
    if let Some(c) = args.min_coverage {
        config.completeness.min_coverage = c;
    }
    config
        .completeness
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
    let dataset = load_dataset(&config)?;
    mkdir(&args.out)?;
    for metric in args.metric {
        let outcome = build_median_week(&dataset, metric, &config.completeness)?;
        let tag = metric.as_str().to_lowercase();
        outcome
            .matrix
            .write_csv(create(&args.out.join(format!("median_week_{tag}.csv")))?)?;
        outcome
            .matrix
            .write_coordinates_csv(create(&args.out.join(format!("coordinates_{tag}.csv")))?)?;
        write_coverage_csv(&outcome.dropped, create(&args.out.join(format!("dropped_cells_{tag}.csv")))?)?;
        println!(
            "{metric}: {} cells retained, {} dropped, {} imputed",
            outcome.matrix.n_cells(),
            outcome.dropped.len(),
            outcome.imputed.len()
        );
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::read(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(kpi) = args.input.kpi {
        config.kpi_csv = Some(kpi);
        config.median_week_csv = None;
    }
    if let Some(loc) = args.input.locations {
        config.locations_csv = Some(loc);
    }
    if let Some(mw) = args.median_week {
        config.median_week_csv = Some(mw);
        config.kpi_csv = None;
    }
    if let Some(c) = args.coordinates {
        config.coordinates_csv = Some(c);
    }
    if !args.metric.is_empty() {
        config.metrics = args.metric;
    }
    if let Some(r) = args.replicates {
        config.parallel_analysis.replicates = r;
    }
    if let Some(q) = args.quantile {
        config.parallel_analysis.quantile = q;
    }
    if let Some(s) = args.seed {
        config.parallel_analysis.seed = s;
    }
    if let Some(k) = args.kappa {
        config.kappa = k;
    }
    if let Some(c) = args.min_coverage {
        config.completeness.min_coverage = c;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    let summary = pipeline::run(&config)?;
    for run in &summary.runs {
        println!(
            "{}: {} cells, K = {}{}",
            run.metric,
            run.cells,
            run.retained,
            if run.extraction_converged { "" } else { " (extraction did not converge)" }
        );
    }
    println!("results in {}", config.out_dir.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let profiles = match &args.profiles {
        Some(path) => read_profiles(path)?,
        None => built_in_profiles(),
    };
    let (dataset, truth) = generate(&profiles, args.days, args.seed)?;
    mkdir(&args.out)?;
    write_kpi_csv(dataset.records(), &ColumnSchema::default(), create(&args.out.join("kpi.csv"))?)?;
    let locations: Vec<_> = dataset.locations().values().cloned().collect();
    write_locations(&locations, create(&args.out.join("locations.csv"))?)?;
    let path = args.out.join("ground_truth.json");
    let mut text = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    println!(
        "{} records for {} cells over {} days in {}",
        dataset.len(),
        truth.assignment.len(),
        args.days,
        args.out.display()
    );
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.model).map_err(|e| io_error(&args.model, e))?;
    let doc: FactorModelDocument = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", args.model.display())))?;
    let model = doc.to_model()?;
    let files = export_heatmaps(&model, &args.out.join("heatmaps"))?;
    println!("{} heatmaps written", files.len());
    if let Some(path) = &args.scores {
        let table = ScoreTable::read_csv(File::open(path).map_err(|e| io_error(path, e))?)?;
        if table.n_factors() != model.n_factors() {
            return Err(Error::Config(format!(
                "{} has {} factors but the model has {}",
                path.display(),
                table.n_factors(),
                model.n_factors()
            )));
        }
        let doc = export_score_map(&table, &args.out.join("score_map.geojson"))?;
        println!("score map with {} cells written", doc.n_features());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Stats(a) => stats(a),
        Command::Condense(a) => condense(a),
        Command::Analyze(a) => analyze(a),
        Command::Synth(a) => synth(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
