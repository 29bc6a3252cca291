//! `airloc` command line: generate synthetic worlds, run fixed or adaptive
//! localisation batches, correlate similarity with match ratio, calibrate
//! difficulty thresholds, and summarize result files.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 data validation error. Per-query localisation failures are recorded in
//! the results file and do not affect the exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use airloc_core::analytics::{
    calibrate_thresholds, correlation_study, summarize_errors, AnalyticsError, ErrorStats,
    EvaluatedQuery,
};
use airloc_core::bundle::{
    load_bundle_with, load_queries_with, save_bundle, save_queries, BundleError, LoadOptions,
    QuerySet, SceneBundle,
};
use airloc_core::index::DescriptorIndex;
use airloc_core::matching::MatcherConfig;
use airloc_core::pipeline::{
    read_results, run_batch, write_results, PipelineError, QueryRecord, RunMode, SummaryRecord,
};
use airloc_core::pnp::RansacConfig;
use airloc_core::policy::PolicyConfig;
use airloc_core::synthworld::{generate, SynthError, WorldConfig};

#[derive(Parser)]
#[command(
    name = "airloc",
    version,
    about = "Adaptive image-retrieval localisation over scene bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle plus query set with ground truth
    Synth(SynthArgs),
    /// Localize a query set against a bundle and write result records
    Localize(LocalizeArgs),
    /// Record (similarity, match ratio) samples and their correlation
    Correlate(CorrelateArgs),
    /// Calibrate difficulty thresholds from the query score distribution
    Calibrate(CalibrateArgs),
    /// Summarize result files against ground truth into CSV tables
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// World config (TOML); omitted fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the bundle and queries
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BundleArgs {
    /// Bundle directory
    #[arg(long)]
    bundle: PathBuf,
    /// Query directory (defaults to the bundle directory)
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Keep at most this many features per image when loading
    #[arg(long)]
    max_features: Option<usize>,
}

impl BundleArgs {
    fn load(&self) -> Result<(SceneBundle, QuerySet), CliError> {
        let options = LoadOptions {
            max_features_per_image: self.max_features,
        };
        let bundle = load_bundle_with(&self.bundle, &options)?;
        let queries_dir = self.queries.as_deref().unwrap_or(&self.bundle);
        let queries = load_queries_with(queries_dir, &bundle, &options)?;
        Ok((bundle, queries))
    }
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    input: BundleArgs,
    /// Retrieval mode
    #[arg(long, value_parser = ["fixed", "adaptive"], default_value = "fixed")]
    mode: String,
    /// Maximum number of retrieved images
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Easy-query budget coefficient
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Medium-query budget coefficient
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    /// Hard/medium score boundary
    #[arg(long, default_value_t = 0.4)]
    gamma_low: f64,
    /// Medium/easy score boundary
    #[arg(long, default_value_t = 0.6)]
    gamma_high: f64,
    /// Number of top retrievals averaged into the query score
    #[arg(long, default_value_t = 3)]
    n_score: usize,
    /// Lowe's ratio threshold for local matching (1.0 disables)
    #[arg(long, default_value_t = 0.9)]
    ratio_threshold: f32,
    /// RANSAC iteration cap
    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,
    /// RANSAC inlier gate (pixels)
    #[arg(long, default_value_t = 12.0)]
    reproj_threshold: f64,
    /// RANSAC confidence for the adaptive iteration bound
    #[arg(long, default_value_t = 0.9999)]
    confidence: f64,
    /// Minimum inlier support for a pose
    #[arg(long, default_value_t = 12)]
    min_inliers: usize,
    /// Base seed; each query derives its own stream from it
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads (results do not depend on this)
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Results file (one JSON record per query plus a summary record)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    input: BundleArgs,
    /// Number of top retrievals evaluated per query
    #[arg(long, default_value_t = 10)]
    k_eval: usize,
    /// Lowe's ratio threshold for local matching
    #[arg(long, default_value_t = 0.9)]
    ratio_threshold: f32,
    /// Sample CSV output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: BundleArgs,
    /// Target fraction of easy queries
    #[arg(long)]
    easy: f64,
    /// Target fraction of hard queries
    #[arg(long)]
    hard: f64,
    /// Number of top retrievals averaged into the query score
    #[arg(long, default_value_t = 3)]
    n_score: usize,
    /// Optional CSV output (gamma_low, gamma_high)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    input: BundleArgs,
    /// Result files to summarize (repeat for sweeps), one CSV row each
    #[arg(long, required = true)]
    results: Vec<PathBuf>,
    /// Summary CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Per-difficulty CSV output path
    #[arg(long)]
    difficulty_out: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Io(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Validation(m) => m,
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        match e {
            BundleError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) => CliError::Config(e.to_string()),
            PipelineError::EmptyBundle => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::InvalidFractions(_) | AnalyticsError::TooFewSamples { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Localize(args) => cmd_localize(args),
        Command::Correlate(args) => cmd_correlate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            toml::from_str::<WorldConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => WorldConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (bundle, queries) = generate(&config)?;
    save_bundle(&bundle, &args.out)?;
    save_queries(&queries, &bundle, &args.out)?;
    println!(
        "wrote bundle '{}' ({} cameras, {} images, {} points) and {} queries to {}",
        bundle.name,
        bundle.cameras.len(),
        bundle.images.len(),
        bundle.points3d.len(),
        queries.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_localize(args: LocalizeArgs) -> Result<(), CliError> {
    let (bundle, queries) = args.input.load()?;
    let mode = match args.mode.as_str() {
        "fixed" => RunMode::Fixed { k: args.k },
        _ => RunMode::Adaptive(PolicyConfig {
            k: args.k,
            alpha: args.alpha,
            beta: args.beta,
            gamma_low: args.gamma_low,
            gamma_high: args.gamma_high,
            n_score: args.n_score,
        }),
    };
    mode.validate().map_err(CliError::Config)?;
    let matcher = MatcherConfig {
        ratio_threshold: args.ratio_threshold,
    };
    let ransac = RansacConfig {
        max_iterations: args.max_iterations,
        reprojection_threshold: args.reproj_threshold,
        confidence: args.confidence,
        min_inliers: args.min_inliers,
        seed: args.seed,
    };
    let (results, summary) = run_batch(&queries, &bundle, &mode, matcher, ransac, args.parallelism)?;
    write_results(&args.out, &results, &summary)?;
    println!(
        "localized {}/{} queries (mode {}, k {}): mean budget {:.3}, pair units {}, results in {}",
        summary.localized,
        summary.queries,
        summary.mode,
        summary.k,
        summary.mean_budget,
        summary.total_pair_units,
        args.out.display()
    );
    Ok(())
}

fn cmd_correlate(args: CorrelateArgs) -> Result<(), CliError> {
    let (bundle, queries) = args.input.load()?;
    let matcher = MatcherConfig {
        ratio_threshold: args.ratio_threshold,
    };
    let study = correlation_study(&bundle, &queries, args.k_eval, matcher)?;
    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| io_error(&args.out, e))?;
    writer
        .write_record(["query", "reference", "similarity", "match_ratio"])
        .map_err(|e| io_error(&args.out, e))?;
    for s in &study.samples {
        writer
            .write_record([
                s.query.to_string(),
                s.reference.to_string(),
                s.similarity.to_string(),
                s.match_ratio.to_string(),
            ])
            .map_err(|e| io_error(&args.out, e))?;
    }
    writer.flush().map_err(|e| io_error(&args.out, e))?;
    println!(
        "correlation over {} samples (top-{} per query): PCC {:.6} SRC {:.6}",
        study.samples.len(),
        args.k_eval,
        study.pcc,
        study.src
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let (bundle, queries) = args.input.load()?;
    let index = DescriptorIndex::from_bundle(&bundle);
    let mut scores = Vec::with_capacity(queries.len());
    for query in &queries.queries {
        scores.push(index.query_score(&query.global_descriptor, args.n_score)?);
    }
    let (gamma_low, gamma_high) = calibrate_thresholds(&scores, args.easy, args.hard)?;
    println!(
        "calibrated over {} scores (easy {:.2}, hard {:.2}): gamma_low {gamma_low:.6} gamma_high {gamma_high:.6}",
        scores.len(),
        args.easy,
        args.hard
    );
    if let Some(out) = &args.out {
        let mut writer = csv::Writer::from_path(out).map_err(|e| io_error(out, e))?;
        writer
            .write_record(["gamma_low", "gamma_high"])
            .map_err(|e| io_error(out, e))?;
        writer
            .write_record([gamma_low.to_string(), gamma_high.to_string()])
            .map_err(|e| io_error(out, e))?;
        writer.flush().map_err(|e| io_error(out, e))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let (_bundle, queries) = args.input.load()?;
    let truth = queries.ground_truth();

    struct Row {
        file: String,
        summary: SummaryRecord,
        stats: ErrorStats,
        buckets: (f64, f64, f64),
        per_difficulty: Vec<(String, ErrorStats)>,
    }

    let mut rows = Vec::new();
    for path in &args.results {
        let (records, summary) = read_results(path)?;
        let summary = summary.ok_or_else(|| {
            CliError::Validation(format!("{}: missing summary record", path.display()))
        })?;
        if records.is_empty() {
            return Err(CliError::Validation(format!(
                "{}: no result records",
                path.display()
            )));
        }
        let evaluated: Vec<EvaluatedQuery> = records.iter().map(EvaluatedQuery::from).collect();
        let mut missing: Vec<u32> = evaluated
            .iter()
            .filter(|e| !truth.contains_key(&e.query))
            .map(|e| e.query.0)
            .collect();
        if !missing.is_empty() {
            missing.truncate(5);
            return Err(CliError::Validation(format!(
                "{}: queries without ground truth: {missing:?}",
                path.display()
            )));
        }
        let error_summary = summarize_errors(&evaluated, &truth)?;
        rows.push(Row {
            file: path.display().to_string(),
            summary,
            stats: error_summary.overall,
            buckets: (
                error_summary.buckets.high_pct,
                error_summary.buckets.medium_pct,
                error_summary.buckets.low_pct,
            ),
            per_difficulty: error_summary
                .per_difficulty
                .iter()
                .map(|(d, s)| (d.to_string(), s.clone()))
                .collect(),
        });
    }

    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| io_error(&args.out, e))?;
    writer
        .write_record([
            "file",
            "mode",
            "k",
            "queries",
            "localized",
            "failed",
            "mean_budget",
            "total_pair_units",
            "matching_ms",
            "mean_ate_m",
            "median_ate_m",
            "mean_are_deg",
            "median_are_deg",
            "high_pct",
            "medium_pct",
            "low_pct",
        ])
        .map_err(|e| io_error(&args.out, e))?;
    for row in &rows {
        writer
            .write_record([
                row.file.clone(),
                row.summary.mode.clone(),
                row.summary.k.to_string(),
                row.summary.queries.to_string(),
                row.stats.localized.to_string(),
                row.stats.failed.to_string(),
                row.summary.mean_budget.to_string(),
                row.summary.total_pair_units.to_string(),
                row.summary.stage_totals_ms.matching_ms.to_string(),
                fmt_opt(row.stats.mean_ate_m),
                fmt_opt(row.stats.median_ate_m),
                fmt_opt(row.stats.mean_are_deg),
                fmt_opt(row.stats.median_are_deg),
                row.buckets.0.to_string(),
                row.buckets.1.to_string(),
                row.buckets.2.to_string(),
            ])
            .map_err(|e| io_error(&args.out, e))?;
    }
    writer.flush().map_err(|e| io_error(&args.out, e))?;
    println!("wrote {} ({} rows)", args.out.display(), rows.len());

    if let Some(out) = &args.difficulty_out {
        let mut writer = csv::Writer::from_path(out).map_err(|e| io_error(out, e))?;
        writer
            .write_record([
                "file",
                "mode",
                "k",
                "difficulty",
                "total",
                "localized",
                "median_ate_m",
                "median_are_deg",
            ])
            .map_err(|e| io_error(out, e))?;
        for row in &rows {
            for (difficulty, stats) in &row.per_difficulty {
                writer
                    .write_record([
                        row.file.clone(),
                        row.summary.mode.clone(),
                        row.summary.k.to_string(),
                        difficulty.clone(),
                        stats.total.to_string(),
                        stats.localized.to_string(),
                        fmt_opt(stats.median_ate_m),
                        fmt_opt(stats.median_are_deg),
                    ])
                    .map_err(|e| io_error(out, e))?;
            }
        }
        writer.flush().map_err(|e| io_error(out, e))?;
        println!("wrote {}", out.display());
    }

    // Sweep sanity: median ATE should not increase as the fixed budget
    // grows. Violations are flagged, not fatal.
    let mut fixed_rows: Vec<(&Row, usize)> = rows
        .iter()
        .filter(|r| r.summary.mode == "fixed")
        .map(|r| (r, r.summary.k))
        .collect();
    fixed_rows.sort_by_key(|(_, k)| *k);
    for pair in fixed_rows.windows(2) {
        let (a, ka) = &pair[0];
        let (b, kb) = &pair[1];
        if let (Some(ate_a), Some(ate_b)) = (a.stats.median_ate_m, b.stats.median_ate_m) {
            if ate_b > ate_a {
                eprintln!(
                    "warning: median ATE trend violated: k={ka} -> {ate_a:.6} m but k={kb} -> {ate_b:.6} m"
                );
            }
        }
    }
    Ok(())
}
