//! Command-line front end for the r2vf library: simulate, fit, predict,
//! rank, and bench subcommands. Every output comes with a run manifest
//! (resolved configuration, input/output paths, seed, SHA-256 checksums)
//! so a run can be reproduced bit-for-bit.
//!
//! Exit codes: 0 success, 1 runtime/IO failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use r2vf::bench::{emit_report, run_csv_bench, run_synthetic_bench, summarize, Method};
use r2vf::encoding::FeatureEncoder;
use r2vf::io::{load_csv, write_csv, TargetSpec, ThresholdExpr};
use r2vf::pipeline::{
    make_split, run_r2vf, step3_rank, step4_ordinalize, Problem, R2vfConfig, R2vfModel,
    RankingPenalty, ReferencePolicy,
};
use r2vf::solver::Family;
use r2vf::synth::{generate, SynthConfig};
use r2vf::table::{ColumnData, FeatureKind, FeatureSpec, Table};
use r2vf::{Error, Result};

#[derive(Parser)]
#[command(name = "r2vf", version, about = "Level clustering for categorical features in penalized GLMs")]
struct Cli {
    /// Suppress the machine-readable summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic city/age/profession dataset as CSV.
    Simulate(SimulateArgs),
    /// Fit a model: ranking pass, fusion pass, optional refit.
    Fit(FitArgs),
    /// Apply a fitted model to new rows.
    Predict(PredictArgs),
    /// Emit per-category ranking scores and pre-fusion bins.
    Rank(RankArgs),
    /// Benchmark r2vf against the OLVF and no-regularization baselines.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
    #[arg(long, default_value_t = 100)]
    professions: usize,
    #[arg(long, default_value_t = 10.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Binomial,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Binomial => Family::Binomial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RankingArg {
    Lasso,
    Ridge,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

/// Flags shared by every pipeline-running subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// Max bins for numeric/ordinal features.
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Max bins for ordinalized nominal features.
    #[arg(long, default_value_t = 75)]
    m: usize,
    #[arg(long, value_enum, default_value = "lasso")]
    ranking: RankingArg,
    #[arg(long, value_enum, default_value = "on")]
    refit: Toggle,
    #[arg(long, default_value_t = 0.25)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 100)]
    grid_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    grid_ratio: f64,
    #[arg(long, default_value_t = 5)]
    min_obs_per_bin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ConfigArgs {
    fn to_config(&self) -> R2vfConfig {
        R2vfConfig {
            n: self.n,
            m: self.m,
            ranking_penalty: match self.ranking {
                RankingArg::Lasso => RankingPenalty::Lasso,
                RankingArg::Ridge => RankingPenalty::Ridge,
            },
            reference_policy: ReferencePolicy::MostCommon,
            refit: matches!(self.refit, Toggle::On),
            grid_size: self.grid_size,
            grid_ratio: self.grid_ratio,
            validation_fraction: self.validation_fraction,
            min_obs_per_bin: self.min_obs_per_bin,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Feature-spec JSON path: a list of {"name", "kind", "max_bins"?}.
    #[arg(long)]
    spec: PathBuf,
    /// Target column, or a threshold expression such as "DEATHS>0".
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for model.json, clusters.json, report.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// model.json written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Input CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path (single `prediction` column).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output CSV path (feature, category, score, bin).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Synthetic,
    Csv,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    mode: BenchMode,
    /// Comma-separated methods: r2vf, olvf, none.
    #[arg(long, value_delimiter = ',', default_value = "r2vf,olvf,none", value_parser = method_parser)]
    methods: Vec<Method>,
    /// Repetitions (synthetic mode).
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Random splits (csv mode).
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
    #[arg(long, default_value_t = 100)]
    professions: usize,
    #[arg(long, default_value_t = 10.0)]
    noise_sd: f64,
    /// Input CSV (csv mode).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Feature-spec JSON (csv mode).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Target column or threshold expression (csv mode).
    #[arg(long)]
    target: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for raw.csv, summary.csv, failures.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

// ---------------------------------------------------------------------------
// Feature-spec file
// ---------------------------------------------------------------------------

/// One entry of the feature-spec file. `max_bins` defaults to the configured
/// `n` for numeric/ordinal columns; nominal columns are capped by `m` after
/// ranking, so their initial encoding is unbounded in practice.
#[derive(Deserialize)]
struct SpecEntry {
    name: String,
    kind: FeatureKind,
    max_bins: Option<usize>,
}

fn load_specs(path: &Path, config: &R2vfConfig) -> Result<Vec<FeatureSpec>> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<SpecEntry> = serde_json::from_str(&text)?;
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "feature-spec file {} lists no features",
            path.display()
        )));
    }
    entries
        .into_iter()
        .map(|e| {
            let default = match e.kind {
                FeatureKind::Nominal => config.m,
                FeatureKind::Numeric | FeatureKind::Ordinal => config.n,
            };
            FeatureSpec::new(
                &e.name,
                e.kind,
                e.max_bins.unwrap_or(default),
                config.min_obs_per_bin,
            )
        })
        .collect()
}

fn parse_target(text: &str) -> TargetSpec {
    match ThresholdExpr::parse(text) {
        Ok(expr) => TargetSpec::Threshold(expr),
        Err(_) => TargetSpec::Column(text.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ArtifactRef {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<ArtifactRef>,
    outputs: Vec<ArtifactRef>,
}

fn checksum(path: &Path) -> Result<ArtifactRef> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(ArtifactRef {
        path: path.display().to_string(),
        sha256: hex::encode(digest),
    })
}

fn write_manifest(
    path: &Path,
    subcommand: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config,
        seed,
        inputs: inputs.iter().map(|p| checksum(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| checksum(p)).collect::<Result<_>>()?,
    };
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Manifest path next to a single output file: `preds.csv` -> `preds.manifest.json`.
fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.manifest.json"))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &SimulateArgs, quiet: bool) -> Result<()> {
    let synth = SynthConfig {
        n_rows: args.rows,
        n_professions: args.professions,
        noise_sd: args.noise_sd,
        seed: args.seed,
    };
    let table = generate(&synth)?;
    write_csv(&table, &args.out)?;
    write_manifest(
        &sibling_manifest(&args.out),
        "simulate",
        serde_json::to_value(&synth)?,
        args.seed,
        &[],
        &[&args.out],
    )?;
    if !quiet {
        println!(
            "{}",
            serde_json::json!({ "rows": table.n_rows(), "out": args.out })
        );
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, quiet: bool) -> Result<()> {
    let config = args.config.to_config();
    let specs = load_specs(&args.spec, &config)?;
    let (table, target) = load_csv(&args.data, &specs, &parse_target(&args.target))?;
    let problem = Problem {
        data: &table,
        target: &target,
        family: args.family.into(),
        specs: &specs,
    };
    let fit = run_r2vf(&problem, &config)?;
    for name in &fit.dropped {
        eprintln!("warning: feature '{name}' was dropped during fitting");
    }
    if fit.refit_skipped {
        eprintln!("warning: refit skipped (rank-deficient cluster design); kept the fused model");
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let model_path = args.out_dir.join("model.json");
    let clusters_path = args.out_dir.join("clusters.json");
    let report_path = args.out_dir.join("report.json");
    std::fs::write(&model_path, fit.model.to_json()?)?;
    std::fs::write(
        &clusters_path,
        serde_json::to_string_pretty(&fit.model.clusters)?,
    )?;
    std::fs::write(&report_path, serde_json::to_string_pretty(&fit.report)?)?;
    write_manifest(
        &args.out_dir.join("manifest.json"),
        "fit",
        serde_json::to_value(&config)?,
        config.seed,
        &[&args.data, &args.spec],
        &[&model_path, &clusters_path, &report_path],
    )?;

    if !quiet {
        let clusters: Vec<_> = fit
            .model
            .clusters
            .features
            .iter()
            .map(|f| serde_json::json!({ "feature": f.feature, "clusters": f.n_clusters() }))
            .collect();
        println!(
            "{}",
            serde_json::json!({
                "chosen_lambda": fit.model.chosen_lambda,
                "covariates": fit.model.clusters.covariate_count(),
                "refitted": fit.model.refitted,
                "features": clusters,
                "out_dir": args.out_dir,
            })
        );
    }
    Ok(())
}

/// Load exactly the feature columns a fitted model needs, typed from its
/// encoders (split-coded features are numeric, the rest categorical).
fn load_for_predict(path: &Path, model: &R2vfModel) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut wanted: Vec<(String, usize, bool)> = Vec::new(); // (name, csv idx, numeric)
    for enc in &model.encoder.features {
        let name = enc.feature();
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let numeric = matches!(enc, FeatureEncoder::Split { .. });
        wanted.push((name.to_string(), idx, numeric));
    }

    let mut numeric_cols: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut cat_cols: Vec<Vec<String>> = vec![Vec::new(); wanted.len()];
    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        for (k, (name, idx, numeric)) in wanted.iter().enumerate() {
            let cell = record.get(*idx).unwrap_or("");
            if *numeric {
                let v: f64 = cell.trim().parse().map_err(|_| Error::BadNumericCell {
                    column: name.clone(),
                    row: row_number + 2,
                    value: cell.to_string(),
                })?;
                numeric_cols[k].push(v);
            } else {
                cat_cols[k].push(cell.to_string());
            }
        }
    }

    let mut table = Table::new();
    for (k, (name, _, numeric)) in wanted.iter().enumerate() {
        let data = if *numeric {
            ColumnData::Numeric(std::mem::take(&mut numeric_cols[k]))
        } else {
            ColumnData::Categorical(std::mem::take(&mut cat_cols[k]))
        };
        table.push_column(name, data)?;
    }
    Ok(table)
}

fn cmd_predict(args: &PredictArgs, quiet: bool) -> Result<()> {
    let model = R2vfModel::from_json(&std::fs::read_to_string(&args.model)?)?;
    let table = load_for_predict(&args.data, &model)?;
    let (preds, unseen) = model.predict(&table)?;
    if unseen > 0 {
        eprintln!("warning: {unseen} unseen category values mapped to the reference cluster");
    }

    let mut out = Table::new();
    out.push_column("prediction", ColumnData::Numeric(preds))?;
    write_csv(&out, &args.out)?;
    write_manifest(
        &sibling_manifest(&args.out),
        "predict",
        serde_json::json!({ "model": args.model }),
        0,
        &[&args.model, &args.data],
        &[&args.out],
    )?;
    if !quiet {
        println!(
            "{}",
            serde_json::json!({ "rows": out.n_rows(), "unseen": unseen, "out": args.out })
        );
    }
    Ok(())
}

fn cmd_rank(args: &RankArgs, quiet: bool) -> Result<()> {
    let config = args.config.to_config();
    config.validate()?;
    let specs = load_specs(&args.spec, &config)?;
    let (table, target) = load_csv(&args.data, &specs, &parse_target(&args.target))?;
    let problem = Problem {
        data: &table,
        target: &target,
        family: args.family.into(),
        specs: &specs,
    };
    let split = make_split(table.n_rows(), config.validation_fraction, config.seed)?;
    let step3 = step3_rank(&problem, &split, &config)?;
    let (encoders, dropped) =
        step4_ordinalize(&problem, &step3.ranking, config.m, config.min_obs_per_bin)?;
    for name in &dropped {
        eprintln!("warning: feature '{name}' collapsed to a single bin after ranking");
    }

    let mut features = Vec::new();
    let mut categories = Vec::new();
    let mut scores = Vec::new();
    let mut bins = Vec::new();
    for (feature, feature_scores) in &step3.ranking.scores {
        let scheme = encoders.iter().find_map(|e| match e {
            FeatureEncoder::ScoreSplit { feature: f, scheme, .. } if f == feature => Some(scheme),
            _ => None,
        });
        for (category, &score) in feature_scores {
            features.push(feature.clone());
            categories.push(category.clone());
            scores.push(score);
            bins.push(scheme.map_or(0, |s| s.bin_of(score)) as f64);
        }
    }
    let mut out = Table::new();
    out.push_column("feature", ColumnData::Categorical(features))?;
    out.push_column("category", ColumnData::Categorical(categories))?;
    out.push_column("score", ColumnData::Numeric(scores))?;
    out.push_column("bin", ColumnData::Numeric(bins))?;
    write_csv(&out, &args.out)?;
    write_manifest(
        &sibling_manifest(&args.out),
        "rank",
        serde_json::to_value(&config)?,
        config.seed,
        &[&args.data, &args.spec],
        &[&args.out],
    )?;
    if !quiet {
        println!(
            "{}",
            serde_json::json!({ "categories": out.n_rows(), "out": args.out })
        );
    }
    Ok(())
}

fn method_parser(text: &str) -> std::result::Result<Method, String> {
    Method::parse(text.trim()).map_err(|e| e.to_string())
}

fn cmd_bench(args: &BenchArgs, quiet: bool) -> Result<()> {
    let config = args.config.to_config();
    let mut methods = args.methods.clone();
    methods.sort();
    methods.dedup();

    let (result, inputs) = match args.mode {
        BenchMode::Synthetic => {
            let synth = SynthConfig {
                n_rows: args.rows,
                n_professions: args.professions,
                noise_sd: args.noise_sd,
                seed: args.config.seed,
            };
            (
                run_synthetic_bench(args.reps, &synth, &config, &methods)?,
                Vec::new(),
            )
        }
        BenchMode::Csv => {
            let (data, spec, target) = match (&args.data, &args.spec, &args.target) {
                (Some(d), Some(s), Some(t)) => (d, s, t),
                _ => {
                    return Err(Error::InvalidArgument(
                        "--mode csv needs --data, --spec, and --target".into(),
                    ))
                }
            };
            let specs = load_specs(spec, &config)?;
            let (table, y) = load_csv(data, &specs, &parse_target(target))?;
            (
                run_csv_bench(&table, &y, &specs, args.splits, &config, &methods)?,
                vec![data.as_path(), spec.as_path()],
            )
        }
    };

    for f in &result.failures {
        eprintln!(
            "warning: rep {} method {} failed: {}",
            f.rep,
            f.method.name(),
            f.message
        );
    }
    std::fs::create_dir_all(&args.out_dir)?;
    emit_report(&result, &args.out_dir)?;
    let raw = args.out_dir.join("raw.csv");
    let summary = args.out_dir.join("summary.csv");
    let mut outputs: Vec<&Path> = vec![&raw, &summary];
    let failures = args.out_dir.join("failures.csv");
    if failures.exists() {
        outputs.push(&failures);
    }
    write_manifest(
        &args.out_dir.join("manifest.json"),
        "bench",
        serde_json::to_value(&config)?,
        config.seed,
        &inputs,
        &outputs,
    )?;

    if !quiet {
        let rows: Vec<_> = summarize(&result)
            .into_iter()
            .map(|s| {
                serde_json::json!({
                    "method": s.method.name(),
                    "metric": s.metric_name,
                    "metric_mean": s.metric_mean,
                    "covariates_mean": s.covariates_mean,
                })
            })
            .collect();
        println!(
            "{}",
            serde_json::json!({ "summary": rows, "failures": result.failures.len(), "out_dir": args.out_dir })
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args, cli.quiet),
        Command::Fit(args) => cmd_fit(args, cli.quiet),
        Command::Predict(args) => cmd_predict(args, cli.quiet),
        Command::Rank(args) => cmd_rank(args, cli.quiet),
        Command::Bench(args) => cmd_bench(args, cli.quiet),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
