//! Cross-testing harness: repeated generate/split/fit/score runs over the
//! R2VF, OLVF, and no-regularization methods, with CSV reports of the raw
//! records and per-method summaries.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{self, Problem, R2vfConfig};
use crate::solver::{self, Family};
use crate::synth::{self, SynthConfig};
use crate::table::{FeatureKind, FeatureSpec, Table};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    R2vf,
    Olvf,
    NoRegularization,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::R2vf => "r2vf",
            Method::Olvf => "olvf",
            Method::NoRegularization => "none",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "r2vf" => Ok(Method::R2vf),
            "olvf" => Ok(Method::Olvf),
            "none" => Ok(Method::NoRegularization),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (valid: r2vf, olvf, none)"
            ))),
        }
    }
}

/// One (repetition, method) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRecord {
    pub rep: usize,
    pub method: Method,
    pub metric_name: String,
    pub metric_value: f64,
    pub covariate_count: usize,
    pub wall_time_ms: u64,
    pub chosen_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct BenchFailure {
    pub rep: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct BenchResult {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<BenchFailure>,
}

/// Feature roles for the synthetic table.
pub fn synthetic_specs(config: &R2vfConfig) -> Vec<FeatureSpec> {
    vec![
        FeatureSpec {
            name: "city".into(),
            kind: FeatureKind::Nominal,
            max_bins: config.m,
            min_obs_per_bin: config.min_obs_per_bin,
        },
        FeatureSpec {
            name: "age".into(),
            kind: FeatureKind::Numeric,
            max_bins: config.n,
            min_obs_per_bin: config.min_obs_per_bin,
        },
        FeatureSpec {
            name: "profession".into(),
            kind: FeatureKind::Nominal,
            max_bins: config.m,
            min_obs_per_bin: config.min_obs_per_bin,
        },
    ]
}

fn fifty_fifty(n_rows: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let half = n_rows / 2;
    (rows[..half].to_vec(), rows[half..].to_vec())
}

/// Fit one method on the training rows and score it on the test rows.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    rep: usize,
    method: Method,
    train: &Table,
    train_y: &[f64],
    test: &Table,
    test_y: &[f64],
    family: Family,
    specs: &[FeatureSpec],
    config: &R2vfConfig,
) -> Result<BenchRecord> {
    let problem = Problem {
        data: train,
        target: train_y,
        family,
        specs,
    };
    let start = Instant::now();
    let (preds, covariates, chosen_lambda) = match method {
        Method::R2vf => {
            let fit = pipeline::run_r2vf(&problem, config)?;
            let (preds, _) = fit.model.predict(test)?;
            (preds, fit.model.clusters.covariate_count(), fit.model.chosen_lambda)
        }
        Method::Olvf => {
            let fit = pipeline::fit_olvf(&problem, config)?;
            let (preds, _) = fit.predict(test)?;
            (preds, fit.model.nonzero_count(), fit.model.lambda)
        }
        Method::NoRegularization => {
            let fit = pipeline::fit_unregularized(&problem, config)?;
            let (preds, _) = fit.predict(test)?;
            (preds, fit.model.nonzero_count(), 0.0)
        }
    };
    let wall_time_ms = start.elapsed().as_millis() as u64;
    let metric = solver::metrics(&preds, test_y, family)?;
    Ok(BenchRecord {
        rep,
        method,
        metric_name: metric.name.to_string(),
        metric_value: metric.value,
        covariate_count: covariates,
        wall_time_ms,
        chosen_lambda,
    })
}

fn collect_cells(
    cells: Vec<(usize, Method, Result<BenchRecord>)>,
) -> BenchResult {
    let mut result = BenchResult::default();
    for (rep, method, outcome) in cells {
        match outcome {
            Ok(record) => result.records.push(record),
            Err(e) => {
                log::warn!("rep {rep}, method {}: {e}", method.name());
                result.failures.push(BenchFailure {
                    rep,
                    method,
                    message: e.to_string(),
                });
            }
        }
    }
    result
        .records
        .sort_by(|a, b| (a.rep, a.method).cmp(&(b.rep, b.method)));
    result
        .failures
        .sort_by(|a, b| (a.rep, a.method).cmp(&(b.rep, b.method)));
    result
}

/// Repeated synthetic benchmark: each repetition generates a fresh seeded
/// dataset, splits it 50/50 into train and test, fits every requested
/// method on train, and scores on test. Cells fail independently.
pub fn run_synthetic_bench(
    reps: usize,
    synth: &SynthConfig,
    config: &R2vfConfig,
    methods: &[Method],
) -> Result<BenchResult> {
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    config.validate()?;
    let specs = synthetic_specs(config);
    let cells: Vec<(usize, Method, Result<BenchRecord>)> = (0..reps)
        .into_par_iter()
        .flat_map(|rep| {
            let rep_synth = SynthConfig {
                seed: synth.seed.wrapping_add(rep as u64),
                ..synth.clone()
            };
            let rep_config = R2vfConfig {
                seed: config.seed.wrapping_add(rep as u64),
                ..config.clone()
            };
            let specs = specs.clone();
            let prepared = synth::generate(&rep_synth).and_then(|table| {
                let y = table.numeric("target")?.to_vec();
                let (train_rows, test_rows) =
                    fifty_fifty(table.n_rows(), rep_synth.seed.wrapping_add(0x517));
                let train = table.select_rows(&train_rows);
                let test = table.select_rows(&test_rows);
                let train_y: Vec<f64> = train_rows.iter().map(|&r| y[r]).collect();
                let test_y: Vec<f64> = test_rows.iter().map(|&r| y[r]).collect();
                Ok((train, train_y, test, test_y))
            });
            methods
                .par_iter()
                .map(|&method| match &prepared {
                    Ok((train, train_y, test, test_y)) => (
                        rep,
                        method,
                        run_cell(
                            rep, method, train, train_y, test, test_y, Family::Gaussian,
                            &specs, &rep_config,
                        ),
                    ),
                    Err(e) => (
                        rep,
                        method,
                        Err(Error::InvalidArgument(format!("data generation failed: {e}"))),
                    ),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(collect_cells(cells))
}

/// Repeated random-split benchmark over a fixed table. Uses the binomial
/// family with log-loss when the target is binary, Gaussian RMSE otherwise.
pub fn run_csv_bench(
    table: &Table,
    target: &[f64],
    specs: &[FeatureSpec],
    splits: usize,
    config: &R2vfConfig,
    methods: &[Method],
) -> Result<BenchResult> {
    if splits < 2 {
        return Err(Error::InvalidArgument("splits must be >= 2".into()));
    }
    config.validate()?;
    let family = if target.iter().all(|&y| y == 0.0 || y == 1.0) {
        Family::Binomial
    } else {
        Family::Gaussian
    };
    let cells: Vec<(usize, Method, Result<BenchRecord>)> = (0..splits)
        .into_par_iter()
        .flat_map(|rep| {
            let rep_config = R2vfConfig {
                seed: config.seed.wrapping_add(rep as u64),
                ..config.clone()
            };
            let (train_rows, test_rows) =
                fifty_fifty(table.n_rows(), config.seed.wrapping_add(rep as u64));
            let train = table.select_rows(&train_rows);
            let test = table.select_rows(&test_rows);
            let train_y: Vec<f64> = train_rows.iter().map(|&r| target[r]).collect();
            let test_y: Vec<f64> = test_rows.iter().map(|&r| target[r]).collect();
            methods
                .par_iter()
                .map(|&method| {
                    (
                        rep,
                        method,
                        run_cell(
                            rep, method, &train, &train_y, &test, &test_y, family, specs,
                            &rep_config,
                        ),
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(collect_cells(cells))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-method distribution summary of metric and covariate count.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub metric_name: String,
    pub reps: usize,
    pub metric_mean: f64,
    pub metric_sd: f64,
    pub metric_q25: f64,
    pub metric_median: f64,
    pub metric_q75: f64,
    pub covariates_mean: f64,
    pub covariates_sd: f64,
    pub covariates_q25: f64,
    pub covariates_median: f64,
    pub covariates_q75: f64,
}

pub fn summarize(results: &BenchResult) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = results.records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let cells: Vec<&BenchRecord> = results
                .records
                .iter()
                .filter(|r| r.method == method)
                .collect();
            let mut metric: Vec<f64> = cells.iter().map(|r| r.metric_value).collect();
            metric.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut covs: Vec<f64> = cells.iter().map(|r| r.covariate_count as f64).collect();
            covs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (metric_mean, metric_sd) = mean_sd(&metric);
            let (covariates_mean, covariates_sd) = mean_sd(&covs);
            MethodSummary {
                method,
                metric_name: cells[0].metric_name.clone(),
                reps: cells.len(),
                metric_mean,
                metric_sd,
                metric_q25: quantile(&metric, 0.25),
                metric_median: quantile(&metric, 0.5),
                metric_q75: quantile(&metric, 0.75),
                covariates_mean,
                covariates_sd,
                covariates_q25: quantile(&covs, 0.25),
                covariates_median: quantile(&covs, 0.5),
                covariates_q75: quantile(&covs, 0.75),
            }
        })
        .collect()
}

/// Write `raw.csv` (one row per cell) and `summary.csv` (one row per
/// method) into the directory. Failures, if any, go to `failures.csv`.
pub fn emit_report(results: &BenchResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut raw = csv::Writer::from_path(dir.join("raw.csv"))?;
    raw.write_record([
        "rep",
        "method",
        "metric_name",
        "metric_value",
        "covariate_count",
        "wall_time_ms",
        "chosen_lambda",
    ])?;
    for r in &results.records {
        raw.write_record([
            r.rep.to_string(),
            r.method.name().to_string(),
            r.metric_name.clone(),
            format!("{}", r.metric_value),
            r.covariate_count.to_string(),
            r.wall_time_ms.to_string(),
            format!("{}", r.chosen_lambda),
        ])?;
    }
    raw.flush()?;

    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))?;
    summary.write_record([
        "method",
        "metric_name",
        "reps",
        "metric_mean",
        "metric_sd",
        "metric_q25",
        "metric_median",
        "metric_q75",
        "covariates_mean",
        "covariates_sd",
        "covariates_q25",
        "covariates_median",
        "covariates_q75",
    ])?;
    for s in summarize(results) {
        summary.write_record([
            s.method.name().to_string(),
            s.metric_name.clone(),
            s.reps.to_string(),
            format!("{}", s.metric_mean),
            format!("{}", s.metric_sd),
            format!("{}", s.metric_q25),
            format!("{}", s.metric_median),
            format!("{}", s.metric_q75),
            format!("{}", s.covariates_mean),
            format!("{}", s.covariates_sd),
            format!("{}", s.covariates_q25),
            format!("{}", s.covariates_median),
            format!("{}", s.covariates_q75),
        ])?;
    }
    summary.flush()?;

    if !results.failures.is_empty() {
        let mut failures = csv::Writer::from_path(dir.join("failures.csv"))?;
        failures.write_record(["rep", "method", "error"])?;
        for f in &results.failures {
            failures.write_record([
                f.rep.to_string(),
                f.method.name().to_string(),
                f.message.clone(),
            ])?;
        }
        failures.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.0), 1.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 1.0), 3.0);
        assert_eq!(quantile(&[1.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn bench_is_deterministic() {
        let synth = SynthConfig {
            n_rows: 400,
            n_professions: 20,
            noise_sd: 5.0,
            seed: 3,
        };
        let config = R2vfConfig {
            n: 5,
            m: 10,
            grid_size: 10,
            ..R2vfConfig::default()
        };
        let a = run_synthetic_bench(1, &synth, &config, &[Method::Olvf]).unwrap();
        let b = run_synthetic_bench(1, &synth, &config, &[Method::Olvf]).unwrap();
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        assert_eq!(a.records.len(), 1);
        assert_eq!(a.records[0].metric_value, b.records[0].metric_value);
        assert_eq!(a.records[0].covariate_count, b.records[0].covariate_count);
    }

    #[test]
    fn report_layout() {
        let results = BenchResult {
            records: vec![
                BenchRecord {
                    rep: 0,
                    method: Method::R2vf,
                    metric_name: "rmse".into(),
                    metric_value: 1.0,
                    covariate_count: 3,
                    wall_time_ms: 1,
                    chosen_lambda: 0.5,
                },
                BenchRecord {
                    rep: 0,
                    method: Method::Olvf,
                    metric_name: "rmse".into(),
                    metric_value: 2.0,
                    covariate_count: 9,
                    wall_time_ms: 1,
                    chosen_lambda: 0.7,
                },
                BenchRecord {
                    rep: 1,
                    method: Method::R2vf,
                    metric_name: "rmse".into(),
                    metric_value: 1.5,
                    covariate_count: 4,
                    wall_time_ms: 1,
                    chosen_lambda: 0.4,
                },
            ],
            failures: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&results, dir.path()).unwrap();
        let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
        assert_eq!(raw.lines().count(), 4); // header + 3 records
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3); // header + 2 methods
        assert!(!dir.path().join("failures.csv").exists());

        // empty results still produce header-only files
        let dir = tempfile::tempdir().unwrap();
        emit_report(&BenchResult::default(), dir.path()).unwrap();
        let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
        assert_eq!(raw.lines().count(), 1);
    }
}
