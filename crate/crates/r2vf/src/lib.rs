//! Ranking to Variable Fusion (R2VF): level clustering for categorical
//! features in penalized GLMs.
//!
//! The method runs in two regularized passes. A ranking fit orders the
//! categories of each nominal feature by their regularized multivariate
//! effect, then those features are re-encoded as ordinal columns and a
//! variable-fusion Lasso (realized through split-coding) merges adjacent
//! levels into clusters across every feature. The crate also ships the
//! OLVF and unregularized baselines, a synthetic data generator, and a
//! benchmark harness around them.

pub mod bench;
pub mod encoding;
pub mod io;
pub mod pipeline;
pub mod solver;
pub mod synth;
pub mod table;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature '{0}' is constant: every value is identical, drop it before fitting")]
    ConstantFeature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("row {row}: cannot parse '{value}' as a number for column '{column}'")]
    BadNumericCell {
        column: String,
        row: usize,
        value: String,
    },

    #[error("binomial family requires a 0/1 target, found {0}")]
    NonBinaryTarget(f64),

    #[error("solver did not converge after {iterations} iterations (max coefficient change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("degenerate lambda grid: {0}")]
    DegenerateGrid(String),

    #[error("design mismatch: {0}")]
    DesignMismatch(String),

    #[error("cluster-level design is rank deficient; skip the refit and keep the fused model")]
    RankDeficientRefit,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
