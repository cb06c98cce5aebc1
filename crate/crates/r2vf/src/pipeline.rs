//! The R2VF pipeline: rank nominal categories with a regularized fit,
//! re-encode them as ordinal columns, fuse adjacent levels with an L1
//! penalty on split-coded deltas, and optionally refit unpenalized on the
//! resulting clusters.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    back_transform, build_percentile_bins, one_hot_encode, select_reference, Coding,
    EncodedDesign, Encoder, FeatureBlock, FeatureEncoder, SparseCol,
};
use crate::solver::{
    self, Family, FitReport, GlmModel, PenaltyKind, PenaltySpec,
};
use crate::table::{FeatureKind, FeatureSpec, Table};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingPenalty {
    Lasso,
    Ridge,
}

/// How the reference category of a nominal feature is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// The most common category (default).
    MostCommon,
    /// The category whose target mean is closest to the overall mean.
    NearTargetMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2vfConfig {
    /// Max bins for numeric/ordinal features.
    pub n: usize,
    /// Max bins for ordinalized nominal features.
    pub m: usize,
    pub ranking_penalty: RankingPenalty,
    pub reference_policy: ReferencePolicy,
    pub refit: bool,
    pub grid_size: usize,
    pub grid_ratio: f64,
    pub validation_fraction: f64,
    pub min_obs_per_bin: usize,
    pub seed: u64,
}

impl Default for R2vfConfig {
    fn default() -> Self {
        R2vfConfig {
            n: 30,
            m: 75,
            ranking_penalty: RankingPenalty::Lasso,
            reference_policy: ReferencePolicy::MostCommon,
            refit: true,
            grid_size: 100,
            grid_ratio: 1e-4,
            validation_fraction: 0.25,
            min_obs_per_bin: 5,
            seed: 0,
        }
    }
}

impl R2vfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "n and m must be >= 2, got n={} m={}",
                self.n, self.m
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// A modeling problem: raw data, target values, family, feature roles.
pub struct Problem<'a> {
    pub data: &'a Table,
    pub target: &'a [f64],
    pub family: Family,
    pub specs: &'a [FeatureSpec],
}

/// Train/validation row split, carved once and reused by Steps 3 and 6.
#[derive(Debug, Clone)]
pub struct Split {
    pub train_rows: Vec<usize>,
    pub valid_rows: Vec<usize>,
}

pub fn make_split(n_rows: usize, validation_fraction: f64, seed: u64) -> Result<Split> {
    if n_rows < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 rows to split".into(),
        ));
    }
    let n_valid = ((n_rows as f64 * validation_fraction).round() as usize).clamp(1, n_rows - 1);
    let mut rows: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let valid_rows = rows[..n_valid].to_vec();
    let train_rows = rows[n_valid..].to_vec();
    Ok(Split {
        train_rows,
        valid_rows,
    })
}

/// Per nominal feature: category -> regularized effect score, reference = 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ranking {
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

/// One feature's fused clusters. Cluster indices run in bin order; cluster 0
/// contains the reference bin and has coefficient 0 before any refit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureClusters {
    pub feature: String,
    /// level label -> cluster index, levels in fused (bin) order
    pub levels: Vec<(String, usize)>,
    /// bin index -> cluster index
    pub bin_cluster: Vec<usize>,
    /// cluster index -> coefficient (beta space)
    pub coefficients: Vec<f64>,
}

impl FeatureClusters {
    pub fn n_clusters(&self) -> usize {
        self.coefficients.len()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClusterMap {
    pub features: Vec<FeatureClusters>,
}

impl ClusterMap {
    pub fn feature(&self, name: &str) -> Option<&FeatureClusters> {
        self.features.iter().find(|f| f.feature == name)
    }

    /// Non-reference cluster columns in the final model.
    pub fn covariate_count(&self) -> usize {
        self.features.iter().map(|f| f.n_clusters() - 1).sum()
    }
}

fn build_split_encoder(spec: &FeatureSpec, data: &Table) -> Result<FeatureEncoder> {
    let values = data.numeric(&spec.name)?;
    let scheme = build_percentile_bins(&spec.name, values, spec.max_bins, spec.min_obs_per_bin)?;
    Ok(FeatureEncoder::Split { scheme })
}

fn nominal_reference(
    spec: &FeatureSpec,
    problem: &Problem,
    config: &R2vfConfig,
) -> Result<String> {
    match config.reference_policy {
        ReferencePolicy::MostCommon => {
            select_reference(spec, problem.data.column(&spec.name)?)
        }
        ReferencePolicy::NearTargetMean => {
            let labels = problem.data.categorical(&spec.name)?;
            let overall = problem.target.iter().sum::<f64>() / problem.target.len() as f64;
            let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for (label, &y) in labels.iter().zip(problem.target) {
                let e = sums.entry(label.as_str()).or_insert((0.0, 0));
                e.0 += y;
                e.1 += 1;
            }
            sums.iter()
                .map(|(label, (s, c))| (*label, (s / *c as f64 - overall).abs()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(b.0)))
                .map(|(label, _)| label.to_string())
                .ok_or_else(|| Error::InvalidArgument(format!("empty column '{}'", spec.name)))
        }
    }
}

/// Steps 1-2: percentile-bin ordered features (split-coding), one-hot
/// nominal features against their reference. Constant features are dropped
/// and reported by name.
pub fn initial_encoder(
    problem: &Problem,
    config: &R2vfConfig,
) -> Result<(Encoder, Vec<String>)> {
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    for spec in problem.specs {
        match spec.kind {
            FeatureKind::Numeric | FeatureKind::Ordinal => {
                match build_split_encoder(spec, problem.data) {
                    Ok(enc) => features.push(enc),
                    Err(Error::ConstantFeature(name)) => {
                        log::warn!("feature '{name}' is constant; dropped from the design");
                        dropped.push(name);
                    }
                    Err(e) => return Err(e),
                }
            }
            FeatureKind::Nominal => {
                let reference = nominal_reference(spec, problem, config)?;
                let column = problem.data.categorical(&spec.name)?;
                let (_, labels) = one_hot_encode(column, &reference);
                if labels.is_empty() {
                    log::warn!("feature '{}' has a single category; dropped", spec.name);
                    dropped.push(spec.name.clone());
                    continue;
                }
                features.push(FeatureEncoder::OneHot {
                    feature: spec.name.clone(),
                    labels,
                    reference,
                });
            }
        }
    }
    Ok((Encoder { features }, dropped))
}

/// Output of the ranking fit (Step 3).
pub struct Step3 {
    pub model: GlmModel,
    pub ranking: Ranking,
    pub report: FitReport,
    pub encoder: Encoder,
}

fn search_on_split(
    problem: &Problem,
    split: &Split,
    encoder: &Encoder,
    penalty_kind: PenaltyKind,
    config: &R2vfConfig,
) -> Result<(GlmModel, FitReport)> {
    let train_table = problem.data.select_rows(&split.train_rows);
    let valid_table = problem.data.select_rows(&split.valid_rows);
    let train_y: Vec<f64> = split.train_rows.iter().map(|&r| problem.target[r]).collect();
    let valid_y: Vec<f64> = split.valid_rows.iter().map(|&r| problem.target[r]).collect();
    let (train_design, _) = encoder.encode(&train_table)?;
    let (valid_design, _) = encoder.encode(&valid_table)?;
    let penalty = PenaltySpec::uniform(train_design.n_cols(), penalty_kind, 0.0);
    let grid = solver::lambda_grid(
        &train_design,
        &train_y,
        problem.family,
        &penalty,
        config.grid_size,
        config.grid_ratio,
    )?;
    solver::lambda_search(
        &train_design,
        &train_y,
        &valid_design,
        &valid_y,
        problem.family,
        &penalty,
        &grid,
    )
}

/// Step 3: mixed-penalty ranking fit. Ordered features enter split-coded
/// (variable fusion via deltas), nominal features one-hot; a single penalty
/// kind applies to every penalized column. Nominal coefficients become the
/// ranking scores, with the reference pinned at 0.
pub fn step3_rank(problem: &Problem, split: &Split, config: &R2vfConfig) -> Result<Step3> {
    let (encoder, _) = initial_encoder(problem, config)?;
    let kind = match config.ranking_penalty {
        RankingPenalty::Lasso => PenaltyKind::L1,
        RankingPenalty::Ridge => PenaltyKind::L2,
    };
    let (model, report) = search_on_split(problem, split, &encoder, kind, config)?;

    let mut ranking = Ranking::default();
    for block in &model.blocks {
        if block.coding != Coding::OneHot {
            continue;
        }
        let mut scores = BTreeMap::new();
        scores.insert(block.reference.clone(), 0.0);
        for (offset, level) in block.levels.iter().enumerate() {
            scores.insert(level.clone(), model.coefficients[block.start + offset]);
        }
        ranking.scores.insert(block.feature.clone(), scores);
    }
    Ok(Step3 {
        model,
        ranking,
        report,
        encoder,
    })
}

/// Step 4: replace each nominal column by its ranking score and bin the
/// score column by percentiles with at most `m` bins. Features whose scores
/// collapse to a single bin are dropped (reported by name).
pub fn step4_ordinalize(
    problem: &Problem,
    ranking: &Ranking,
    m: usize,
    min_obs: usize,
) -> Result<(Vec<FeatureEncoder>, Vec<String>)> {
    let mut encoders = Vec::new();
    let mut dropped = Vec::new();
    for (feature, scores) in &ranking.scores {
        let column = problem.data.categorical(feature)?;
        let values: Vec<f64> = column
            .iter()
            .map(|label| {
                scores.get(label).copied().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "ranking for '{feature}' does not cover category '{label}'"
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match build_percentile_bins(feature, &values, m, min_obs) {
            Ok(scheme) => encoders.push(FeatureEncoder::ScoreSplit {
                feature: feature.clone(),
                scores: scores.clone(),
                scheme,
            }),
            Err(Error::ConstantFeature(name)) => {
                log::warn!(
                    "feature '{name}' collapsed to a single bin after ranking; dropped"
                );
                dropped.push(name);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((encoders, dropped))
}

/// Step 5 + 6: split-code every feature (lowest bin as reference) and run
/// the all-L1 fusion fit on the same validation split used in Step 3.
pub fn step6_fuse(
    problem: &Problem,
    split: &Split,
    encoder: &Encoder,
    config: &R2vfConfig,
) -> Result<(GlmModel, FitReport)> {
    search_on_split(problem, split, encoder, PenaltyKind::L1, config)
}

/// Clusters from exact-zero deltas: within each split-coded block, a zero
/// delta merges a bin with its left neighbor. Cluster coefficients are the
/// back-transformed deltas at cluster boundaries.
pub fn extract_clusters(model: &GlmModel, encoder: &Encoder) -> Result<ClusterMap> {
    let mut features = Vec::new();
    for block in &model.blocks {
        if block.coding != Coding::Split {
            return Err(Error::DesignMismatch(format!(
                "extract_clusters needs an all-split-coded design, block '{}' is one-hot",
                block.feature
            )));
        }
        let deltas = &model.coefficients[block.col_range()];
        let betas = back_transform(deltas);
        let n_bins = deltas.len() + 1;
        let mut bin_cluster = Vec::with_capacity(n_bins);
        let mut coefficients = vec![0.0];
        bin_cluster.push(0);
        for i in 1..n_bins {
            if deltas[i - 1] == 0.0 {
                bin_cluster.push(*bin_cluster.last().unwrap());
            } else {
                bin_cluster.push(coefficients.len());
                coefficients.push(betas[i - 1]);
            }
        }

        // Level labels: bin labels for plain split features, original
        // categories (in score order) for ordinalized nominal features.
        let enc = encoder
            .features
            .iter()
            .find(|e| e.feature() == block.feature)
            .ok_or_else(|| {
                Error::DesignMismatch(format!("no encoder for feature '{}'", block.feature))
            })?;
        let levels: Vec<(String, usize)> = match enc {
            FeatureEncoder::Split { scheme } => scheme
                .bin_labels()
                .into_iter()
                .enumerate()
                .map(|(b, label)| (label, bin_cluster[b]))
                .collect(),
            FeatureEncoder::ScoreSplit { scores, scheme, .. } => {
                let mut cats: Vec<(&String, &f64)> = scores.iter().collect();
                cats.sort_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(b.0)));
                cats.into_iter()
                    .map(|(cat, &s)| (cat.clone(), bin_cluster[scheme.bin_of(s)]))
                    .collect()
            }
            FeatureEncoder::OneHot { .. } => unreachable!("one-hot block in fused model"),
        };
        features.push(FeatureClusters {
            feature: block.feature.clone(),
            levels,
            bin_cluster,
            coefficients,
        });
    }
    Ok(ClusterMap { features })
}

/// Cluster index per row for one feature, via the fused encoder.
fn row_clusters(
    fc: &FeatureClusters,
    enc: &FeatureEncoder,
    table: &Table,
) -> Result<(Vec<usize>, u64)> {
    let mut unseen = 0u64;
    let clusters = match enc {
        FeatureEncoder::Split { scheme } => table
            .numeric(&scheme.feature)?
            .iter()
            .map(|&v| fc.bin_cluster[scheme.bin_of(v)])
            .collect(),
        FeatureEncoder::ScoreSplit { feature, scores, scheme } => table
            .categorical(feature)?
            .iter()
            .map(|label| match scores.get(label) {
                Some(&s) => fc.bin_cluster[scheme.bin_of(s)],
                None => {
                    unseen += 1;
                    fc.bin_cluster[0]
                }
            })
            .collect(),
        FeatureEncoder::OneHot { .. } => {
            return Err(Error::DesignMismatch(
                "one-hot encoder has no cluster structure".into(),
            ))
        }
    };
    Ok((clusters, unseen))
}

/// Build the cluster-level one-hot design (one column per non-reference
/// cluster) for a table.
fn cluster_design(
    clusters: &ClusterMap,
    encoder: &Encoder,
    table: &Table,
) -> Result<(EncodedDesign, u64)> {
    let mut cols: Vec<SparseCol> = Vec::new();
    let mut blocks = Vec::new();
    let mut unseen_total = 0;
    for fc in &clusters.features {
        let enc = encoder
            .features
            .iter()
            .find(|e| e.feature() == fc.feature)
            .ok_or_else(|| {
                Error::DesignMismatch(format!("no encoder for feature '{}'", fc.feature))
            })?;
        let (row_cluster, unseen) = row_clusters(fc, enc, table)?;
        unseen_total += unseen;
        let k = fc.n_clusters();
        if k < 2 {
            continue; // single cluster: absorbed by the intercept
        }
        let start = cols.len();
        let mut feature_cols: Vec<SparseCol> = vec![Vec::new(); k - 1];
        for (r, &c) in row_cluster.iter().enumerate() {
            if c > 0 {
                feature_cols[c - 1].push(r as u32);
            }
        }
        cols.extend(feature_cols);
        blocks.push(FeatureBlock {
            feature: fc.feature.clone(),
            coding: Coding::OneHot,
            levels: (1..k).map(|c| format!("cluster_{c}")).collect(),
            reference: "cluster_0".into(),
            start,
        });
    }
    Ok((
        EncodedDesign {
            n_rows: table.n_rows(),
            cols,
            blocks,
        },
        unseen_total,
    ))
}

/// Gram-matrix rank check by Cholesky with a relative pivot tolerance.
/// The intercept column is included.
fn is_full_rank(design: &EncodedDesign) -> bool {
    let p = design.n_cols() + 1;
    let n = design.n_rows as f64;
    let mut gram = vec![vec![0.0f64; p]; p];
    gram[0][0] = n;
    for (j, col) in design.cols.iter().enumerate() {
        gram[0][j + 1] = col.len() as f64;
        gram[j + 1][0] = col.len() as f64;
        for (k, other) in design.cols.iter().enumerate().skip(j) {
            let mut it = other.iter().peekable();
            let mut count = 0.0;
            for &i in col {
                while let Some(&&o) = it.peek() {
                    if o < i {
                        it.next();
                    } else {
                        break;
                    }
                }
                if it.peek() == Some(&&i) {
                    count += 1.0;
                }
            }
            gram[j + 1][k + 1] = count;
            gram[k + 1][j + 1] = count;
        }
    }
    // in-place Cholesky
    let scale = n.max(1.0);
    for i in 0..p {
        for j in 0..=i {
            let mut s = gram[i][j];
            for k in 0..j {
                s -= gram[i][k] * gram[j][k];
            }
            if i == j {
                if s <= 1e-9 * scale {
                    return false;
                }
                gram[i][i] = s.sqrt();
            } else {
                gram[i][j] = s / gram[j][j];
            }
        }
    }
    true
}

/// Step 7: unpenalized refit on the fused clusters. Errors on a rank
/// deficient cluster design so the caller can keep the Step-6 model.
pub fn step7_refit(
    problem: &Problem,
    clusters: &ClusterMap,
    encoder: &Encoder,
) -> Result<GlmModel> {
    let (design, _) = cluster_design(clusters, encoder, problem.data)?;
    if !is_full_rank(&design) {
        return Err(Error::RankDeficientRefit);
    }
    let penalty = PenaltySpec::uniform(design.n_cols(), PenaltyKind::None, 0.0);
    solver::fit(&design, problem.target, problem.family, &penalty, None)
}

/// Apply refit coefficients back onto the cluster map.
fn apply_refit(clusters: &mut ClusterMap, refit: &GlmModel) {
    for fc in &mut clusters.features {
        if fc.n_clusters() < 2 {
            continue;
        }
        if let Some(block) = refit.block(&fc.feature) {
            for c in 1..fc.n_clusters() {
                fc.coefficients[c] = refit.coefficients[block.start + c - 1];
            }
        }
    }
}

/// The deliverable: intercept + per-feature cluster coefficients, plus the
/// encoder needed to map raw rows onto clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct R2vfModel {
    pub family: Family,
    pub intercept: f64,
    pub clusters: ClusterMap,
    pub encoder: Encoder,
    pub chosen_lambda: f64,
    pub refitted: bool,
}

impl R2vfModel {
    /// Predictions on raw rows, plus the count of unseen-category hits.
    pub fn predict(&self, table: &Table) -> Result<(Vec<f64>, u64)> {
        let mut eta = vec![self.intercept; table.n_rows()];
        let mut unseen_total = 0;
        for fc in &self.clusters.features {
            let enc = self
                .encoder
                .features
                .iter()
                .find(|e| e.feature() == fc.feature)
                .ok_or_else(|| {
                    Error::DesignMismatch(format!("no encoder for feature '{}'", fc.feature))
                })?;
            let (row_cluster, unseen) = row_clusters(fc, enc, table)?;
            unseen_total += unseen;
            for (r, &c) in row_cluster.iter().enumerate() {
                eta[r] += fc.coefficients[c];
            }
        }
        let preds = match self.family {
            Family::Gaussian => eta,
            Family::Binomial => eta
                .iter()
                .map(|&e| {
                    let p = 1.0 / (1.0 + (-e).exp());
                    p.clamp(1e-12, 1.0 - 1e-12)
                })
                .collect(),
        };
        Ok((preds, unseen_total))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Everything a full run produces.
pub struct R2vfFit {
    pub model: R2vfModel,
    pub step6_model: GlmModel,
    pub ranking: Ranking,
    pub report: FitReport,
    /// Features dropped at any stage (constant, single category, or
    /// single-bin after ranking).
    pub dropped: Vec<String>,
    /// Set when config.refit was requested but the cluster design was rank
    /// deficient and the Step-6 model was kept instead.
    pub refit_skipped: bool,
}

fn constant_target_fit(problem: &Problem) -> Result<R2vfFit> {
    let mean = problem.target.iter().sum::<f64>() / problem.target.len() as f64;
    let intercept = match problem.family {
        Family::Gaussian => mean,
        Family::Binomial => {
            let p = mean.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        }
    };
    let (encoder, dropped) = fused_encoder_trivial(problem)?;
    let features = encoder
        .features
        .iter()
        .map(|enc| {
            let (scheme, feature) = match enc {
                FeatureEncoder::Split { scheme } => (scheme, scheme.feature.clone()),
                FeatureEncoder::ScoreSplit { feature, scheme, .. } => (scheme, feature.clone()),
                FeatureEncoder::OneHot { .. } => unreachable!(),
            };
            let levels = match enc {
                FeatureEncoder::Split { .. } => scheme
                    .bin_labels()
                    .into_iter()
                    .map(|l| (l, 0usize))
                    .collect(),
                FeatureEncoder::ScoreSplit { scores, .. } => {
                    scores.keys().map(|c| (c.clone(), 0usize)).collect()
                }
                FeatureEncoder::OneHot { .. } => unreachable!(),
            };
            FeatureClusters {
                feature,
                levels,
                bin_cluster: vec![0; scheme.n_bins()],
                coefficients: vec![0.0],
            }
        })
        .collect();
    let clusters = ClusterMap { features };
    let step6_model = GlmModel {
        family: problem.family,
        intercept,
        coefficients: Vec::new(),
        blocks: Vec::new(),
        lambda: 0.0,
    };
    Ok(R2vfFit {
        model: R2vfModel {
            family: problem.family,
            intercept,
            clusters,
            encoder,
            chosen_lambda: 0.0,
            refitted: false,
        },
        step6_model,
        ranking: Ranking::default(),
        report: FitReport {
            lambda_grid: Vec::new(),
            validation_loss: Vec::new(),
            chosen_lambda: 0.0,
            nonzero_count: 0,
            train_loss: 0.0,
            validation_loss_at_chosen: 0.0,
        },
        dropped,
        refit_skipped: false,
    })
}

/// Fused encoder without a ranking step: every category of a nominal
/// feature scored 0. Only used for the degenerate constant-target path.
fn fused_encoder_trivial(problem: &Problem) -> Result<(Encoder, Vec<String>)> {
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    for spec in problem.specs {
        match spec.kind {
            FeatureKind::Numeric | FeatureKind::Ordinal => {
                match build_split_encoder(spec, problem.data) {
                    Ok(enc) => features.push(enc),
                    Err(Error::ConstantFeature(name)) => dropped.push(name),
                    Err(e) => return Err(e),
                }
            }
            FeatureKind::Nominal => {
                let column = problem.data.categorical(&spec.name)?;
                let mut scores = BTreeMap::new();
                for label in column {
                    scores.insert(label.clone(), 0.0);
                }
                features.push(FeatureEncoder::ScoreSplit {
                    feature: spec.name.clone(),
                    scores,
                    scheme: crate::encoding::BinningScheme {
                        feature: spec.name.clone(),
                        edges: vec![f64::INFINITY],
                    },
                });
            }
        }
    }
    Ok((Encoder { features }, dropped))
}

/// Runs Steps 1-7 end to end. Deterministic given config.seed.
pub fn run_r2vf(problem: &Problem, config: &R2vfConfig) -> Result<R2vfFit> {
    config.validate()?;
    if problem.data.n_rows() == 0 || problem.specs.is_empty() {
        return Err(Error::InvalidArgument(
            "need data and at least one feature".into(),
        ));
    }
    if problem.target.len() != problem.data.n_rows() {
        return Err(Error::DesignMismatch(format!(
            "target has {} rows, data has {}",
            problem.target.len(),
            problem.data.n_rows()
        )));
    }
    if problem.target.iter().all(|&y| y == problem.target[0]) {
        return constant_target_fit(problem);
    }

    let split = make_split(problem.data.n_rows(), config.validation_fraction, config.seed)?;
    let step3 = step3_rank(problem, &split, config)?;

    let (score_encoders, _) =
        step4_ordinalize(problem, &step3.ranking, config.m, config.min_obs_per_bin)?;

    // Fused design: ordered features keep their Step-1 schemes, nominal
    // features enter through their score split.
    let mut features = Vec::new();
    for enc in &step3.encoder.features {
        match enc {
            FeatureEncoder::Split { .. } => features.push(enc.clone()),
            FeatureEncoder::OneHot { feature, .. } => {
                if let Some(se) = score_encoders.iter().find(|e| e.feature() == feature) {
                    features.push(se.clone());
                }
            }
            FeatureEncoder::ScoreSplit { .. } => unreachable!("score split before step 4"),
        }
    }
    let encoder = Encoder { features };
    if encoder.features.is_empty() {
        return Err(Error::InvalidArgument(
            "every feature was dropped before the fusion step".into(),
        ));
    }

    let (step6_model, report) = step6_fuse(problem, &split, &encoder, config)?;
    let mut clusters = extract_clusters(&step6_model, &encoder)?;

    let mut refitted = false;
    let mut refit_skipped = false;
    let mut intercept = step6_model.intercept;
    if config.refit {
        match step7_refit(problem, &clusters, &encoder) {
            Ok(refit) => {
                apply_refit(&mut clusters, &refit);
                intercept = refit.intercept;
                refitted = true;
            }
            Err(Error::RankDeficientRefit) => {
                log::warn!("cluster design is rank deficient; keeping the fused model");
                refit_skipped = true;
            }
            Err(e) => return Err(e),
        }
    }

    let mut dropped = Vec::new();
    for spec in problem.specs {
        if !encoder.features.iter().any(|e| e.feature() == spec.name) {
            dropped.push(spec.name.clone());
        }
    }

    Ok(R2vfFit {
        model: R2vfModel {
            family: problem.family,
            intercept,
            clusters,
            encoder,
            chosen_lambda: step6_model.lambda,
            refitted,
        },
        step6_model,
        ranking: step3.ranking,
        report,
        dropped,
        refit_skipped,
    })
}

/// The OLVF baseline: the Step-3 design (one-hot nominals + split-coded
/// ordered features) with a plain L1 penalty, used directly for prediction.
pub struct BaselineFit {
    pub model: GlmModel,
    pub report: FitReport,
    pub encoder: Encoder,
}

impl BaselineFit {
    pub fn predict(&self, table: &Table) -> Result<(Vec<f64>, u64)> {
        let (design, unseen) = self.encoder.encode(table)?;
        Ok((solver::predict(&self.model, &design)?, unseen))
    }
}

pub fn fit_olvf(problem: &Problem, config: &R2vfConfig) -> Result<BaselineFit> {
    config.validate()?;
    let split = make_split(problem.data.n_rows(), config.validation_fraction, config.seed)?;
    let (encoder, _) = initial_encoder(problem, config)?;
    let (model, report) = search_on_split(problem, &split, &encoder, PenaltyKind::L1, config)?;
    Ok(BaselineFit {
        model,
        report,
        encoder,
    })
}

/// The no-regularization baseline: initial bins as covariates, lambda = 0.
pub fn fit_unregularized(problem: &Problem, config: &R2vfConfig) -> Result<BaselineFit> {
    config.validate()?;
    let (encoder, _) = initial_encoder(problem, config)?;
    let (design, _) = encoder.encode(problem.data)?;
    let penalty = PenaltySpec::uniform(design.n_cols(), PenaltyKind::None, 0.0);
    let model = solver::fit(&design, problem.target, problem.family, &penalty, None)?;
    let train_preds = solver::predict(&model, &design)?;
    let train_loss = solver::metrics(&train_preds, problem.target, problem.family)?.value;
    let nonzero = model.nonzero_count();
    Ok(BaselineFit {
        model,
        report: FitReport {
            lambda_grid: vec![0.0],
            validation_loss: Vec::new(),
            chosen_lambda: 0.0,
            nonzero_count: nonzero,
            train_loss,
            validation_loss_at_chosen: f64::NAN,
        },
        encoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::BinningScheme;

    #[test]
    fn extract_clusters_from_deltas() {
        // deltas [0, 3, 0, 0, -1] over 6 bins:
        // clusters {b0,b1}, {b2,b3,b4}, {b5} with betas 0, 3, 2
        let scheme = BinningScheme {
            feature: "x".into(),
            edges: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        };
        let encoder = Encoder {
            features: vec![FeatureEncoder::Split { scheme }],
        };
        let model = GlmModel {
            family: Family::Gaussian,
            intercept: 0.0,
            coefficients: vec![0.0, 3.0, 0.0, 0.0, -1.0],
            blocks: vec![FeatureBlock {
                feature: "x".into(),
                coding: Coding::Split,
                levels: (1..=5).map(|i| format!("b{i}")).collect(),
                reference: "b0".into(),
                start: 0,
            }],
            lambda: 0.1,
        };
        let map = extract_clusters(&model, &encoder).unwrap();
        let fc = map.feature("x").unwrap();
        assert_eq!(fc.bin_cluster, vec![0, 0, 1, 1, 1, 2]);
        assert_eq!(fc.coefficients, vec![0.0, 3.0, 2.0]);
    }

    #[test]
    fn all_zero_deltas_single_cluster() {
        let scheme = BinningScheme {
            feature: "x".into(),
            edges: vec![1.0, 2.0],
        };
        let encoder = Encoder {
            features: vec![FeatureEncoder::Split { scheme }],
        };
        let model = GlmModel {
            family: Family::Gaussian,
            intercept: 0.0,
            coefficients: vec![0.0, 0.0],
            blocks: vec![FeatureBlock {
                feature: "x".into(),
                coding: Coding::Split,
                levels: vec!["b1".into(), "b2".into()],
                reference: "b0".into(),
                start: 0,
            }],
            lambda: 1.0,
        };
        let map = extract_clusters(&model, &encoder).unwrap();
        let fc = map.feature("x").unwrap();
        assert_eq!(fc.n_clusters(), 1);
        assert_eq!(map.covariate_count(), 0);

        // all nonzero -> one cluster per bin
        let model = GlmModel {
            coefficients: vec![1.0, -1.0],
            ..model
        };
        let map = extract_clusters(&model, &encoder).unwrap();
        assert_eq!(map.feature("x").unwrap().n_clusters(), 3);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let a = make_split(100, 0.25, 7).unwrap();
        let b = make_split(100, 0.25, 7).unwrap();
        assert_eq!(a.train_rows, b.train_rows);
        assert_eq!(a.valid_rows.len(), 25);
        let mut all: Vec<usize> = a.train_rows.iter().chain(&a.valid_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let c = make_split(100, 0.25, 8).unwrap();
        assert_ne!(a.valid_rows, c.valid_rows);
    }

    #[test]
    fn rank_check_catches_duplicate_columns() {
        let col: SparseCol = vec![0, 2];
        let design = EncodedDesign {
            n_rows: 4,
            cols: vec![col.clone(), col],
            blocks: Vec::new(),
        };
        assert!(!is_full_rank(&design));
        let design = EncodedDesign {
            n_rows: 4,
            cols: vec![vec![0, 2], vec![1]],
            blocks: Vec::new(),
        };
        assert!(is_full_rank(&design));
    }
}
