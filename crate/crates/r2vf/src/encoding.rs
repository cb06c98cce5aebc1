//! Design-matrix construction: percentile binning, one-hot encoding,
//! split-coding, reference selection, and the delta/beta back-transformation.
//!
//! Split-coding turns an ordered column into cumulative indicators
//! `b_i = 1 iff value >= edge_i`, so a standard L1 penalty on the fitted
//! delta coefficients is exactly the variable-fusion penalty on adjacent
//! bin coefficients.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::table::{ColumnData, FeatureKind, FeatureSpec, Table};
use crate::{Error, Result};

/// Left bin edges for one feature. Bin 0 (the reference) is everything
/// below the first edge; bin i covers `[edges[i-1], edges[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub feature: String,
    pub edges: Vec<f64>,
}

impl BinningScheme {
    /// Total bin count, reference included.
    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Bin index of a value: the number of edges it clears.
    /// Values below the first edge land in the reference bin; values above
    /// the last edge land in the top bin.
    pub fn bin_of(&self, value: f64) -> usize {
        self.edges.iter().take_while(|&&e| value >= e).count()
    }

    /// Human-readable label per bin, in bin order.
    pub fn bin_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.n_bins());
        labels.push(format!("<{}", self.edges[0]));
        for i in 0..self.edges.len() {
            if i + 1 < self.edges.len() {
                labels.push(format!("[{}, {})", self.edges[i], self.edges[i + 1]));
            } else {
                labels.push(format!(">={}", self.edges[i]));
            }
        }
        labels
    }
}

/// Percentile binning with a minimum-occupancy threshold.
///
/// Candidate edges are empirical percentiles at i/max_bins. Bins too thin
/// to hold `min_obs` observations are merged greedily left to right; a
/// trailing thin bin is folded into its left neighbor.
pub fn build_percentile_bins(
    feature: &str,
    values: &[f64],
    max_bins: usize,
    min_obs: usize,
) -> Result<BinningScheme> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no values to bin for '{feature}'"
        )));
    }
    if max_bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "max_bins must be >= 2, got {max_bins}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if sorted[0] == sorted[n - 1] {
        return Err(Error::ConstantFeature(feature.to_string()));
    }

    // Candidate left edges at empirical percentiles, deduplicated, and
    // never at or below the minimum (that would leave an empty reference bin
    // only for it to be merged away again).
    let mut candidates: Vec<f64> = Vec::new();
    for i in 1..max_bins {
        let idx = (i * n) / max_bins;
        let e = sorted[idx.min(n - 1)];
        if e > sorted[0] && candidates.last().map_or(true, |&last| e > last) {
            candidates.push(e);
        }
    }
    if candidates.is_empty() {
        // max_bins 2 with a lopsided column can produce no usable cut;
        // fall back to the first value strictly above the minimum.
        let above = sorted.iter().copied().find(|&v| v > sorted[0]).unwrap();
        candidates.push(above);
    }

    // Occupancy per candidate bin.
    let scheme = BinningScheme {
        feature: feature.to_string(),
        edges: candidates,
    };
    let mut counts = vec![0usize; scheme.n_bins()];
    for &v in values {
        counts[scheme.bin_of(v)] += 1;
    }

    // Greedy left-to-right merge of thin bins.
    let mut edges: Vec<f64> = Vec::new();
    let mut acc = counts[0];
    for (i, &edge) in scheme.edges.iter().enumerate() {
        if acc < min_obs {
            acc += counts[i + 1];
        } else {
            edges.push(edge);
            acc = counts[i + 1];
        }
    }
    if acc < min_obs {
        edges.pop();
    }
    if edges.is_empty() {
        return Err(Error::ConstantFeature(feature.to_string()));
    }
    Ok(BinningScheme {
        feature: feature.to_string(),
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coding {
    OneHot,
    Split,
}

/// Column-range metadata tying design columns back to a feature.
/// `levels` holds the non-reference level labels in column order; the
/// reference level carries no column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub feature: String,
    pub coding: Coding,
    pub levels: Vec<String>,
    pub reference: String,
    pub start: usize,
}

impl FeatureBlock {
    pub fn n_cols(&self) -> usize {
        self.levels.len()
    }

    pub fn col_range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.levels.len()
    }
}

/// A design column stored as the sorted row indices holding a 1.
pub type SparseCol = Vec<u32>;

/// Binary design matrix in sparse column form plus block metadata.
#[derive(Debug, Clone)]
pub struct EncodedDesign {
    pub n_rows: usize,
    pub cols: Vec<SparseCol>,
    pub blocks: Vec<FeatureBlock>,
}

impl EncodedDesign {
    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    /// Dense 0/1 row, mostly for tests and tiny designs.
    pub fn dense_row(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols.len()];
        for (j, col) in self.cols.iter().enumerate() {
            if col.binary_search(&(row as u32)).is_ok() {
                out[j] = 1.0;
            }
        }
        out
    }
}

/// Most frequent label, ties broken by lexicographic order.
fn most_common(column: &[String]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in column {
        *counts.entry(label.as_str()).or_insert(0) += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(label, _)| label.to_string())
        .unwrap()
}

/// Reference level per the feature kind: lowest bin for ordered features,
/// most common category (lexicographic tie-break) for nominal ones.
pub fn select_reference(spec: &FeatureSpec, column: &ColumnData) -> Result<String> {
    if column.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty column '{}'",
            spec.name
        )));
    }
    match spec.kind {
        FeatureKind::Nominal => {
            let labels = column.as_categorical().ok_or_else(|| {
                Error::InvalidArgument(format!("nominal column '{}' is not categorical", spec.name))
            })?;
            Ok(most_common(labels))
        }
        FeatureKind::Numeric | FeatureKind::Ordinal => {
            // Ordered features always reference the lowest bin; the label is
            // produced by the binning scheme.
            Ok("<lowest bin>".to_string())
        }
    }
}

/// One-hot columns for every non-reference label, labels in sorted order.
pub fn one_hot_encode(column: &[String], reference: &str) -> (Vec<SparseCol>, Vec<String>) {
    let mut labels: Vec<String> = column
        .iter()
        .filter(|l| l.as_str() != reference)
        .cloned()
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    labels.sort();
    let cols = encode_one_hot_with(column, &labels);
    (cols, labels)
}

/// Encode against a fixed training label set. Labels outside the set
/// (the reference or anything unseen) produce an all-zero row.
pub fn encode_one_hot_with(column: &[String], labels: &[String]) -> Vec<SparseCol> {
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut cols: Vec<SparseCol> = vec![Vec::new(); labels.len()];
    for (r, label) in column.iter().enumerate() {
        if let Some(&j) = index.get(label.as_str()) {
            cols[j].push(r as u32);
        }
    }
    cols
}

/// Split-coded columns: column i holds the rows with value >= edges[i].
pub fn split_code(values: &[f64], scheme: &BinningScheme) -> Vec<SparseCol> {
    let mut cols: Vec<SparseCol> = vec![Vec::new(); scheme.edges.len()];
    for (r, &v) in values.iter().enumerate() {
        for (i, &e) in scheme.edges.iter().enumerate() {
            if v >= e {
                cols[i].push(r as u32);
            } else {
                break;
            }
        }
    }
    cols
}

/// Cumulative sum of deltas: beta_i = sum of deltas 1..=i.
pub fn back_transform(deltas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(deltas.len());
    let mut acc = 0.0;
    for &d in deltas {
        acc += d;
        out.push(acc);
    }
    out
}

/// Per-feature encoder fitted on training data, able to re-encode new rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FeatureEncoder {
    /// Nominal feature as one-hot columns against a fixed label set.
    OneHot {
        feature: String,
        labels: Vec<String>,
        reference: String,
    },
    /// Numeric/ordinal feature split-coded on its binning scheme.
    Split { scheme: BinningScheme },
    /// Nominal feature mapped through ranking scores, then split-coded on a
    /// scheme over those scores. Unseen categories produce a zero row.
    ScoreSplit {
        feature: String,
        scores: BTreeMap<String, f64>,
        scheme: BinningScheme,
    },
}

impl FeatureEncoder {
    pub fn feature(&self) -> &str {
        match self {
            FeatureEncoder::OneHot { feature, .. } => feature,
            FeatureEncoder::Split { scheme } => &scheme.feature,
            FeatureEncoder::ScoreSplit { feature, .. } => feature,
        }
    }
}

/// Ordered set of feature encoders defining a full design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    pub features: Vec<FeatureEncoder>,
}

impl Encoder {
    /// Build the design for a table. Returns the design and the number of
    /// unseen category occurrences mapped to the reference.
    pub fn encode(&self, table: &Table) -> Result<(EncodedDesign, u64)> {
        let n_rows = table.n_rows();
        let mut cols: Vec<SparseCol> = Vec::new();
        let mut blocks: Vec<FeatureBlock> = Vec::new();
        let mut unseen_total = 0u64;

        for enc in &self.features {
            let start = cols.len();
            match enc {
                FeatureEncoder::OneHot {
                    feature,
                    labels,
                    reference,
                } => {
                    let column = table.categorical(feature)?;
                    let block_cols = encode_one_hot_with(column, labels);
                    let unseen = column
                        .iter()
                        .filter(|l| l.as_str() != reference && !labels.contains(l))
                        .count() as u64;
                    if unseen > 0 {
                        log::warn!(
                            "{unseen} rows of '{feature}' hold unseen categories; mapped to reference"
                        );
                        unseen_total += unseen;
                    }
                    cols.extend(block_cols);
                    blocks.push(FeatureBlock {
                        feature: feature.clone(),
                        coding: Coding::OneHot,
                        levels: labels.clone(),
                        reference: reference.clone(),
                        start,
                    });
                }
                FeatureEncoder::Split { scheme } => {
                    let values = table.numeric(&scheme.feature)?;
                    cols.extend(split_code(values, scheme));
                    let labels = scheme.bin_labels();
                    blocks.push(FeatureBlock {
                        feature: scheme.feature.clone(),
                        coding: Coding::Split,
                        levels: labels[1..].to_vec(),
                        reference: labels[0].clone(),
                        start,
                    });
                }
                FeatureEncoder::ScoreSplit {
                    feature,
                    scores,
                    scheme,
                } => {
                    let column = table.categorical(feature)?;
                    let mut values = Vec::with_capacity(column.len());
                    let mut unseen = 0u64;
                    for label in column {
                        match scores.get(label) {
                            Some(&s) => values.push(s),
                            None => {
                                // Reference policy: a zero row, i.e. a score
                                // below every edge.
                                values.push(f64::NEG_INFINITY);
                                unseen += 1;
                            }
                        }
                    }
                    if unseen > 0 {
                        log::warn!(
                            "{unseen} rows of '{feature}' hold unseen categories; mapped to reference"
                        );
                        unseen_total += unseen;
                    }
                    cols.extend(split_code(&values, scheme));
                    let labels = scheme.bin_labels();
                    blocks.push(FeatureBlock {
                        feature: feature.clone(),
                        coding: Coding::Split,
                        levels: labels[1..].to_vec(),
                        reference: labels[0].clone(),
                        start,
                    });
                }
            }
        }
        Ok((
            EncodedDesign {
                n_rows,
                cols,
                blocks,
            },
            unseen_total,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::FeatureKind;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn uniform_data_splits_evenly() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let scheme = build_percentile_bins("x", &values, 4, 1).unwrap();
        assert_eq!(scheme.n_bins(), 4);
        let mut counts = vec![0usize; 4];
        for &v in &values {
            counts[scheme.bin_of(v)] += 1;
        }
        assert_eq!(counts, vec![25, 25, 25, 25]);
    }

    #[test]
    fn greedy_merge_enforces_min_obs() {
        // Oracle: enumerate percentile cuts, merge until every bin >= 30.
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let scheme = build_percentile_bins("x", &values, 200, 30).unwrap();
        assert_eq!(scheme.n_bins(), 3);
        let mut counts = vec![0usize; scheme.n_bins()];
        for &v in &values {
            counts[scheme.bin_of(v)] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 30), "counts {counts:?}");
    }

    #[test]
    fn constant_feature_errors() {
        let err = build_percentile_bins("x", &[5.0, 5.0, 5.0], 4, 1);
        assert!(matches!(err, Err(Error::ConstantFeature(_))));
    }

    #[test]
    fn one_hot_basic() {
        let col = labels(&["a", "b", "a", "c"]);
        let (cols, lvls) = one_hot_encode(&col, "a");
        assert_eq!(lvls, labels(&["b", "c"]));
        assert_eq!(cols[0], vec![1]);
        assert_eq!(cols[1], vec![3]);
    }

    #[test]
    fn one_hot_only_reference_present() {
        let col = labels(&["a", "a"]);
        let (cols, lvls) = one_hot_encode(&col, "a");
        assert!(cols.is_empty());
        assert!(lvls.is_empty());
    }

    #[test]
    fn unseen_label_encodes_to_zero_row() {
        let train = labels(&["a", "b", "c"]);
        let (_, lvls) = one_hot_encode(&train, "a");
        let cols = encode_one_hot_with(&labels(&["zz"]), &lvls);
        assert!(cols.iter().all(|c| c.is_empty()));
    }

    #[test]
    fn split_code_step_patterns() {
        let scheme = BinningScheme {
            feature: "x".into(),
            edges: vec![10.0, 20.0, 30.0, 40.0],
        };
        let rows = |v: f64| -> Vec<u8> {
            split_code(&[v], &scheme)
                .iter()
                .map(|c| u8::from(!c.is_empty()))
                .collect()
        };
        assert_eq!(rows(37.0), vec![1, 1, 1, 0]);
        assert_eq!(rows(5.0), vec![0, 0, 0, 0]);
        assert_eq!(rows(40.0), vec![1, 1, 1, 1]);
    }

    #[test]
    fn reference_selection() {
        let nominal = FeatureSpec::new("f", FeatureKind::Nominal, 10, 1).unwrap();
        let col = ColumnData::Categorical(labels(&["x", "y", "y"]));
        assert_eq!(select_reference(&nominal, &col).unwrap(), "y");
        let tie = ColumnData::Categorical(labels(&["x", "y"]));
        assert_eq!(select_reference(&nominal, &tie).unwrap(), "x");
    }

    #[test]
    fn back_transform_cumsum() {
        assert_eq!(back_transform(&[2.0, -1.0, 0.0, 3.0]), vec![2.0, 1.0, 1.0, 4.0]);
        assert!(back_transform(&[]).is_empty());
        assert_eq!(back_transform(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn bin_of_clamps_out_of_range() {
        let scheme = BinningScheme {
            feature: "x".into(),
            edges: vec![0.0, 1.0],
        };
        assert_eq!(scheme.bin_of(-100.0), 0);
        assert_eq!(scheme.bin_of(100.0), 2);
    }
}
