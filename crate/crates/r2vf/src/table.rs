//! A minimal columnar table: just enough to carry raw data into encoding.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Role a raw column plays in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Ordinal,
    Nominal,
}

/// Declares how one column enters the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Maximum bin count for this feature (`n` for numeric/ordinal columns;
    /// nominal columns are capped later, after ranking, by `m`).
    pub max_bins: usize,
    pub min_obs_per_bin: usize,
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind, max_bins: usize, min_obs_per_bin: usize) -> Result<Self> {
        if max_bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "max_bins for '{name}' must be >= 2, got {max_bins}"
            )));
        }
        if min_obs_per_bin == 0 {
            return Err(Error::InvalidArgument(format!(
                "min_obs_per_bin for '{name}' must be positive"
            )));
        }
        Ok(FeatureSpec {
            name: name.to_string(),
            kind,
            max_bins,
            min_obs_per_bin,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[String]> {
        match self {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }
}

/// Column-oriented table with named columns of equal length.
#[derive(Debug, Clone, Default)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<ColumnData>,
}

impl Table {
    pub fn new() -> Self {
        Table::default()
    }

    pub fn push_column(&mut self, name: &str, data: ColumnData) -> Result<()> {
        if let Some(first) = self.columns.first() {
            if first.len() != data.len() {
                return Err(Error::InvalidArgument(format!(
                    "column '{name}' has {} rows, table has {}",
                    data.len(),
                    first.len()
                )));
            }
        }
        self.names.push(name.to_string());
        self.columns.push(data);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        self.column(name)?
            .as_numeric()
            .ok_or_else(|| Error::InvalidArgument(format!("column '{name}' is not numeric")))
    }

    pub fn categorical(&self, name: &str) -> Result<&[String]> {
        self.column(name)?
            .as_categorical()
            .ok_or_else(|| Error::InvalidArgument(format!("column '{name}' is not categorical")))
    }

    /// New table containing the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
                ColumnData::Categorical(v) => {
                    ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
                }
            })
            .collect();
        Table {
            names: self.names.clone(),
            columns,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_rejects_single_bin() {
        assert!(FeatureSpec::new("x", FeatureKind::Numeric, 1, 1).is_err());
        assert!(FeatureSpec::new("x", FeatureKind::Numeric, 2, 1).is_ok());
    }

    #[test]
    fn mismatched_column_length_rejected() {
        let mut t = Table::new();
        t.push_column("a", ColumnData::Numeric(vec![1.0, 2.0])).unwrap();
        let err = t.push_column("b", ColumnData::Numeric(vec![1.0]));
        assert!(err.is_err());
    }

    #[test]
    fn select_rows_reorders() {
        let mut t = Table::new();
        t.push_column("a", ColumnData::Numeric(vec![1.0, 2.0, 3.0])).unwrap();
        let s = t.select_rows(&[2, 0]);
        assert_eq!(s.numeric("a").unwrap(), &[3.0, 1.0]);
    }
}
