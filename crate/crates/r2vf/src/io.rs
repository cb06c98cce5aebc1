//! CSV ingestion and emission. Loading is spec-driven: only declared
//! columns are read, each with its declared type. Binary targets can be
//! derived on the fly from a threshold expression such as `DEATHS>0`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::table::{ColumnData, FeatureKind, FeatureSpec, Table};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl ThresholdOp {
    fn apply(self, value: f64, threshold: f64) -> bool {
        match self {
            ThresholdOp::Gt => value > threshold,
            ThresholdOp::Ge => value >= threshold,
            ThresholdOp::Lt => value < threshold,
            ThresholdOp::Le => value <= threshold,
            ThresholdOp::Eq => value == threshold,
            ThresholdOp::Ne => value != threshold,
        }
    }
}

/// `<column> <op> <number>` with op in {>, >=, <, <=, ==, !=}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdExpr {
    pub column: String,
    pub op: ThresholdOp,
    pub value: f64,
}

impl ThresholdExpr {
    pub fn parse(text: &str) -> Result<Self> {
        // two-character operators first
        for (token, op) in [
            (">=", ThresholdOp::Ge),
            ("<=", ThresholdOp::Le),
            ("==", ThresholdOp::Eq),
            ("!=", ThresholdOp::Ne),
            (">", ThresholdOp::Gt),
            ("<", ThresholdOp::Lt),
        ] {
            if let Some(pos) = text.find(token) {
                let column = text[..pos].trim();
                let number = text[pos + token.len()..].trim();
                if column.is_empty() {
                    break;
                }
                let value: f64 = number.parse().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "threshold expression '{text}': cannot parse '{number}' as a number"
                    ))
                })?;
                return Ok(ThresholdExpr {
                    column: column.to_string(),
                    op,
                    value,
                });
            }
        }
        Err(Error::InvalidArgument(format!(
            "cannot parse threshold expression '{text}' (expected <column> <op> <number>)"
        )))
    }

    pub fn evaluate(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&v| f64::from(u8::from(self.op.apply(v, self.value))))
            .collect()
    }
}

/// How the target column is obtained from the raw file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetSpec {
    /// A numeric column used as-is.
    Column(String),
    /// A binary indicator derived from a numeric column.
    Threshold(ThresholdExpr),
}

impl TargetSpec {
    pub fn source_column(&self) -> &str {
        match self {
            TargetSpec::Column(name) => name,
            TargetSpec::Threshold(expr) => &expr.column,
        }
    }
}

/// Load the declared feature columns (typed per spec) plus the target
/// source column; any other CSV column is ignored. The returned target
/// vector has thresholding already applied when requested.
pub fn load_csv(path: &Path, specs: &[FeatureSpec], target: &TargetSpec) -> Result<(Table, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let mut wanted: BTreeMap<String, (usize, bool)> = BTreeMap::new(); // name -> (csv idx, numeric)
    for spec in specs {
        let numeric = matches!(spec.kind, FeatureKind::Numeric | FeatureKind::Ordinal);
        wanted.insert(spec.name.clone(), (index_of(&spec.name)?, numeric));
    }
    let target_name = target.source_column().to_string();
    let target_idx = index_of(&target_name)?;

    let mut numeric_cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cat_cols: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut target_raw: Vec<f64> = Vec::new();

    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        for (name, &(idx, numeric)) in &wanted {
            let cell = record.get(idx).unwrap_or("");
            if numeric {
                let v: f64 = cell.trim().parse().map_err(|_| Error::BadNumericCell {
                    column: name.clone(),
                    row: row_number + 2, // 1-based, after the header
                    value: cell.to_string(),
                })?;
                numeric_cols.entry(name.clone()).or_default().push(v);
            } else {
                cat_cols.entry(name.clone()).or_default().push(cell.to_string());
            }
        }
        let cell = record.get(target_idx).unwrap_or("");
        let v: f64 = cell.trim().parse().map_err(|_| Error::BadNumericCell {
            column: target_name.clone(),
            row: row_number + 2,
            value: cell.to_string(),
        })?;
        target_raw.push(v);
    }

    let mut table = Table::new();
    for spec in specs {
        if let Some(v) = numeric_cols.remove(&spec.name) {
            table.push_column(&spec.name, ColumnData::Numeric(v))?;
        } else if let Some(v) = cat_cols.remove(&spec.name) {
            table.push_column(&spec.name, ColumnData::Categorical(v))?;
        }
    }
    let target_values = match target {
        TargetSpec::Column(_) => target_raw,
        TargetSpec::Threshold(expr) => expr.evaluate(&target_raw),
    };
    Ok((table, target_values))
}

/// Write a table as RFC-4180-style CSV with a header row. Numeric cells use
/// shortest-roundtrip formatting, so re-reading reproduces the exact values.
pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(table.names())?;
    let n = table.n_rows();
    for r in 0..n {
        let mut record: Vec<String> = Vec::with_capacity(table.n_cols());
        for name in table.names() {
            match table.column(name)? {
                ColumnData::Numeric(v) => record.push(format!("{}", v[r])),
                ColumnData::Categorical(v) => record.push(v[r].clone()),
            }
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::FeatureKind;
    use std::io::Write;

    fn specs() -> Vec<FeatureSpec> {
        vec![
            FeatureSpec::new("x", FeatureKind::Numeric, 4, 1).unwrap(),
            FeatureSpec::new("c", FeatureKind::Nominal, 4, 1).unwrap(),
        ]
    }

    #[test]
    fn load_typed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "x,c,ignored,y\n1.5,a,zz,3\n2,b,zz,4\n3,a,zz,5").unwrap();
        let (table, target) =
            load_csv(&path, &specs(), &TargetSpec::Column("y".into())).unwrap();
        assert_eq!(table.n_rows(), 3);
        assert_eq!(table.numeric("x").unwrap(), &[1.5, 2.0, 3.0]);
        assert_eq!(table.categorical("c").unwrap()[1], "b");
        assert_eq!(target, vec![3.0, 4.0, 5.0]);
        assert!(table.column("ignored").is_err());
    }

    #[test]
    fn threshold_expression() {
        let expr = ThresholdExpr::parse("DEATHS>0").unwrap();
        assert_eq!(expr.column, "DEATHS");
        assert_eq!(expr.evaluate(&[0.0, 2.0, 1.0]), vec![0.0, 1.0, 1.0]);
        let expr = ThresholdExpr::parse("HOUR <= 12").unwrap();
        assert_eq!(expr.op, ThresholdOp::Le);
        assert_eq!(expr.value, 12.0);
        assert!(ThresholdExpr::parse("DEATHS").is_err());
        assert!(ThresholdExpr::parse(">3").is_err());
    }

    #[test]
    fn missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,y\n1,2\n").unwrap();
        let err = load_csv(&path, &specs(), &TargetSpec::Column("y".into()));
        match err {
            Err(Error::MissingColumn(name)) => assert_eq!(name, "c"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn bad_numeric_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x,c,y\n1,a,2\noops,b,3\n").unwrap();
        let err = load_csv(&path, &specs(), &TargetSpec::Column("y".into()));
        match err {
            Err(Error::BadNumericCell { column, row, .. }) => {
                assert_eq!(column, "x");
                assert_eq!(row, 3);
            }
            other => panic!("expected BadNumericCell, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut table = Table::new();
        table
            .push_column("x", ColumnData::Numeric(vec![0.1, 2.0 / 3.0, -1e-9]))
            .unwrap();
        table
            .push_column("c", ColumnData::Categorical(vec!["a".into(), "b,with comma".into(), "".into()]))
            .unwrap();
        write_csv(&table, &path).unwrap();
        let specs = vec![
            FeatureSpec::new("x", FeatureKind::Numeric, 4, 1).unwrap(),
            FeatureSpec::new("c", FeatureKind::Nominal, 4, 1).unwrap(),
        ];
        let (back, target) = load_csv(&path, &specs, &TargetSpec::Column("x".into())).unwrap();
        assert_eq!(back.numeric("x").unwrap(), table.numeric("x").unwrap());
        assert_eq!(back.categorical("c").unwrap(), table.categorical("c").unwrap());
        assert_eq!(target, table.numeric("x").unwrap());
    }
}
