//! Mixed-type table preprocessing.
//!
//! Turns raw tables (continuous and categorical columns, with missing
//! entries) into the standardized numeric matrix consumed by graph
//! estimation and the model:
//!
//! 1. Columns with more than 70% missing entries are dropped, then rows with
//!    missing continuous entries are deleted listwise.
//! 2. Categorical columns are one-hot encoded. Up to 10 distinct categories
//!    get a column each; above that the 9 most frequent categories are kept
//!    plus an `Other` column. Missing entries become a `Missing` category.
//! 3. Continuous columns are standardized to zero mean and unit variance
//!    (population std). Constant columns become all-zero and are flagged.
//!
//! Splits are 60:20:20 by default and stratified for classification using
//! largest-remainder rounding per class, so each class's per-split share
//! matches its global share within one sample.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared or inferred type of a raw column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

/// One raw column: name, kind, and optional-valued cells of equal length.
#[derive(Debug, Clone)]
pub struct RawColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<Option<String>>,
}

/// A raw mixed-type table. All columns have the same number of rows.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    /// Checks the structural invariants: equal column lengths and numeric
    /// parseability of continuous cells.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_rows();
        if m == 0 {
            return Err(Error::EmptyInput("table has no rows".into()));
        }
        for c in &self.columns {
            if c.values.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "column {} has {} rows, expected {m}",
                    c.name,
                    c.values.len()
                )));
            }
            if c.kind == ColumnKind::Continuous {
                for (i, v) in c.values.iter().enumerate() {
                    if let Some(s) = v {
                        if s.parse::<f64>().is_err() {
                            return Err(Error::InvalidArgument(format!(
                                "continuous column {} row {i} is not numeric: {s:?}",
                                c.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Processed-column metadata linking back to the original feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeMeta {
    pub original_feature: usize,
    pub original_name: String,
    /// Category label for one-hot columns, `None` for continuous ones.
    pub category_label: Option<String>,
}

/// Standardization statistics for one continuous column.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    pub constant: bool,
}

/// Preprocessed numeric table plus the metadata graph estimation needs.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    /// m x d numeric matrix.
    pub data: Array2<f64>,
    /// Per processed column.
    pub node_meta: Vec<NodeMeta>,
    /// Partition of column indices into one-hot groups; singleton for
    /// continuous columns. `groups[g]` lists the columns of original
    /// feature `g` in order.
    pub groups: Vec<Vec<usize>>,
    /// Standardization stats for continuous columns, `None` for one-hot.
    pub stats: Vec<Option<ColumnStats>>,
    /// Non-fatal notices (all-missing columns, constant columns).
    pub warnings: Vec<String>,
}

impl FeatureTable {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }
}

fn is_missing(cell: &Option<String>) -> bool {
    match cell {
        None => true,
        Some(s) => s.is_empty() || s == "NA",
    }
}

/// Drops columns with more than 70% missing entries, then rows with missing
/// continuous entries. Categorical missing entries survive and become the
/// `Missing` category during encoding. Idempotent.
pub fn handle_missing(table: &RawTable) -> Result<RawTable> {
    Ok(handle_missing_indexed(table)?.0)
}

/// Like [`handle_missing`], also returning the surviving row indices so
/// callers can filter labels consistently.
pub fn handle_missing_indexed(table: &RawTable) -> Result<(RawTable, Vec<usize>)> {
    table.validate()?;
    let m = table.n_rows();
    let kept_cols: Vec<&RawColumn> = table
        .columns
        .iter()
        .filter(|c| {
            let missing = c.values.iter().filter(|v| is_missing(v)).count();
            (missing as f64) <= 0.7 * (m as f64)
        })
        .collect();

    let kept_rows: Vec<usize> = (0..m)
        .filter(|&i| {
            kept_cols
                .iter()
                .all(|c| c.kind != ColumnKind::Continuous || !is_missing(&c.values[i]))
        })
        .collect();
    if kept_rows.is_empty() {
        return Err(Error::AllRowsDeleted);
    }

    let columns = kept_cols
        .into_iter()
        .map(|c| RawColumn {
            name: c.name.clone(),
            kind: c.kind,
            values: kept_rows.iter().map(|&i| c.values[i].clone()).collect(),
        })
        .collect();
    Ok((RawTable { columns }, kept_rows))
}

/// One-hot encodes a categorical column.
///
/// Returns `(label, column)` pairs plus a warning flag set when the column
/// was entirely missing. Categories are ordered lexicographically, with
/// `Other` and `Missing` appended last.
pub fn one_hot_encode(column: &RawColumn) -> Result<(Vec<(String, Vec<f64>)>, bool)> {
    if column.kind != ColumnKind::Categorical {
        return Err(Error::InvalidArgument(format!(
            "one_hot_encode needs a categorical column, got continuous {}",
            column.name
        )));
    }
    if column.values.is_empty() {
        return Err(Error::EmptyInput(format!("no data in column {}", column.name)));
    }
    let m = column.values.len();
    let has_missing = column.values.iter().any(is_missing);

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &column.values {
        if !is_missing(v) {
            *counts.entry(v.as_deref().unwrap()).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        let col = vec![1.0; m];
        return Ok((vec![("Missing".to_string(), col)], true));
    }

    let selected: Vec<String> = if counts.len() <= 10 {
        counts.keys().map(|s| s.to_string()).collect()
    } else {
        // Top 9 by frequency; ties at the boundary broken lexicographically.
        let mut by_freq: Vec<(&str, usize)> = counts.iter().map(|(k, v)| (*k, *v)).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut top: Vec<String> = by_freq[..9].iter().map(|(k, _)| k.to_string()).collect();
        top.sort();
        top
    };
    let needs_other = counts.len() > selected.len();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for label in &selected {
        let col = column
            .values
            .iter()
            .map(|v| {
                if !is_missing(v) && v.as_deref() == Some(label.as_str()) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        columns.push((label.clone(), col));
    }
    if needs_other {
        let col = column
            .values
            .iter()
            .map(|v| {
                if !is_missing(v) && !selected.iter().any(|l| v.as_deref() == Some(l.as_str())) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        columns.push(("Other".to_string(), col));
    }
    if has_missing {
        let col = column
            .values
            .iter()
            .map(|v| if is_missing(v) { 1.0 } else { 0.0 })
            .collect();
        columns.push(("Missing".to_string(), col));
    }
    Ok((columns, false))
}

/// Standardizes a continuous column to zero mean and unit variance.
///
/// With `stats` given (the val/test path) the same affine map is applied
/// without refitting. Otherwise the mean and population (1/m) std are fit on
/// the column; a column with std below `1e-12` becomes all-zero and is
/// flagged constant.
pub fn standardize(column: &[f64], stats: Option<(f64, f64)>) -> (Vec<f64>, ColumnStats) {
    match stats {
        Some((mean, std)) => {
            if std < 1e-12 {
                return (
                    vec![0.0; column.len()],
                    ColumnStats { mean, std, constant: true },
                );
            }
            let out = column.iter().map(|x| (x - mean) / std).collect();
            (out, ColumnStats { mean, std, constant: false })
        }
        None => {
            let m = column.len() as f64;
            let mean = column.iter().sum::<f64>() / m;
            let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
            let std = var.sqrt();
            if std < 1e-12 {
                return (
                    vec![0.0; column.len()],
                    ColumnStats { mean, std: 0.0, constant: true },
                );
            }
            let out = column.iter().map(|x| (x - mean) / std).collect();
            (out, ColumnStats { mean, std, constant: false })
        }
    }
}

/// Encodes a raw table into a [`FeatureTable`].
///
/// `fit_rows` selects the rows used to fit standardization statistics
/// (`None` fits on all rows); the stats are then applied to every row, so
/// downstream splits share one affine map.
pub fn encode(raw: &RawTable, fit_rows: Option<&[usize]>) -> Result<FeatureTable> {
    let clean = handle_missing(raw)?;
    let m = clean.n_rows();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut node_meta = Vec::new();
    let mut groups = Vec::new();
    let mut stats = Vec::new();
    let mut warnings = Vec::new();

    for (f, column) in clean.columns.iter().enumerate() {
        match column.kind {
            ColumnKind::Continuous => {
                let values: Vec<f64> = column
                    .values
                    .iter()
                    .map(|v| v.as_deref().unwrap().parse::<f64>().unwrap())
                    .collect();
                let fit: Vec<f64> = match fit_rows {
                    Some(rows) => rows.iter().map(|&i| values[i]).collect(),
                    None => values.clone(),
                };
                let (_, st) = standardize(&fit, None);
                let (transformed, st) = standardize(&values, Some((st.mean, st.std)));
                if st.constant {
                    warnings.push(format!("column {} is constant", column.name));
                }
                groups.push(vec![cols.len()]);
                node_meta.push(NodeMeta {
                    original_feature: f,
                    original_name: column.name.clone(),
                    category_label: None,
                });
                stats.push(Some(st));
                cols.push(transformed);
            }
            ColumnKind::Categorical => {
                let (encoded, all_missing) = one_hot_encode(column)?;
                if all_missing {
                    warnings.push(format!("column {} is entirely missing", column.name));
                }
                let mut group = Vec::new();
                for (label, col) in encoded {
                    group.push(cols.len());
                    node_meta.push(NodeMeta {
                        original_feature: f,
                        original_name: column.name.clone(),
                        category_label: Some(label),
                    });
                    stats.push(None);
                    cols.push(col);
                }
                groups.push(group);
            }
        }
    }

    if cols.is_empty() {
        return Err(Error::EmptyInput("no usable columns after preprocessing".into()));
    }
    let d = cols.len();
    let mut data = Array2::<f64>::zeros((m, d));
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            data[[i, j]] = x;
        }
    }
    Ok(FeatureTable { data, node_meta, groups, stats, warnings })
}

fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    // Largest-remainder apportionment; remainder ties go to the earlier split.
    let r = [ratios.0, ratios.1, ratios.2];
    let quota: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    let mut sizes: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&i, &j| {
        let fi = quota[i] - quota[i].floor();
        let fj = quota[j] - quota[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Splits row indices into (train, val, test).
///
/// With `labels` given, each class is apportioned across the three splits by
/// the largest-remainder method and shuffled with the seed, so per-split
/// class proportions match the global ones within one sample. Without
/// labels, a plain shuffled split of the same sizes is returned. Index sets
/// are disjoint, cover all rows, and are sorted ascending.
pub fn split_stratified(
    n_rows: usize,
    labels: Option<&[usize]>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<[Vec<usize>; 3]> {
    if ratios.0 <= 0.0 || ratios.1 <= 0.0 || ratios.2 <= 0.0 {
        return Err(Error::InvalidArgument("split ratios must be positive".into()));
    }
    if (ratios.0 + ratios.1 + ratios.2 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("split ratios must sum to 1".into()));
    }
    if n_rows == 0 {
        return Err(Error::EmptyInput("cannot split zero rows".into()));
    }
    if let Some(labels) = labels {
        if labels.len() != n_rows {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                n_rows
            )));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut splits: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    match labels {
        None => {
            let mut idx: Vec<usize> = (0..n_rows).collect();
            idx.shuffle(&mut rng);
            let sizes = split_sizes(n_rows, ratios);
            let mut at = 0;
            for (s, &size) in sizes.iter().enumerate() {
                splits[s].extend_from_slice(&idx[at..at + size]);
                at += size;
            }
        }
        Some(labels) => {
            let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in labels.iter().enumerate() {
                classes.entry(c).or_default().push(i);
            }
            for (c, mut idx) in classes {
                if idx.len() < 3 {
                    return Err(Error::ClassTooSmall {
                        label: c.to_string(),
                        count: idx.len(),
                        need: 3,
                    });
                }
                idx.shuffle(&mut rng);
                let sizes = split_sizes(idx.len(), ratios);
                let mut at = 0;
                for (s, &size) in sizes.iter().enumerate() {
                    splits[s].extend_from_slice(&idx[at..at + size]);
                    at += size;
                }
            }
        }
    }
    for s in splits.iter_mut() {
        s.sort_unstable();
    }
    Ok(splits)
}

/// Parses a CSV file with a header row into a [`RawTable`].
///
/// Column kinds come from `declared` when present; otherwise a column is
/// continuous iff every non-missing entry parses as a number. Missing
/// markers are the empty field and the literal `NA`.
pub fn load_csv(path: &Path, declared: &BTreeMap<String, ColumnKind>) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut values: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::DimensionMismatch(format!(
                "CSV row has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let cell = if field.is_empty() || field == "NA" {
                None
            } else {
                Some(field.to_string())
            };
            values[j].push(cell);
        }
    }

    let columns = headers
        .into_iter()
        .zip(values)
        .map(|(name, vals)| {
            let kind = declared.get(&name).copied().unwrap_or_else(|| {
                let numeric = vals
                    .iter()
                    .filter(|v| !is_missing(v))
                    .all(|v| v.as_deref().unwrap().parse::<f64>().is_ok());
                let any_value = vals.iter().any(|v| !is_missing(v));
                if numeric && any_value {
                    ColumnKind::Continuous
                } else {
                    ColumnKind::Categorical
                }
            });
            RawColumn { name, kind, values: vals }
        })
        .collect();
    let table = RawTable { columns };
    table.validate()?;
    Ok(table)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    node_meta: Vec<NodeMeta>,
    groups: Vec<Vec<usize>>,
    stats: Vec<Option<ColumnStats>>,
    warnings: Vec<String>,
}

/// Writes the numeric matrix as CSV plus a `.meta.json` sidecar with the
/// node metadata, groups, and standardization stats.
pub fn save_feature_table(table: &FeatureTable, csv_path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(csv_path)?;
    let names: Vec<String> = table
        .node_meta
        .iter()
        .map(|m| match &m.category_label {
            Some(label) => format!("{}={}", m.original_name, label),
            None => m.original_name.clone(),
        })
        .collect();
    writer.write_record(&names)?;
    for row in table.data.rows() {
        let fields: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
        writer.write_record(&fields)?;
    }
    writer.flush()?;

    let sidecar = Sidecar {
        node_meta: table.node_meta.clone(),
        groups: table.groups.clone(),
        stats: table.stats.clone(),
        warnings: table.warnings.clone(),
    };
    let meta_path = sidecar_path(csv_path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a feature table written by [`save_feature_table`].
pub fn load_feature_table(csv_path: &Path) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(csv_path)?;
    let d = reader.headers()?.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|s| s.parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidArgument(format!("bad numeric cell: {e}")))?);
    }
    let m = rows.len();
    let mut data = Array2::<f64>::zeros((m, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            data[[i, j]] = x;
        }
    }
    let sidecar: Sidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(csv_path))?)?;
    Ok(FeatureTable {
        data,
        node_meta: sidecar.node_meta,
        groups: sidecar.groups,
        stats: sidecar.stats,
        warnings: sidecar.warnings,
    })
}

fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cat(name: &str, values: &[Option<&str>]) -> RawColumn {
        RawColumn {
            name: name.into(),
            kind: ColumnKind::Categorical,
            values: values.iter().map(|v| v.map(|s| s.to_string())).collect(),
        }
    }

    fn cont(name: &str, values: &[Option<f64>]) -> RawColumn {
        RawColumn {
            name: name.into(),
            kind: ColumnKind::Continuous,
            values: values.iter().map(|v| v.map(|x| x.to_string())).collect(),
        }
    }

    #[test]
    fn one_hot_three_categories() {
        let col = cat("c", &[Some("x"), Some("y"), Some("z"), Some("x")]);
        let (cols, warn) = one_hot_encode(&col).unwrap();
        assert_eq!(cols.len(), 3);
        assert!(!warn);
    }

    #[test]
    fn one_hot_caps_at_top_nine_plus_other() {
        let labels: Vec<String> = (0..12).map(|i| format!("c{i:02}")).collect();
        let mut values: Vec<Option<&str>> = Vec::new();
        // c00..c08 appear twice (top 9), c09..c11 once each.
        for l in &labels[..9] {
            values.push(Some(l));
            values.push(Some(l));
        }
        for l in &labels[9..] {
            values.push(Some(l));
        }
        let col = cat("c", &values);
        let (cols, _) = one_hot_encode(&col).unwrap();
        assert_eq!(cols.len(), 10);
        assert_eq!(cols[9].0, "Other");
        let other_sum: f64 = cols[9].1.iter().sum();
        assert_eq!(other_sum, 3.0);
    }

    #[test]
    fn one_hot_boundary_ties_break_lexicographically() {
        // 11 distinct categories all with equal frequency: the top 9 are the
        // lexicographically smallest.
        let labels: Vec<String> = (0..11).map(|i| format!("c{i:02}")).collect();
        let values: Vec<Option<&str>> = labels.iter().map(|l| Some(l.as_str())).collect();
        let col = cat("c", &values);
        let (cols, _) = one_hot_encode(&col).unwrap();
        let names: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            ["c00", "c01", "c02", "c03", "c04", "c05", "c06", "c07", "c08", "Other"]
        );
    }

    #[test]
    fn one_hot_missing_category() {
        let col = cat("c", &[Some("A"), Some("A"), None, Some("B")]);
        let (cols, _) = one_hot_encode(&col).unwrap();
        assert_eq!(cols.len(), 3);
        assert_eq!(cols[0].0, "A");
        assert_eq!(cols[0].1, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(cols[1].0, "B");
        assert_eq!(cols[1].1, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(cols[2].0, "Missing");
        assert_eq!(cols[2].1, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_all_missing_warns() {
        let col = cat("c", &[None, None]);
        let (cols, warn) = one_hot_encode(&col).unwrap();
        assert!(warn);
        assert_eq!(cols.len(), 1);
        assert_eq!(cols[0].0, "Missing");
    }

    #[test]
    fn one_hot_empty_errors() {
        let col = cat("c", &[]);
        assert!(one_hot_encode(&col).is_err());
    }

    #[test]
    fn standardize_fits_population_std() {
        let (out, st) = standardize(&[1.0, 2.0, 3.0], None);
        assert_relative_eq!(st.mean, 2.0);
        assert_relative_eq!(st.std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(out[0], -1.2247, epsilon = 1e-4);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out[2], 1.2247, epsilon = 1e-4);
    }

    #[test]
    fn standardize_constant_column_flags() {
        let (out, st) = standardize(&[5.0, 5.0, 5.0], None);
        assert!(st.constant);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardize_applies_given_stats() {
        let (out, st) = standardize(&[4.0], Some((2.0, 1.0)));
        assert_eq!(out, vec![2.0]);
        assert!(!st.constant);
    }

    #[test]
    fn handle_missing_drops_mostly_missing_column() {
        let table = RawTable {
            columns: vec![
                cont("a", &[Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)]),
                cont("b", &[None, None, None, None, Some(1.0)]),
            ],
        };
        let out = handle_missing(&table).unwrap();
        assert_eq!(out.columns.len(), 1);
        assert_eq!(out.columns[0].name, "a");
    }

    #[test]
    fn handle_missing_is_identity_without_missing() {
        let table = RawTable {
            columns: vec![cont("a", &[Some(1.0), Some(2.0)])],
        };
        let out = handle_missing(&table).unwrap();
        assert_eq!(out.n_rows(), 2);
        assert_eq!(out.columns[0].values, table.columns[0].values);
    }

    #[test]
    fn handle_missing_deletes_rows_listwise() {
        let mut values: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        values[2] = None;
        values[7] = None;
        let table = RawTable { columns: vec![cont("a", &values)] };
        let out = handle_missing(&table).unwrap();
        assert_eq!(out.n_rows(), 8);
    }

    #[test]
    fn handle_missing_is_idempotent() {
        let table = RawTable {
            columns: vec![
                cont("a", &[Some(1.0), None, Some(3.0), Some(4.0)]),
                cat("c", &[Some("x"), Some("y"), None, Some("x")]),
            ],
        };
        let once = handle_missing(&table).unwrap();
        let twice = handle_missing(&once).unwrap();
        assert_eq!(once.n_rows(), twice.n_rows());
        for (a, b) in once.columns.iter().zip(twice.columns.iter()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn handle_missing_all_rows_deleted_errors() {
        let table = RawTable { columns: vec![cont("a", &[None, Some(1.0)]), cont("b", &[Some(1.0), None])] };
        // Both columns are 50% missing (kept), every row has a missing value.
        match handle_missing(&table) {
            Err(Error::AllRowsDeleted) => {}
            other => panic!("expected AllRowsDeleted, got {other:?}"),
        }
    }

    #[test]
    fn split_stratified_matches_class_proportions() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let splits = split_stratified(100, Some(&labels), (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(splits[0].len(), 60);
        assert_eq!(splits[1].len(), 20);
        assert_eq!(splits[2].len(), 20);
        for (s, expect) in splits.iter().zip([30, 10, 10]) {
            let class0 = s.iter().filter(|&&i| labels[i] == 0).count();
            assert_eq!(class0, expect);
        }
    }

    #[test]
    fn split_regression_is_plain_shuffle() {
        let splits = split_stratified(10, None, (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!(splits[0].len(), 6);
        assert_eq!(splits[1].len(), 2);
        assert_eq!(splits[2].len(), 2);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let labels: Vec<usize> = (0..53).map(|i| i % 3).collect();
        let a = split_stratified(53, Some(&labels), (0.6, 0.2, 0.2), 11).unwrap();
        let b = split_stratified(53, Some(&labels), (0.6, 0.2, 0.2), 11).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_tiny_class() {
        let labels = vec![0, 0, 0, 0, 1, 1];
        match split_stratified(6, Some(&labels), (0.6, 0.2, 0.2), 1) {
            Err(Error::ClassTooSmall { .. }) => {}
            other => panic!("expected ClassTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn encode_builds_groups_and_standardizes() {
        let table = RawTable {
            columns: vec![
                cont("num", &[Some(1.0), Some(2.0), Some(3.0), Some(4.0)]),
                cat("c", &[Some("A"), Some("A"), None, Some("B")]),
            ],
        };
        let ft = encode(&table, None).unwrap();
        assert_eq!(ft.n_cols(), 4);
        assert_eq!(ft.groups, vec![vec![0], vec![1, 2, 3]]);
        // Continuous column standardized.
        let col0: Vec<f64> = ft.data.column(0).to_vec();
        let mean: f64 = col0.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        // One-hot rows sum to 1 within the group.
        for i in 0..4 {
            let s = ft.data[[i, 1]] + ft.data[[i, 2]] + ft.data[[i, 3]];
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn encode_with_train_fit_keeps_stats_fixed() {
        let values: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        let table = RawTable { columns: vec![cont("a", &values)] };
        let fit_rows: Vec<usize> = (0..6).collect();
        let ft = encode(&table, Some(&fit_rows)).unwrap();
        let st = ft.stats[0].unwrap();
        assert_relative_eq!(st.mean, 2.5);
        // Train rows standardized to mean 0 under train stats; later rows are not.
        let train_mean: f64 = fit_rows.iter().map(|&i| ft.data[[i, 0]]).sum::<f64>() / 6.0;
        assert!(train_mean.abs() < 1e-12);
        assert!(ft.data[[9, 0]] > 2.0);
    }

    #[test]
    fn feature_table_roundtrips_through_csv() {
        let table = RawTable {
            columns: vec![
                cont("num", &[Some(1.5), Some(-0.5), Some(3.25)]),
                cat("c", &[Some("A"), Some("B"), Some("A")]),
            ],
        };
        let ft = encode(&table, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        save_feature_table(&ft, &path).unwrap();
        let back = load_feature_table(&path).unwrap();
        assert_eq!(back.data.shape(), ft.data.shape());
        for (a, b) in back.data.iter().zip(ft.data.iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(back.groups, ft.groups);
    }
}
