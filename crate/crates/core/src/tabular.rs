//! Column-typed tables, CSV ingestion, and design-matrix construction.
//!
//! A [`Table`] is an immutable, column-oriented dataset. A [`DesignRecipe`]
//! captures everything needed to turn a table into a [`FeatureMatrix`]
//! (numeric imputation means, categorical levels, the fitted text
//! vocabulary) so that the exact same encoding can be replayed on new rows.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text_vectorizer::{SparseVector, Vocabulary};

/// Level used for missing categorical values.
pub const MISSING_LEVEL: &str = "__missing__";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
    Binary,
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "numeric" | "number" => Ok(ColumnKind::Numeric),
            "categorical" | "category" => Ok(ColumnKind::Categorical),
            "text" => Ok(ColumnKind::Text),
            "binary" | "bool" => Ok(ColumnKind::Binary),
            other => Err(Error::Config(format!("unknown column kind `{other}`"))),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Text => "text",
            ColumnKind::Binary => "binary",
        };
        f.write_str(s)
    }
}

/// Column storage. Missing numeric values are `NaN`; missing categorical
/// values are `None`.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<Option<String>>),
    Text(Vec<String>),
    Binary(Vec<u8>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Text(v) => v.len(),
            ColumnData::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
            ColumnData::Text(_) => ColumnKind::Text,
            ColumnData::Binary(_) => ColumnKind::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    name: String,
    data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Column {
            name: name.into(),
            data,
        }
    }

    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column::new(name, ColumnData::Numeric(values))
    }

    pub fn binary(name: impl Into<String>, values: Vec<u8>) -> Self {
        Column::new(name, ColumnData::Binary(values))
    }

    pub fn text(name: impl Into<String>, values: Vec<String>) -> Self {
        Column::new(name, ColumnData::Text(values))
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Column::new(name, ColumnData::Categorical(values))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.data.kind()
    }

    pub fn data(&self) -> &ColumnData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Numeric view of row `i`; `None` for missing values or non-numeric kinds.
    pub fn value_f64(&self, i: usize) -> Option<f64> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v[i]).filter(|x| !x.is_nan()),
            ColumnData::Binary(v) => Some(f64::from(v[i])),
            _ => None,
        }
    }

    /// String key of row `i` used when the column is treated as categorical.
    pub fn level_key(&self, i: usize) -> String {
        match &self.data {
            ColumnData::Categorical(v) => v[i].clone().unwrap_or_else(|| MISSING_LEVEL.to_string()),
            ColumnData::Binary(v) => v[i].to_string(),
            ColumnData::Numeric(v) if v[i].is_nan() => MISSING_LEVEL.to_string(),
            ColumnData::Numeric(v) => format_f64(v[i]),
            ColumnData::Text(v) => v[i].clone(),
        }
    }

    /// Levels in order of first appearance.
    pub fn levels(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for i in 0..self.len() {
            let key = self.level_key(i);
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
        out
    }

    fn cell_string(&self, i: usize) -> String {
        match &self.data {
            ColumnData::Numeric(v) if v[i].is_nan() => String::new(),
            ColumnData::Numeric(v) => format_f64(v[i]),
            ColumnData::Categorical(v) => v[i].clone().unwrap_or_default(),
            ColumnData::Text(v) => v[i].clone(),
            ColumnData::Binary(v) => v[i].to_string(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&i| v[i].clone()).collect()),
            ColumnData::Binary(v) => ColumnData::Binary(rows.iter().map(|&i| v[i]).collect()),
        };
        Column::new(self.name.clone(), data)
    }
}

pub(crate) fn format_f64(x: f64) -> String {
    format!("{x}")
}

/// An immutable column-oriented dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    columns: Vec<Column>,
    n_rows: usize,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut names = HashSet::new();
        for col in &columns {
            if col.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column `{}` has {} rows, expected {n_rows}",
                    col.name,
                    col.len()
                )));
            }
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", col.name)));
            }
            if let ColumnData::Binary(v) = &col.data {
                if v.iter().any(|&x| x > 1) {
                    return Err(Error::Schema(format!(
                        "binary column `{}` contains values other than 0 and 1",
                        col.name
                    )));
                }
            }
        }
        Ok(Table { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Values of a 0/1 column. Numeric columns holding only 0 and 1 are accepted.
    pub fn binary(&self, name: &str) -> Result<Vec<u8>> {
        let col = self.column(name)?;
        match &col.data {
            ColumnData::Binary(v) => Ok(v.clone()),
            ColumnData::Numeric(v) if v.iter().all(|&x| x == 0.0 || x == 1.0) => {
                Ok(v.iter().map(|&x| x as u8).collect())
            }
            _ => Err(Error::Schema(format!("column `{name}` is not binary"))),
        }
    }

    /// Numeric view of a numeric or binary column (missing → NaN).
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        match &col.data {
            ColumnData::Numeric(v) => Ok(v.clone()),
            ColumnData::Binary(v) => Ok(v.iter().map(|&x| f64::from(x)).collect()),
            _ => Err(Error::Schema(format!(
                "column `{name}` is {}, expected numeric",
                col.kind()
            ))),
        }
    }

    /// Text view of a column; non-text columns are rendered cell by cell.
    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let col = self.column(name)?;
        match &col.data {
            ColumnData::Text(v) => Ok(v.clone()),
            _ => Ok((0..col.len()).map(|i| col.cell_string(i)).collect()),
        }
    }

    /// Returns a new table with `column` appended. Existing columns are untouched.
    pub fn with_column(&self, column: Column) -> Result<Table> {
        if self.has_column(&column.name) {
            return Err(Error::Collision(column.name));
        }
        if !self.columns.is_empty() && column.len() != self.n_rows {
            return Err(Error::Schema(format!(
                "column `{}` has {} rows, expected {}",
                column.name,
                column.len(),
                self.n_rows
            )));
        }
        let mut columns = self.columns.clone();
        columns.push(column);
        Table::new(columns)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Schema(format!("csv write failed: {e}"));
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(csv_err)?;
        for i in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| c.cell_string(i)))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Loads a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, type_hints: &HashMap<String, ColumnKind>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_csv(std::io::BufReader::new(file), type_hints)
}

pub fn read_csv<R: Read>(reader: R, type_hints: &HashMap<String, ColumnKind>) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicate header `{h}`")));
        }
    }
    for name in type_hints.keys() {
        if !seen.contains(name.as_str()) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            raw[j].push(field.to_string());
        }
    }

    let columns = headers
        .into_iter()
        .zip(raw)
        .map(|(name, values)| {
            let kind = match type_hints.get(&name) {
                Some(&k) => k,
                None => infer_kind(&values),
            };
            let data = parse_column(&name, kind, values)?;
            Ok(Column::new(name, data))
        })
        .collect::<Result<Vec<_>>>()?;
    Table::new(columns)
}

/// Kind inference for a raw string column.
///
/// All non-empty cells numeric → Binary when complete and ⊆ {0,1}, else
/// Numeric. Otherwise Categorical when the distinct count is at most
/// `max(20, 0.05·n)` and values are short (mean word count below 3), else Text.
pub fn infer_kind(values: &[String]) -> ColumnKind {
    let present: Vec<&str> = values
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if present.is_empty() {
        return ColumnKind::Text;
    }
    let parsed: Option<Vec<f64>> = present.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(nums) = parsed {
        let complete = present.len() == values.len();
        if complete && nums.iter().all(|&x| x == 0.0 || x == 1.0) {
            return ColumnKind::Binary;
        }
        return ColumnKind::Numeric;
    }
    let distinct: HashSet<&str> = present.iter().copied().collect();
    let threshold = 20usize.max((0.05 * values.len() as f64).floor() as usize);
    let mean_words = present
        .iter()
        .map(|s| s.split_whitespace().count())
        .sum::<usize>() as f64
        / present.len() as f64;
    if distinct.len() <= threshold && mean_words < 3.0 {
        ColumnKind::Categorical
    } else {
        ColumnKind::Text
    }
}

fn parse_column(name: &str, kind: ColumnKind, values: Vec<String>) -> Result<ColumnData> {
    // Data rows start on line 2.
    let bad = |i: usize, msg: String| Error::Parse {
        line: i as u64 + 2,
        message: format!("column `{name}`: {msg}"),
    };
    Ok(match kind {
        ColumnKind::Numeric => ColumnData::Numeric(
            values
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let s = s.trim();
                    if s.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        s.parse::<f64>().map_err(|_| bad(i, format!("`{s}` is not a number")))
                    }
                })
                .collect::<Result<_>>()?,
        ),
        ColumnKind::Binary => ColumnData::Binary(
            values
                .iter()
                .enumerate()
                .map(|(i, s)| match s.trim().parse::<f64>() {
                    Ok(x) if x == 0.0 => Ok(0),
                    Ok(x) if x == 1.0 => Ok(1),
                    _ => Err(bad(i, format!("`{s}` is not 0 or 1"))),
                })
                .collect::<Result<_>>()?,
        ),
        ColumnKind::Categorical => ColumnData::Categorical(
            values
                .into_iter()
                .map(|s| if s.trim().is_empty() { None } else { Some(s) })
                .collect(),
        ),
        ColumnKind::Text => ColumnData::Text(values),
    })
}

/// Compressed sparse row view of a feature matrix, consumed by the learners.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        self.row(i).map(|(j, v)| w[j] * v).sum()
    }

    /// Column-major copy of the same entries.
    pub fn to_csc(&self) -> Csc {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut rows = vec![0usize; self.indices.len()];
        let mut values = vec![0.0; self.indices.len()];
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let k = next[j];
                rows[k] = i;
                values[k] = v;
                next[j] += 1;
            }
        }
        Csc {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr,
            rows,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Csc {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csc {
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[j], self.indptr[j + 1]);
        self.rows[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureBlock {
    /// Row-major dense values.
    Dense { width: usize, values: Vec<f64> },
    Sparse { width: usize, rows: Vec<SparseVector> },
}

impl FeatureBlock {
    pub fn width(&self) -> usize {
        match self {
            FeatureBlock::Dense { width, .. } | FeatureBlock::Sparse { width, .. } => *width,
        }
    }
}

/// Design matrix mixing dense covariate blocks with sparse text blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    blocks: Vec<FeatureBlock>,
    feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, blocks: Vec<FeatureBlock>, feature_names: Vec<String>) -> Result<Self> {
        let width: usize = blocks.iter().map(FeatureBlock::width).sum();
        if width != feature_names.len() {
            return Err(Error::Schema(format!(
                "{} feature names for {width} features",
                feature_names.len()
            )));
        }
        for block in &blocks {
            let ok = match block {
                FeatureBlock::Dense { width, values } => values.len() == width * n_rows,
                FeatureBlock::Sparse { rows, .. } => rows.len() == n_rows,
            };
            if !ok {
                return Err(Error::Schema("feature block row count mismatch".into()));
            }
        }
        Ok(FeatureMatrix {
            n_rows,
            blocks,
            feature_names,
        })
    }

    /// Single dense block from row-major values with generated names `x0, x1, ...`.
    pub fn from_dense_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Schema("ragged dense rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        let names = (0..width).map(|j| format!("x{j}")).collect();
        FeatureMatrix::new(n_rows, vec![FeatureBlock::Dense { width, values }], names)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn blocks(&self) -> &[FeatureBlock] {
        &self.blocks
    }

    pub fn has_sparse(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| matches!(b, FeatureBlock::Sparse { .. }))
    }

    /// Stable digest of the feature names, used to check that a model is
    /// applied to the feature space it was trained on.
    pub fn fingerprint(&self) -> String {
        fingerprint_names(&self.feature_names)
    }

    /// Nonzero entries of row `i` as (global feature index, value).
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for block in &self.blocks {
            match block {
                FeatureBlock::Dense { width, values } => {
                    for (j, &v) in values[i * width..(i + 1) * width].iter().enumerate() {
                        if v != 0.0 {
                            out.push((offset + j, v));
                        }
                    }
                }
                FeatureBlock::Sparse { rows, .. } => {
                    out.extend(rows[i].entries().iter().map(|&(j, v)| (offset + j, v)));
                }
            }
            offset += block.width();
        }
        out
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_features()];
        for (j, v) in self.row_entries(i) {
            row[j] = v;
        }
        row
    }

    pub fn to_csr(&self) -> Csr {
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.n_rows {
            for (j, v) in self.row_entries(i) {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_features(),
            indptr,
            indices,
            values,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                FeatureBlock::Dense { width, values } => FeatureBlock::Dense {
                    width: *width,
                    values: rows
                        .iter()
                        .flat_map(|&i| values[i * width..(i + 1) * width].iter().copied())
                        .collect(),
                },
                FeatureBlock::Sparse { width, rows: r } => FeatureBlock::Sparse {
                    width: *width,
                    rows: rows.iter().map(|&i| r[i].clone()).collect(),
                },
            })
            .collect();
        FeatureMatrix {
            n_rows: rows.len(),
            blocks,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Appends one dense column (used to hand the treatment to an S-Learner).
    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<FeatureMatrix> {
        if values.len() != self.n_rows {
            return Err(Error::Schema(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        let mut blocks = self.blocks.clone();
        blocks.push(FeatureBlock::Dense {
            width: 1,
            values: values.to_vec(),
        });
        let mut names = self.feature_names.clone();
        names.push(name.to_string());
        FeatureMatrix::new(self.n_rows, blocks, names)
    }
}

pub(crate) fn fingerprint_names(names: &[String]) -> String {
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateEncoding {
    /// Pass-through with fit-time mean imputation; an indicator feature is
    /// added when the fitting data had missing values.
    Numeric {
        column: String,
        mean: f64,
        missing_indicator: bool,
    },
    Binary { column: String },
    Categorical { column: String, levels: Vec<String> },
}

impl CovariateEncoding {
    fn width(&self) -> usize {
        match self {
            CovariateEncoding::Numeric {
                missing_indicator, ..
            } => 1 + usize::from(*missing_indicator),
            CovariateEncoding::Binary { .. } => 1,
            CovariateEncoding::Categorical { levels, .. } => levels.len(),
        }
    }

    fn names(&self) -> Vec<String> {
        match self {
            CovariateEncoding::Numeric {
                column,
                missing_indicator,
                ..
            } => {
                let mut v = vec![column.clone()];
                if *missing_indicator {
                    v.push(format!("{column}:missing"));
                }
                v
            }
            CovariateEncoding::Binary { column } => vec![column.clone()],
            CovariateEncoding::Categorical { column, levels } => {
                levels.iter().map(|l| format!("{column}={l}")).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoding {
    pub column: String,
    pub vocabulary: Vocabulary,
}

/// Fitted feature-construction recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRecipe {
    covariates: Vec<CovariateEncoding>,
    text: Option<TextEncoding>,
    feature_names: Vec<String>,
}

impl DesignRecipe {
    /// Captures the encoding of `covariate_cols` (minus `ignore_cols`) and of
    /// the optional text column.
    pub fn fit(
        table: &Table,
        covariate_cols: &[String],
        text_col: Option<&str>,
        vectorizer: Option<Vocabulary>,
        ignore_cols: &[String],
    ) -> Result<Self> {
        let mut covariates = Vec::new();
        let mut used = HashSet::new();
        for name in covariate_cols {
            if ignore_cols.contains(name) || !used.insert(name.as_str()) {
                continue;
            }
            let col = table.column(name)?;
            let enc = match col.data() {
                ColumnData::Numeric(v) => {
                    let present: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
                    let mean = if present.is_empty() {
                        0.0
                    } else {
                        present.iter().sum::<f64>() / present.len() as f64
                    };
                    CovariateEncoding::Numeric {
                        column: name.clone(),
                        mean,
                        missing_indicator: present.len() < v.len(),
                    }
                }
                ColumnData::Binary(_) => CovariateEncoding::Binary {
                    column: name.clone(),
                },
                ColumnData::Categorical(_) => CovariateEncoding::Categorical {
                    column: name.clone(),
                    levels: col.levels(),
                },
                ColumnData::Text(_) => {
                    return Err(Error::Schema(format!(
                        "column `{name}` is text; pass it as the text column instead"
                    )))
                }
            };
            covariates.push(enc);
        }
        let text = match (text_col, vectorizer) {
            (Some(column), Some(vocabulary)) => {
                table.column(column)?;
                Some(TextEncoding {
                    column: column.to_string(),
                    vocabulary,
                })
            }
            (Some(column), None) => {
                return Err(Error::Config(format!(
                    "text column `{column}` requires a fitted vectorizer"
                )))
            }
            (None, _) => None,
        };
        let mut feature_names: Vec<String> = covariates.iter().flat_map(|c| c.names()).collect();
        if let Some(t) = &text {
            feature_names.extend(t.vocabulary.terms().iter().map(|term| format!("tfidf:{term}")));
        }
        Ok(DesignRecipe {
            covariates,
            text,
            feature_names,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_names(&self.feature_names)
    }

    pub fn text(&self) -> Option<&TextEncoding> {
        self.text.as_ref()
    }

    pub fn covariates(&self) -> &[CovariateEncoding] {
        &self.covariates
    }

    pub fn transform(&self, table: &Table) -> Result<FeatureMatrix> {
        let n = table.n_rows();
        let mut blocks = Vec::new();
        let dense_width: usize = self.covariates.iter().map(CovariateEncoding::width).sum();
        if dense_width > 0 {
            let mut values = vec![0.0; n * dense_width];
            let mut offset = 0;
            for enc in &self.covariates {
                match enc {
                    CovariateEncoding::Numeric {
                        column,
                        mean,
                        missing_indicator,
                    } => {
                        let col = table.column(column)?;
                        check_numeric(col)?;
                        for i in 0..n {
                            let (x, missing) = match col.value_f64(i) {
                                Some(x) => (x, 0.0),
                                None => (*mean, 1.0),
                            };
                            values[i * dense_width + offset] = x;
                            if *missing_indicator {
                                values[i * dense_width + offset + 1] = missing;
                            }
                        }
                    }
                    CovariateEncoding::Binary { column } => {
                        let col = table.column(column)?;
                        check_numeric(col)?;
                        for i in 0..n {
                            values[i * dense_width + offset] = col.value_f64(i).unwrap_or(0.0);
                        }
                    }
                    CovariateEncoding::Categorical { column, levels } => {
                        let col = table.column(column)?;
                        let index: HashMap<&str, usize> = levels
                            .iter()
                            .enumerate()
                            .map(|(k, l)| (l.as_str(), k))
                            .collect();
                        for i in 0..n {
                            // Levels unseen at fit time leave the sub-row all zero.
                            if let Some(&k) = index.get(col.level_key(i).as_str()) {
                                values[i * dense_width + offset + k] = 1.0;
                            }
                        }
                    }
                }
                offset += enc.width();
            }
            blocks.push(FeatureBlock::Dense {
                width: dense_width,
                values,
            });
        }
        if let Some(t) = &self.text {
            let docs = table.text(&t.column)?;
            let rows = docs.iter().map(|d| t.vocabulary.transform(d)).collect();
            blocks.push(FeatureBlock::Sparse {
                width: t.vocabulary.len(),
                rows,
            });
        }
        FeatureMatrix::new(n, blocks, self.feature_names.clone())
    }
}

fn check_numeric(col: &Column) -> Result<()> {
    match col.kind() {
        ColumnKind::Numeric | ColumnKind::Binary => Ok(()),
        k => Err(Error::Schema(format!(
            "column `{}` is {k}, expected numeric",
            col.name()
        ))),
    }
}

/// Fits a [`DesignRecipe`] on `table` and applies it to the same table.
pub fn build_design_matrix(
    table: &Table,
    covariate_cols: &[String],
    text_col: Option<&str>,
    vectorizer: Option<Vocabulary>,
    ignore_cols: &[String],
) -> Result<FeatureMatrix> {
    DesignRecipe::fit(table, covariate_cols, text_col, vectorizer, ignore_cols)?.transform(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_vectorizer::{fit_vocabulary, VectorizerConfig};

    fn read(s: &str) -> Result<Table> {
        read_csv(s.as_bytes(), &HashMap::new())
    }

    #[test]
    fn binary_columns_inferred() {
        let t = read("t,y\n1,1\n0,0\n").unwrap();
        assert_eq!(t.n_rows(), 2);
        assert!(t.columns().iter().all(|c| c.kind() == ColumnKind::Binary));
    }

    #[test]
    fn text_and_numeric_inferred() {
        let t = read(
            "comment,x\n\"Can't wait to vote!\",1.5\n\"What is your favorite sitcom?\",2.0\nok then maybe not,3.25\n",
        )
        .unwrap();
        assert_eq!(t.column("comment").unwrap().kind(), ColumnKind::Text);
        assert_eq!(t.column("x").unwrap().kind(), ColumnKind::Numeric);
    }

    #[test]
    fn short_strings_are_categorical() {
        let t = read("c\nbooks\ntoys\nbooks\n").unwrap();
        assert_eq!(t.column("c").unwrap().kind(), ColumnKind::Categorical);
        assert_eq!(t.column("c").unwrap().levels(), vec!["books", "toys"]);
    }

    #[test]
    fn hints_override_inference() {
        let mut hints = HashMap::new();
        hints.insert("c".to_string(), ColumnKind::Categorical);
        let t = read_csv("c\n0\n1\n".as_bytes(), &hints).unwrap();
        assert_eq!(t.column("c").unwrap().kind(), ColumnKind::Categorical);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = read("a,b\n1,2\n3\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_is_schema_error() {
        assert!(matches!(read("a,a\n1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn binary_invariant_enforced() {
        let err = Table::new(vec![Column::binary("b", vec![0, 2])]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn csv_round_trip() {
        let t = Table::new(vec![
            Column::numeric("x", vec![1.5, f64::NAN]),
            Column::binary("b", vec![0, 1]),
            Column::text("s", vec!["hello, \"world\"".into(), "two".into()]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let mut hints = HashMap::new();
        hints.insert("s".to_string(), ColumnKind::Text);
        let back = read_csv(buf.as_slice(), &hints).unwrap();
        assert_eq!(back.text("s").unwrap(), t.text("s").unwrap());
        assert_eq!(back.binary("b").unwrap(), vec![0, 1]);
        assert!(back.numeric("x").unwrap()[1].is_nan());
    }

    fn sample_table() -> Table {
        Table::new(vec![
            Column::categorical(
                "C_true",
                vec![Some("a".into()), Some("b".into()), Some("a".into())],
            ),
            Column::numeric("x", vec![1.0, f64::NAN, 3.0]),
            Column::text(
                "text",
                vec!["good product".into(), "bad product".into(), "good good".into()],
            ),
        ])
        .unwrap()
    }

    fn vocab(t: &Table) -> Vocabulary {
        let cfg = VectorizerConfig {
            min_df: 1,
            ..VectorizerConfig::default()
        };
        fit_vocabulary(&t.text("text").unwrap(), &cfg).unwrap()
    }

    #[test]
    fn widths_add_up() {
        let t = sample_table();
        let v = vocab(&t);
        let m = build_design_matrix(&t, &["C_true".into()], Some("text"), Some(v.clone()), &[])
            .unwrap();
        assert_eq!(m.n_features(), 2 + v.len());
        assert_eq!(m.feature_names()[0], "C_true=a");
        assert_eq!(m.feature_names()[2], "tfidf:bad");
    }

    #[test]
    fn text_only_matrix_is_tfidf_block() {
        let t = sample_table();
        let v = vocab(&t);
        let m = build_design_matrix(&t, &[], Some("text"), Some(v.clone()), &[]).unwrap();
        for i in 0..t.n_rows() {
            let expected: Vec<(usize, f64)> = v.transform(&t.text("text").unwrap()[i]).entries().to_vec();
            assert_eq!(m.row_entries(i), expected);
        }
    }

    #[test]
    fn numeric_missing_is_imputed_with_indicator() {
        let t = sample_table();
        let m = build_design_matrix(&t, &["x".into()], None, None, &[]).unwrap();
        assert_eq!(m.feature_names(), &["x".to_string(), "x:missing".to_string()]);
        assert_eq!(m.dense_row(1), vec![2.0, 1.0]);
        assert_eq!(m.dense_row(0), vec![1.0, 0.0]);
    }

    #[test]
    fn unseen_level_gives_zero_subrow() {
        let t = sample_table();
        let recipe = DesignRecipe::fit(&t, &["C_true".into()], None, None, &[]).unwrap();
        let fitted = recipe.transform(&t).unwrap();
        let other = Table::new(vec![Column::categorical(
            "C_true",
            vec![Some("zzz".into()), Some("b".into())],
        )])
        .unwrap();
        let m = recipe.transform(&other).unwrap();
        assert_eq!(m.dense_row(0), vec![0.0, 0.0]);
        assert_eq!(m.dense_row(1), vec![0.0, 1.0]);
        // fit/transform idempotence on the fitting table
        assert_eq!(recipe.transform(&t).unwrap(), fitted);
    }

    #[test]
    fn ignore_cols_and_errors() {
        let t = sample_table();
        let m = build_design_matrix(&t, &["C_true".into(), "x".into()], None, None, &["x".into()])
            .unwrap();
        assert_eq!(m.n_features(), 2);
        assert!(matches!(
            build_design_matrix(&t, &["nope".into()], None, None, &[]),
            Err(Error::UnknownColumn(_))
        ));
        assert!(matches!(
            build_design_matrix(&t, &[], Some("text"), None, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csr_and_csc_agree() {
        let t = sample_table();
        let v = vocab(&t);
        let m = build_design_matrix(&t, &["C_true".into(), "x".into()], Some("text"), Some(v), &[])
            .unwrap();
        let csr = m.to_csr();
        let csc = csr.to_csc();
        let mut from_csc = vec![vec![0.0; m.n_features()]; m.n_rows()];
        for j in 0..csc.n_cols {
            for (i, v) in csc.col(j) {
                from_csc[i][j] = v;
            }
        }
        for (i, row) in from_csc.iter().enumerate() {
            assert_eq!(row, &m.dense_row(i));
        }
    }
}
