//! Columnar survey tables: schema, CSV ingestion, multi-year harmonization,
//! deduplication and high-missingness pruning.
//!
//! A [`DataTable`] stores every cell as `f64` alongside a missingness mask.
//! Ordinal and nominal cells hold the index of their level in the column
//! schema; text cells keep their raw string in a side buffer. Masked cells
//! are never read by any consumer: accessors return `None` for them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Ordinal,
    Nominal,
    Text,
    Binary,
}

impl ColumnKind {
    pub fn is_categorical(self) -> bool {
        matches!(self, ColumnKind::Ordinal | ColumnKind::Nominal)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self::plain(name, ColumnKind::Numeric)
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self::plain(name, ColumnKind::Binary)
    }

    pub fn text(name: impl Into<String>) -> Self {
        Self::plain(name, ColumnKind::Text)
    }

    pub fn ordinal<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Ordinal,
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn nominal<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Nominal,
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    fn plain(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
            levels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_categorical() {
            if self.levels.is_empty() {
                return Err(Error::Schema(format!(
                    "column `{}` is {:?} but declares no levels",
                    self.name, self.kind
                )));
            }
            let mut seen = HashSet::new();
            for l in &self.levels {
                if !seen.insert(l.as_str()) {
                    return Err(Error::Schema(format!(
                        "column `{}` repeats level `{l}`",
                        self.name
                    )));
                }
            }
        } else if !self.levels.is_empty() {
            return Err(Error::Schema(format!(
                "column `{}` is {:?} and must not declare levels",
                self.name, self.kind
            )));
        }
        Ok(())
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut names = HashSet::new();
    for col in schema {
        col.validate()?;
        if !names.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column name `{}`", col.name)));
        }
    }
    Ok(())
}

/// One cell handed to [`TableBuilder::push_row`].
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Value(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: Vec<ColumnSchema>,
    values: Vec<f64>,
    missing: Vec<bool>,
    text: Vec<Option<Vec<String>>>,
    row_ids: Vec<u64>,
}

impl DataTable {
    pub fn empty(schema: Vec<ColumnSchema>) -> Result<Self> {
        validate_schema(&schema)?;
        let text = schema
            .iter()
            .map(|c| (c.kind == ColumnKind::Text).then(Vec::new))
            .collect();
        Ok(Self {
            schema,
            values: Vec::new(),
            missing: Vec::new(),
            text,
            row_ids: Vec::new(),
        })
    }

    /// Fully observed numeric table from a matrix; columns are named `names`.
    pub fn from_matrix(names: &[String], m: &Matrix) -> Result<Self> {
        if names.len() != m.n_cols() {
            return Err(Error::Shape {
                expected: m.n_cols(),
                actual: names.len(),
            });
        }
        let schema = names.iter().map(ColumnSchema::numeric).collect();
        let mut t = Self::empty(schema)?;
        t.values = m.as_slice().to_vec();
        t.missing = vec![false; m.n_rows() * m.n_cols()];
        t.row_ids = (0..m.n_rows() as u64).collect();
        Ok(t)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn column_names(&self) -> Vec<String> {
        self.schema.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn set_row_ids(&mut self, ids: Vec<u64>) -> Result<()> {
        if ids.len() != self.n_rows() {
            return Err(Error::Shape {
                expected: self.n_rows(),
                actual: ids.len(),
            });
        }
        self.row_ids = ids;
        Ok(())
    }

    #[inline]
    pub fn is_missing(&self, r: usize, c: usize) -> bool {
        self.missing[r * self.n_cols() + c]
    }

    /// Stored value, or `None` when the cell is masked.
    #[inline]
    pub fn value(&self, r: usize, c: usize) -> Option<f64> {
        let i = r * self.n_cols() + c;
        (!self.missing[i]).then(|| self.values[i])
    }

    pub fn text(&self, r: usize, c: usize) -> Option<&str> {
        if self.is_missing(r, c) {
            return None;
        }
        self.text[c].as_ref().map(|t| t[r].as_str())
    }

    pub fn set_value(&mut self, r: usize, c: usize, v: f64) {
        let i = r * self.n_cols() + c;
        self.values[i] = v;
        self.missing[i] = false;
    }

    pub fn set_missing(&mut self, r: usize, c: usize) {
        let i = r * self.n_cols() + c;
        self.values[i] = 0.0;
        self.missing[i] = true;
        if let Some(t) = self.text[c].as_mut() {
            t[r].clear();
        }
    }

    pub fn missing_count(&self, c: usize) -> usize {
        (0..self.n_rows()).filter(|&r| self.is_missing(r, c)).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Observed values of column `c`.
    pub fn observed(&self, c: usize) -> Vec<f64> {
        (0..self.n_rows()).filter_map(|r| self.value(r, c)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> DataTable {
        let nc = self.n_cols();
        let mut out = DataTable {
            schema: self.schema.clone(),
            values: Vec::with_capacity(idx.len() * nc),
            missing: Vec::with_capacity(idx.len() * nc),
            text: self
                .text
                .iter()
                .map(|t| t.as_ref().map(|t| idx.iter().map(|&i| t[i].clone()).collect()))
                .collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        };
        for &i in idx {
            out.values.extend_from_slice(&self.values[i * nc..(i + 1) * nc]);
            out.missing.extend_from_slice(&self.missing[i * nc..(i + 1) * nc]);
        }
        out
    }

    pub fn select_columns(&self, idx: &[usize]) -> DataTable {
        let nc = self.n_cols();
        let n = self.n_rows();
        let mut values = Vec::with_capacity(n * idx.len());
        let mut missing = Vec::with_capacity(n * idx.len());
        for r in 0..n {
            for &c in idx {
                values.push(self.values[r * nc + c]);
                missing.push(self.missing[r * nc + c]);
            }
        }
        DataTable {
            schema: idx.iter().map(|&c| self.schema[c].clone()).collect(),
            values,
            missing,
            text: idx.iter().map(|&c| self.text[c].clone()).collect(),
            row_ids: self.row_ids.clone(),
        }
    }

    /// Dense matrix of a fully observed, non-text table.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if let Some(c) = self.schema.iter().find(|c| c.kind == ColumnKind::Text) {
            return Err(Error::Schema(format!(
                "text column `{}` cannot be converted to a numeric matrix",
                c.name
            )));
        }
        if let Some(i) = self.missing.iter().position(|&m| m) {
            let (r, c) = (i / self.n_cols(), i % self.n_cols());
            return Err(Error::DegenerateInput(format!(
                "cell (row {r}, column `{}`) is still missing",
                self.schema[c].name
            )));
        }
        Matrix::from_vec(self.n_rows(), self.n_cols(), self.values.clone())
    }

    /// Appends a new column at the end.
    pub fn push_column(&mut self, schema: ColumnSchema, cells: Vec<Cell>) -> Result<()> {
        if cells.len() != self.n_rows() {
            return Err(Error::Shape {
                expected: self.n_rows(),
                actual: cells.len(),
            });
        }
        let mut new_schema = self.schema.clone();
        new_schema.push(schema);
        validate_schema(&new_schema)?;
        let mut b = TableBuilder::new(new_schema)?;
        for (r, cell) in cells.into_iter().enumerate() {
            let mut row = self.row_cells(r);
            row.push(cell);
            b.push_row(row)?;
        }
        let ids = self.row_ids.clone();
        *self = b.finish();
        self.row_ids = ids;
        Ok(())
    }

    /// Cells of row `r` in schema order.
    pub fn row_cells(&self, r: usize) -> Vec<Cell> {
        (0..self.n_cols())
            .map(|c| {
                if self.is_missing(r, c) {
                    Cell::Missing
                } else if let Some(t) = &self.text[c] {
                    Cell::Text(t[r].clone())
                } else {
                    Cell::Value(self.values[r * self.n_cols() + c])
                }
            })
            .collect()
    }
}

/// Row-at-a-time table construction with per-cell validation.
pub struct TableBuilder {
    table: DataTable,
}

impl TableBuilder {
    pub fn new(schema: Vec<ColumnSchema>) -> Result<Self> {
        Ok(Self {
            table: DataTable::empty(schema)?,
        })
    }

    pub fn push_row(&mut self, cells: Vec<Cell>) -> Result<()> {
        let t = &mut self.table;
        if cells.len() != t.n_cols() {
            return Err(Error::Shape {
                expected: t.n_cols(),
                actual: cells.len(),
            });
        }
        let r = t.n_rows();
        for (c, cell) in cells.into_iter().enumerate() {
            let col = &t.schema[c];
            match cell {
                Cell::Missing => {
                    t.values.push(0.0);
                    t.missing.push(true);
                    if let Some(buf) = t.text[c].as_mut() {
                        buf.push(String::new());
                    }
                }
                Cell::Text(s) => {
                    let buf = t.text[c].as_mut().ok_or_else(|| {
                        Error::Schema(format!("text cell given for non-text column `{}`", col.name))
                    })?;
                    buf.push(s);
                    t.values.push(0.0);
                    t.missing.push(false);
                }
                Cell::Value(v) => {
                    if col.kind == ColumnKind::Text {
                        return Err(Error::Schema(format!(
                            "numeric cell given for text column `{}`",
                            col.name
                        )));
                    }
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: r,
                            column: col.name.clone(),
                            message: format!("non-finite value {v}"),
                        });
                    }
                    if col.kind.is_categorical()
                        && (v < 0.0 || v.fract() != 0.0 || v as usize >= col.levels.len())
                    {
                        return Err(Error::Schema(format!(
                            "row {r}, column `{}`: level index {v} out of range",
                            col.name
                        )));
                    }
                    t.values.push(v);
                    t.missing.push(false);
                }
            }
        }
        t.row_ids.push(r as u64);
        Ok(())
    }

    pub fn finish(self) -> DataTable {
        self.table
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Reads a CSV file against `schema`. Header order may differ from schema
/// order; the returned table follows the schema.
pub fn read_csv(path: impl AsRef<Path>, schema: &[ColumnSchema]) -> Result<DataTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file, schema)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, schema: &[ColumnSchema]) -> Result<DataTable> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let header_names: Vec<&str> = header.iter().collect();
    if header_names.len() != schema.len() {
        return Err(Error::Schema(format!(
            "header has {} columns, schema has {}",
            header_names.len(),
            schema.len()
        )));
    }
    // position in file for every schema column
    let mut positions = Vec::with_capacity(schema.len());
    for col in schema {
        let pos = header_names
            .iter()
            .position(|h| *h == col.name)
            .ok_or_else(|| Error::Schema(format!("column `{}` missing from header", col.name)))?;
        positions.push(pos);
    }
    let mut seen = HashSet::new();
    for h in &header_names {
        if !seen.insert(*h) {
            return Err(Error::Schema(format!("duplicate header `{h}`")));
        }
    }

    let mut builder = TableBuilder::new(schema.to_vec())?;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let mut cells = Vec::with_capacity(schema.len());
        for (col, &pos) in schema.iter().zip(&positions) {
            let raw = record.get(pos).unwrap_or("");
            let trimmed = raw.trim();
            if is_missing_token(trimmed) {
                cells.push(Cell::Missing);
                continue;
            }
            let cell = match col.kind {
                ColumnKind::Text => Cell::Text(raw.to_string()),
                ColumnKind::Ordinal | ColumnKind::Nominal => {
                    let idx = col.level_index(trimmed).ok_or_else(|| {
                        Error::Schema(format!(
                            "row {r}, column `{}`: unknown category `{trimmed}`",
                            col.name
                        ))
                    })?;
                    Cell::Value(idx as f64)
                }
                ColumnKind::Numeric | ColumnKind::Binary => {
                    let v: f64 = trimmed.parse().map_err(|_| Error::Parse {
                        row: r,
                        column: col.name.clone(),
                        message: format!("`{trimmed}` is not a decimal number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: r,
                            column: col.name.clone(),
                            message: format!("`{trimmed}` is not finite"),
                        });
                    }
                    if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                        return Err(Error::Parse {
                            row: r,
                            column: col.name.clone(),
                            message: format!("binary column holds `{trimmed}`"),
                        });
                    }
                    Cell::Value(v)
                }
            };
            cells.push(cell);
        }
        builder.push_row(cells)?;
    }
    Ok(builder.finish())
}

/// Writes `table` with the same conventions [`read_csv`] accepts: missing
/// cells become empty strings, categorical cells their level label.
pub fn write_csv(path: impl AsRef<Path>, table: &DataTable) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, table)
}

pub fn write_csv_to<W: std::io::Write>(writer: W, table: &DataTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(table.schema.iter().map(|c| c.name.as_str()))?;
    let mut row = Vec::with_capacity(table.n_cols());
    for r in 0..table.n_rows() {
        row.clear();
        for (c, col) in table.schema.iter().enumerate() {
            let s = match table.value(r, c) {
                None => String::new(),
                Some(v) => match col.kind {
                    ColumnKind::Text => table.text(r, c).unwrap_or_default().to_string(),
                    ColumnKind::Ordinal | ColumnKind::Nominal => col.levels[v as usize].clone(),
                    ColumnKind::Numeric | ColumnKind::Binary => format!("{v}"),
                },
            };
            row.push(s);
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Merges per-year tables into one, keeping only columns present (after
/// renaming) in every input.
pub fn harmonize(tables: &[DataTable], rename_map: &BTreeMap<String, String>) -> Result<DataTable> {
    if tables.is_empty() {
        return Err(Error::Harmonization("no input tables".into()));
    }

    let renamed: Vec<Vec<ColumnSchema>> = tables
        .iter()
        .map(|t| {
            let cols: Vec<ColumnSchema> = t
                .schema
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    if let Some(new) = rename_map.get(&c.name) {
                        c.name = new.clone();
                    }
                    c
                })
                .collect();
            validate_schema(&cols).map(|_| cols)
        })
        .collect::<Result<_>>()?;

    let lookups: Vec<HashMap<&str, usize>> = renamed
        .iter()
        .map(|cols| cols.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect())
        .collect();

    let mut keep: Vec<(ColumnSchema, Vec<usize>)> = Vec::new();
    'outer: for col in &renamed[0] {
        let mut positions = Vec::with_capacity(tables.len());
        for (t, lookup) in lookups.iter().enumerate() {
            match lookup.get(col.name.as_str()) {
                None => continue 'outer,
                Some(&i) => {
                    let other = &renamed[t][i];
                    if other.kind != col.kind || other.levels != col.levels {
                        return Err(Error::Schema(format!(
                            "column `{}` has conflicting types or level sets across tables",
                            col.name
                        )));
                    }
                    positions.push(i);
                }
            }
        }
        keep.push((col.clone(), positions));
    }
    if keep.is_empty() {
        return Err(Error::Harmonization("no column is shared by all tables".into()));
    }

    let mut b = TableBuilder::new(keep.iter().map(|(c, _)| c.clone()).collect())?;
    for (t, table) in tables.iter().enumerate() {
        for r in 0..table.n_rows() {
            let cells = table.row_cells(r);
            b.push_row(keep.iter().map(|(_, pos)| cells[pos[t]].clone()).collect())?;
        }
    }
    Ok(b.finish())
}

/// Drops rows whose values and missingness pattern repeat an earlier row.
pub fn deduplicate(table: &DataTable) -> DataTable {
    #[derive(Hash, PartialEq, Eq)]
    enum Key<'a> {
        Missing,
        Num(u64),
        Text(&'a str),
    }
    let mut seen: HashSet<Vec<Key>> = HashSet::with_capacity(table.n_rows());
    let mut keep = Vec::new();
    for r in 0..table.n_rows() {
        let key: Vec<Key> = (0..table.n_cols())
            .map(|c| match table.value(r, c) {
                None => Key::Missing,
                Some(v) => match table.text(r, c) {
                    Some(s) => Key::Text(s),
                    // +0.0 folds -0.0 onto 0.0
                    None => Key::Num((v + 0.0).to_bits()),
                },
            })
            .collect();
        if seen.insert(key) {
            keep.push(r);
        }
    }
    table.select_rows(&keep)
}

/// Removes columns whose missing fraction is strictly above `threshold`.
pub fn drop_high_missingness(table: &DataTable, threshold: f64) -> Result<(DataTable, Vec<String>)> {
    if table.n_rows() == 0 {
        return Err(Error::DegenerateInput(
            "cannot compute missingness of a table with no rows".into(),
        ));
    }
    if threshold.is_nan() {
        return Err(Error::Parameter("missingness threshold is NaN".into()));
    }
    let n = table.n_rows() as f64;
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for c in 0..table.n_cols() {
        if table.missing_count(c) as f64 / n > threshold {
            dropped.push(table.schema[c].name.clone());
        } else {
            keep.push(c);
        }
    }
    Ok((table.select_columns(&keep), dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "login")]
    LoginBinary,
    #[serde(rename = "message")]
    MessageMulticlass,
    /// Message posting recoded as none versus at least one.
    #[serde(rename = "message_binary")]
    MessageBinary,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::LoginBinary | Task::MessageBinary => 2,
            Task::MessageMulticlass => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::LoginBinary => "login",
            Task::MessageMulticlass => "message",
            Task::MessageBinary => "message_binary",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "login" => Some(Task::LoginBinary),
            "message" => Some(Task::MessageMulticlass),
            "message_binary" => Some(Task::MessageBinary),
            _ => None,
        }
    }
}

/// Per-row class labels for one outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub task: Task,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabelVector {
    pub fn new(task: Task, labels: Vec<usize>) -> Result<Self> {
        let n_classes = task.n_classes();
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Parameter(format!(
                "label {bad} outside [0, {n_classes}) for task `{}`",
                task.name()
            )));
        }
        Ok(Self {
            task,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, idx: &[usize]) -> LabelVector {
        LabelVector {
            task: self.task,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Writes a labels file: `row_id` followed by one column per task.
pub fn write_labels(path: impl AsRef<Path>, row_ids: &[u64], labels: &[&LabelVector]) -> Result<()> {
    let path = path.as_ref();
    for l in labels {
        if l.len() != row_ids.len() {
            return Err(Error::Shape {
                expected: row_ids.len(),
                actual: l.len(),
            });
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row_id".to_string()];
    header.extend(labels.iter().map(|l| l.task.name().to_string()));
    w.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(labels.iter().map(|l| l.labels[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a labels file written by [`write_labels`].
pub fn read_labels(path: impl AsRef<Path>) -> Result<(Vec<u64>, BTreeMap<String, LabelVector>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("row_id") {
        return Err(Error::Schema("labels file must start with a `row_id` column".into()));
    }
    let tasks: Vec<Task> = header
        .iter()
        .skip(1)
        .map(|h| Task::from_name(h).ok_or_else(|| Error::Schema(format!("unknown task column `{h}`"))))
        .collect::<Result<_>>()?;
    let mut ids = Vec::new();
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); tasks.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize, name: &str| -> Result<u64> {
            rec.get(i).unwrap_or("").trim().parse().map_err(|_| Error::Parse {
                row: r,
                column: name.to_string(),
                message: "expected a non-negative integer".into(),
            })
        };
        ids.push(parse(0, "row_id")?);
        for (t, task) in tasks.iter().enumerate() {
            cols[t].push(parse(t + 1, task.name())? as usize);
        }
    }
    let mut out = BTreeMap::new();
    for (task, labels) in tasks.into_iter().zip(cols) {
        out.insert(task.name().to_string(), LabelVector::new(task, labels)?);
    }
    Ok((ids, out))
}
