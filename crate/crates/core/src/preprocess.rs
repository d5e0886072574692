//! Training-only preprocessing: text normalization, categorical encoding,
//! two-stage KNN/median imputation, standardization and univariate ANOVA
//! feature selection.
//!
//! Every `fit_*` function looks at training rows only; the matching
//! transform is then applied unchanged to held-out rows.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Cell, ColumnKind, ColumnSchema, DataTable, LabelVector, TableBuilder};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::textnorm::{RuleDictionary, TextConfig, TextNormalizer};

// ---------------------------------------------------------------------------
// KNN imputation
// ---------------------------------------------------------------------------

/// Euclidean distance over the coordinates observed in both rows, rescaled
/// by `total / observed`. Rows sharing no observed coordinate are infinitely
/// far apart.
pub fn masked_euclidean(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += (x - y) * (x - y);
            shared += 1;
        }
    }
    if shared == 0 {
        return f64::INFINITY;
    }
    (a.len() as f64 / shared as f64 * sum).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub k: usize,
    pub columns: Vec<String>,
    /// Training snapshot, row-major, `None` where the cell was missing.
    pub reference: Vec<Vec<Option<f64>>>,
    pub medians: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn table_rows(table: &DataTable) -> Vec<Vec<Option<f64>>> {
    (0..table.n_rows())
        .map(|r| (0..table.n_cols()).map(|c| table.value(r, c)).collect())
        .collect()
}

fn reject_text(table: &DataTable) -> Result<()> {
    if let Some(c) = table.schema().iter().find(|c| c.kind == ColumnKind::Text) {
        return Err(Error::Schema(format!(
            "text column `{}` must be normalized and encoded first",
            c.name
        )));
    }
    Ok(())
}

pub fn fit_knn_imputer(train: &DataTable, k: usize) -> Result<ImputerModel> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > train.n_rows() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the {} training rows",
            train.n_rows()
        )));
    }
    reject_text(train)?;
    let mut medians = Vec::with_capacity(train.n_cols());
    for c in 0..train.n_cols() {
        let mut obs = train.observed(c);
        if obs.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "column `{}` has no observed training value",
                train.schema()[c].name
            )));
        }
        medians.push(median(&mut obs));
    }
    Ok(ImputerModel {
        k,
        columns: train.column_names(),
        reference: table_rows(train),
        medians,
    })
}

impl ImputerModel {
    /// Stage-1 value for cell `col` of `row`: mean over the k nearest
    /// reference rows observing `col`, with every row tied at the k-th
    /// distance included. `None` when no reference row qualifies.
    fn knn_value(&self, order: &[(f64, usize)], col: usize) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut kth = f64::NAN;
        for &(d, i) in order {
            if d.is_infinite() {
                break;
            }
            let Some(v) = self.reference[i][col] else {
                continue;
            };
            if count >= self.k && d > kth {
                break;
            }
            sum += v;
            count += 1;
            if count == self.k {
                kth = d;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    fn impute_row(&self, row: &[Option<f64>]) -> Vec<f64> {
        if row.iter().all(Option::is_some) {
            return row.iter().map(|v| v.unwrap()).collect();
        }
        let mut order: Vec<(f64, usize)> = self
            .reference
            .iter()
            .enumerate()
            .map(|(i, r)| (masked_euclidean(row, r), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        row.iter()
            .enumerate()
            .map(|(c, v)| match v {
                Some(v) => *v,
                None => self.knn_value(&order, c).unwrap_or(self.medians[c]),
            })
            .collect()
    }
}

/// Fills every missing cell: KNN mean first, column median where no
/// neighbor observes the column. The output mask is all-false.
pub fn impute(model: &ImputerModel, table: &DataTable) -> Result<DataTable> {
    if table.column_names() != model.columns {
        return Err(Error::Schema("table columns do not match the imputer's reference".into()));
    }
    let rows = table_rows(table);
    let filled: Vec<Vec<f64>> = rows.par_iter().map(|r| model.impute_row(r)).collect();
    let mut out = table.clone();
    for (r, vals) in filled.into_iter().enumerate() {
        for (c, v) in vals.into_iter().enumerate() {
            out.set_value(r, c, v);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Categorical encoding
// ---------------------------------------------------------------------------

pub fn n_bits_for(n_categories: usize) -> usize {
    let n = n_categories.max(2);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EncodeRule {
    Passthrough,
    Ordinal {
        levels: Vec<String>,
    },
    /// `categories[code]` is the label whose little-endian base-2 digits are
    /// `code`; codes follow first appearance in the training rows.
    Binary {
        categories: Vec<String>,
        n_bits: usize,
    },
}

impl EncodeRule {
    /// Inverse of the binary code for one row's bits.
    pub fn decode(&self, bits: &[f64]) -> Option<&str> {
        match self {
            EncodeRule::Binary { categories, .. } => {
                let code = bits
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (i, &b)| acc | (usize::from(b >= 0.5) << i));
                categories.get(code).map(String::as_str)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub columns: Vec<(String, EncodeRule)>,
}

pub fn fit_encoder(train: &DataTable) -> Result<EncoderSpec> {
    let mut columns = Vec::with_capacity(train.n_cols());
    for (c, col) in train.schema().iter().enumerate() {
        let rule = match col.kind {
            ColumnKind::Numeric | ColumnKind::Binary => EncodeRule::Passthrough,
            ColumnKind::Ordinal => EncodeRule::Ordinal {
                levels: col.levels.clone(),
            },
            ColumnKind::Nominal => {
                let mut seen: Vec<usize> = Vec::new();
                for v in train.observed(c) {
                    let idx = v as usize;
                    if !seen.contains(&idx) {
                        seen.push(idx);
                    }
                }
                let categories: Vec<String> = seen.iter().map(|&i| col.levels[i].clone()).collect();
                EncodeRule::Binary {
                    n_bits: n_bits_for(categories.len()),
                    categories,
                }
            }
            ColumnKind::Text => {
                return Err(Error::Encoding(format!(
                    "text column `{}` has no encoding rule; normalize it first",
                    col.name
                )))
            }
        };
        columns.push((col.name.clone(), rule));
    }
    Ok(EncoderSpec { columns })
}

/// Applies the encoder. Nominal columns expand to `<name>_b0 … _b{n-1}`;
/// a missing nominal cell leaves all its bits missing.
pub fn encode(table: &DataTable, spec: &EncoderSpec) -> Result<DataTable> {
    if table.n_cols() != spec.columns.len()
        || table.schema().iter().zip(&spec.columns).any(|(c, (n, _))| &c.name != n)
    {
        return Err(Error::Encoding("encoder does not cover the table's columns".into()));
    }
    let mut schema = Vec::new();
    for (col, (_, rule)) in table.schema().iter().zip(&spec.columns) {
        match rule {
            EncodeRule::Passthrough | EncodeRule::Ordinal { .. } => {
                if col.kind == ColumnKind::Text || col.kind == ColumnKind::Nominal {
                    return Err(Error::Encoding(format!("column `{}` needs a binary rule", col.name)));
                }
                schema.push(col.clone());
            }
            EncodeRule::Binary { n_bits, .. } => {
                if col.kind != ColumnKind::Nominal {
                    return Err(Error::Encoding(format!("column `{}` is not nominal", col.name)));
                }
                for b in 0..*n_bits {
                    schema.push(ColumnSchema::binary(format!("{}_b{b}", col.name)));
                }
            }
        }
    }
    // code lookup per nominal column: schema level index -> code
    let lookups: Vec<Option<BTreeMap<usize, usize>>> = table
        .schema()
        .iter()
        .zip(&spec.columns)
        .map(|(col, (_, rule))| match rule {
            EncodeRule::Binary { categories, .. } => Some(
                categories
                    .iter()
                    .enumerate()
                    .filter_map(|(code, label)| col.level_index(label).map(|i| (i, code)))
                    .collect(),
            ),
            _ => None,
        })
        .collect();

    let mut b = TableBuilder::new(schema)?;
    for r in 0..table.n_rows() {
        let mut cells = Vec::new();
        for (c, (_, rule)) in spec.columns.iter().enumerate() {
            match rule {
                EncodeRule::Passthrough | EncodeRule::Ordinal { .. } => {
                    cells.push(table.value(r, c).map_or(Cell::Missing, Cell::Value));
                }
                EncodeRule::Binary { n_bits, .. } => match table.value(r, c) {
                    None => cells.extend((0..*n_bits).map(|_| Cell::Missing)),
                    Some(v) => {
                        let level = v as usize;
                        let code = lookups[c].as_ref().unwrap().get(&level).copied().ok_or_else(|| {
                            Error::Encoding(format!(
                                "unseen category `{}` in column `{}`",
                                table.schema()[c].levels[level],
                                table.schema()[c].name
                            ))
                        })?;
                        cells.extend((0..*n_bits).map(|bit| Cell::Value(((code >> bit) & 1) as f64)));
                    }
                },
            }
        }
        b.push_row(cells)?;
    }
    let mut out = b.finish();
    out.set_row_ids(table.row_ids().to_vec())?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerModel {
    pub means: Vec<f64>,
    /// Population (divisor n) standard deviations.
    pub stds: Vec<f64>,
}

impl ScalerModel {
    pub fn is_constant(&self, c: usize) -> bool {
        self.stds[c] == 0.0
    }

    #[inline]
    pub fn scale(&self, c: usize, v: f64) -> f64 {
        if self.stds[c] == 0.0 {
            0.0
        } else {
            (v - self.means[c]) / self.stds[c]
        }
    }
}

pub fn fit_scaler(train: &DataTable) -> Result<ScalerModel> {
    if train.n_rows() == 0 {
        return Err(Error::DegenerateInput("cannot fit a scaler on zero rows".into()));
    }
    let mut means = Vec::with_capacity(train.n_cols());
    let mut stds = Vec::with_capacity(train.n_cols());
    for c in 0..train.n_cols() {
        let obs = train.observed(c);
        if obs.is_empty() {
            means.push(0.0);
            stds.push(0.0);
            continue;
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok(ScalerModel { means, stds })
}

pub fn apply_scaler(model: &ScalerModel, table: &DataTable) -> Result<DataTable> {
    if model.means.len() != table.n_cols() {
        return Err(Error::Shape {
            expected: model.means.len(),
            actual: table.n_cols(),
        });
    }
    let mut out = table.clone();
    for r in 0..table.n_rows() {
        for c in 0..table.n_cols() {
            if let Some(v) = table.value(r, c) {
                out.set_value(r, c, model.scale(c, v));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Univariate selection
// ---------------------------------------------------------------------------

/// One-way ANOVA F statistic of `values` grouped by `labels`. Zero
/// within-group variance with nonzero between-group variance scores +inf.
pub fn anova_f(values: &[f64], labels: &[usize], n_classes: usize) -> f64 {
    let n = values.len();
    let mut sums = vec![0.0; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (&v, &l) in values.iter().zip(labels) {
        sums[l] += v;
        counts[l] += 1;
    }
    let groups = counts.iter().filter(|&&c| c > 0).count();
    let grand = values.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let ssb: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * (m - grand) * (m - grand))
        .sum();
    let ssw: f64 = values.iter().zip(labels).map(|(v, &l)| (v - means[l]) * (v - means[l])).sum();
    // numerical dust from constant columns
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-12 * scale * scale * n as f64;
    let ssb = if ssb <= eps { 0.0 } else { ssb };
    let ssw = if ssw <= eps { 0.0 } else { ssw };
    if ssb == 0.0 {
        return 0.0;
    }
    if ssw == 0.0 || n <= groups {
        return f64::INFINITY;
    }
    (ssb / (groups - 1) as f64) / (ssw / (n - groups) as f64)
}

/// Indices of the `top_k` columns by ANOVA F, descending; ties go to the
/// lower column index.
pub fn select_univariate(train: &DataTable, labels: &LabelVector, top_k: usize) -> Result<Vec<usize>> {
    if top_k > train.n_cols() {
        return Err(Error::Parameter(format!(
            "top_k = {top_k} exceeds {} columns",
            train.n_cols()
        )));
    }
    if labels.len() != train.n_rows() {
        return Err(Error::Shape {
            expected: train.n_rows(),
            actual: labels.len(),
        });
    }
    let distinct = labels.class_counts().iter().filter(|&&c| c > 0).count();
    if distinct < 2 {
        return Err(Error::Scoring("univariate scoring needs at least two label values".into()));
    }
    let m = train.to_matrix()?;
    let mut scored: Vec<(f64, usize)> = (0..m.n_cols())
        .map(|c| (anova_f(&m.column(c), &labels.labels, labels.n_classes), c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(top_k).map(|(_, c)| c).collect())
}

// ---------------------------------------------------------------------------
// Bundled preprocessing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub knn_k: usize,
    /// `None` keeps every encoded column.
    pub top_k: Option<usize>,
    pub text: TextConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            knn_k: 5,
            top_k: None,
            text: TextConfig::default(),
        }
    }
}

/// Every fitted preprocessing step, serializable as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub input_schema: Vec<ColumnSchema>,
    pub text: BTreeMap<String, TextNormalizer>,
    pub encoders: EncoderSpec,
    pub k: usize,
    pub medians: Vec<f64>,
    pub reference: Vec<Vec<Option<f64>>>,
    pub encoded_columns: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub selected: Vec<usize>,
}

impl Preprocessor {
    /// Fits every stage on `train` and returns the model together with the
    /// transformed training matrix.
    pub fn fit(
        train: &DataTable,
        labels: &LabelVector,
        config: &PreprocessConfig,
        rules: &BTreeMap<String, RuleDictionary>,
        seed: u64,
    ) -> Result<(Self, Matrix)> {
        let mut text = BTreeMap::new();
        for (c, col) in train.schema().iter().enumerate() {
            if col.kind != ColumnKind::Text {
                continue;
            }
            let corpus: Vec<&str> = (0..train.n_rows()).filter_map(|r| train.text(r, c)).collect();
            let dict = rules.get(&col.name).cloned().unwrap_or_default();
            let norm = TextNormalizer::fit(&corpus, &config.text, dict, crate::rng::derive_seed(seed, &col.name))?;
            text.insert(col.name.clone(), norm);
        }
        let normalized = normalize_text_columns(train, &text)?;
        let encoders = fit_encoder(&normalized)?;
        let encoded = encode(&normalized, &encoders)?;
        let imputer = fit_knn_imputer(&encoded, config.knn_k)?;
        let imputed = impute(&imputer, &encoded)?;
        let scaler = fit_scaler(&imputed)?;
        let scaled = apply_scaler(&scaler, &imputed)?;
        let top_k = config.top_k.unwrap_or(scaled.n_cols()).min(scaled.n_cols());
        let selected = select_univariate(&scaled, labels, top_k)?;
        let x = scaled.to_matrix()?.select_cols(&selected);
        let model = Self {
            input_schema: train.schema().to_vec(),
            text,
            encoders,
            k: imputer.k,
            medians: imputer.medians,
            reference: imputer.reference,
            encoded_columns: imputer.columns,
            means: scaler.means,
            stds: scaler.stds,
            selected,
        };
        Ok((model, x))
    }

    pub fn imputer(&self) -> ImputerModel {
        ImputerModel {
            k: self.k,
            columns: self.encoded_columns.clone(),
            reference: self.reference.clone(),
            medians: self.medians.clone(),
        }
    }

    pub fn scaler(&self) -> ScalerModel {
        ScalerModel {
            means: self.means.clone(),
            stds: self.stds.clone(),
        }
    }

    /// Names of the output feature columns.
    pub fn feature_names(&self) -> Vec<String> {
        self.selected.iter().map(|&c| self.encoded_columns[c].clone()).collect()
    }

    pub fn transform(&self, table: &DataTable) -> Result<Matrix> {
        if table.schema() != self.input_schema.as_slice() {
            return Err(Error::Schema("table schema differs from the fitted preprocessor".into()));
        }
        let normalized = normalize_text_columns(table, &self.text)?;
        let encoded = encode(&normalized, &self.encoders)?;
        let imputed = impute(&self.imputer(), &encoded)?;
        let scaled = apply_scaler(&self.scaler(), &imputed)?;
        Ok(scaled.to_matrix()?.select_cols(&self.selected))
    }
}

/// Replaces every text column by a nominal column of normalized labels.
pub fn normalize_text_columns(table: &DataTable, text: &BTreeMap<String, TextNormalizer>) -> Result<DataTable> {
    let mut schema = Vec::with_capacity(table.n_cols());
    for col in table.schema() {
        if col.kind == ColumnKind::Text {
            let norm = text
                .get(&col.name)
                .ok_or_else(|| Error::Schema(format!("no normalizer fitted for `{}`", col.name)))?;
            schema.push(ColumnSchema::nominal(col.name.clone(), norm.categories()));
        } else {
            schema.push(col.clone());
        }
    }
    let mut b = TableBuilder::new(schema.clone())?;
    for r in 0..table.n_rows() {
        let mut cells = table.row_cells(r);
        for (c, col) in table.schema().iter().enumerate() {
            if col.kind != ColumnKind::Text {
                continue;
            }
            if let Cell::Text(s) = &cells[c] {
                let label = text[&col.name].normalize(s);
                let idx = schema[c].level_index(&label).expect("normalizer emits its own categories");
                cells[c] = Cell::Value(idx as f64);
            }
        }
        b.push_row(cells)?;
    }
    let mut out = b.finish();
    out.set_row_ids(table.row_ids().to_vec())?;
    Ok(out)
}
