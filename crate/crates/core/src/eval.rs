//! Classification metrics, ROC-AUC, percentile bootstrap intervals and the
//! comparison tables built from them.
//!
//! Undefined precision or recall (empty denominator) counts as 0. Macro
//! averages weight every class equally, including classes that never occur.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::argmax;
use crate::matrix::Matrix;
use crate::rng::{mix64, seeded};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            actual: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::Evaluation("no rows to evaluate".into()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::Evaluation(format!("label outside [0, {k}): true {t}, predicted {p}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Report the class-1 values.
    BinaryPositiveClass,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class (precision, recall, f1).
pub fn per_class(cm: &ConfusionMatrix) -> Vec<(f64, f64, f64)> {
    let k = cm.k();
    (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let actual: u64 = cm.counts[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            (p, r, harmonic(p, r))
        })
        .collect()
}

pub fn metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Scores {
    let accuracy = ratio(cm.trace(), cm.total());
    let pc = per_class(cm);
    let (precision, recall, f1) = match averaging {
        Averaging::BinaryPositiveClass => pc.get(1).copied().unwrap_or((0.0, 0.0, 0.0)),
        Averaging::Macro => {
            let k = pc.len().max(1) as f64;
            let sum = pc.iter().fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
            (sum.0 / k, sum.1 / k, sum.2 / k)
        }
    };
    Scores {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Mann-Whitney AUC of `positive` against the other rows, ties counted ½.
///
/// Uses mid-ranks; the numerator is a half-integer, so the result is the
/// same float as explicit pair enumeration.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Result<f64> {
    if positive.len() != scores.len() {
        return Err(Error::Shape {
            expected: positive.len(),
            actual: scores.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation("AUC is undefined when only one class is present".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the positive rank sum, so tied mid-ranks stay integral
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let mid2 = (i + j + 2) as u64;
        let pos_in_block = order[i..=j].iter().filter(|&&r| positive[r]).count() as u64;
        rank2_sum += mid2 * pos_in_block;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    // 2U = 2R - n_pos (n_pos + 1)
    let u2 = rank2_sum - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// Class-1 probability column against label 1.
    Binary,
    /// Mean of one-vs-rest AUCs over classes.
    OvrMacro,
    /// Mean over class pairs of the two directed pairwise AUCs.
    OvoMacro,
}

/// AUC from a probability matrix (one column per class).
pub fn roc_auc(y_true: &[usize], proba: &Matrix, mode: AucMode) -> Result<f64> {
    if proba.n_rows() != y_true.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            actual: proba.n_rows(),
        });
    }
    let k = proba.n_cols();
    match mode {
        AucMode::Binary => {
            if k != 2 {
                return Err(Error::Evaluation(format!("binary AUC needs 2 probability columns, got {k}")));
            }
            let pos: Vec<bool> = y_true.iter().map(|&l| l == 1).collect();
            binary_auc(&pos, &proba.column(1))
        }
        AucMode::OvrMacro => {
            let mut sum = 0.0;
            for c in 0..k {
                let pos: Vec<bool> = y_true.iter().map(|&l| l == c).collect();
                sum += binary_auc(&pos, &proba.column(c))?;
            }
            Ok(sum / k as f64)
        }
        AucMode::OvoMacro => {
            let mut sum = 0.0;
            let mut pairs = 0;
            for a in 0..k {
                for b in (a + 1)..k {
                    let rows: Vec<usize> = (0..y_true.len()).filter(|&r| y_true[r] == a || y_true[r] == b).collect();
                    let pos_a: Vec<bool> = rows.iter().map(|&r| y_true[r] == a).collect();
                    let pos_b: Vec<bool> = rows.iter().map(|&r| y_true[r] == b).collect();
                    let sa: Vec<f64> = rows.iter().map(|&r| proba.get(r, a)).collect();
                    let sb: Vec<f64> = rows.iter().map(|&r| proba.get(r, b)).collect();
                    sum += 0.5 * (binary_auc(&pos_a, &sa)? + binary_auc(&pos_b, &sb)?);
                    pairs += 1;
                }
            }
            if pairs == 0 {
                return Err(Error::Evaluation("one-vs-one AUC needs at least two classes".into()));
            }
            Ok(sum / pairs as f64)
        }
    }
}

/// Percentile bootstrap interval of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    /// `x.xx (±y.yy)`, rounded half-even on the exact binary value.
    pub fn cell(&self) -> String {
        format!("{:.2} (±{:.2})", self.point, self.half_width())
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices of bootstrap resample `i` of `n` rows.
pub fn resample_indices(n: usize, seed: u64, i: usize) -> Vec<usize> {
    let mut rng = seeded(mix64(seed ^ mix64(i as u64)));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Evaluates `metric` on the full index set and on `b` resamples of it.
///
/// `metric` receives row indices; an `Err` marks the resample undefined and
/// skips it. More than half undefined is an error.
pub fn bootstrap_ci<F>(n: usize, metric: F, b: usize, alpha: f64, seed: u64) -> Result<Interval>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n < 2 {
        return Err(Error::Evaluation(format!("bootstrap needs at least 2 rows, got {n}")));
    }
    if b == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("bootstrap needs B >= 1 and alpha in (0, 1), got B={b}, alpha={alpha}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let point = metric(&all)?;
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|i| metric(&resample_indices(n, seed, i)).ok().filter(|v| !v.is_nan()))
        .collect();
    let mut values: Vec<f64> = draws.into_iter().flatten().collect();
    let skipped = b - values.len();
    if 2 * skipped > b {
        return Err(Error::Evaluation(format!("{skipped} of {b} resamples left the metric undefined")));
    }
    values.sort_by(f64::total_cmp);
    Ok(Interval {
        point,
        low: quantile_sorted(&values, alpha / 2.0),
        high: quantile_sorted(&values, 1.0 - alpha / 2.0),
        evaluated: values.len(),
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_bootstrap: usize,
    pub alpha: f64,
    pub multiclass_auc: AucMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_bootstrap: 1000,
            alpha: 0.05,
            multiclass_auc: AucMode::OvrMacro,
        }
    }
}

/// Point estimates with bootstrap intervals for the five table metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Interval,
    pub roc_auc: Interval,
    pub precision: Interval,
    pub recall: Interval,
    pub f1: Interval,
}

impl MetricReport {
    pub fn cells(&self) -> [String; 5] {
        [
            self.accuracy.cell(),
            self.roc_auc.cell(),
            self.precision.cell(),
            self.recall.cell(),
            self.f1.cell(),
        ]
    }
}

/// Evaluates a probability matrix against labels. Predictions are the
/// row argmax; two classes use class-1 averaging and binary AUC, more use
/// macro averaging and `cfg.multiclass_auc`.
pub fn evaluate(y_true: &[usize], proba: &Matrix, cfg: &EvalConfig, seed: u64) -> Result<MetricReport> {
    let k = proba.n_cols();
    if proba.n_rows() != y_true.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            actual: proba.n_rows(),
        });
    }
    let pred: Vec<usize> = proba.rows_iter().map(argmax).collect();
    let (averaging, auc_mode) = if k == 2 {
        (Averaging::BinaryPositiveClass, AucMode::Binary)
    } else {
        (Averaging::Macro, cfg.multiclass_auc)
    };
    let scores_on = |idx: &[usize]| -> Result<Scores> {
        let t: Vec<usize> = idx.iter().map(|&i| y_true[i]).collect();
        let p: Vec<usize> = idx.iter().map(|&i| pred[i]).collect();
        Ok(metrics(&confusion(&t, &p, k)?, averaging))
    };
    let n = y_true.len();
    let (b, alpha) = (cfg.n_bootstrap, cfg.alpha);
    Ok(MetricReport {
        accuracy: bootstrap_ci(n, |i| Ok(scores_on(i)?.accuracy), b, alpha, seed)?,
        roc_auc: bootstrap_ci(
            n,
            |idx| {
                let t: Vec<usize> = idx.iter().map(|&i| y_true[i]).collect();
                roc_auc(&t, &proba.select_rows(idx), auc_mode)
            },
            b,
            alpha,
            seed,
        )?,
        precision: bootstrap_ci(n, |i| Ok(scores_on(i)?.precision), b, alpha, seed)?,
        recall: bootstrap_ci(n, |i| Ok(scores_on(i)?.recall), b, alpha, seed)?,
        f1: bootstrap_ci(n, |i| Ok(scores_on(i)?.f1), b, alpha, seed)?,
    })
}

pub const TABLE_COLUMNS: [&str; 6] = ["Model", "Accuracy", "ROC-AUC", "Precision", "Recall", "F1"];

/// One comparison table: every model scored on the same test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub task: String,
    pub rows: Vec<(String, MetricReport)>,
}

impl ComparisonTable {
    fn cells(&self) -> Vec<Vec<String>> {
        let mut out = vec![TABLE_COLUMNS.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        for (name, rep) in &self.rows {
            let mut row = vec![name.clone()];
            row.extend(rep.cells());
            out.push(row);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.cells() {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Evaluation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Evaluation(e.to_string()))
    }

    /// Fixed-width text rendering with a title line.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..TABLE_COLUMNS.len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = format!("Task: {}\n", self.task);
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, &w))| {
                    if c == 0 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(s, "{}", "-".repeat(total));
            }
        }
        s
    }
}
