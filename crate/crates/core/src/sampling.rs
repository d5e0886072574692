//! Seeded splitting, stratified folds, SMOTE and bootstrap resampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Positions into the label vector the plan was built from.
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Rows outside fold `f`, ascending.
    pub fn train_of(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn n_rows(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }
}

fn rows_by_class(labels: &LabelVector) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); labels.n_classes];
    for (i, &l) in labels.labels.iter().enumerate() {
        by[l].push(i);
    }
    by
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Parameter(format!(
            "split ratio must lie strictly between 0 and 1, got {ratio}"
        )));
    }
    Ok(())
}

/// Per-class shuffle; the first `round(ratio · n_c)` rows of each class train.
pub fn stratified_split(labels: &LabelVector, ratio: f64, seed: u64) -> Result<SplitPlan> {
    check_ratio(ratio)?;
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut rows) in rows_by_class(labels).into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::Stratification(format!("class {c} has a single member")));
        }
        rows.shuffle(&mut rng);
        let n_train = (ratio * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    if test.is_empty() {
        return Err(Error::Parameter("split leaves the test set empty".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        seed,
        ratio,
    })
}

/// Unstratified split: one shuffle of all rows.
pub fn random_split(n: usize, ratio: f64, seed: u64) -> Result<SplitPlan> {
    check_ratio(ratio)?;
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seeded(seed));
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == n {
        return Err(Error::Parameter("split leaves the test set empty".into()));
    }
    let mut train = rows[..n_train].to_vec();
    let mut test = rows[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        seed,
        ratio,
    })
}

/// Round-robin of per-class shuffled rows; the fold cursor carries over
/// from one class to the next so fold sizes stay within one of each other.
pub fn stratified_kfold(labels: &LabelVector, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("K must be at least 2, got {k}")));
    }
    let mut rng = seeded(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for (c, mut rows) in rows_by_class(labels).into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            return Err(Error::Stratification(format!(
                "class {c} has {} members, fewer than K = {k}",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for r in rows {
            folds[cursor].push(r);
            cursor = (cursor + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { folds, seed })
}

/// Origin of one synthetic SMOTE row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub parent: usize,
    pub neighbor: usize,
    pub gap: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// SMOTE that also reports each synthetic row's parent, neighbor and gap.
/// Synthetic rows follow the originals, grouped by ascending class.
pub fn smote_with_provenance(
    features: &Matrix,
    labels: &LabelVector,
    k_neighbors: usize,
    seed: u64,
) -> Result<(Matrix, LabelVector, Vec<Synthetic>)> {
    if features.n_rows() != labels.len() {
        return Err(Error::Shape {
            expected: features.n_rows(),
            actual: labels.len(),
        });
    }
    if k_neighbors == 0 {
        return Err(Error::Parameter("k_neighbors must be at least 1".into()));
    }
    if !features.is_finite() {
        return Err(Error::Resampling("features must be fully imputed and finite".into()));
    }
    let by_class = rows_by_class(labels);
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut x = features.clone();
    let mut y = labels.labels.clone();
    let mut origin = Vec::new();
    let mut rng = seeded(seed);
    for (c, members) in by_class.iter().enumerate() {
        let need = majority - members.len();
        if members.is_empty() || need == 0 {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Resampling(format!("class {c} has a single member")));
        }
        let kk = k_neighbors.min(members.len() - 1);
        let neighbors: Vec<Vec<usize>> = members
            .iter()
            .map(|&p| {
                let mut cand: Vec<(f64, usize)> = members
                    .iter()
                    .filter(|&&q| q != p)
                    .map(|&q| (sq_dist(features.row(p), features.row(q)), q))
                    .collect();
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.into_iter().take(kk).map(|(_, q)| q).collect()
            })
            .collect();
        for _ in 0..need {
            let pi = rng.random_range(0..members.len());
            let p = members[pi];
            let q = neighbors[pi][rng.random_range(0..kk)];
            let g: f64 = rng.random();
            let row: Vec<f64> = features
                .row(p)
                .iter()
                .zip(features.row(q))
                .map(|(a, b)| a + g * (b - a))
                .collect();
            x.push_row(&row)?;
            y.push(c);
            origin.push(Synthetic {
                parent: p,
                neighbor: q,
                gap: g,
            });
        }
    }
    let y = LabelVector::new(labels.task, y)?;
    Ok((x, y, origin))
}

pub fn smote(features: &Matrix, labels: &LabelVector, k_neighbors: usize, seed: u64) -> Result<(Matrix, LabelVector)> {
    smote_with_provenance(features, labels, k_neighbors, seed).map(|(x, y, _)| (x, y))
}

/// `b` lists of `n` draws with replacement; resample `i` uses seed `seed ^ i`.
pub fn bootstrap_indices(n: usize, b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || b == 0 {
        return Err(Error::Parameter("bootstrap needs n ≥ 1 and B ≥ 1".into()));
    }
    Ok((0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(seed ^ i as u64);
            (0..n).map(|_| rng.random_range(0..n)).collect()
        })
        .collect())
}
