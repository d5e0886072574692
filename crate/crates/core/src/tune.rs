//! Randomized grid search with stratified K-fold scoring.
//!
//! A grid is a base [`LearnerConfig`] plus named axes. Axis names are dotted
//! paths into the config's JSON form (`"learning_rate"`,
//! `"growth.max_depth"`); each grid point overwrites those fields and is
//! parsed back, so an axis naming a non-existent field is rejected up front.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics, roc_auc, Averaging, AucMode};
use crate::learners::{argmax, Classifier, LearnerConfig};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, seeded};
use crate::sampling::{stratified_kfold, FoldPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    MacroF1,
    RocAuc,
    Accuracy,
}

impl Scoring {
    pub fn score(self, y: &[usize], proba: &Matrix) -> Result<f64> {
        let k = proba.n_cols();
        match self {
            Scoring::RocAuc => roc_auc(y, proba, if k == 2 { AucMode::Binary } else { AucMode::OvrMacro }),
            Scoring::MacroF1 | Scoring::Accuracy => {
                let pred: Vec<usize> = proba.rows_iter().map(argmax).collect();
                let s = metrics(&confusion(y, &pred, k)?, Averaging::Macro);
                Ok(if self == Scoring::MacroF1 { s.f1 } else { s.accuracy })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub base: LearnerConfig,
    /// Axis name to candidate values; points enumerate axes in name order
    /// with the last axis varying fastest.
    pub axes: std::collections::BTreeMap<String, Vec<Value>>,
    pub n_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scoring: Scoring,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
}

fn default_folds() -> usize {
    5
}

fn set_path(root: &mut Value, path: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Parameter(format!("grid axis `{path}`: `{p}` is not inside an object")))?;
        let slot = obj
            .get_mut(*p)
            .ok_or_else(|| Error::Parameter(format!("grid axis `{path}` names no field of the learner config")))?;
        if i + 1 == parts.len() {
            *slot = v;
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("split yields at least one part")
}

impl ParamGrid {
    pub fn size(&self) -> usize {
        self.axes.values().map(Vec::len).fold(1usize, |a, n| a.saturating_mul(n))
    }

    pub fn check(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Parameter("n_iter must be ≥ 1".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Parameter(format!("n_folds must be ≥ 2, got {}", self.n_folds)));
        }
        if let Some((name, _)) = self.axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Parameter(format!("grid axis `{name}` has no values")));
        }
        // every axis must land on an existing field
        let mut probe = serde_json::to_value(&self.base)?;
        for (name, values) in &self.axes {
            set_path(&mut probe, name, values[0].clone())?;
        }
        Ok(())
    }

    /// Axis assignments of point `i` in mixed-radix order.
    pub fn point(&self, mut i: usize) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::with_capacity(self.axes.len());
        for (name, values) in self.axes.iter().rev() {
            out.push((name.clone(), values[i % values.len()].clone()));
            i /= values.len();
        }
        out.reverse();
        out
    }

    pub fn config(&self, point: &[(String, Value)]) -> Result<LearnerConfig> {
        let mut v = serde_json::to_value(&self.base)?;
        for (name, value) in point {
            set_path(&mut v, name, value.clone())?;
        }
        serde_json::from_value(v).map_err(|e| Error::Parameter(format!("grid point {point:?}: {e}")))
    }
}

/// Mean and per-fold held-out scores of one configuration.
pub fn cv_score(x: &Matrix, y: &LabelVector, config: &LearnerConfig, plan: &FoldPlan, scoring: Scoring, seed: u64) -> Result<(f64, Vec<f64>)> {
    let mut scores = Vec::with_capacity(plan.k());
    for (f, fold) in plan.folds.iter().enumerate() {
        let train = plan.train_of(f);
        let yt: Vec<usize> = train.iter().map(|&i| y.labels[i]).collect();
        let model = config.fit(&x.select_rows(&train), &yt, y.n_classes, derive_seed(seed, &format!("tune/fold{f}")))?;
        let proba = model.predict_proba(&x.select_rows(fold))?;
        let yf: Vec<usize> = fold.iter().map(|&i| y.labels[i]).collect();
        let s = scoring.score(&yf, &proba)?;
        if !s.is_finite() {
            return Err(Error::Numeric(format!("fold {f} score is {s}")));
        }
        scores.push(s);
    }
    Ok((scores.iter().sum::<f64>() / scores.len() as f64, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in draw order.
    pub draw: usize,
    /// Index of the point in the full grid.
    pub grid_index: usize,
    pub params: Vec<(String, Value)>,
    pub mean_score: Option<f64>,
    pub fold_scores: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub scoring: Scoring,
    pub candidates: Vec<Candidate>,
    /// Index into `candidates`.
    pub best: usize,
    pub best_config: LearnerConfig,
    pub best_score: f64,
    pub fold_plan: FoldPlan,
}

impl SearchResult {
    pub fn best_params(&self) -> &[(String, Value)] {
        &self.candidates[self.best].params
    }

    /// `draw, <axes...>, mean_score, fold_1..fold_K, status`.
    pub fn to_csv(&self) -> Result<String> {
        let k = self.fold_plan.k();
        let axes: Vec<String> = self.candidates.first().map(|c| c.params.iter().map(|p| p.0.clone()).collect()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["draw".to_string()];
        header.extend(axes.iter().cloned());
        header.push("mean_score".into());
        header.extend((1..=k).map(|f| format!("fold_{f}")));
        header.push("status".into());
        w.write_record(&header)?;
        for c in &self.candidates {
            let mut row = vec![c.draw.to_string()];
            row.extend(c.params.iter().map(|(_, v)| v.to_string()));
            row.push(c.mean_score.map(|s| s.to_string()).unwrap_or_default());
            for f in 0..k {
                row.push(c.fold_scores.get(f).map(|s| s.to_string()).unwrap_or_default());
            }
            row.push(match &c.error {
                None => "ok".into(),
                Some(e) => format!("failed: {e}"),
            });
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Search(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Search(e.to_string()))
    }
}

/// Scores `min(n_iter, |grid|)` distinct grid points drawn uniformly without
/// replacement and returns the best mean CV score; ties go to the earlier
/// draw. Candidates whose fit or scoring fails are kept in the table but
/// excluded from selection.
pub fn random_grid_search(x: &Matrix, y: &LabelVector, grid: &ParamGrid) -> Result<SearchResult> {
    grid.check()?;
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    let total = grid.size();
    let m = grid.n_iter.min(total);
    let mut rng = seeded(derive_seed(grid.seed, "tune/draw"));
    let draws: Vec<usize> = index::sample(&mut rng, total, m).into_vec();
    let plan = stratified_kfold(y, grid.n_folds, derive_seed(grid.seed, "tune/folds"))?;
    let candidates: Vec<Candidate> = draws
        .par_iter()
        .enumerate()
        .map(|(draw, &gi)| {
            let params = grid.point(gi);
            let outcome = grid
                .config(&params)
                .and_then(|cfg| cv_score(x, y, &cfg, &plan, grid.scoring, grid.seed));
            match outcome {
                Ok((mean, folds)) => Candidate {
                    draw,
                    grid_index: gi,
                    params,
                    mean_score: Some(mean),
                    fold_scores: folds,
                    error: None,
                },
                Err(e) => Candidate {
                    draw,
                    grid_index: gi,
                    params,
                    mean_score: None,
                    fold_scores: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(s) = c.mean_score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (best, best_score) = best.ok_or_else(|| Error::Search(format!("all {} candidates failed", candidates.len())))?;
    let best_config = grid.config(&candidates[best].params)?;
    Ok(SearchResult {
        scoring: grid.scoring,
        candidates,
        best,
        best_config,
        best_score,
        fold_plan: plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::learners::{BoostParams, Growth, LogisticParams, TreeParams};
    use proptest::prelude::*;
    use rand::Rng;
    use serde_json::json;

    fn data(n: usize, seed: u64) -> (Matrix, LabelVector) {
        let mut rng = seeded(seed);
        let rows: Vec<[f64; 3]> = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let labels = rows.iter().map(|r| usize::from(r[0] + 0.3 * r[1] + rng.random_range(-0.3..0.3) > 0.0)).collect();
        (Matrix::from_rows(&rows).unwrap(), LabelVector::new(Task::LoginBinary, labels).unwrap())
    }

    fn tree_grid(n_iter: usize, seed: u64) -> ParamGrid {
        let mut axes = std::collections::BTreeMap::new();
        axes.insert("max_depth".to_string(), vec![json!(1), json!(2), json!(4)]);
        axes.insert("criterion".to_string(), vec![json!("gini"), json!("entropy")]);
        ParamGrid {
            base: LearnerConfig::Tree(TreeParams::default()),
            axes,
            n_iter,
            seed,
            scoring: Scoring::MacroF1,
            n_folds: 3,
        }
    }

    #[test]
    fn single_point_grid() {
        let (x, y) = data(90, 1);
        let mut g = tree_grid(5, 0);
        g.axes.insert("max_depth".into(), vec![json!(3)]);
        g.axes.insert("criterion".into(), vec![json!("entropy")]);
        let r = random_grid_search(&x, &y, &g).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.best_params(), &[("criterion".to_string(), json!("entropy")), ("max_depth".to_string(), json!(3))]);
        let (mean, _) = cv_score(&x, &y, &r.best_config, &r.fold_plan, Scoring::MacroF1, 0).unwrap();
        assert_eq!(mean, r.best_score);
    }

    #[test]
    fn exhaustive_when_n_iter_covers_grid() {
        let (x, y) = data(90, 2);
        let r = random_grid_search(&x, &y, &tree_grid(50, 4)).unwrap();
        let mut seen: Vec<usize> = r.candidates.iter().map(|c| c.grid_index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("draw,criterion,max_depth,mean_score,fold_1,fold_2,fold_3,status"));
    }

    #[test]
    fn best_score_recomputes_exactly_and_is_deterministic() {
        let (x, y) = data(120, 3);
        let g = tree_grid(4, 9);
        let r = random_grid_search(&x, &y, &g).unwrap();
        let plan = stratified_kfold(&y, 3, derive_seed(9, "tune/folds")).unwrap();
        let (mean, folds) = cv_score(&x, &y, &r.best_config, &plan, g.scoring, g.seed).unwrap();
        assert_eq!(mean, r.best_score);
        assert_eq!(folds, r.candidates[r.best].fold_scores);
        assert_eq!(r, random_grid_search(&x, &y, &g).unwrap());
        let best = r.best_score;
        for c in &r.candidates[..r.best] {
            assert!(c.mean_score.unwrap() < best);
        }
    }

    #[test]
    fn failures_are_flagged_and_all_failed_is_an_error() {
        let (x, y) = data(60, 5);
        let mut axes = std::collections::BTreeMap::new();
        axes.insert("c".to_string(), vec![json!(-1.0), json!(1.0)]);
        let g = ParamGrid {
            base: LearnerConfig::Logistic(LogisticParams::default()),
            axes,
            n_iter: 2,
            seed: 0,
            scoring: Scoring::Accuracy,
            n_folds: 3,
        };
        let r = random_grid_search(&x, &y, &g).unwrap();
        let failed: Vec<&Candidate> = r.candidates.iter().filter(|c| c.error.is_some()).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].params[0].1, json!(-1.0));
        assert_eq!(r.best_params()[0].1, json!(1.0));
        assert!(r.to_csv().unwrap().contains("failed: "));

        let mut bad = g.clone();
        bad.axes.insert("c".into(), vec![json!(-1.0), json!(0.0)]);
        assert!(matches!(random_grid_search(&x, &y, &bad), Err(Error::Search(_))));
    }

    #[test]
    fn grid_validation() {
        let mut g = tree_grid(1, 0);
        g.axes.insert("depth_of_tree".into(), vec![json!(3)]);
        assert!(matches!(g.check(), Err(Error::Parameter(_))));
        let mut g = tree_grid(1, 0);
        g.axes.insert("max_depth".into(), vec![]);
        assert!(g.check().is_err());
        assert!(tree_grid(0, 0).check().is_err());
    }

    #[test]
    fn boosting_grid_reaches_the_login_optimum() {
        let mut axes = std::collections::BTreeMap::new();
        axes.insert("learning_rate".to_string(), vec![json!(0.01), json!(0.05), json!(0.1)]);
        axes.insert("growth.max_depth".to_string(), vec![json!(6), json!(9)]);
        axes.insert("n_estimators".to_string(), vec![json!(200), json!(300)]);
        axes.insert("growth.subsample".to_string(), vec![json!(0.8), json!(1.0)]);
        axes.insert("growth.colsample_bytree".to_string(), vec![json!(0.8), json!(1.0)]);
        axes.insert("growth.gamma".to_string(), vec![json!(0.0), json!(1.0)]);
        let g = ParamGrid {
            base: LearnerConfig::Boost(BoostParams::default()),
            axes,
            n_iter: 1,
            seed: 0,
            scoring: Scoring::MacroF1,
            n_folds: 5,
        };
        g.check().unwrap();
        let optimum = LearnerConfig::Boost(BoostParams {
            learning_rate: 0.05,
            n_estimators: 300,
            growth: Growth::LevelWise {
                max_depth: 9,
                gamma: 0.0,
                lambda: 1.0,
                subsample: 0.8,
                colsample_bytree: 0.8,
            },
        });
        let hits: Vec<usize> = (0..g.size()).filter(|&i| g.config(&g.point(i)).unwrap() == optimum).collect();
        assert_eq!(hits.len(), 1);
        // restricting every axis to the optimum makes it the winner
        let mut only = g.clone();
        for (name, values) in only.axes.iter_mut() {
            let keep = g.point(hits[0]).into_iter().find(|p| &p.0 == name).unwrap().1;
            values.retain(|v| *v == keep);
        }
        let (x, y) = data(100, 7);
        let mut small = only.clone();
        small.axes.insert("n_estimators".into(), vec![json!(300)]);
        let r = random_grid_search(&x, &y, &small).unwrap();
        assert_eq!(r.best_config, optimum);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn draws_are_distinct_and_counted(n_iter in 1usize..10, seed in any::<u64>()) {
            let (x, y) = data(60, 11);
            let r = random_grid_search(&x, &y, &tree_grid(n_iter, seed)).unwrap();
            prop_assert_eq!(r.candidates.len(), n_iter.min(6));
            let mut idx: Vec<usize> = r.candidates.iter().map(|c| c.grid_index).collect();
            idx.sort_unstable();
            idx.dedup();
            prop_assert_eq!(idx.len(), r.candidates.len());
            prop_assert!(r.candidates.iter().enumerate().all(|(i, c)| c.draw == i));
        }
    }
}
