//! Two-level stacked ensemble of the three boosting variants.
//!
//! Base learners are trained on the out-of-fold complement of a stratified
//! K-fold plan; their class-probability vectors for the held-out fold form
//! the meta-feature matrix (width `3·K`), on which a logistic meta-learner
//! is fitted. Inference uses the base learners refit on all training rows,
//! or optionally the mean of the fold models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::learners::{fit_boost, fit_logistic, BoostModel, BoostParams, Classifier, Growth, LogisticModel, LogisticParams};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::sampling::{stratified_kfold, FoldPlan};

pub const N_BASE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    /// Base learners refit on the whole training set.
    #[default]
    Refit,
    /// Mean probability of the fold models of each base learner.
    AverageFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackConfig {
    /// Level-wise, leaf-wise and oblivious-ordered parameters, in that order.
    pub base: Vec<BoostParams>,
    pub meta: LogisticParams,
    pub n_folds: usize,
    pub inference: Inference,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            base: vec![
                BoostParams::default(),
                BoostParams {
                    growth: Growth::LeafWise {
                        max_depth: 6,
                        num_leaves: 31,
                        lambda: 1.0,
                        subsample: 1.0,
                        colsample_bytree: 1.0,
                    },
                    ..BoostParams::default()
                },
                BoostParams {
                    growth: Growth::ObliviousOrdered {
                        depth: 6,
                        l2_leaf_reg: 3.0,
                        n_permutations: 1,
                    },
                    ..BoostParams::default()
                },
            ],
            meta: LogisticParams::default(),
            n_folds: 5,
            inference: Inference::Refit,
            seed: 0,
        }
    }
}

impl StackConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::Parameter(format!("n_folds must be ≥ 2, got {}", self.n_folds)));
        }
        let names: Vec<&str> = self.base.iter().map(|p| p.growth.name()).collect();
        if names != ["level_wise", "leaf_wise", "oblivious_ordered"] {
            return Err(Error::Parameter(format!(
                "stack needs exactly [level_wise, leaf_wise, oblivious_ordered] base learners, got {names:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub n_features: usize,
    pub n_classes: usize,
    pub inference: Inference,
    pub fold_plan: FoldPlan,
    /// `fold_models[f][b]`: base learner `b` trained without fold `f`.
    pub fold_models: Vec<Vec<BoostModel>>,
    /// Base learners refit on every training row (empty when averaging
    /// fold models).
    pub full_models: Vec<BoostModel>,
    pub meta: LogisticModel,
    /// Out-of-fold meta-features of the training rows, `n × 3K`.
    pub oof_features: Matrix,
}

/// `rows` reordered by content (feature values, then label), so that a base
/// learner sees the same training sequence whatever the input row order.
fn canonical_rows(x: &Matrix, y: &[usize], mut rows: Vec<usize>) -> Vec<usize> {
    rows.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].cmp(&y[b]))
    });
    rows
}

fn fit_base(x: &Matrix, y: &[usize], rows: Vec<usize>, k: usize, params: &BoostParams, seed: u64) -> Result<BoostModel> {
    let rows = canonical_rows(x, y, rows);
    let yt: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
    fit_boost(&x.select_rows(&rows), &yt, k, params, seed)
}

fn learner_seed(seed: u64, fold: Option<usize>, b: usize) -> u64 {
    match fold {
        Some(f) => derive_seed(seed, &format!("stack/fold{f}/base{b}")),
        None => derive_seed(seed, &format!("stack/full/base{b}")),
    }
}

pub fn fit_stack(x: &Matrix, y: &LabelVector, cfg: &StackConfig) -> Result<StackModel> {
    cfg.check()?;
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    let k = y.n_classes;
    let plan = stratified_kfold(y, cfg.n_folds, derive_seed(cfg.seed, "stack/folds"))?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_folds).flat_map(|f| (0..N_BASE).map(move |b| (f, b))).collect();
    let fitted: Vec<BoostModel> = jobs
        .par_iter()
        .map(|&(f, b)| fit_base(x, &y.labels, plan.train_of(f), k, &cfg.base[b], learner_seed(cfg.seed, Some(f), b)))
        .collect::<Result<_>>()?;
    let mut fold_models: Vec<Vec<BoostModel>> = Vec::with_capacity(cfg.n_folds);
    let mut it = fitted.into_iter();
    for _ in 0..cfg.n_folds {
        fold_models.push(it.by_ref().take(N_BASE).collect());
    }

    let mut oof = Matrix::zeros(x.n_rows(), N_BASE * k);
    for (f, fold) in plan.folds.iter().enumerate() {
        for &i in fold {
            let row = oof.row_mut(i);
            for (b, m) in fold_models[f].iter().enumerate() {
                m.proba_into(x.row(i), &mut row[b * k..(b + 1) * k]);
            }
        }
    }
    let meta = fit_logistic(&oof, &y.labels, k, &cfg.meta)?;
    let full_models = match cfg.inference {
        Inference::Refit => (0..N_BASE)
            .into_par_iter()
            .map(|b| fit_base(x, &y.labels, (0..x.n_rows()).collect(), k, &cfg.base[b], learner_seed(cfg.seed, None, b)))
            .collect::<Result<_>>()?,
        Inference::AverageFolds => Vec::new(),
    };
    Ok(StackModel {
        n_features: x.n_cols(),
        n_classes: k,
        inference: cfg.inference,
        fold_plan: plan,
        fold_models,
        full_models,
        meta,
        oof_features: oof,
    })
}

impl StackModel {
    /// Meta-features of one row at inference time.
    pub fn meta_features_into(&self, x: &[f64], out: &mut [f64]) {
        let k = self.n_classes;
        match self.inference {
            Inference::Refit => {
                for (b, m) in self.full_models.iter().enumerate() {
                    m.proba_into(x, &mut out[b * k..(b + 1) * k]);
                }
            }
            Inference::AverageFolds => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut p = vec![0.0; k];
                for fold in &self.fold_models {
                    for (b, m) in fold.iter().enumerate() {
                        m.proba_into(x, &mut p);
                        for c in 0..k {
                            out[b * k + c] += p[c];
                        }
                    }
                }
                let n = self.fold_models.len() as f64;
                out.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn meta_features(&self, x: &Matrix) -> Result<Matrix> {
        if x.n_cols() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                actual: x.n_cols(),
            });
        }
        let mut out = Matrix::zeros(x.n_rows(), N_BASE * self.n_classes);
        for r in 0..x.n_rows() {
            self.meta_features_into(x.row(r), out.row_mut(r));
        }
        Ok(out)
    }

    /// Class-`k` meta logit of one row.
    pub fn meta_logit(&self, x: &[f64], k: usize) -> f64 {
        let mut f = vec![0.0; N_BASE * self.n_classes];
        self.meta_features_into(x, &mut f);
        let (w, b) = self.meta.class_logit(k);
        b + w.iter().zip(&f).map(|(a, v)| a * v).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: StackModel = serde_json::from_str(s)?;
        if m.meta.n_features != N_BASE * m.n_classes {
            return Err(Error::ModelIntegrity(format!(
                "meta-learner expects {} inputs, stack provides {}",
                m.meta.n_features,
                N_BASE * m.n_classes
            )));
        }
        for b in m.fold_models.iter().flatten().chain(&m.full_models) {
            b.validate()?;
        }
        Ok(m)
    }
}

impl Classifier for StackModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let mut f = vec![0.0; N_BASE * self.n_classes];
        self.meta_features_into(x, &mut f);
        self.meta.proba_into(&f, out);
    }
}

/// Probabilities of the stacked ensemble; argmax ties go to the lower class.
pub fn predict_stack(model: &StackModel, x: &Matrix) -> Result<Matrix> {
    model.predict_proba(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::eval::{binary_auc, metrics, confusion, Averaging};
    use crate::explain::{stack_shap, tree_shap, TreeEnsemble};
    use crate::learners::{argmax, sigmoid};
    use crate::rng::seeded;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn small_config(n_estimators: usize, depth: usize, lr: f64) -> StackConfig {
        StackConfig {
            base: vec![
                BoostParams {
                    learning_rate: lr,
                    n_estimators,
                    growth: Growth::LevelWise {
                        max_depth: depth,
                        gamma: 0.0,
                        lambda: 1.0,
                        subsample: 1.0,
                        colsample_bytree: 1.0,
                    },
                },
                BoostParams {
                    learning_rate: lr,
                    n_estimators,
                    growth: Growth::LeafWise {
                        max_depth: depth,
                        num_leaves: 16,
                        lambda: 1.0,
                        subsample: 1.0,
                        colsample_bytree: 1.0,
                    },
                },
                BoostParams {
                    learning_rate: lr,
                    n_estimators,
                    growth: Growth::ObliviousOrdered {
                        depth: depth.min(6),
                        l2_leaf_reg: 3.0,
                        n_permutations: 1,
                    },
                },
            ],
            ..StackConfig::default()
        }
    }

    fn planted(n: usize, d: usize, k: usize, seed: u64) -> (Matrix, LabelVector) {
        let mut rng = seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = rows
            .iter()
            .map(|r| {
                let s = 2.0 * r[0] + r[1] + rng.random_range(-0.4..0.4);
                if k == 2 {
                    usize::from(s > 0.0)
                } else if s < -0.8 {
                    0
                } else if s < 0.8 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let task = if k == 2 { Task::LoginBinary } else { Task::MessageMulticlass };
        (Matrix::from_rows(&rows).unwrap(), LabelVector::new(task, labels).unwrap())
    }

    #[test]
    fn meta_width_leakage_and_roundtrip() {
        let (x, y) = planted(120, 4, 3, 1);
        let cfg = small_config(10, 3, 0.3);
        let m = fit_stack(&x, &y, &cfg).unwrap();
        assert_eq!(m.oof_features.n_cols(), 9);
        assert_eq!(m.meta.n_features, 9);
        // every OOF row comes from models whose training rows exclude it
        let mut seen = vec![false; x.n_rows()];
        for (f, fold) in m.fold_plan.folds.iter().enumerate() {
            let train = m.fold_plan.train_of(f);
            for &i in fold {
                assert!(!train.contains(&i));
                assert!(!seen[i]);
                seen[i] = true;
                let mut p = vec![0.0; 3];
                for b in 0..N_BASE {
                    m.fold_models[f][b].proba_into(x.row(i), &mut p);
                    assert_eq!(&m.oof_features.row(i)[b * 3..b * 3 + 3], &p[..]);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
        let p = predict_stack(&m, &x).unwrap();
        for r in p.rows_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let back = StackModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(predict_stack(&back, &x).unwrap(), p);
        assert_eq!(m, fit_stack(&x, &y, &cfg).unwrap());
        assert!(matches!(predict_stack(&m, &Matrix::zeros(2, 3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn config_checks() {
        let mut cfg = StackConfig::default();
        cfg.n_folds = 1;
        assert!(matches!(cfg.check(), Err(Error::Parameter(_))));
        let mut cfg = StackConfig::default();
        cfg.base.swap(0, 1);
        assert!(matches!(cfg.check(), Err(Error::Parameter(_))));
        let (x, _) = planted(20, 2, 2, 0);
        let tiny = LabelVector::new(Task::LoginBinary, [vec![0; 17], vec![1; 3]].concat()).unwrap();
        assert!(matches!(fit_stack(&x, &tiny, &small_config(2, 2, 0.1)), Err(Error::Stratification(_))));
        let json = r#"{"n_folds":5,"folds":3}"#;
        assert!(serde_json::from_str::<StackConfig>(json).is_err());
    }

    #[test]
    fn uniform_bases_give_majority_class() {
        let (x, _) = planted(60, 3, 2, 4);
        let y = LabelVector::new(Task::LoginBinary, (0..60).map(|i| usize::from(i % 3 == 0)).collect()).unwrap();
        let m = fit_stack(&x, &y, &small_config(3, 2, 0.0)).unwrap();
        assert!(m.meta.weights[0].iter().all(|w| w.abs() < 1e-3));
        assert!(m.predict(&x).unwrap().iter().all(|&c| c == 0));
    }

    #[test]
    fn oof_rows_depend_only_on_other_folds_content() {
        let (x, y) = planted(80, 3, 2, 8);
        let cfg = small_config(5, 2, 0.3);
        let m = fit_stack(&x, &y, &cfg).unwrap();
        // shuffle the rows of fold 0's training set and refit its learners
        let mut train = m.fold_plan.train_of(0);
        train.shuffle(&mut seeded(3));
        for b in 0..N_BASE {
            let fm = fit_base(&x, &y.labels, train.clone(), 2, &cfg.base[b], learner_seed(cfg.seed, Some(0), b)).unwrap();
            assert_eq!(fm, m.fold_models[0][b]);
        }
    }

    #[test]
    fn average_fold_inference() {
        let (x, y) = planted(80, 3, 2, 2);
        let mut cfg = small_config(5, 2, 0.3);
        cfg.inference = Inference::AverageFolds;
        let m = fit_stack(&x, &y, &cfg).unwrap();
        assert!(m.full_models.is_empty());
        let p = predict_stack(&m, &x).unwrap();
        assert!(p.rows_iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn meta_prefers_the_informative_learner() {
        // base 0 sees the signal; bases 1 and 2 are starved by colsample on noise
        let (x, y) = planted(200, 2, 2, 6);
        let mut rng = seeded(1);
        let noise: Vec<Vec<f64>> = (0..200).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let xn = Matrix::from_rows(&noise).unwrap();
        let cfg = small_config(20, 3, 0.3);
        let good = fit_stack(&x, &y, &cfg).unwrap();
        let bad = fit_stack(&xn, &y, &cfg).unwrap();
        // meta on [good base 0 | noise base 1 | noise base 2]
        let mut feats = Matrix::zeros(200, 6);
        for r in 0..200 {
            let row = feats.row_mut(r);
            row[0..2].copy_from_slice(&good.oof_features.row(r)[0..2]);
            row[2..6].copy_from_slice(&bad.oof_features.row(r)[2..6]);
        }
        let meta = fit_logistic(&feats, &y.labels, 2, &LogisticParams::default()).unwrap();
        let w = &meta.weights[0];
        let best = argmax(w);
        assert_eq!(best, 1, "{w:?}");
        assert!(w[1] > 0.0);
    }

    #[test]
    fn identical_bases_keep_shared_argmax() {
        let (x, y) = planted(150, 3, 3, 11);
        let m = fit_stack(&x, &y, &small_config(15, 3, 0.3)).unwrap();
        // feed the same base probabilities three times
        let base = &m.full_models[0];
        let pb = base.predict_proba(&x).unwrap();
        let mut feats = Matrix::zeros(150, 9);
        for r in 0..150 {
            for b in 0..3 {
                feats.row_mut(r)[b * 3..b * 3 + 3].copy_from_slice(pb.row(r));
            }
        }
        let meta = fit_logistic(&feats, &y.labels, 3, &LogisticParams::default()).unwrap();
        let stacked = meta.predict(&feats).unwrap();
        let shared: Vec<usize> = pb.rows_iter().map(argmax).collect();
        let agree = stacked.iter().zip(&shared).filter(|(a, b)| a == b).count();
        assert!(agree as f64 / 150.0 > 0.95, "{agree}");
    }

    #[test]
    fn random_labels_give_chance_meta_auc() {
        let mut aucs = Vec::new();
        for s in 0..10u64 {
            let (x, mut y) = planted(200, 4, 2, 100 + s);
            y.labels.shuffle(&mut seeded(s));
            let mut cfg = small_config(10, 3, 0.3);
            cfg.seed = s;
            let m = fit_stack(&x, &y, &cfg).unwrap();
            // meta-learner scored by cross-validation over the OOF features
            let plan = stratified_kfold(&y, 5, 77 + s).unwrap();
            let mut scores = vec![0.0; 200];
            for (f, fold) in plan.folds.iter().enumerate() {
                let tr = plan.train_of(f);
                let meta = fit_logistic(&m.oof_features.select_rows(&tr), &tr.iter().map(|&i| y.labels[i]).collect::<Vec<_>>(), 2, &cfg.meta).unwrap();
                for &i in fold {
                    scores[i] = meta.decision(m.oof_features.row(i))[0];
                }
            }
            let pos: Vec<bool> = y.labels.iter().map(|&l| l == 1).collect();
            aucs.push(binary_auc(&pos, &scores).unwrap());
        }
        aucs.sort_by(f64::total_cmp);
        let median = 0.5 * (aucs[4] + aucs[5]);
        assert!((median - 0.5).abs() <= 0.05, "{aucs:?}");
    }

    #[test]
    fn stack_shap_composition() {
        let (x, y) = planted(150, 3, 2, 21);
        let m = fit_stack(&x, &y, &small_config(15, 3, 0.3)).unwrap();
        // zero meta weights: no attribution, base equals the intercept
        let mut z = m.clone();
        z.meta.weights[0].iter_mut().for_each(|w| *w = 0.0);
        let (phi, base) = stack_shap(&z, x.row(0), 1).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
        assert_eq!(base, z.meta.intercepts[0]);

        // weight 1 on base 0's class-1 column only
        let mut one = m.clone();
        one.meta.weights[0].iter_mut().for_each(|w| *w = 0.0);
        one.meta.weights[0][1] = 1.0;
        let mut checked = 0;
        for r in 0..x.n_rows() {
            if checked == 20 {
                break;
            }
            let xr = x.row(r);
            let e = TreeEnsemble::boost(&one.full_models[0], 1);
            let (tphi, _) = tree_shap(&e, xr).unwrap();
            if tphi.iter().map(|v| v.abs()).sum::<f64>() < 1e-3 {
                continue;
            }
            let (phi, _) = stack_shap(&one, xr, 1).unwrap();
            // sensitivity of the stack logit to the base margin, by central difference
            let f = e.predict(xr);
            let h = 1e-5;
            let fd = (sigmoid(f + h) - sigmoid(f - h)) / (2.0 * h);
            for j in 0..3 {
                if tphi[j].abs() > 1e-6 {
                    let ratio = phi[j] / tphi[j];
                    assert!(((ratio - fd) / fd).abs() < 0.05);
                }
            }
            checked += 1;
        }
        assert_eq!(checked, 20);

        // the binary composition error is exactly the per-learner
        // linearization remainder weighted by the meta contrast
        for r in 0..40 {
            let xr = x.row(r);
            let (phi, base) = stack_shap(&m, xr, 1).unwrap();
            let mut remainder = 0.0;
            for (b, bm) in m.full_models.iter().enumerate() {
                let e = TreeEnsemble::boost(bm, 1);
                let f = e.predict(xr);
                let f0 = e.expected_value().unwrap();
                let dm = m.meta.weights[0][2 * b + 1] - m.meta.weights[0][2 * b];
                let s = sigmoid(f);
                remainder += dm * (s - sigmoid(f0) - s * (1.0 - s) * (f - f0));
            }
            let gap = m.meta_logit(xr, 1) - (base + phi.iter().sum::<f64>());
            assert!((gap - remainder).abs() < 1e-9);
        }
    }

    #[test]
    fn stack_shap_first_order_error_is_bounded() {
        // sup over margins with probability in [0.2, 0.8] of the sigmoid
        // linearization remainder around f0
        let sup_remainder = |f0: f64| {
            let lim = (0.8f64 / 0.2).ln();
            (0..=2000)
                .map(|i| {
                    let f = -lim + 2.0 * lim * i as f64 / 2000.0;
                    let s = sigmoid(f);
                    (s - sigmoid(f0) - s * (1.0 - s) * (f - f0)).abs()
                })
                .fold(0.0, f64::max)
        };
        let mut tested = 0;
        for seed in 0..3u64 {
            let mut rng = seeded(500 + seed);
            let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let labels = rows.iter().map(|r| usize::from(0.6 * r[0] - 0.4 * r[1] + rng.random_range(-1.0..1.0) > 0.0)).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let y = LabelVector::new(Task::LoginBinary, labels).unwrap();
            let mut cfg = small_config(30, 3, 0.05);
            cfg.seed = seed;
            let m = fit_stack(&x, &y, &cfg).unwrap();
            let bound: f64 = m
                .full_models
                .iter()
                .enumerate()
                .map(|(b, bm)| {
                    let f0 = TreeEnsemble::boost(bm, 1).expected_value().unwrap();
                    let dm = m.meta.weights[0][2 * b + 1] - m.meta.weights[0][2 * b];
                    dm.abs() * sup_remainder(f0)
                })
                .sum();
            for r in 0..x.n_rows() {
                let xr = x.row(r);
                let moderate = m.full_models.iter().all(|b| {
                    let mut p = [0.0; 2];
                    b.proba_into(xr, &mut p);
                    (0.2..=0.8).contains(&p[1])
                });
                if !moderate {
                    continue;
                }
                let (phi, base) = stack_shap(&m, xr, 1).unwrap();
                let approx = base + phi.iter().sum::<f64>();
                assert!((approx - m.meta_logit(xr, 1)).abs() <= bound + 1e-9);
                tested += 1;
            }
        }
        assert!(tested > 100);
    }

    #[test]
    fn stack_not_worse_than_chance_on_signal() {
        let (x, y) = planted(200, 3, 2, 31);
        let m = fit_stack(&x, &y, &small_config(20, 3, 0.3)).unwrap();
        let pred = m.predict(&x).unwrap();
        let s = metrics(&confusion(&y.labels, &pred, 2).unwrap(), Averaging::Macro);
        assert!(s.accuracy > 0.85);
    }
}
