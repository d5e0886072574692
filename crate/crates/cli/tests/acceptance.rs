//! Acceptance suite: ten end-to-end criteria, each reported on one
//! PASS/FAIL line. Run with `--nocapture` to see the lines; they are also
//! written to `acceptance.txt` under the cargo target tmp directory.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use tristack::dataset::{Cell, ColumnSchema, LabelVector, Task, TableBuilder};
use tristack::eval::{binary_auc, bootstrap_ci, confusion, metrics, Averaging};
use tristack::explain::{brute_shap, column_means, tree_shap, Explainer, TreeEnsemble};
use tristack::learners::boost::{softmax_grad_hess, split_gain};
use tristack::learners::{
    fit_boost, AnyModel, BoostParams, Classifier, Criterion, ForestParams, Growth, LearnerConfig, LogisticParams, Node, Penalty,
    Splitter, SvmParams, Tree, TreeParams,
};
use tristack::preprocess::{fit_knn_imputer, impute};
use tristack::rng::seeded;
use tristack::sampling::smote_with_provenance;
use tristack::stack::{fit_stack, StackConfig};
use tristack::synth::read_ground_truth;
use tristack::tune::Scoring;
use tristack::Matrix;

use tristack_cli::config::RunConfig;
use tristack_cli::manifest::read_manifest;
use tristack_cli::pipeline;

type Verdict = (bool, String);

fn uniform_rows(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Labels from a noisy linear score on the first two columns.
fn planted_labels(x: &Matrix, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    x.rows_iter()
        .map(|r| {
            let s = 2.0 * r[0] - r[1] + rng.random_range(-0.5..0.5);
            if k == 2 {
                usize::from(s > 0.0)
            } else {
                usize::from(s > -0.7) + usize::from(s > 0.7)
            }
        })
        .collect()
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// The explained output of each model, computed from its parameters.
fn model_output(m: &AnyModel, x: &[f64], k: usize) -> f64 {
    let hyperplane = |n_classes: usize, w: &[Vec<f64>], b: &[f64]| {
        if n_classes == 2 {
            let s = if k == 1 { 1.0 } else { -1.0 };
            s * (dot(&w[0], x) + b[0])
        } else {
            dot(&w[k], x) + b[k]
        }
    };
    match m {
        AnyModel::Logistic(l) => hyperplane(l.n_classes, &l.weights, &l.intercepts),
        AnyModel::Svm(s) => hyperplane(s.n_classes, &s.weights, &s.intercepts),
        AnyModel::Boost(b) => {
            let z = b.raw(x);
            if b.n_classes == 2 {
                if k == 1 {
                    z[0]
                } else {
                    -z[0]
                }
            } else {
                z[k]
            }
        }
        AnyModel::Tree(_) | AnyModel::Forest(_) => {
            let mut p = vec![0.0; m.n_classes()];
            m.proba_into(x, &mut p);
            p[k]
        }
    }
}

fn boost(lr: f64, n: usize, growth: Growth) -> BoostParams {
    BoostParams {
        learning_rate: lr,
        n_estimators: n,
        growth,
    }
}

fn level_wise(depth: usize, sample: f64) -> Growth {
    Growth::LevelWise {
        max_depth: depth,
        gamma: 0.0,
        lambda: 1.0,
        subsample: sample,
        colsample_bytree: sample,
    }
}

fn leaf_wise(depth: usize, leaves: usize, sample: f64) -> Growth {
    Growth::LeafWise {
        max_depth: depth,
        num_leaves: leaves,
        lambda: 1.0,
        subsample: sample,
        colsample_bytree: sample,
    }
}

fn oblivious(depth: usize) -> Growth {
    Growth::ObliviousOrdered {
        depth,
        l2_leaf_reg: 3.0,
        n_permutations: 1,
    }
}

// ---------------------------------------------------------------------------

fn c1_local_accuracy() -> Verdict {
    let start = Instant::now();
    let learners = [
        ("LR-l1", LearnerConfig::Logistic(LogisticParams { penalty: Penalty::L1, c: 0.1, ..Default::default() })),
        ("LR-l2", LearnerConfig::Logistic(LogisticParams::default())),
        (
            "DT",
            LearnerConfig::Tree(TreeParams {
                criterion: Criterion::Entropy,
                max_depth: Some(10),
                min_samples_leaf: 5,
                splitter: Splitter::Random,
                ..Default::default()
            }),
        ),
        ("RF", LearnerConfig::Forest(ForestParams { n_estimators: 20, max_depth: Some(8), ..Default::default() })),
        ("SVM", LearnerConfig::Svm(SvmParams::default())),
        ("XGB", LearnerConfig::Boost(boost(0.1, 50, level_wise(6, 0.8)))),
        ("LightGBM", LearnerConfig::Boost(boost(0.1, 50, leaf_wise(6, 31, 0.8)))),
        ("CatBoost", LearnerConfig::Boost(boost(0.1, 50, oblivious(6)))),
    ];
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for k in [2usize, 3] {
        let x = uniform_rows(500, 8, 10 + k as u64);
        let y = planted_labels(&x, k, 20 + k as u64);
        let mean = column_means(&x);
        for (_, cfg) in &learners {
            let m = cfg.fit(&x, &y, k, 7).unwrap();
            for c in 0..k {
                let e = Explainer::new(&m, c, &mean).unwrap();
                for r in x.rows_iter() {
                    let (phi, base) = e.explain(r).unwrap();
                    let gap = (phi.iter().sum::<f64>() + base - model_output(&m, r, c)).abs();
                    worst = worst.max(gap);
                }
                pairs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-6 && secs < 30.0,
        format!("max |sum(phi) + base - output| = {worst:.2e} over {pairs} model/class pairs x 500 rows in {secs:.1} s (limits 1e-6, 30 s)"),
    )
}

// ---------------------------------------------------------------------------

fn random_tree(rng: &mut impl Rng, d: usize, depth: usize) -> Tree {
    fn grow(rng: &mut impl Rng, d: usize, depth: usize, cover: f64, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        if depth == 0 || rng.random_bool(0.2) {
            nodes.push(Node::Leaf {
                value: vec![rng.random_range(-2.0..2.0)],
                cover,
            });
            return id;
        }
        nodes.push(Node::Leaf { value: vec![0.0], cover });
        let share = rng.random_range(0.1..0.9);
        let left = grow(rng, d, depth - 1, cover * share, nodes);
        let right = grow(rng, d, depth - 1, cover * (1.0 - share), nodes);
        nodes[id] = Node::Split {
            feature: rng.random_range(0..d),
            threshold: rng.random_range(0.0..1.0),
            left,
            right,
            cover,
        };
        id
    }
    let mut nodes = Vec::new();
    let cover = rng.random_range(10..200) as f64;
    grow(rng, d, depth, cover, &mut nodes);
    Tree { nodes }
}

fn c2_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut worst = 0.0f64;
    let mut rows = 0;
    for _ in 0..200 {
        let d = rng.random_range(1..=12);
        let depth = rng.random_range(1..=3);
        let n_trees = rng.random_range(1..=10);
        let trees: Vec<Tree> = (0..n_trees).map(|_| random_tree(&mut rng, d, depth)).collect();
        let ens = TreeEnsemble {
            trees: trees.iter().collect(),
            n_features: d,
            output: 0,
            scale: rng.random_range(0.5..1.5),
            offset: rng.random_range(-1.0..1.0),
        };
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let (fast, b1) = tree_shap(&ens, &x).unwrap();
            let (slow, b2) = brute_shap(&ens, &x).unwrap();
            worst = worst.max((b1 - b2).abs());
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
            rows += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-8 && secs < 120.0,
        format!("max |tree_shap - brute_shap| = {worst:.2e} over 200 ensembles, {rows} rows in {secs:.1} s (limits 1e-8, 120 s)"),
    )
}

// ---------------------------------------------------------------------------

fn ln_choose(n: u64, k: u64) -> f64 {
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(k) - lf(n - k)
}

/// Central 99% acceptance band of Binomial(n, 1/2), as counts.
fn binomial_band(n: u64) -> (u64, u64) {
    let pmf: Vec<f64> = (0..=n).map(|k| (ln_choose(n, k) - n as f64 * 2f64.ln()).exp()).collect();
    let mut cdf = 0.0;
    let mut lo = 0;
    for (k, p) in pmf.iter().enumerate() {
        if cdf + p > 0.005 {
            lo = k as u64;
            break;
        }
        cdf += p;
    }
    (lo, n - lo)
}

fn c3_anti_leakage() -> Verdict {
    let start = Instant::now();
    let n = 400;
    let x = uniform_rows(n, 10, 33);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut seeded(34));
    let y = LabelVector::new(Task::LoginBinary, labels.clone()).unwrap();
    let cfg = StackConfig {
        base: vec![boost(0.1, 200, level_wise(9, 1.0)), boost(0.1, 200, leaf_wise(9, 512, 1.0)), boost(0.1, 200, oblivious(9))],
        seed: 35,
        ..StackConfig::default()
    };
    let m = fit_stack(&x, &y, &cfg).unwrap();
    let (lo, hi) = binomial_band(n as u64);
    let mut oof = Vec::new();
    for b in 0..3 {
        let correct = (0..n)
            .filter(|&i| {
                let p = &m.oof_features.row(i)[b * 2..b * 2 + 2];
                usize::from(p[1] > p[0]) == labels[i]
            })
            .count() as u64;
        oof.push(correct);
    }
    let mut in_fold = f64::INFINITY;
    for (f, models) in m.fold_models.iter().enumerate() {
        let rows = m.fold_plan.train_of(f);
        let xt = x.select_rows(&rows);
        for bm in models {
            let pred = bm.predict(&xt).unwrap();
            let acc = pred.iter().zip(&rows).filter(|(p, &i)| **p == labels[i]).count() as f64 / rows.len() as f64;
            in_fold = in_fold.min(acc);
        }
    }
    let meta_pred = tristack::learners::fit_logistic(&m.oof_features, &labels, 2, &LogisticParams::default())
        .unwrap()
        .predict(&m.oof_features)
        .unwrap();
    let meta_correct = meta_pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as u64;
    let secs = start.elapsed().as_secs_f64();
    let in_band = oof.iter().all(|&c| (lo..=hi).contains(&c));
    (
        in_band && in_fold > 0.95 && secs < 180.0,
        format!(
            "OOF correct per base {oof:?} of {n} (99% chance band {lo}..={hi}), meta on OOF {meta_correct}; min in-fold accuracy {in_fold:.3} (> 0.95) in {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------------------

fn c4_smote_geometry() -> Verdict {
    let counts = [6000usize, 1000, 1000];
    let n: usize = counts.iter().sum();
    let x = uniform_rows(n, 5, 44);
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &m)| vec![c; m]).collect();
    labels.shuffle(&mut seeded(45));
    let y = LabelVector::new(Task::MessageMulticlass, labels.clone()).unwrap();
    let k = 5;
    let (xs, ys, origin) = smote_with_provenance(&x, &y, k, 46).unwrap();
    let mut worst_residual = 0.0f64;
    let mut coef_ok = true;
    let mut neighbor_ok = true;
    for (i, s) in origin.iter().enumerate() {
        let row = xs.row(n + i);
        let (p, q) = (x.row(s.parent), x.row(s.neighbor));
        let dq: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
        let ds: Vec<f64> = row.iter().zip(p).map(|(a, b)| a - b).collect();
        let t = dot(&ds, &dq) / dot(&dq, &dq);
        let residual = ds.iter().zip(&dq).map(|(a, b)| (a - t * b).powi(2)).sum::<f64>().sqrt();
        worst_residual = worst_residual.max(residual);
        coef_ok &= (0.0..=1.0).contains(&s.gap) && (t - s.gap).abs() < 1e-9;
        coef_ok &= labels[s.parent] == ys.labels[n + i] && labels[s.neighbor] == ys.labels[n + i];
        if i % 100 == 0 {
            // the neighbour is among the k nearest same-class rows of the parent
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != s.parent && labels[j] == labels[s.parent])
                .map(|j| (x.row(j).iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            neighbor_ok &= d[..k].iter().any(|&(_, j)| j == s.neighbor);
        }
    }
    let post = ys.class_counts();
    let balanced = post.iter().all(|&c| c == counts[0]);
    (
        origin.len() == 10_000 && worst_residual < 1e-9 && coef_ok && neighbor_ok && balanced,
        format!(
            "{} synthetic points, max segment residual {worst_residual:.2e}, coefficients in [0,1]: {coef_ok}, neighbours valid: {neighbor_ok}, class counts {post:?}",
            origin.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn oracle_distance(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    let shared: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    if shared.is_empty() {
        return f64::INFINITY;
    }
    let ss: f64 = shared.iter().map(|(x, y)| (x - y) * (x - y)).sum();
    (ss * a.len() as f64 / shared.len() as f64).sqrt()
}

fn oracle_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn table_of(rows: &[Vec<Option<f64>>], d: usize) -> tristack::dataset::DataTable {
    let schema: Vec<ColumnSchema> = (0..d).map(|c| ColumnSchema::numeric(format!("c{c}"))).collect();
    let mut b = TableBuilder::new(schema).unwrap();
    for r in rows {
        b.push_row(r.iter().map(|v| v.map_or(Cell::Missing, Cell::Value)).collect()).unwrap();
    }
    b.finish()
}

fn c5_imputation_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let (mut knn_cells, mut median_cells, mut unfilled) = (0usize, 0usize, 0usize);
    for m in 0..50u64 {
        let mut rng = seeded(500 + m);
        let (n, d, k) = (rng.random_range(20..60), rng.random_range(3..8), rng.random_range(1..6));
        let mut reference: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_bool(0.75).then(|| rng.random_range(-3.0..3.0))).collect())
            .collect();
        // column 1 is only observed where column 0 is missing, so queries
        // that observe only column 0 have no neighbour for column 1
        for row in reference.iter_mut() {
            if row[1].is_some() {
                row[0] = None;
            }
        }
        for c in 0..d {
            if reference.iter().all(|r| r[c].is_none()) {
                reference[c % n][c] = Some(1.0);
                if c == 1 {
                    reference[c % n][0] = None;
                }
            }
        }
        let model = fit_knn_imputer(&table_of(&reference, d), k).unwrap();
        let mut queries: Vec<Vec<Option<f64>>> = (0..20)
            .map(|_| (0..d).map(|_| rng.random_bool(0.6).then(|| rng.random_range(-3.0..3.0))).collect())
            .collect();
        queries.push((0..d).map(|c| (c == 0).then_some(0.5)).collect());
        queries.push(vec![None; d]);
        let filled = impute(&model, &table_of(&queries, d)).unwrap();
        for (r, q) in queries.iter().enumerate() {
            let mut order: Vec<(f64, usize)> = reference.iter().enumerate().map(|(i, row)| (oracle_distance(q, row), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for c in 0..d {
                if q[c].is_some() {
                    continue;
                }
                let donors: Vec<(f64, f64)> = order
                    .iter()
                    .filter(|(dist, i)| dist.is_finite() && reference[*i][c].is_some())
                    .map(|&(dist, i)| (dist, reference[i][c].unwrap()))
                    .collect();
                let got = filled.value(r, c);
                let Some(got) = got else {
                    unfilled += 1;
                    continue;
                };
                let expect = if donors.is_empty() {
                    median_cells += 1;
                    oracle_median(reference.iter().filter_map(|row| row[c]).collect())
                } else {
                    knn_cells += 1;
                    let cut = donors[donors.len().min(k) - 1].0;
                    let chosen: Vec<f64> = donors.iter().filter(|(dist, _)| *dist <= cut).map(|(_, v)| *v).collect();
                    chosen.iter().sum::<f64>() / chosen.len() as f64
                };
                worst = worst.max((got - expect).abs());
            }
        }
        if filled.has_missing() {
            unfilled += 1;
        }
    }
    (
        worst < 1e-12 && unfilled == 0 && median_cells > 0,
        format!("max deviation {worst:.2e} over {knn_cells} KNN cells; {median_cells} cells filled by the fallback median; {unfilled} left missing"),
    )
}

// ---------------------------------------------------------------------------

fn c6_metrics() -> Verdict {
    // 7 TP, 2 FP, 1 FN, 10 TN
    let y_true: Vec<usize> = [vec![1; 7], vec![0; 2], vec![1; 1], vec![0; 10]].concat();
    let y_pred: Vec<usize> = [vec![1; 7], vec![1; 2], vec![0; 1], vec![0; 10]].concat();
    let s = metrics(&confusion(&y_true, &y_pred, 2).unwrap(), Averaging::BinaryPositiveClass);
    let hand = [(s.accuracy, 17.0 / 20.0), (s.precision, 7.0 / 9.0), (s.recall, 7.0 / 8.0), (s.f1, 14.0 / 17.0)];
    let rounded_ok = [(s.accuracy, 0.85), (s.precision, 0.7778), (s.recall, 0.875), (s.f1, 0.8235)]
        .iter()
        .all(|(a, b)| (a - b).abs() <= 1e-4);
    let exact_ok = hand.iter().all(|(a, b)| (a - b).abs() < 1e-15);
    let auc = binary_auc(&[true, true, false, false], &[0.8, 0.4, 0.6, 0.2]).unwrap();

    let worlds = 500;
    let (n, truth) = (200, 0.7);
    let mut covered = 0;
    for w in 0..worlds {
        let mut rng = seeded(6000 + w);
        let yt: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let yp: Vec<usize> = yt.iter().map(|&t| if rng.random_bool(truth) { t } else { 1 - t }).collect();
        let ci = bootstrap_ci(
            n,
            |idx| {
                let t: Vec<usize> = idx.iter().map(|&i| yt[i]).collect();
                let p: Vec<usize> = idx.iter().map(|&i| yp[i]).collect();
                Ok(metrics(&confusion(&t, &p, 2)?, Averaging::BinaryPositiveClass).accuracy)
            },
            1000,
            0.05,
            w,
        )
        .unwrap();
        if ci.low <= truth && truth <= ci.high {
            covered += 1;
        }
    }
    let coverage = covered as f64 / worlds as f64;
    (
        rounded_ok && exact_ok && auc == 0.75 && (0.92..=0.98).contains(&coverage),
        format!(
            "acc {:.4} prec {:.4} rec {:.4} f1 {:.4}; 4-point AUC {auc}; 95% bootstrap coverage {coverage:.3} over {worlds} worlds",
            s.accuracy, s.precision, s.recall, s.f1
        ),
    )
}

// ---------------------------------------------------------------------------

fn oracle_softmax_loss(z: &[f64], y: usize) -> f64 {
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    -(z[y].exp() / denom).ln()
}

fn oracle_softmax_grad(z: &[f64], y: usize) -> Vec<f64> {
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    z.iter().enumerate().map(|(k, v)| v.exp() / denom - if k == y { 1.0 } else { 0.0 }).collect()
}

fn c7_boosting_numerics() -> Verdict {
    let mut rng = seeded(77);
    let mut worst_rel = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(2..6);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = rng.random_range(0..k);
        let (g, h) = softmax_grad_hess(&z, y);
        for j in 0..k {
            let step = 1e-5;
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += step;
            zm[j] -= step;
            let fd_g = (oracle_softmax_loss(&zp, y) - oracle_softmax_loss(&zm, y)) / (2.0 * step);
            let fd_h = (oracle_softmax_grad(&zp, y)[j] - oracle_softmax_grad(&zm, y)[j]) / (2.0 * step);
            worst_rel = worst_rel.max((fd_g - g[j]).abs() / g[j].abs());
            worst_rel = worst_rel.max((fd_h - h[j]).abs() / h[j].abs());
        }
    }

    let x = uniform_rows(300, 4, 78);
    let y = planted_labels(&x, 3, 79);
    let mut monotone = true;
    let mut drops = Vec::new();
    for growth in [level_wise(3, 1.0), leaf_wise(4, 8, 1.0)] {
        let m = fit_boost(&x, &y, 3, &boost(0.1, 200, growth), 80).unwrap();
        let mut raw = vec![vec![m.base_score; 3]; x.n_rows()];
        let loss = |raw: &[Vec<f64>]| raw.iter().zip(&y).map(|(z, &l)| oracle_softmax_loss(z, l)).sum::<f64>() / y.len() as f64;
        let first = loss(&raw);
        let mut prev = first;
        for it in &m.trees {
            for (r, z) in raw.iter_mut().enumerate() {
                for (o, t) in it.iter().enumerate() {
                    z[o] += t.predict(x.row(r))[0];
                }
            }
            let cur = loss(&raw);
            monotone &= cur <= prev + 1e-12;
            prev = cur;
        }
        drops.push(format!("{first:.3}->{prev:.3}"));
    }

    // n = 4, all positive, single leaf: G = -2, H = 1, lambda = 1
    let x4 = Matrix::from_rows(&[[0.0], [0.0], [0.0], [0.0]]).unwrap();
    let m = fit_boost(&x4, &[1, 1, 1, 1], 2, &boost(0.1, 1, level_wise(3, 1.0)), 0).unwrap();
    let single = m.trees[0][0].nodes.len() == 1 && m.raw(&[0.0])[0] == 0.1;
    let w = match &m.trees[0][0].nodes[0] {
        Node::Leaf { value, .. } => value[0] / 0.1,
        Node::Split { .. } => f64::NAN,
    };
    // four positives left of four negatives: G_L = -2, G_R = 2, H_L = H_R = 1
    let x8 = Matrix::from_rows(&[[0.0], [0.0], [0.0], [0.0], [1.0], [1.0], [1.0], [1.0]]).unwrap();
    let stump = fit_boost(&x8, &[1, 1, 1, 1, 0, 0, 0, 0], 2, &boost(0.1, 1, level_wise(1, 1.0)), 0).unwrap();
    let leaves: Vec<f64> = stump.trees[0][0]
        .nodes
        .iter()
        .filter_map(|n| match n {
            Node::Leaf { value, .. } => Some(value[0]),
            Node::Split { .. } => None,
        })
        .collect();
    let gain = split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0);
    let hand_gain = 0.5 * (4.0 / 2.0 + 4.0 / 2.0 - 0.0 / 3.0);
    let hand_ok = single && w == 1.0 && gain == 2.0 && hand_gain == 2.0 && leaves == [0.1, -0.1];
    (
        worst_rel < 1e-5 && monotone && hand_ok,
        format!(
            "max rel. derivative error {worst_rel:.2e}; log-loss non-increasing over 200 iterations: {monotone} ({}); leaf weight {w}, split gain {gain}, stump leaves {leaves:?}",
            drops.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------

const STAGES: [&str; 5] = ["synth", "train", "evaluate", "explain", "report"];

fn run_pipeline(dir: &Path) -> Result<f64, String> {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("config.json"), r#"{"output": {"dir": "run"}}"#).unwrap();
    let start = Instant::now();
    for stage in STAGES {
        let out = Command::new(env!("CARGO_BIN_EXE_tristack"))
            .current_dir(dir)
            .args([stage, "--config", "config.json"])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{stage} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

fn run_config(dir: &Path) -> RunConfig {
    RunConfig::load(&dir.join("config.json")).unwrap()
}

fn c8_protocol(a: &Path, b: &Path) -> Verdict {
    let ta = match run_pipeline(a) {
        Ok(t) => t,
        Err(e) => return (false, e),
    };
    let tb = match run_pipeline(b) {
        Ok(t) => t,
        Err(e) => return (false, e),
    };
    let ma = read_manifest(&a.join("run")).unwrap();
    let mb = read_manifest(&b.join("run")).unwrap();
    let cfg = run_config(a);
    let n_models = [Task::LoginBinary, Task::MessageMulticlass]
        .iter()
        .flat_map(|&t| pipeline::MODELS.iter().map(move |(name, _)| (t, *name)))
        .filter(|(t, name)| ma.contains_key(&format!("models/{}/{name}.json", t.name())))
        .count();
    let svgs = ma.keys().filter(|k| k.ends_with(".svg")).count();
    let truth = read_ground_truth(&cfg.data_dir().join("ground_truth.json")).unwrap();
    let rate = truth.realized.login;
    let n_cols = truth.columns.len();
    (
        ta < 300.0 && tb < 300.0 && ma == mb && n_models == 16 && svgs > 0 && (rate - 0.375).abs() <= 0.02,
        format!(
            "runs took {ta:.0} s and {tb:.0} s (< 300 s); {} output hashes identical: {}; {n_models} model files, {svgs} SVGs; {n_cols} features; login rate {rate:.4} (0.375 +/- 0.02)",
            ma.len(),
            ma == mb,
        ),
    )
}

fn c9_recovery(a: &Path) -> Verdict {
    let cfg = run_config(a);
    let Some(rec) = pipeline::recovery(&cfg, 5).unwrap() else {
        return (false, "no rankings or ground truth found".into());
    };
    let mut signed = 0;
    for d in &rec.details {
        let task = match d.outcome {
            tristack::synth::Outcome::Login => Task::LoginBinary,
            tristack::synth::Outcome::Message => Task::MessageMulticlass,
        };
        let ranking = pipeline::read_ranking(&cfg, task, "etb").unwrap();
        if let Some(e) = ranking.iter().find(|e| e.name == d.feature) {
            if e.mean_signed.signum() == f64::from(d.sign) {
                signed += 1;
            }
        }
    }
    let ranks: Vec<String> = rec.details.iter().map(|d| format!("{}#{}", d.feature, d.rank.unwrap_or(0))).collect();
    (
        rec.in_top >= 4 && rec.sign_matches >= 4,
        format!(
            "{}/{} planted features in the top 5 [{}]; direction (value-attribution correlation) matches {}/{}; mean signed phi matches {signed}/{}",
            rec.in_top,
            rec.planted,
            ranks.join(", "),
            rec.sign_matches,
            rec.planted,
            rec.planted
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Macro-F1 on the held-out message rows of the ensemble and its three bases.
fn message_scores(cfg: &RunConfig, trained: bool) -> (f64, [f64; 3]) {
    let task = Task::MessageMulticlass;
    let data = pipeline::load_data(cfg).unwrap();
    let f1 = |m: &dyn Fn(&Matrix) -> Matrix, x: &Matrix, y: &LabelVector| Scoring::MacroF1.score(&y.labels, &m(x)).unwrap();
    if trained {
        let (x, y) = pipeline::test_set(cfg, &data, task).unwrap();
        let score = |name: &str| {
            let m = pipeline::load_model(cfg, task, name).unwrap();
            f1(&|x| m.predict_proba(x).unwrap(), &x, &y)
        };
        return (score("etb"), [score("xgboost"), score("lightgbm"), score("catboost")]);
    }
    let td = data.for_task(cfg, task).unwrap();
    let p = pipeline::prepare(cfg, &td, task, true).unwrap();
    let set = cfg.models.for_task(task).unwrap();
    let (stack, bases) = pipeline::fit_ensemble(cfg, &set, task, &p.x_fit, &p.y_fit).unwrap();
    let x = p.preprocessor.transform(&td.table.select_rows(&p.plan.test_indices)).unwrap();
    let y = td.labels.select(&p.plan.test_indices);
    let etb = f1(&|x| stack.predict_proba(x).unwrap(), &x, &y);
    let b: Vec<f64> = bases.iter().map(|m| f1(&|x| m.predict_proba(x).unwrap(), &x, &y)).collect();
    (etb, [b[0], b[1], b[2]])
}

fn c10_non_inferiority(a: &Path) -> Verdict {
    let base_cfg = run_config(a);
    let mut etb = Vec::new();
    let mut best = Vec::new();
    let mut lines = Vec::new();
    for seed in 42..47u64 {
        let mut cfg = base_cfg.clone();
        cfg.seed = seed;
        cfg.tasks = vec![Task::MessageMulticlass];
        cfg.data.dir = Some(base_cfg.data_dir());
        let (e, b) = message_scores(&cfg, seed == base_cfg.seed);
        let top = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lines.push(format!("seed {seed}: ETB {e:.3} vs bases {:.3}/{:.3}/{:.3}", b[0], b[1], b[2]));
        etb.push(e);
        best.push(top);
    }
    let (me, mb) = (median(etb), median(best));
    (
        me >= mb - 0.02,
        format!("median ETB macro-F1 {me:.3} vs median best base {mb:.3} (need >= {:.3}); {}", mb - 0.02, lines.join("; ")),
    )
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&work).unwrap();
    let (run_a, run_b) = (work.join("a"), work.join("b"));

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("SHAP local accuracy", Box::new(c1_local_accuracy)),
        ("SHAP oracle equivalence", Box::new(c2_oracle_equivalence)),
        ("Anti-leakage", Box::new(c3_anti_leakage)),
        ("SMOTE geometry", Box::new(c4_smote_geometry)),
        ("Imputation oracle", Box::new(c5_imputation_oracle)),
        ("Metric correctness", Box::new(c6_metrics)),
        ("Boosting numerics", Box::new(c7_boosting_numerics)),
        ("Protocol reproduction", Box::new(|| c8_protocol(&run_a, &run_b))),
        ("Planted-signal recovery", Box::new(|| c9_recovery(&run_a))),
        ("Ensemble non-inferiority", Box::new(|| c10_non_inferiority(&run_a))),
    ];
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let line = format!(
            "[{}] {:>2}. {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push(line);
        if !pass {
            failed.push(i + 1);
        }
    }
    std::fs::write(work.join("acceptance.txt"), format!("{}\n", lines.join("\n"))).unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
