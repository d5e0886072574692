//! SHAP attributions on the raw-margin scale.
//!
//! Tree models use path-dependent TreeSHAP with the training covers as
//! background; linear models use the closed form against the training
//! means. The stacked ensemble composes both to first order (see
//! [`stack_shap`]). Aggregation into rankings, beeswarm points and decision
//! paths feeds the SVG renderer in [`plot`].

pub mod plot;
mod tree_shap;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelVector, Task};
use crate::error::{Error, Result};
use crate::learners::{sigmoid, softmax, AnyModel};
use crate::matrix::Matrix;
use crate::rng::mix64;
use crate::stack::StackModel;

pub use plot::{render_svg, svg_string, Plot};
pub use tree_shap::{brute_shap, linear_shap, tree_shap, tree_shap_single, TreeEnsemble, BRUTE_MAX_FEATURES};

/// Per-row attributions for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    /// `n_rows × n_features`.
    pub phi: Matrix,
    pub base_value: f64,
    pub class_index: usize,
}

impl ShapValues {
    /// `Σφ + base` for row `r`.
    pub fn reconstruct(&self, r: usize) -> f64 {
        self.base_value + self.phi.row(r).iter().sum::<f64>()
    }

    /// Largest `|Σφ + base − raw|` over rows.
    pub fn max_gap(&self, raw: &[f64]) -> f64 {
        raw.iter()
            .enumerate()
            .map(|(r, v)| (self.reconstruct(r) - v).abs())
            .fold(0.0, f64::max)
    }
}

/// An exact explainer for one model and class.
#[derive(Debug, Clone)]
pub enum Explainer<'a> {
    Trees(TreeEnsemble<'a>),
    Linear {
        weights: Vec<f64>,
        intercept: f64,
        mean: Vec<f64>,
    },
}

impl<'a> Explainer<'a> {
    /// Explains the signed margin of class `k` (probability for a single
    /// tree or a forest). `background_mean` is used only by linear models.
    pub fn new(model: &'a AnyModel, k: usize, background_mean: &[f64]) -> Result<Self> {
        if k >= crate::learners::Classifier::n_classes(model) {
            return Err(Error::Parameter(format!("class {k} out of range")));
        }
        if let Some(e) = TreeEnsemble::for_class(model, k) {
            return Ok(Explainer::Trees(e));
        }
        let (weights, intercept) = match model {
            AnyModel::Logistic(m) => m.class_logit(k),
            AnyModel::Svm(m) => {
                if m.n_classes == 2 {
                    let s = if k == 1 { 1.0 } else { -1.0 };
                    (m.weights[0].iter().map(|w| s * w).collect(), s * m.intercepts[0])
                } else {
                    (m.weights[k].clone(), m.intercepts[k])
                }
            }
            _ => unreachable!("tree models handled above"),
        };
        if background_mean.len() != weights.len() {
            return Err(Error::Shape {
                expected: weights.len(),
                actual: background_mean.len(),
            });
        }
        Ok(Explainer::Linear {
            weights,
            intercept,
            mean: background_mean.to_vec(),
        })
    }

    pub fn explain(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            Explainer::Trees(e) => tree_shap(e, x),
            Explainer::Linear {
                weights,
                intercept,
                mean,
            } => linear_shap(weights, *intercept, x, mean),
        }
    }

    /// The quantity the attributions add up to.
    pub fn raw_output(&self, x: &[f64]) -> f64 {
        match self {
            Explainer::Trees(e) => e.predict(x),
            Explainer::Linear { weights, intercept, .. } => intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
        }
    }
}

fn explain_rows<F>(x: &Matrix, class_index: usize, f: F) -> Result<ShapValues>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, f64)> + Sync,
{
    if x.n_rows() == 0 {
        return Err(Error::Parameter("no rows to explain".into()));
    }
    let rows: Vec<(Vec<f64>, f64)> = (0..x.n_rows()).into_par_iter().map(|r| f(x.row(r))).collect::<Result<_>>()?;
    let base_value = rows[0].1;
    let data = rows.into_iter().flat_map(|(p, _)| p).collect();
    Ok(ShapValues {
        phi: Matrix::from_vec(x.n_rows(), x.n_cols(), data)?,
        base_value,
        class_index,
    })
}

pub fn explain_matrix(explainer: &Explainer, x: &Matrix, class_index: usize) -> Result<ShapValues> {
    explain_rows(x, class_index, |r| explainer.explain(r))
}

/// Column means, the linear background.
pub fn column_means(x: &Matrix) -> Vec<f64> {
    let n = x.n_rows().max(1) as f64;
    (0..x.n_cols()).map(|c| x.column(c).iter().sum::<f64>() / n).collect()
}

/// Derivative of each class probability with respect to its own margin at
/// `p`: `p_c (1 − p_c)`.
fn jacobian_diagonal(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| v * (1.0 - v)).collect()
}

/// Class probabilities from per-class margins of one base learner.
fn margin_proba(margins: &[f64]) -> Vec<f64> {
    if margins.len() == 2 {
        let p = sigmoid(margins[1]);
        vec![1.0 - p, p]
    } else {
        let mut z = margins.to_vec();
        softmax(&mut z);
        z
    }
}

/// First-order attribution of the stacked ensemble's class-`k` meta logit.
///
/// Each base learner `b` contributes `Σ_c m_{b,c} · p_{b,c}(1 − p_{b,c}) ·
/// φ^{(b,c)}(x)`, where `m_{b,c}` is the meta weight on its class-`c`
/// probability column and `φ^{(b,c)}` its TreeSHAP for class `c`. The base
/// value is the meta logit evaluated at the base learners' expected
/// margins. This is a linearization, not the Shapley value of the
/// composite model.
pub fn stack_shap(model: &StackModel, x: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    if model.inference != crate::stack::Inference::Refit {
        return Err(Error::Parameter("stack attribution needs refit base learners".into()));
    }
    let n_classes = model.n_classes;
    let (meta_w, meta_b) = model.meta.class_logit(k);
    let d = model.n_features;
    let mut phi = vec![0.0; d];
    let mut base = meta_b;
    for (b, base_model) in model.full_models.iter().enumerate() {
        let mut margins = vec![0.0; n_classes];
        let mut base_margins = vec![0.0; n_classes];
        let mut phis = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let e = TreeEnsemble::boost(base_model, c);
            let (p, b0) = tree_shap(&e, x)?;
            margins[c] = e.predict(x);
            base_margins[c] = b0;
            phis.push(p);
        }
        let jac = jacobian_diagonal(&margin_proba(&margins));
        let p0 = margin_proba(&base_margins);
        for c in 0..n_classes {
            let m = meta_w[b * n_classes + c];
            base += m * p0[c];
            let scale = m * jac[c];
            if scale != 0.0 {
                for (acc, v) in phi.iter_mut().zip(&phis[c]) {
                    *acc += scale * v;
                }
            }
        }
    }
    Ok((phi, base))
}

pub fn stack_shap_matrix(model: &StackModel, x: &Matrix, k: usize) -> Result<ShapValues> {
    explain_rows(x, k, |r| stack_shap(model, r, k))
}

/// One ranked feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub feature: usize,
    pub name: String,
    pub mean_abs: f64,
    pub mean_signed: f64,
    /// Pearson correlation of feature value and attribution; its sign is
    /// the direction of the feature's effect (0 when undefined).
    pub value_correlation: f64,
}

/// One beeswarm point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmPoint {
    pub row: usize,
    pub feature: usize,
    pub phi: f64,
    /// Feature value min-max scaled to [0, 1] over the explained rows.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryData {
    pub class_index: usize,
    pub ranking: Vec<RankEntry>,
    pub points: Vec<SwarmPoint>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Mean-|φ| ranking (descending, ties to the lower feature index) cut to
/// `top_n`, plus beeswarm points for the ranked features.
pub fn summarize(shap: &ShapValues, x: &Matrix, names: &[String], top_n: usize) -> Result<SummaryData> {
    let (n, d) = (shap.phi.n_rows(), shap.phi.n_cols());
    if x.n_rows() != n || x.n_cols() != d {
        return Err(Error::Shape {
            expected: n * d,
            actual: x.n_rows() * x.n_cols(),
        });
    }
    if names.len() != d {
        return Err(Error::Shape {
            expected: d,
            actual: names.len(),
        });
    }
    let mut entries: Vec<RankEntry> = (0..d)
        .map(|j| {
            let phi = shap.phi.column(j);
            let mean_abs = phi.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
            let mean_signed = phi.iter().sum::<f64>() / n as f64;
            RankEntry {
                feature: j,
                name: names[j].clone(),
                mean_abs,
                mean_signed,
                value_correlation: pearson(&x.column(j), &phi),
            }
        })
        .collect();
    entries.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.feature.cmp(&b.feature)));
    entries.truncate(top_n);
    let mut points = Vec::with_capacity(entries.len() * n);
    for e in &entries {
        let col = x.column(e.feature);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for r in 0..n {
            let value = if hi > lo { (col[r] - lo) / (hi - lo) } else { 0.5 };
            points.push(SwarmPoint {
                row: r,
                feature: e.feature,
                phi: shap.phi.get(r, e.feature),
                value,
            });
        }
    }
    Ok(SummaryData {
        class_index: shap.class_index,
        ranking: entries,
        points,
    })
}

/// Cumulative build-up of one row's output from the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPath {
    pub row: usize,
    /// Features by descending |φ|, ties to the lower index.
    pub order: Vec<usize>,
    /// `base_value` followed by one running sum per feature in `order`.
    pub cumulative: Vec<f64>,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPathData {
    pub base_value: f64,
    pub feature_names: Vec<String>,
    pub paths: Vec<DecisionPath>,
}

/// Decision paths for `rows`; each path must end within 1e-6 of the model
/// output in `raw` (indexed like the rows of `shap`).
pub fn decision_paths(shap: &ShapValues, names: &[String], rows: &[usize], raw: &[f64]) -> Result<DecisionPathData> {
    let mut paths = Vec::with_capacity(rows.len());
    for &r in rows {
        if r >= shap.phi.n_rows() || r >= raw.len() {
            return Err(Error::Parameter(format!("row {r} out of range")));
        }
        let phi = shap.phi.row(r);
        let mut order: Vec<usize> = (0..phi.len()).collect();
        order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
        let mut cumulative = vec![shap.base_value];
        let mut acc = shap.base_value;
        for &j in &order {
            acc += phi[j];
            cumulative.push(acc);
        }
        if (acc - raw[r]).abs() > 1e-6 {
            return Err(Error::Numeric(format!(
                "decision path for row {r} ends at {acc} but the model output is {}",
                raw[r]
            )));
        }
        paths.push(DecisionPath {
            row: r,
            order,
            cumulative,
            output: raw[r],
        });
    }
    Ok(DecisionPathData {
        base_value: shap.base_value,
        feature_names: names.to_vec(),
        paths,
    })
}

/// Message labels as none (0) versus at least one message (1).
pub fn recode_binary_engagement(labels: &LabelVector) -> Result<LabelVector> {
    if labels.task != Task::MessageMulticlass {
        return Err(Error::Parameter(format!(
            "binary recoding expects message labels, got `{}`",
            labels.task.name()
        )));
    }
    LabelVector::new(Task::MessageBinary, labels.labels.iter().map(|&l| usize::from(l >= 1)).collect())
}

/// Deterministic jitter in [-0.5, 0.5) for a (row, feature) pair.
pub fn jitter(row: usize, feature: usize) -> f64 {
    let h = mix64((row as u64) << 32 ^ feature as u64 ^ 0x5eed);
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// Long-format CSV: `row_id, feature, phi, feature_value, class`.
pub fn write_shap_csv<W: Write>(out: W, shap: &ShapValues, x: &Matrix, row_ids: &[u64], names: &[String]) -> Result<()> {
    if row_ids.len() != shap.phi.n_rows() {
        return Err(Error::Shape {
            expected: shap.phi.n_rows(),
            actual: row_ids.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_id", "feature", "phi", "feature_value", "class"])?;
    for (r, id) in row_ids.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            w.write_record([
                id.to_string(),
                name.clone(),
                shap.phi.get(r, j).to_string(),
                x.get(r, j).to_string(),
                shap.class_index.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<shap csv>", e))?;
    Ok(())
}

pub fn write_shap_csv_file(path: impl AsRef<Path>, shap: &ShapValues, x: &Matrix, row_ids: &[u64], names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_shap_csv(std::io::BufWriter::new(f), shap, x, row_ids, names)
}

/// Ranking CSV: `rank, feature, mean_abs_phi, mean_phi, value_correlation`.
pub fn ranking_csv(summary: &SummaryData) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "feature", "mean_abs_phi", "mean_phi", "value_correlation"])?;
    for (i, e) in summary.ranking.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            e.name.clone(),
            e.mean_abs.to_string(),
            e.mean_signed.to_string(),
            e.value_correlation.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Render(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_boost, fit_forest, fit_linear_svm, fit_logistic, fit_tree, BoostParams, Classifier, ForestParams, Growth, LogisticParams, SvmParams, TreeParams};
    use crate::rng::seeded;
    use rand::Rng;

    fn toy(n: usize, d: usize, k: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = rows
            .iter()
            .map(|r| {
                let s = r[0] - 0.5 * r[1] + rng.random_range(-0.5..0.5);
                if k == 2 {
                    usize::from(s > 0.0)
                } else if s < -0.7 {
                    0
                } else if s < 0.7 {
                    1
                } else {
                    2
                }
            })
            .collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn local_accuracy_for_every_learner() {
        for k in [2usize, 3] {
            let (x, y) = toy(150, 5, k, 3 + k as u64);
            let models = vec![
                AnyModel::Logistic(fit_logistic(&x, &y, k, &LogisticParams::default()).unwrap()),
                AnyModel::Svm(fit_linear_svm(&x, &y, k, &SvmParams::default()).unwrap()),
                AnyModel::Tree(fit_tree(&x, &y, k, &TreeParams { max_depth: Some(5), ..TreeParams::default() }, 1).unwrap()),
                AnyModel::Forest(fit_forest(&x, &y, k, &ForestParams { n_estimators: 10, max_depth: Some(6), ..ForestParams::default() }, 1).unwrap()),
                AnyModel::Boost(fit_boost(&x, &y, k, &BoostParams { n_estimators: 15, ..BoostParams::default() }, 1).unwrap()),
                AnyModel::Boost(
                    fit_boost(
                        &x,
                        &y,
                        k,
                        &BoostParams {
                            n_estimators: 10,
                            growth: Growth::ObliviousOrdered {
                                depth: 4,
                                l2_leaf_reg: 3.0,
                                n_permutations: 2,
                            },
                            ..BoostParams::default()
                        },
                        1,
                    )
                    .unwrap(),
                ),
            ];
            let mu = column_means(&x);
            for m in &models {
                for c in 0..k {
                    let e = Explainer::new(m, c, &mu).unwrap();
                    let s = explain_matrix(&e, &x, c).unwrap();
                    let raw: Vec<f64> = x.rows_iter().map(|r| e.raw_output(r)).collect();
                    assert!(s.max_gap(&raw) < 1e-9);
                }
            }
            // the signed margin of the boosted model agrees with its own raw output
            let b = models[4].as_boost().unwrap();
            let e = Explainer::new(&models[4], 0, &mu).unwrap();
            assert_eq!(e.raw_output(x.row(0)), b.raw_margin(x.row(0), 0));
            assert!(models[4].predict_proba(&x).is_ok());
        }
    }

    #[test]
    fn summary_ranking_and_points() {
        let x = Matrix::from_rows(&[[0.0, 1.0, 5.0], [1.0, 3.0, 5.0]]).unwrap();
        let phi = Matrix::from_rows(&[[0.1, -2.0, 0.0], [0.3, 2.0, 0.0]]).unwrap();
        let s = ShapValues {
            phi,
            base_value: 0.0,
            class_index: 1,
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let sum = summarize(&s, &x, &names, 2).unwrap();
        assert_eq!(sum.ranking.len(), 2);
        assert_eq!(sum.ranking[0].name, "b");
        assert_eq!(sum.ranking[0].mean_abs, 2.0);
        assert!((sum.ranking[0].value_correlation - 1.0).abs() < 1e-12);
        assert_eq!(sum.points.len(), 4);
        assert!(sum.points.iter().all(|p| (0.0..=1.0).contains(&p.value)));

        let zero = ShapValues {
            phi: Matrix::zeros(2, 3),
            base_value: 0.0,
            class_index: 0,
        };
        let z = summarize(&zero, &x, &names, 10).unwrap();
        assert_eq!(z.ranking.iter().map(|e| e.feature).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(z.ranking.iter().all(|e| e.mean_abs == 0.0));
        assert_eq!(z.points.iter().filter(|p| p.feature == 2).map(|p| p.value).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn decision_path_ends_at_output() {
        let s = ShapValues {
            phi: Matrix::from_rows(&[[0.5, -1.5, 0.25]]).unwrap(),
            base_value: 1.0,
            class_index: 0,
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let d = decision_paths(&s, &names, &[0], &[0.25]).unwrap();
        assert_eq!(d.paths[0].order, vec![1, 0, 2]);
        assert_eq!(d.paths[0].cumulative, vec![1.0, -0.5, 0.0, 0.25]);
        assert!(matches!(decision_paths(&s, &names, &[0], &[0.3]), Err(Error::Numeric(_))));
    }

    #[test]
    fn recoding() {
        let l = LabelVector::new(Task::MessageMulticlass, vec![0, 1, 2, 0]).unwrap();
        let b = recode_binary_engagement(&l).unwrap();
        assert_eq!(b.labels, vec![0, 1, 1, 0]);
        assert_eq!(b.task, Task::MessageBinary);
        let login = LabelVector::new(Task::LoginBinary, vec![0, 1]).unwrap();
        assert!(recode_binary_engagement(&login).is_err());
    }

    #[test]
    fn shap_csv_layout() {
        let s = ShapValues {
            phi: Matrix::from_rows(&[[0.5, -1.5]]).unwrap(),
            base_value: 0.0,
            class_index: 2,
        };
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let mut out = Vec::new();
        write_shap_csv(&mut out, &s, &x, &[17], &["a".into(), "b".into()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "row_id,feature,phi,feature_value,class\n17,a,0.5,1,2\n17,b,-1.5,2,2\n");
    }

    #[test]
    fn jitter_is_bounded_and_stable() {
        for r in 0..100 {
            for f in 0..5 {
                let j = jitter(r, f);
                assert!((-0.5..0.5).contains(&j));
                assert_eq!(j, jitter(r, f));
            }
        }
    }
}
