//! From-scratch classifiers: logistic regression, CART, random forest,
//! linear SVM and a Newton boosting engine with three growth strategies.

pub mod boost;
pub mod forest;
pub mod logistic;
pub mod svm;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use boost::{fit_boost, BoostModel, BoostParams, Growth};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub use logistic::{fit_logistic, LogisticModel, LogisticParams, Penalty};
pub use svm::{fit_linear_svm, SvmModel, SvmParams};
pub use tree::{fit_tree, Criterion, Node, Splitter, Tree, TreeModel, TreeParams};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax with max subtraction.
pub fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_fit_input(x: &Matrix, y: &[usize], n_classes: usize) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if x.n_rows() == 0 {
        return Err(Error::Fit("no training rows".into()));
    }
    if n_classes < 2 {
        return Err(Error::Parameter("at least two classes are required".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Parameter(format!("label {bad} outside [0, {n_classes})")));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("training features contain a non-finite value".into()));
    }
    Ok(())
}

pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn n_features(&self) -> usize;

    /// Writes the class-probability vector of one row into `out`.
    fn proba_into(&self, x: &[f64], out: &mut [f64]);

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.n_cols() != self.n_features() {
            return Err(Error::Shape {
                expected: self.n_features(),
                actual: x.n_cols(),
            });
        }
        let k = self.n_classes();
        let mut out = Matrix::zeros(x.n_rows(), k);
        for r in 0..x.n_rows() {
            self.proba_into(x.row(r), out.row_mut(r));
        }
        Ok(out)
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.rows_iter().map(argmax).collect())
    }
}

/// Any fitted learner, tagged by `"model"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AnyModel {
    Logistic(LogisticModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Svm(SvmModel),
    Boost(BoostModel),
}

impl AnyModel {
    fn inner(&self) -> &dyn Classifier {
        match self {
            AnyModel::Logistic(m) => m,
            AnyModel::Tree(m) => m,
            AnyModel::Forest(m) => m,
            AnyModel::Svm(m) => m,
            AnyModel::Boost(m) => m,
        }
    }

    pub fn as_boost(&self) -> Option<&BoostModel> {
        match self {
            AnyModel::Boost(m) => Some(m),
            _ => None,
        }
    }
}

impl Classifier for AnyModel {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        self.inner().proba_into(x, out)
    }
}

/// Learner choice plus hyperparameters, tagged by `"learner"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerConfig {
    Logistic(LogisticParams),
    Tree(TreeParams),
    Forest(ForestParams),
    Svm(SvmParams),
    Boost(BoostParams),
}

impl LearnerConfig {
    pub fn fit(&self, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<AnyModel> {
        Ok(match self {
            LearnerConfig::Logistic(p) => AnyModel::Logistic(fit_logistic(x, y, n_classes, p)?),
            LearnerConfig::Tree(p) => AnyModel::Tree(fit_tree(x, y, n_classes, p, seed)?),
            LearnerConfig::Forest(p) => AnyModel::Forest(fit_forest(x, y, n_classes, p, seed)?),
            LearnerConfig::Svm(p) => AnyModel::Svm(fit_linear_svm(x, y, n_classes, p)?),
            LearnerConfig::Boost(p) => AnyModel::Boost(fit_boost(x, y, n_classes, p, seed)?),
        })
    }
}
