//! Random forest of CART trees on bootstrap samples with per-node feature
//! subsampling. Prediction averages the trees' class-frequency vectors.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded;

use super::tree::{grow_cart, Columns, Criterion, Splitter, Tree, TreeParams};
use super::{check_fit_input, Classifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub criterion: Criterion,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `ceil(sqrt(n_features))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            max_depth: Some(20),
            criterion: Criterion::Gini,
            min_samples_leaf: 1,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub n_classes: usize,
    pub params: ForestParams,
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<Tree>,
}

pub fn fit_forest(x: &Matrix, y: &[usize], n_classes: usize, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    check_fit_input(x, y, n_classes)?;
    if params.n_estimators == 0 {
        return Err(Error::Parameter("a forest needs at least one tree".into()));
    }
    let d = x.n_cols();
    let tree_params = TreeParams {
        criterion: params.criterion,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        min_samples_split: params.min_samples_split,
        splitter: Splitter::Best,
        max_features: Some(params.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d)),
    };
    tree_params.check()?;
    let cols = Columns::new(x);
    let presorted = cols.presort();
    let mut master = seeded(seed);
    let tree_seeds: Vec<u64> = (0..params.n_estimators).map(|_| master.random()).collect();
    let n = x.n_rows();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seeded(s);
            let mut mult = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    mult[rng.random_range(0..n)] += 1;
                }
            } else {
                mult.iter_mut().for_each(|m| *m = 1);
            }
            grow_cart(&cols, &presorted, &mult, y, n_classes, &tree_params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        n_features: d,
        n_classes,
        params: params.clone(),
        tree_seeds,
        trees,
    })
}

impl Classifier for ForestModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.predict(x)) {
                *o += v;
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_tree;

    #[test]
    fn single_row_degenerates_to_one_tree() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let p = ForestParams {
            n_estimators: 1,
            ..ForestParams::default()
        };
        let f = fit_forest(&x, &[0, 1], 2, &p, 0).unwrap();
        assert_eq!(f.trees.len(), 1);
        let t = &f.trees[0];
        let probe = [1.5];
        let mut out = [0.0; 2];
        f.proba_into(&probe, &mut out);
        assert_eq!(&out, t.predict(&probe));
    }

    #[test]
    fn identical_trees_match_single_tree() {
        let x = Matrix::from_rows(&(0..30).map(|i| [(i % 7) as f64, (i % 4) as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<usize> = (0..30).map(|i| (i % 7 > 3) as usize).collect();
        let p = ForestParams {
            n_estimators: 5,
            bootstrap: false,
            max_features: Some(2),
            ..ForestParams::default()
        };
        let f = fit_forest(&x, &y, 2, &p, 1).unwrap();
        let tp = TreeParams {
            max_depth: Some(20),
            ..TreeParams::default()
        };
        let single = fit_tree(&x, &y, 2, &tp, 0).unwrap();
        assert_eq!(f.predict_proba(&x).unwrap(), single.predict_proba(&x).unwrap());
    }

    #[test]
    fn separable_data_fits_exactly() {
        let rows: Vec<[f64; 3]> = (0..120)
            .map(|i| {
                let a = ((i * 37) % 101) as f64 / 50.0 - 1.0;
                let b = ((i * 53) % 97) as f64 / 48.0 - 1.0;
                [a, b, ((i * 11) % 13) as f64]
            })
            .collect();
        let y: Vec<usize> = rows.iter().map(|r| (r[0] + 0.5 * r[1] > 0.1) as usize).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let f = fit_forest(&x, &y, 2, &ForestParams::default(), 7).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y);
        for t in &f.trees {
            t.validate(3, 2).unwrap();
            assert!(t.depth() <= 20);
        }
        assert_eq!(f, fit_forest(&x, &y, 2, &ForestParams::default(), 7).unwrap());
    }
}
