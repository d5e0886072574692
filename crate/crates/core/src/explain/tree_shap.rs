//! Path-dependent TreeSHAP and an exhaustive Shapley oracle over the same
//! cover-weighted background.

use crate::error::{Error, Result};
use crate::learners::{AnyModel, BoostModel, Node, Tree};

/// Most distinct features the subset oracle will enumerate.
pub const BRUTE_MAX_FEATURES: usize = 12;

/// A sum of trees read at one leaf-value index:
/// `offset + scale · Σ tree(x)[output]`.
#[derive(Debug, Clone)]
pub struct TreeEnsemble<'a> {
    pub trees: Vec<&'a Tree>,
    pub n_features: usize,
    pub output: usize,
    pub scale: f64,
    pub offset: f64,
}

impl<'a> TreeEnsemble<'a> {
    /// The explained output of a tree model for class `k`: the signed raw
    /// margin for boosting, the class probability for a tree or forest.
    pub fn for_class(model: &'a AnyModel, k: usize) -> Option<Self> {
        match model {
            AnyModel::Boost(m) => Some(Self::boost(m, k)),
            AnyModel::Tree(m) => Some(TreeEnsemble {
                trees: vec![&m.tree],
                n_features: m.n_features,
                output: k,
                scale: 1.0,
                offset: 0.0,
            }),
            AnyModel::Forest(m) => Some(TreeEnsemble {
                trees: m.trees.iter().collect(),
                n_features: m.n_features,
                output: k,
                scale: 1.0 / m.trees.len() as f64,
                offset: 0.0,
            }),
            _ => None,
        }
    }

    /// The signed class-`k` margin of a boosted model.
    pub fn boost(m: &'a BoostModel, k: usize) -> Self {
        let (o, sign) = m.class_output(k);
        TreeEnsemble {
            trees: m.output_trees(o).collect(),
            n_features: m.n_features,
            output: 0,
            scale: sign,
            offset: sign * m.base_score,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.offset + self.scale * self.trees.iter().map(|t| t.predict(x)[self.output]).sum::<f64>()
    }

    /// Cover-weighted mean output.
    pub fn expected_value(&self) -> Result<f64> {
        let mut s = 0.0;
        for t in &self.trees {
            s += conditional(t, 0, self.output, &[], &[])?;
        }
        Ok(self.offset + self.scale * s)
    }

    /// Distinct split features across the ensemble, ascending.
    pub fn active_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.trees.iter().flat_map(|t| t.features()).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

fn checked_cover(node: &Node) -> Result<f64> {
    let c = node.cover();
    if c > 0.0 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::ModelIntegrity(format!("node with non-positive cover {c}")))
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lp = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / lp;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / lp;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let lp = (l + 1) as f64;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut n = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = n * lp / ((j + 1) as f64 * one);
            n = t - path[j].weight * zero * (l - j) as f64 / lp;
        } else {
            path[j].weight = path[j].weight * lp / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `i` removed.
fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let lp = (l + 1) as f64;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut total = 0.0;
    if one != 0.0 {
        let mut n = path[l].weight;
        for j in (0..l).rev() {
            let t = n * lp / ((j + 1) as f64 * one);
            total += t;
            n = path[j].weight - t * zero * (l - j) as f64 / lp;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight * lp / (zero * (l - j) as f64);
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    output: usize,
    phi: &'a mut [f64],
}

impl Walker<'_> {
    fn recurse(&mut self, node: usize, parent: &[PathElem], zero: f64, one: f64, feature: usize) -> Result<()> {
        let mut path = parent.to_vec();
        extend(&mut path, zero, one, feature);
        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                let v = value[self.output];
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    self.phi[path[i].feature] += w * (path[i].one - path[i].zero) * v;
                }
            }
            Node::Split {
                feature: f,
                threshold,
                left,
                right,
                cover,
            } => {
                let (hot, cold) = if self.x[*f] < *threshold { (*left, *right) } else { (*right, *left) };
                let rj = checked_cover(&self.tree.nodes[node])?;
                debug_assert!(*cover == rj);
                let rh = checked_cover(&self.tree.nodes[hot])?;
                let rc = checked_cover(&self.tree.nodes[cold])?;
                let (mut iz, mut io) = (1.0, 1.0);
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == *f) {
                    iz = path[k].zero;
                    io = path[k].one;
                    unwind(&mut path, k);
                }
                self.recurse(hot, &path, iz * rh / rj, io, *f)?;
                self.recurse(cold, &path, iz * rc / rj, 0.0, *f)?;
            }
        }
        Ok(())
    }
}

/// Adds one tree's attributions for `x` into `phi`.
pub fn tree_shap_single(tree: &Tree, x: &[f64], output: usize, phi: &mut [f64]) -> Result<()> {
    let mut w = Walker { tree, x, output, phi };
    // the root element carries a placeholder feature and is never attributed
    w.recurse(0, &[], 1.0, 1.0, usize::MAX)
}

/// Attributions and base value of `x` under the ensemble.
pub fn tree_shap(ens: &TreeEnsemble, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_row(x, ens.n_features)?;
    let mut phi = vec![0.0; ens.n_features];
    for t in &ens.trees {
        tree_shap_single(t, x, ens.output, &mut phi)?;
    }
    phi.iter_mut().for_each(|p| *p *= ens.scale);
    Ok((phi, ens.expected_value()?))
}

pub(crate) fn check_row(x: &[f64], n_features: usize) -> Result<()> {
    if x.len() != n_features {
        return Err(Error::Shape {
            expected: n_features,
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("explained rows must be fully imputed and finite".into()));
    }
    Ok(())
}

/// Expected leaf value when features flagged in `fixed` follow `x` and the
/// rest descend both branches weighted by cover.
fn conditional(tree: &Tree, node: usize, output: usize, fixed: &[bool], x: &[f64]) -> Result<f64> {
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => Ok(value[output]),
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            if fixed.get(*feature).copied().unwrap_or(false) {
                let next = if x[*feature] < *threshold { *left } else { *right };
                conditional(tree, next, output, fixed, x)
            } else {
                let c = checked_cover(&tree.nodes[node])?;
                let cl = checked_cover(&tree.nodes[*left])?;
                let cr = checked_cover(&tree.nodes[*right])?;
                Ok((cl * conditional(tree, *left, output, fixed, x)? + cr * conditional(tree, *right, output, fixed, x)?) / c)
            }
        }
    }
}

/// Exact Shapley values by enumerating every subset of the active
/// features, with the cover-weighted background.
pub fn brute_shap(ens: &TreeEnsemble, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_row(x, ens.n_features)?;
    let active = ens.active_features();
    let m = active.len();
    if m > BRUTE_MAX_FEATURES {
        return Err(Error::Complexity(format!(
            "{m} active features exceed the subset-enumeration limit of {BRUTE_MAX_FEATURES}"
        )));
    }
    let mut fixed = vec![false; ens.n_features];
    let mut value = vec![0.0; 1 << m];
    for (mask, v) in value.iter_mut().enumerate() {
        for (b, &f) in active.iter().enumerate() {
            fixed[f] = mask >> b & 1 == 1;
        }
        let mut s = 0.0;
        for t in &ens.trees {
            s += conditional(t, 0, ens.output, &fixed, x)?;
        }
        *v = ens.offset + ens.scale * s;
    }
    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, i| {
        if i > 0 {
            *acc *= i as f64;
        }
        Some(*acc)
    })
    .collect();
    let mut phi = vec![0.0; ens.n_features];
    for (b, &f) in active.iter().enumerate() {
        let bit = 1usize << b;
        let mut s = 0.0;
        for mask in 0..(1usize << m) {
            if mask & bit != 0 {
                continue;
            }
            let size = mask.count_ones() as usize;
            let w = fact[size] * fact[m - size - 1] / fact[m];
            s += w * (value[mask | bit] - value[mask]);
        }
        phi[f] = s;
    }
    Ok((phi, value[0]))
}

/// Linear attributions on the margin scale: `φ_j = w_j (x_j − μ_j)`,
/// base value `w·μ + b`.
pub fn linear_shap(weights: &[f64], intercept: f64, x: &[f64], mean: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_row(x, weights.len())?;
    if mean.len() != weights.len() {
        return Err(Error::Shape {
            expected: weights.len(),
            actual: mean.len(),
        });
    }
    let phi = weights.iter().zip(x).zip(mean).map(|((w, a), m)| w * (a - m)).collect();
    let base = intercept + weights.iter().zip(mean).map(|(w, m)| w * m).sum::<f64>();
    Ok((phi, base))
}
