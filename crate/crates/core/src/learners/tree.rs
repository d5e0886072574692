//! Tree representation shared by every tree learner, the presorted row
//! index used for exact split search, and the CART classifier.
//!
//! A tree is a flat node array rooted at index 0. Children always have a
//! larger index than their parent. A row goes left iff `x[feature] <
//! threshold`. Serialized form:
//!
//! ```json
//! {"nodes": [
//!   {"kind": "split", "feature": 3, "threshold": 0.5, "left": 1, "right": 2, "cover": 10.0},
//!   {"kind": "leaf", "value": [0.25, 0.75], "cover": 4.0},
//!   {"kind": "leaf", "value": [1.0, 0.0], "cover": 6.0}
//! ]}
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, SeededRng};

use super::{check_fit_input, Classifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: Vec<f64>,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: Vec<f64>, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Longest root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                depth[*left] = depth[i] + 1;
                depth[*right] = depth[i] + 1;
                max = max.max(depth[i] + 1);
            }
        }
        max
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Features used by at least one split, ascending.
    pub fn features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Structural checks: child links, finite thresholds, leaf widths,
    /// positive covers and exact cover conservation.
    pub fn validate(&self, n_features: usize, n_outputs: usize) -> Result<()> {
        let bad = |m: String| Err(Error::ModelIntegrity(m));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.cover() > 0.0) || !n.cover().is_finite() {
                return bad(format!("node {i} has non-positive cover {}", n.cover()));
            }
            match n {
                Node::Leaf { value, .. } => {
                    if value.len() != n_outputs || value.iter().any(|v| !v.is_finite()) {
                        return bad(format!("leaf {i} has a malformed value"));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => {
                    if *feature >= n_features || !threshold.is_finite() {
                        return bad(format!("split {i} has an invalid feature or threshold"));
                    }
                    if *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() || left == right {
                        return bad(format!("split {i} has invalid child links"));
                    }
                    parents[*left] += 1;
                    parents[*right] += 1;
                    if self.nodes[*left].cover() + self.nodes[*right].cover() != *cover {
                        return bad(format!("split {i} does not conserve cover"));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return bad("node graph is not a tree".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Presorted index
// ---------------------------------------------------------------------------

/// Column-major copy of the training matrix.
pub(crate) struct Columns {
    pub cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn new(x: &Matrix) -> Self {
        Columns {
            cols: (0..x.n_cols()).map(|c| x.column(c)).collect(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    /// Per-feature row order by value, ties by row index.
    pub fn presort(&self) -> Vec<Vec<u32>> {
        self.cols
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect()
    }
}

/// For every feature, the rows of each node sorted by that feature. A node
/// owns the same `[start, end)` range in every list; rows may repeat
/// (bootstrap multiplicity).
pub(crate) struct SortedIndex {
    pub lists: Vec<Vec<u32>>,
    scratch: Vec<u32>,
}

impl SortedIndex {
    /// Expands the presorted orders of `features` by per-row multiplicity;
    /// `lists[i]` then belongs to `features[i]`.
    pub fn from_presorted(presorted: &[Vec<u32>], multiplicity: &[u32], features: &[usize]) -> Self {
        let lists = features
            .iter()
            .map(|&f| {
                let order = &presorted[f];
                let mut out = Vec::with_capacity(order.len());
                for &r in order {
                    for _ in 0..multiplicity[r as usize] {
                        out.push(r);
                    }
                }
                out
            })
            .collect();
        SortedIndex {
            lists,
            scratch: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.lists.first().map_or(0, Vec::len)
    }

    /// Rows of the range, in the order of feature 0.
    pub fn rows(&self, start: usize, end: usize) -> &[u32] {
        &self.lists[0][start..end]
    }

    /// Stable partition of `[start, end)` in every list; returns the split point.
    pub fn partition(&mut self, start: usize, end: usize, go_left: &[bool]) -> usize {
        let mut mid = start;
        for list in &mut self.lists {
            self.scratch.clear();
            let mut w = start;
            for i in start..end {
                let r = list[i];
                if go_left[r as usize] {
                    list[w] = r;
                    w += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            list[w..end].copy_from_slice(&self.scratch);
            mid = w;
        }
        mid
    }
}

/// A threshold strictly above `a` and at most `b` (`a < b`), so values equal
/// to `a` route left and values equal to `b` route right.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

// ---------------------------------------------------------------------------
// CART
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitter {
    Best,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub criterion: Criterion,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub splitter: Splitter,
    /// Candidate features per node; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            splitter: Splitter::Best,
            max_features: None,
        }
    }
}

impl TreeParams {
    pub(crate) fn check(&self) -> Result<()> {
        if self.min_samples_leaf == 0 || self.min_samples_split < 2 {
            return Err(Error::Parameter(
                "min_samples_leaf must be ≥ 1 and min_samples_split ≥ 2".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(Error::Parameter("max_features must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn impurity(counts: &[f64], total: f64, criterion: Criterion) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>(),
        Criterion::Entropy => -counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|c| {
                let p = c / total;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

struct CartSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

/// Classification tree over presorted rows. Used directly by [`fit_tree`]
/// and by the forest with bootstrap multiplicities.
pub(crate) fn grow_cart(
    cols: &Columns,
    presorted: &[Vec<u32>],
    multiplicity: &[u32],
    y: &[usize],
    n_classes: usize,
    params: &TreeParams,
    rng: &mut SeededRng,
) -> Tree {
    let d = cols.n_features();
    let all: Vec<usize> = (0..d).collect();
    let mut index = SortedIndex::from_presorted(presorted, multiplicity, &all);
    let mut nodes: Vec<Node> = Vec::new();
    let mut go_left = vec![false; y.len()];
    let mut features: Vec<usize> = (0..d).collect();
    let max_features = params.max_features.unwrap_or(d).min(d);

    // (node id, start, end, depth); node ids are reserved on push
    nodes.push(Node::Leaf {
        value: Vec::new(),
        cover: 0.0,
    });
    let mut stack = vec![(0usize, 0usize, index.len(), 0usize)];
    let mut counts = vec![0.0; n_classes];
    let mut left_counts = vec![0.0; n_classes];
    while let Some((id, start, end, depth)) = stack.pop() {
        counts.iter_mut().for_each(|c| *c = 0.0);
        for &r in index.rows(start, end) {
            counts[y[r as usize]] += 1.0;
        }
        let n = (end - start) as f64;
        let parent_imp = impurity(&counts, n, params.criterion);
        let can_split = parent_imp > 0.0
            && params.max_depth.is_none_or(|m| depth < m)
            && end - start >= params.min_samples_split
            && end - start >= 2 * params.min_samples_leaf;
        let mut best: Option<CartSplit> = None;
        if can_split {
            features.shuffle(rng);
            let mut visited = 0;
            for &f in features.iter() {
                if visited >= max_features && best.is_some() {
                    break;
                }
                let list = &index.lists[f][start..end];
                let col = &cols.cols[f];
                let lo = col[list[0] as usize];
                let hi = col[list[end - start - 1] as usize];
                if lo == hi {
                    continue;
                }
                visited += 1;
                let leaf_min = params.min_samples_leaf;
                let consider = |pos: usize, threshold: f64, lc: &[f64], best: &mut Option<CartSplit>| {
                    let nl = pos as f64;
                    let nr = n - nl;
                    let rc: Vec<f64> = counts.iter().zip(lc).map(|(a, b)| a - b).collect();
                    let child = (nl * impurity(lc, nl, params.criterion) + nr * impurity(&rc, nr, params.criterion)) / n;
                    let decrease = parent_imp - child;
                    let better = match best {
                        None => true,
                        Some(b) => decrease > b.decrease || (decrease == b.decrease && f < b.feature),
                    };
                    if better {
                        *best = Some(CartSplit {
                            feature: f,
                            threshold,
                            decrease,
                        });
                    }
                };
                match params.splitter {
                    Splitter::Best => {
                        left_counts.iter_mut().for_each(|c| *c = 0.0);
                        for i in 0..list.len() - 1 {
                            let r = list[i] as usize;
                            left_counts[y[r]] += 1.0;
                            let (a, b) = (col[r], col[list[i + 1] as usize]);
                            let pos = i + 1;
                            if a < b && pos >= leaf_min && list.len() - pos >= leaf_min {
                                consider(pos, midpoint(a, b), &left_counts, &mut best);
                            }
                        }
                    }
                    Splitter::Random => {
                        let u: f64 = rng.random();
                        let t = lo + u * (hi - lo);
                        if t <= lo {
                            continue;
                        }
                        let pos = list.partition_point(|&r| col[r as usize] < t);
                        if pos < leaf_min || list.len() - pos < leaf_min {
                            continue;
                        }
                        left_counts.iter_mut().for_each(|c| *c = 0.0);
                        for &r in &list[..pos] {
                            left_counts[y[r as usize]] += 1.0;
                        }
                        consider(pos, t, &left_counts, &mut best);
                    }
                }
            }
        }
        let value: Vec<f64> = counts.iter().map(|c| c / n).collect();
        match best {
            None => nodes[id] = Node::Leaf { value, cover: n },
            Some(split) => {
                for &r in index.rows(start, end) {
                    go_left[r as usize] = cols.cols[split.feature][r as usize] < split.threshold;
                }
                let mid = index.partition(start, end, &go_left);
                let left = nodes.len();
                let right = left + 1;
                for _ in 0..2 {
                    nodes.push(Node::Leaf {
                        value: Vec::new(),
                        cover: 0.0,
                    });
                }
                nodes[id] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                    cover: n,
                };
                // right first so the left subtree is built next
                stack.push((right, mid, end, depth + 1));
                stack.push((left, start, mid, depth + 1));
            }
        }
    }
    fix_covers(&mut nodes);
    Tree { nodes }
}

/// Recomputes internal covers bottom-up so conservation is exact.
pub(crate) fn fix_covers(nodes: &mut [Node]) {
    for i in (0..nodes.len()).rev() {
        if let Node::Split { left, right, .. } = nodes[i] {
            let c = nodes[left].cover() + nodes[right].cover();
            if let Node::Split { cover, .. } = &mut nodes[i] {
                *cover = c;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub n_features: usize,
    pub n_classes: usize,
    pub params: TreeParams,
    pub tree: Tree,
}

pub fn fit_tree(x: &Matrix, y: &[usize], n_classes: usize, params: &TreeParams, seed: u64) -> Result<TreeModel> {
    check_fit_input(x, y, n_classes)?;
    params.check()?;
    if x.n_rows() < params.min_samples_split.min(2) {
        return Err(Error::Fit("too few rows to grow a tree".into()));
    }
    let cols = Columns::new(x);
    let presorted = cols.presort();
    let multiplicity = vec![1u32; x.n_rows()];
    let mut rng = seeded(seed);
    let tree = grow_cart(&cols, &presorted, &multiplicity, y, n_classes, params, &mut rng);
    Ok(TreeModel {
        n_features: x.n_cols(),
        n_classes,
        params: params.clone(),
        tree,
    })
}

impl Classifier for TreeModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.tree.predict(x));
    }
}
