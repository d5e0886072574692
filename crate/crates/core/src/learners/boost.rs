//! Newton boosting on logistic (two classes) or softmax loss.
//!
//! Each iteration fits one tree per output (one output for two classes,
//! `K` otherwise) to first and second derivatives of the loss at the
//! current raw scores. Leaf values store `learning_rate · (−G/(H+λ))`, so
//! the raw score of a row is the plain sum of its leaf values. Split search
//! is exact over presorted feature values.
//!
//! Three growth strategies are available:
//! * `level_wise`: all nodes of a depth are split before the next depth,
//!   with minimum split gain `gamma`;
//! * `leaf_wise`: the frontier leaf with the largest gain is split until
//!   `num_leaves` or `max_depth` is reached;
//! * `oblivious_ordered`: symmetric trees (one feature/threshold per level)
//!   whose gradients come from ordered boosting, i.e. each row is scored by
//!   leaf values estimated only from rows preceding it in a seeded
//!   permutation.

use rand::seq::{index::sample, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, SeededRng};

use super::tree::{fix_covers, midpoint, Columns, Node, SortedIndex, Tree};
use super::{check_fit_input, sigmoid, softmax, Classifier};

/// Smallest hessian mass allowed in a child of a split.
pub const MIN_CHILD_WEIGHT: f64 = 1e-3;

/// Cover assigned to an empty leaf of a symmetric tree, so every region of
/// feature space keeps a well-defined share of the cover distribution.
pub const EMPTY_LEAF_COVER: f64 = 1e-6;

fn default_lambda() -> f64 {
    1.0
}

fn default_one() -> f64 {
    1.0
}

fn default_depth() -> usize {
    6
}

fn default_num_leaves() -> usize {
    31
}

fn default_l2_leaf_reg() -> f64 {
    3.0
}

fn default_permutations() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Growth {
    LevelWise {
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default)]
        gamma: f64,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_one")]
        subsample: f64,
        #[serde(default = "default_one")]
        colsample_bytree: f64,
    },
    LeafWise {
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_num_leaves")]
        num_leaves: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_one")]
        subsample: f64,
        #[serde(default = "default_one")]
        colsample_bytree: f64,
    },
    ObliviousOrdered {
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default = "default_l2_leaf_reg")]
        l2_leaf_reg: f64,
        #[serde(default = "default_permutations")]
        n_permutations: usize,
    },
}

impl Default for Growth {
    fn default() -> Self {
        Growth::LevelWise {
            max_depth: 6,
            gamma: 0.0,
            lambda: 1.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
        }
    }
}

impl Growth {
    pub fn name(&self) -> &'static str {
        match self {
            Growth::LevelWise { .. } => "level_wise",
            Growth::LeafWise { .. } => "leaf_wise",
            Growth::ObliviousOrdered { .. } => "oblivious_ordered",
        }
    }

    fn check(&self) -> Result<()> {
        let frac = |v: f64, name: &str| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        let reg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be a finite value ≥ 0, got {v}")))
            }
        };
        match *self {
            Growth::LevelWise {
                gamma,
                lambda,
                subsample,
                colsample_bytree,
                ..
            } => {
                reg(gamma, "gamma")?;
                reg(lambda, "lambda")?;
                frac(subsample, "subsample")?;
                frac(colsample_bytree, "colsample_bytree")
            }
            Growth::LeafWise {
                num_leaves,
                lambda,
                subsample,
                colsample_bytree,
                ..
            } => {
                if num_leaves < 2 {
                    return Err(Error::Parameter("num_leaves must be ≥ 2".into()));
                }
                reg(lambda, "lambda")?;
                frac(subsample, "subsample")?;
                frac(colsample_bytree, "colsample_bytree")
            }
            Growth::ObliviousOrdered {
                l2_leaf_reg,
                n_permutations,
                ..
            } => {
                if n_permutations == 0 {
                    return Err(Error::Parameter("n_permutations must be ≥ 1".into()));
                }
                reg(l2_leaf_reg, "l2_leaf_reg")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub growth: Growth,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            learning_rate: 0.1,
            n_estimators: 100,
            growth: Growth::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub n_features: usize,
    pub n_classes: usize,
    pub learning_rate: f64,
    pub base_score: f64,
    pub growth: Growth,
    /// `trees[iteration][output]`.
    pub trees: Vec<Vec<Tree>>,
}

impl BoostModel {
    /// One output for two classes (the class-1 logit), otherwise `K`.
    pub fn n_outputs(&self) -> usize {
        n_outputs(self.n_classes)
    }

    pub fn raw(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![self.base_score; self.n_outputs()];
        for iteration in &self.trees {
            for (o, t) in iteration.iter().enumerate() {
                z[o] += t.predict(x)[0];
            }
        }
        z
    }

    /// Output index and sign of the margin that raises class `k`.
    pub fn class_output(&self, k: usize) -> (usize, f64) {
        if self.n_classes == 2 {
            (0, if k == 1 { 1.0 } else { -1.0 })
        } else {
            (k, 1.0)
        }
    }

    /// Raw margin explained for class `k`.
    pub fn raw_margin(&self, x: &[f64], k: usize) -> f64 {
        let (o, sign) = self.class_output(k);
        sign * self.raw(x)[o]
    }

    pub fn output_trees(&self, o: usize) -> impl Iterator<Item = &Tree> {
        self.trees.iter().map(move |it| &it[o])
    }

    pub fn validate(&self) -> Result<()> {
        for it in &self.trees {
            if it.len() != self.n_outputs() {
                return Err(Error::ModelIntegrity("iteration with the wrong number of trees".into()));
            }
            for t in it {
                t.validate(self.n_features, 1)?;
            }
        }
        Ok(())
    }
}

impl Classifier for BoostModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let z = self.raw(x);
        probabilities(&z, out);
    }
}

fn n_outputs(n_classes: usize) -> usize {
    if n_classes == 2 {
        1
    } else {
        n_classes
    }
}

fn probabilities(z: &[f64], out: &mut [f64]) {
    if z.len() == 1 {
        let p = sigmoid(z[0]);
        out[0] = 1.0 - p;
        out[1] = p;
    } else {
        out.copy_from_slice(z);
        softmax(out);
    }
}

/// Softmax cross-entropy of one row.
pub fn softmax_loss(z: &[f64], y: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[y]
}

/// Gradient and diagonal hessian of the softmax cross-entropy.
pub fn softmax_grad_hess(z: &[f64], y: usize) -> (Vec<f64>, Vec<f64>) {
    let mut p = z.to_vec();
    softmax(&mut p);
    let g = p.iter().enumerate().map(|(k, &pk)| pk - (k == y) as u8 as f64).collect();
    let h = p.iter().map(|&pk| pk * (1.0 - pk)).collect();
    (g, h)
}

/// Logistic loss of the class-1 logit.
pub fn logistic_loss(z: f64, y: usize) -> f64 {
    let sp = z.max(0.0) + (-z.abs()).exp().ln_1p();
    sp - (y == 1) as u8 as f64 * z
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        -g / (h + lambda)
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    if h + lambda > 0.0 {
        g * g / (h + lambda)
    } else {
        0.0
    }
}

/// `G_L²/(H_L+λ) + G_R²/(H_R+λ)` with a single division.
fn pair_score(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let (dl, dr) = (hl + lambda, hr + lambda);
    if dl > 0.0 && dr > 0.0 {
        (gl * gl * dr + gr * gr * dl) / (dl * dr)
    } else {
        score(gl, hl, lambda) + score(gr, hr, lambda)
    }
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)) - gamma
}

/// Mean training log-loss of raw scores (row-major, one row per sample).
pub fn mean_log_loss(raw: &Matrix, y: &[usize]) -> f64 {
    let total: f64 = raw
        .rows_iter()
        .zip(y)
        .map(|(z, &l)| if z.len() == 1 { logistic_loss(z[0], l) } else { softmax_loss(z, l) })
        .sum();
    total / y.len() as f64
}

/// Fills per-row gradients/hessians for output `o` from raw scores `raw`
/// (row-major, `m` outputs per row).
fn gradients(raw: &[f64], m: usize, y: &[usize], o: usize, g: &mut [f64], h: &mut [f64]) {
    let mut p = vec![0.0; m.max(2)];
    for (i, &yi) in y.iter().enumerate() {
        let z = &raw[i * m..(i + 1) * m];
        if m == 1 {
            let pi = sigmoid(z[0]);
            g[i] = pi - (yi == 1) as u8 as f64;
            h[i] = pi * (1.0 - pi);
        } else {
            probabilities(z, &mut p[..m]);
            g[i] = p[o] - (yi == o) as u8 as f64;
            h[i] = p[o] * (1.0 - p[o]);
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct NewtonCtx<'a> {
    cols: &'a Columns,
    /// Per-row (gradient, hessian).
    gh: &'a [[f64; 2]],
    features: &'a [usize],
    lambda: f64,
    gamma: f64,
    learning_rate: f64,
}

impl NewtonCtx<'_> {
    fn totals(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(a, b), &r| {
            let [g, h] = self.gh[r as usize];
            (a + g, b + h)
        })
    }

    /// Best exact split of a node; `None` when no split has positive gain.
    ///
    /// Candidates are compared on `G_L²/(H_L+λ) + G_R²/(H_R+λ)` through
    /// cross-multiplication, so the scan itself never divides.
    fn best_split(&self, index: &SortedIndex, start: usize, end: usize, gt: f64, ht: f64) -> Option<Candidate> {
        let lambda = self.lambda;
        // a split must beat the parent score by 2γ to have positive gain
        let floor = score(gt, ht, lambda) + 2.0 * self.gamma;
        let mut best_score = floor;
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for (li, &f) in self.features.iter().enumerate() {
            let list = &index.lists[li][start..end];
            let col = &self.cols.cols[f];
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut next = match list.first() {
                Some(&r) => col[r as usize],
                None => continue,
            };
            for w in list.windows(2) {
                let r = w[0] as usize;
                let [g, h] = self.gh[r];
                gl += g;
                hl += h;
                let a = next;
                next = col[w[1] as usize];
                if a >= next {
                    continue;
                }
                let hr = ht - hl;
                if hl < MIN_CHILD_WEIGHT || hr < MIN_CHILD_WEIGHT {
                    continue;
                }
                let gr = gt - gl;
                let (dl, dr) = (hl + lambda, hr + lambda);
                let num = gl * gl * dr + gr * gr * dl;
                let den = dl * dr;
                if den > 0.0 && num > best_score * den {
                    best_score = num / den;
                    best = Some((f, midpoint(a, next), gl, hl));
                }
            }
        }
        best.and_then(|(feature, threshold, gl, hl)| {
            let gain = split_gain(gl, hl, gt - gl, ht - hl, lambda, self.gamma);
            (gain > 0.0).then_some(Candidate {
                feature,
                threshold,
                gain,
            })
        })
    }

    fn leaf(&self, gt: f64, ht: f64, cover: f64) -> Node {
        Node::Leaf {
            value: vec![self.learning_rate * leaf_weight(gt, ht, self.lambda)],
            cover,
        }
    }

    /// Partitions a node's rows on `c`; returns the split point.
    fn apply(&self, index: &mut SortedIndex, go_left: &mut [bool], start: usize, end: usize, c: &Candidate) -> usize {
        let col = &self.cols.cols[c.feature];
        for &r in index.rows(start, end) {
            go_left[r as usize] = col[r as usize] < c.threshold;
        }
        index.partition(start, end, go_left)
    }
}

fn placeholder() -> Node {
    Node::Leaf {
        value: Vec::new(),
        cover: 0.0,
    }
}

fn split_node(c: &Candidate, left: usize, cover: f64) -> Node {
    Node::Split {
        feature: c.feature,
        threshold: c.threshold,
        left,
        right: left + 1,
        cover,
    }
}

fn grow_level_wise(ctx: &NewtonCtx, index: &mut SortedIndex, max_depth: usize) -> Tree {
    let mut go_left = vec![false; ctx.gh.len()];
    let mut nodes = vec![placeholder()];
    let (g0, h0) = ctx.totals(index.rows(0, index.len()));
    let mut level = vec![(0usize, 0usize, index.len(), g0, h0)];
    for depth in 0..=max_depth {
        let mut next = Vec::new();
        for &(id, start, end, gt, ht) in &level {
            let cover = (end - start) as f64;
            let cand = if depth < max_depth {
                ctx.best_split(index, start, end, gt, ht)
            } else {
                None
            };
            match cand {
                None => nodes[id] = ctx.leaf(gt, ht, cover),
                Some(c) => {
                    let mid = ctx.apply(index, &mut go_left, start, end, &c);
                    let left = nodes.len();
                    nodes.push(placeholder());
                    nodes.push(placeholder());
                    nodes[id] = split_node(&c, left, cover);
                    let (gl, hl) = ctx.totals(index.rows(start, mid));
                    next.push((left, start, mid, gl, hl));
                    next.push((left + 1, mid, end, gt - gl, ht - hl));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    fix_covers(&mut nodes);
    Tree { nodes }
}

fn grow_leaf_wise(ctx: &NewtonCtx, index: &mut SortedIndex, max_depth: usize, num_leaves: usize) -> Tree {
    struct Open {
        id: usize,
        start: usize,
        end: usize,
        g: f64,
        h: f64,
        depth: usize,
        best: Option<Candidate>,
    }
    let mut go_left = vec![false; ctx.gh.len()];
    let mut nodes = vec![placeholder()];
    let n = index.len();
    let (g0, h0) = ctx.totals(index.rows(0, n));
    let root_best = if max_depth > 0 { ctx.best_split(index, 0, n, g0, h0) } else { None };
    let mut frontier = vec![Open {
        id: 0,
        start: 0,
        end: n,
        g: g0,
        h: h0,
        depth: 0,
        best: root_best,
    }];
    let mut leaves = 1;
    while leaves < num_leaves {
        // largest gain; ties go to the earlier-created node
        let pick = frontier
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.best.map(|b| (i, b.gain, o.id)))
            .fold(None, |acc: Option<(usize, f64, usize)>, cur| match acc {
                Some(a) if a.1 > cur.1 || (a.1 == cur.1 && a.2 < cur.2) => Some(a),
                _ => Some(cur),
            });
        let Some((i, _, _)) = pick else { break };
        let open = frontier.swap_remove(i);
        let c = open.best.unwrap();
        let mid = ctx.apply(index, &mut go_left, open.start, open.end, &c);
        let left = nodes.len();
        nodes.push(placeholder());
        nodes.push(placeholder());
        nodes[open.id] = split_node(&c, left, (open.end - open.start) as f64);
        let (gl, hl) = ctx.totals(index.rows(open.start, mid));
        let children = [
            (left, open.start, mid, gl, hl),
            (left + 1, mid, open.end, open.g - gl, open.h - hl),
        ];
        for (id, start, end, g, h) in children {
            let depth = open.depth + 1;
            let best = if depth < max_depth {
                ctx.best_split(index, start, end, g, h)
            } else {
                None
            };
            frontier.push(Open {
                id,
                start,
                end,
                g,
                h,
                depth,
                best,
            });
        }
        leaves += 1;
    }
    for o in frontier {
        nodes[o.id] = ctx.leaf(o.g, o.h, (o.end - o.start) as f64);
    }
    fix_covers(&mut nodes);
    Tree { nodes }
}

/// Symmetric tree structure: one `(feature, threshold)` per level chosen by
/// the summed gain over all nodes of the level. Returns the level splits
/// and each row's leaf position.
fn oblivious_structure(
    cols: &Columns,
    presorted: &[Vec<u32>],
    g: &[f64],
    h: &[f64],
    depth: usize,
    lambda: f64,
) -> (Vec<(usize, f64)>, Vec<usize>) {
    let n = g.len();
    let mut node_of = vec![0usize; n];
    let mut splits = Vec::new();
    for level in 0..depth {
        let width = 1usize << level;
        let mut gt = vec![0.0; width];
        let mut ht = vec![0.0; width];
        for i in 0..n {
            gt[node_of[i]] += g[i];
            ht[node_of[i]] += h[i];
        }
        let parent: Vec<f64> = (0..width).map(|t| score(gt[t], ht[t], lambda)).collect();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut gl = vec![0.0; width];
        let mut hl = vec![0.0; width];
        let mut term = vec![0.0; width];
        for (f, order) in presorted.iter().enumerate() {
            let col = &cols.cols[f];
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            term.iter_mut().for_each(|v| *v = 0.0);
            let mut total = 0.0;
            for i in 0..n {
                let r = order[i] as usize;
                if i > 0 {
                    let a = col[order[i - 1] as usize];
                    let b = col[r];
                    if a < b {
                        let gain = 0.5 * total;
                        if gain > 0.0 && best.is_none_or(|c| gain > c.2) {
                            best = Some((f, midpoint(a, b), gain));
                        }
                    }
                }
                let t = node_of[r];
                gl[t] += g[r];
                hl[t] += h[r];
                let new = pair_score(gl[t], hl[t], gt[t] - gl[t], ht[t] - hl[t], lambda) - parent[t];
                total += new - term[t];
                term[t] = new;
            }
        }
        let Some((f, thr, _)) = best else { break };
        for i in 0..n {
            node_of[i] = 2 * node_of[i] + usize::from(cols.cols[f][i] >= thr);
        }
        splits.push((f, thr));
    }
    (splits, node_of)
}

/// Lays out a symmetric tree in level order; `leaf_values[t]` and
/// `leaf_counts[t]` are indexed by leaf position.
fn oblivious_tree(splits: &[(usize, f64)], leaf_values: &[f64], leaf_counts: &[usize]) -> Tree {
    let levels = splits.len();
    let mut nodes = Vec::with_capacity((1 << (levels + 1)) - 1);
    for (level, &(feature, threshold)) in splits.iter().enumerate() {
        let first = (1usize << level) - 1;
        for t in 0..(1usize << level) {
            let left = (1usize << (level + 1)) - 1 + 2 * t;
            debug_assert_eq!(nodes.len(), first + t);
            nodes.push(Node::Split {
                feature,
                threshold,
                left,
                right: left + 1,
                cover: 0.0,
            });
        }
    }
    for t in 0..(1usize << levels) {
        let cover = if leaf_counts[t] > 0 {
            leaf_counts[t] as f64
        } else {
            EMPTY_LEAF_COVER
        };
        nodes.push(Node::Leaf {
            value: vec![leaf_values[t]],
            cover,
        });
    }
    fix_covers(&mut nodes);
    Tree { nodes }
}

fn sample_rows(rng: &mut SeededRng, n: usize, frac: f64) -> Vec<u32> {
    if frac >= 1.0 {
        return vec![1; n];
    }
    let k = ((frac * n as f64).round() as usize).clamp(1, n);
    let mut mult = vec![0u32; n];
    for i in sample(rng, n, k) {
        mult[i] = 1;
    }
    mult
}

fn sample_features(rng: &mut SeededRng, d: usize, frac: f64) -> Vec<usize> {
    if frac >= 1.0 {
        return (0..d).collect();
    }
    let k = ((frac * d as f64).floor() as usize).clamp(1, d);
    let mut f = sample(rng, d, k).into_vec();
    f.sort_unstable();
    f
}

struct Greedy {
    max_depth: usize,
    num_leaves: Option<usize>,
    gamma: f64,
    lambda: f64,
    subsample: f64,
    colsample_bytree: f64,
}

#[allow(clippy::too_many_arguments)]
fn fit_greedy(
    x: &Matrix,
    y: &[usize],
    m: usize,
    cols: &Columns,
    presorted: &[Vec<u32>],
    shape: &Greedy,
    params: &BoostParams,
    rng: &mut SeededRng,
) -> Vec<Vec<Tree>> {
    let (n, d) = (x.n_rows(), x.n_cols());
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut gh = vec![[0.0; 2]; n];
    let mut raw = vec![0.0; n * m];
    let mut trees = Vec::with_capacity(params.n_estimators);
    for _ in 0..params.n_estimators {
        let mut iteration = Vec::with_capacity(m);
        for o in 0..m {
            gradients(&raw, m, y, o, &mut g, &mut h);
            let mult = sample_rows(rng, n, shape.subsample);
            let features = sample_features(rng, d, shape.colsample_bytree);
            let mut index = SortedIndex::from_presorted(presorted, &mult, &features);
            for i in 0..n {
                gh[i] = [g[i], h[i]];
            }
            let ctx = NewtonCtx {
                cols,
                gh: &gh,
                features: &features,
                lambda: shape.lambda,
                gamma: shape.gamma,
                learning_rate: params.learning_rate,
            };
            let tree = match shape.num_leaves {
                None => grow_level_wise(&ctx, &mut index, shape.max_depth),
                Some(l) => grow_leaf_wise(&ctx, &mut index, shape.max_depth, l),
            };
            iteration.push(tree);
        }
        // all trees of an iteration see the same gradients
        for (o, t) in iteration.iter().enumerate() {
            for i in 0..n {
                raw[i * m + o] += t.predict(x.row(i))[0];
            }
        }
        trees.push(iteration);
    }
    trees
}

#[allow(clippy::too_many_arguments)]
fn fit_ordered(
    y: &[usize],
    m: usize,
    cols: &Columns,
    presorted: &[Vec<u32>],
    depth: usize,
    lambda: f64,
    n_permutations: usize,
    n_estimators: usize,
    eta: f64,
    rng: &mut SeededRng,
) -> Vec<Vec<Tree>> {
    let n = y.len();
    let perms: Vec<Vec<usize>> = (0..n_permutations)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    // prefix-model raw scores, one set per permutation
    let mut ordered = vec![vec![0.0; n * m]; n_permutations];
    let mut gp = vec![vec![0.0; n]; n_permutations];
    let mut hp = vec![vec![0.0; n]; n_permutations];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trees = Vec::with_capacity(n_estimators);
    for _ in 0..n_estimators {
        let mut iteration = Vec::with_capacity(m);
        let mut updates = Vec::with_capacity(m);
        for o in 0..m {
            for p in 0..n_permutations {
                gradients(&ordered[p], m, y, o, &mut gp[p], &mut hp[p]);
            }
            for i in 0..n {
                g[i] = gp.iter().map(|v| v[i]).sum::<f64>() / n_permutations as f64;
                h[i] = hp.iter().map(|v| v[i]).sum::<f64>() / n_permutations as f64;
            }
            let (splits, leaf_of) = oblivious_structure(cols, presorted, &g, &h, depth, lambda);
            let width = 1usize << splits.len();
            let mut gs = vec![0.0; width];
            let mut hs = vec![0.0; width];
            let mut counts = vec![0usize; width];
            for i in 0..n {
                gs[leaf_of[i]] += g[i];
                hs[leaf_of[i]] += h[i];
                counts[leaf_of[i]] += 1;
            }
            let values: Vec<f64> = (0..width).map(|t| eta * leaf_weight(gs[t], hs[t], lambda)).collect();
            iteration.push(oblivious_tree(&splits, &values, &counts));
            // each row moves by the leaf value estimated from its prefix only
            let mut per_perm = Vec::with_capacity(n_permutations);
            for (p, perm) in perms.iter().enumerate() {
                let mut pg = vec![0.0; width];
                let mut ph = vec![0.0; width];
                let mut delta = vec![0.0; n];
                for &i in perm {
                    let t = leaf_of[i];
                    delta[i] = eta * leaf_weight(pg[t], ph[t], lambda);
                    pg[t] += gp[p][i];
                    ph[t] += hp[p][i];
                }
                per_perm.push(delta);
            }
            updates.push(per_perm);
        }
        for (o, per_perm) in updates.into_iter().enumerate() {
            for (p, delta) in per_perm.into_iter().enumerate() {
                for i in 0..n {
                    ordered[p][i * m + o] += delta[i];
                }
            }
        }
        trees.push(iteration);
    }
    trees
}

pub fn fit_boost(x: &Matrix, y: &[usize], n_classes: usize, params: &BoostParams, seed: u64) -> Result<BoostModel> {
    check_fit_input(x, y, n_classes)?;
    if params.n_estimators == 0 {
        return Err(Error::Parameter("n_estimators must be ≥ 1".into()));
    }
    if !(params.learning_rate >= 0.0) || !params.learning_rate.is_finite() {
        return Err(Error::Parameter(format!(
            "learning_rate must be finite and ≥ 0, got {}",
            params.learning_rate
        )));
    }
    params.growth.check()?;
    let d = x.n_cols();
    let m = n_outputs(n_classes);
    let cols = Columns::new(x);
    let presorted = cols.presort();
    let mut rng = seeded(seed);
    let trees = match params.growth {
        Growth::LevelWise {
            max_depth,
            gamma,
            lambda,
            subsample,
            colsample_bytree,
        } => {
            let shape = Greedy {
                max_depth,
                num_leaves: None,
                gamma,
                lambda,
                subsample,
                colsample_bytree,
            };
            fit_greedy(x, y, m, &cols, &presorted, &shape, params, &mut rng)
        }
        Growth::LeafWise {
            max_depth,
            num_leaves,
            lambda,
            subsample,
            colsample_bytree,
        } => {
            let shape = Greedy {
                max_depth,
                num_leaves: Some(num_leaves),
                gamma: 0.0,
                lambda,
                subsample,
                colsample_bytree,
            };
            fit_greedy(x, y, m, &cols, &presorted, &shape, params, &mut rng)
        }
        Growth::ObliviousOrdered {
            depth,
            l2_leaf_reg,
            n_permutations,
        } => fit_ordered(y, m, &cols, &presorted, depth, l2_leaf_reg, n_permutations, params.n_estimators, params.learning_rate, &mut rng),
    };
    Ok(BoostModel {
        n_features: d,
        n_classes,
        learning_rate: params.learning_rate,
        base_score: 0.0,
        growth: params.growth.clone(),
        trees,
    })
}
