//! Free-text response normalization.
//!
//! Responses are vectorized with TF-IDF over unigrams and bigrams, grouped
//! with seeded k-means, and routed to the nearest cluster when the cosine
//! similarity clears a threshold. Anything that does not fit a cluster falls
//! back to an explicit dictionary of known variants, and finally to
//! [`UNMAPPED`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const UNMAPPED: &str = "UNMAPPED";

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unigrams followed by adjacent bigrams (space-joined).
pub fn terms(text: &str) -> Vec<String> {
    let toks = tokenize(text);
    let mut out = toks.clone();
    out.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    out
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * dense[i]).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut d = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i] = v;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub ngram_range: (usize, usize),
    pub max_features: usize,
    pub n_documents: usize,
}

/// Fits the vocabulary (top `max_features` terms by document frequency,
/// ties broken lexicographically) and smoothed idf weights
/// `ln((1 + N) / (1 + df)) + 1`.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], max_features: usize) -> Result<TfidfModel> {
    if corpus.is_empty() {
        return Err(Error::Vectorizer("empty corpus".into()));
    }
    if max_features == 0 {
        return Err(Error::Parameter("max_features must be at least 1".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        let mut ts = terms(doc.as_ref());
        ts.sort_unstable();
        ts.dedup();
        for t in ts {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::Vectorizer("corpus contains no tokens".into()));
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_features);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));

    let n = corpus.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(ranked.len());
    for (i, (term, d)) in ranked.into_iter().enumerate() {
        idf.push(((1.0 + n) / (1.0 + d as f64)).ln() + 1.0);
        vocabulary.insert(term, i);
    }
    Ok(TfidfModel {
        vocabulary,
        idf,
        ngram_range: (1, 2),
        max_features,
        n_documents: corpus.len(),
    })
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// L2-normalized tf·idf weights; out-of-vocabulary terms are dropped.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in terms(text) {
            if let Some(&i) = self.vocabulary.get(&t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut v = SparseVector {
            indices: Vec::with_capacity(counts.len()),
            values: Vec::with_capacity(counts.len()),
        };
        for (i, c) in counts {
            v.indices.push(i);
            v.values.push(c * self.idf[i]);
        }
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn transform_tfidf(model: &TfidfModel, text: &str) -> SparseVector {
    model.transform(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Cluster means in TF-IDF space.
    pub centroids: Vec<Vec<f64>>,
    /// Canonical label per cluster: its most frequent raw response.
    pub labels: Vec<String>,
    pub assign_threshold: f64,
    /// Weighted k-means objective after each assignment step.
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Unit-norm direction of centroid `k` (zero vector if the centroid is).
    pub fn direction(&self, k: usize) -> Vec<f64> {
        let c = &self.centroids[k];
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            c.iter().map(|v| v / n).collect()
        } else {
            c.clone()
        }
    }

    /// Nearest centroid by cosine similarity, ties to the lower index.
    pub fn nearest_cosine(&self, v: &SparseVector) -> (usize, f64) {
        let vn = v.norm();
        let mut best = (0, f64::NEG_INFINITY);
        for (k, c) in self.centroids.iter().enumerate() {
            let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos = if vn > 0.0 && cn > 0.0 {
                v.dot_dense(c) / (vn * cn)
            } else {
                0.0
            };
            if cos > best.1 {
                best = (k, cos);
            }
        }
        best
    }
}

struct Point {
    vec: SparseVector,
    sq_norm: f64,
    weight: f64,
}

fn sq_dist(p: &Point, centroid: &[f64], c_sq_norm: f64) -> f64 {
    (p.sq_norm - 2.0 * p.vec.dot_dense(centroid) + c_sq_norm).max(0.0)
}

/// Seeded k-means (k-means++ initialisation, at most 100 Lloyd iterations or
/// until no centroid moves by 1e-6) over the TF-IDF vectors of `corpus`.
pub fn cluster_responses<S: AsRef<str>>(
    model: &TfidfModel,
    corpus: &[S],
    k: usize,
    seed: u64,
) -> Result<ClusterModel> {
    const MAX_ITER: usize = 100;
    const SHIFT_TOL: f64 = 1e-6;

    // Identical vectors are merged into one weighted point.
    let mut index: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
    let mut points: Vec<Point> = Vec::new();
    let mut raw_point: Vec<Option<usize>> = Vec::with_capacity(corpus.len());
    for doc in corpus {
        let v = model.transform(doc.as_ref());
        if v.is_zero() {
            raw_point.push(None);
            continue;
        }
        let key: Vec<(usize, u64)> = v.indices.iter().zip(&v.values).map(|(&i, &x)| (i, x.to_bits())).collect();
        let id = *index.entry(key).or_insert_with(|| {
            let sq_norm = v.values.iter().map(|x| x * x).sum();
            points.push(Point {
                vec: v,
                sq_norm,
                weight: 0.0,
            });
            points.len() - 1
        });
        points[id].weight += 1.0;
        raw_point.push(Some(id));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Parameter(format!(
            "cluster count {k} must be in [1, {}] (distinct non-zero vectors)",
            points.len()
        )));
    }

    let dim = model.dim();
    let mut rng = seeded(seed);
    let total_w: f64 = points.iter().map(|p| p.weight).sum();

    // k-means++ seeding
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut target = rng.random::<f64>() * total_w;
    let mut first = points.len() - 1;
    for (i, p) in points.iter().enumerate() {
        if target < p.weight {
            first = i;
            break;
        }
        target -= p.weight;
    }
    chosen.push(first);
    let mut centroids: Vec<Vec<f64>> = vec![points[first].vec.to_dense(dim)];
    let mut best_d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0], points[first].sq_norm))
        .collect();
    while centroids.len() < k {
        let mass: f64 = points.iter().zip(&best_d2).map(|(p, d)| p.weight * d).sum();
        let next = if mass > 0.0 {
            let mut t = rng.random::<f64>() * mass;
            let mut pick = None;
            for (i, p) in points.iter().enumerate() {
                let m = p.weight * best_d2[i];
                if m > 0.0 && t < m {
                    pick = Some(i);
                    break;
                }
                t -= m;
            }
            pick.unwrap_or_else(|| (0..points.len()).rev().find(|&i| best_d2[i] > 0.0).unwrap())
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        let c = points[next].vec.to_dense(dim);
        let cn = points[next].sq_norm;
        for (i, p) in points.iter().enumerate() {
            best_d2[i] = best_d2[i].min(sq_dist(p, &c, cn));
        }
        centroids.push(c);
    }

    let mut assign = vec![0usize; points.len()];
    let mut objective_trace = Vec::new();
    for _ in 0..MAX_ITER {
        let c_norms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c, c_norms[j]);
                if d < best.1 {
                    best = (j, d);
                }
            }
            assign[i] = best.0;
            objective += p.weight * best.1;
        }
        objective_trace.push(objective);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for (i, p) in points.iter().enumerate() {
            let a = assign[i];
            mass[a] += p.weight;
            for (&j, &v) in p.vec.indices.iter().zip(&p.vec.values) {
                sums[a][j] += p.weight * v;
            }
        }
        let mut max_shift: f64 = 0.0;
        for j in 0..k {
            if mass[j] == 0.0 {
                continue;
            }
            let new: Vec<f64> = sums[j].iter().map(|s| s / mass[j]).collect();
            let shift = new
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max_shift = max_shift.max(shift);
            centroids[j] = new;
        }
        if max_shift < SHIFT_TOL {
            break;
        }
    }
    // assignments consistent with the final centroids
    let c_norms: Vec<f64> = centroids.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    for (i, p) in points.iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c, c_norms[j]);
            if d < best.1 {
                best = (j, d);
            }
        }
        assign[i] = best.0;
    }

    let mut votes: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); k];
    for (doc, p) in corpus.iter().zip(&raw_point) {
        if let Some(p) = p {
            *votes[assign[*p]].entry(doc.as_ref()).or_insert(0) += 1;
        }
    }
    let labels = votes
        .iter()
        .enumerate()
        .map(|(j, v)| {
            // BTreeMap iterates lexicographically; keep the first maximum
            let mut best: Option<(&str, usize)> = None;
            for (s, &c) in v {
                if best.is_none_or(|b| c > b.1) {
                    best = Some((s, c));
                }
            }
            best.map_or_else(|| format!("cluster_{j}"), |b| b.0.trim().to_string())
        })
        .collect();

    Ok(ClusterModel {
        centroids,
        labels,
        assign_threshold: 0.3,
        objective_trace,
    })
}

/// Known variants and misspellings mapped to canonical labels. Keys are
/// stored lowercased and trimmed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleDictionary {
    pub map: BTreeMap<String, String>,
}

impl RuleDictionary {
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (raw, canon) in pairs {
            let key = raw.as_ref().trim().to_lowercase();
            let canon = canon.into();
            if let Some(prev) = map.get(&key) {
                if prev != &canon {
                    return Err(Error::Schema(format!(
                        "rule `{key}` maps to both `{prev}` and `{canon}`"
                    )));
                }
            }
            map.insert(key, canon);
        }
        Ok(Self { map })
    }

    /// Loads a two-column (raw, canonical) CSV; a leading `raw,canonical`
    /// header row is skipped.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
        let mut pairs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Schema(format!("rule row {i} must have exactly two fields")));
            }
            if i == 0 && rec[0].trim() == "raw" && rec[1].trim() == "canonical" {
                continue;
            }
            pairs.push((rec[0].to_string(), rec[1].trim().to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn lookup(&self, raw: &str) -> Option<&str> {
        self.map.get(&raw.trim().to_lowercase()).map(String::as_str)
    }
}

/// Routes a raw response to a category label.
pub fn normalize_response(
    text: &str,
    tfidf: &TfidfModel,
    clusters: &ClusterModel,
    rules: &RuleDictionary,
) -> String {
    let v = tfidf.transform(text);
    if !v.is_zero() {
        let (k, cos) = clusters.nearest_cosine(&v);
        if cos >= clusters.assign_threshold {
            return clusters.labels[k].clone();
        }
    }
    rules
        .lookup(text)
        .map_or_else(|| UNMAPPED.to_string(), str::to_string)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub max_features: usize,
    /// `None` picks ceil(sqrt(distinct responses)).
    pub n_clusters: Option<usize>,
    pub assign_threshold: f64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            max_features: 5000,
            n_clusters: None,
            assign_threshold: 0.3,
        }
    }
}

/// Fitted vectorizer, clusters and rules for one text column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextNormalizer {
    pub tfidf: TfidfModel,
    pub clusters: ClusterModel,
    pub rules: RuleDictionary,
}

impl TextNormalizer {
    pub fn fit<S: AsRef<str>>(corpus: &[S], config: &TextConfig, rules: RuleDictionary, seed: u64) -> Result<Self> {
        let tfidf = fit_tfidf(corpus, config.max_features)?;
        let mut distinct: Vec<&str> = corpus.iter().map(|s| s.as_ref()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let mut distinct_vectors: Vec<Vec<(usize, u64)>> = distinct
            .iter()
            .map(|d| {
                let v = tfidf.transform(d);
                v.indices.iter().zip(&v.values).map(|(&i, &x)| (i, x.to_bits())).collect::<Vec<_>>()
            })
            .filter(|v: &Vec<(usize, u64)>| !v.is_empty())
            .collect();
        distinct_vectors.sort();
        distinct_vectors.dedup();
        let k = config
            .n_clusters
            .unwrap_or_else(|| (distinct.len() as f64).sqrt().ceil() as usize)
            .clamp(1, distinct_vectors.len().max(1));
        let mut clusters = cluster_responses(&tfidf, corpus, k, seed)?;
        clusters.assign_threshold = config.assign_threshold;
        Ok(Self { tfidf, clusters, rules })
    }

    pub fn normalize(&self, text: &str) -> String {
        normalize_response(text, &self.tfidf, &self.clusters, &self.rules)
    }

    /// Every label [`Self::normalize`] can emit, sorted.
    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.clusters.labels.clone();
        c.extend(self.rules.map.values().cloned());
        c.push(UNMAPPED.to_string());
        c.sort();
        c.dedup();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_enumerates_unigrams_and_bigrams() {
        let m = fit_tfidf(&["good day", "bad day"], 5000).unwrap();
        let vocab: Vec<&str> = m.vocabulary.keys().map(String::as_str).collect();
        assert_eq!(vocab, vec!["bad", "bad day", "day", "good", "good day"]);
    }

    #[test]
    fn smoothed_idf_values() {
        let m = fit_tfidf(&["good day", "bad day"], 5000).unwrap();
        let idf = |t: &str| m.idf[m.vocabulary[t]];
        assert_eq!(idf("day"), 1.0);
        assert!((idf("good") - (1.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!((idf("good") - 1.4055).abs() < 1e-4);
    }

    #[test]
    fn all_empty_corpus_errors() {
        assert!(matches!(fit_tfidf(&["", "  ", "!!"], 10), Err(Error::Vectorizer(_))));
    }

    #[test]
    fn truncation_keeps_most_frequent() {
        let m = fit_tfidf(&["a b", "a c", "a d"], 1).unwrap();
        assert_eq!(m.vocabulary.keys().collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn transform_edge_cases() {
        let m = fit_tfidf(&["good day", "bad day"], 5000).unwrap();
        assert!(m.transform("").is_zero());
        assert!(m.transform("unknown words").is_zero());
        let v = m.transform("good");
        assert_eq!(v.indices, vec![m.vocabulary["good"]]);
        assert!((v.values[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.transform("day day"), m.transform("day"));
    }

    #[test]
    fn separated_pairs_cluster_together() {
        let corpus = ["red apple", "red apples", "blue sky", "blue skies"];
        let m = fit_tfidf(&corpus, 5000).unwrap();
        let c = cluster_responses(&m, &corpus, 2, 3).unwrap();
        let label = |t: &str| c.nearest_cosine(&m.transform(t)).0;
        assert_eq!(label("red apple"), label("red apples"));
        assert_eq!(label("blue sky"), label("blue skies"));
        assert_ne!(label("red apple"), label("blue sky"));
    }

    #[test]
    fn single_cluster_is_mean() {
        let corpus = ["alpha", "beta", "alpha beta"];
        let m = fit_tfidf(&corpus, 5000).unwrap();
        let c = cluster_responses(&m, &corpus, 1, 0).unwrap();
        let mut mean = vec![0.0; m.dim()];
        for d in corpus {
            for (i, v) in m.transform(d).to_dense(m.dim()).iter().enumerate() {
                mean[i] += v / 3.0;
            }
        }
        for (a, b) in c.centroids[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clustering_is_deterministic_and_monotone() {
        let corpus: Vec<String> = (0..40).map(|i| format!("word{} shared{}", i % 7, i % 3)).collect();
        let m = fit_tfidf(&corpus, 5000).unwrap();
        let a = cluster_responses(&m, &corpus, 4, 11).unwrap();
        let b = cluster_responses(&m, &corpus, 4, 11).unwrap();
        assert_eq!(a, b);
        for w in a.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", a.objective_trace);
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        let corpus = ["same", "same", "other"];
        let m = fit_tfidf(&corpus, 5000).unwrap();
        assert!(matches!(cluster_responses(&m, &corpus, 3, 0), Err(Error::Parameter(_))));
    }

    fn normalizer() -> TextNormalizer {
        let corpus = [
            "psychology", "psychology", "psych major", "biology", "biology", "bio major",
        ];
        let rules = RuleDictionary::from_pairs([("psyhcology", "psychology"), ("bilogy", "biology")]).unwrap();
        let cfg = TextConfig {
            n_clusters: Some(2),
            ..TextConfig::default()
        };
        TextNormalizer::fit(&corpus, &cfg, rules, 5).unwrap()
    }

    #[test]
    fn normalize_routes_through_cluster_rules_and_fallback() {
        let n = normalizer();
        assert_eq!(n.normalize("psychology"), "psychology");
        assert_eq!(n.normalize("biology"), "biology");
        assert_eq!(n.normalize("  Psyhcology "), "psychology");
        assert_eq!(n.normalize("qwzx"), UNMAPPED);
        assert!(n.categories().contains(&UNMAPPED.to_string()));
    }

    #[test]
    fn conflicting_rules_rejected() {
        assert!(RuleDictionary::from_pairs([("a", "x"), ("A ", "y")]).is_err());
    }

    #[test]
    fn rules_load_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rules.csv");
        std::fs::write(&p, "raw,canonical\nbiolgy,biology\n\"psych, major\",psychology\n").unwrap();
        let r = RuleDictionary::from_csv(&p).unwrap();
        assert_eq!(r.lookup("BIOLGY"), Some("biology"));
        assert_eq!(r.lookup("psych, major"), Some("psychology"));
    }
}
