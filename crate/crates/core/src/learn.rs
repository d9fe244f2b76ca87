//! Random forest classifier (Gini impurity, bootstrap aggregation) with
//! out-of-bag feature importance.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edgelet::EdgeletGraph;
use crate::error::{Error, Result};
use crate::media::io::{read_bytes, write_bytes};

pub const MODEL_VERSION: u32 = 1;

/// OFF examples kept per ON example when balancing.
pub const OFF_PER_ON: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    /// Candidate features per node; capped at the feature dimension.
    pub mtry: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap_ratio: f64,
    /// Upper bound on the per-tree bootstrap sample size (`None`: no cap).
    #[serde(default)]
    pub max_samples: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 105,
            mtry: 11,
            max_depth: 35,
            min_leaf: 5,
            bootstrap_ratio: 1.0,
            max_samples: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("trees", self.trees),
            ("mtry", self.mtry),
            ("max_depth", self.max_depth),
            ("min_leaf", self.min_leaf),
            ("max_samples", self.max_samples.unwrap_or(1)),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("forest {name} must be >= 1")));
            }
        }
        if !(self.bootstrap_ratio > 0.0 && self.bootstrap_ratio <= 1.0) {
            return Err(Error::Parameter(format!(
                "bootstrap ratio must lie in (0, 1], got {}",
                self.bootstrap_ratio
            )));
        }
        Ok(())
    }
}

/// Tree node.  Serialised as `[feature, threshold, left, right]` or `[neg, pos]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split(u32, f64, u32, u32),
    Leaf(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> (u32, u32) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split(f, thr, l, r) => i = if x[f as usize] <= thr { l } else { r } as usize,
                Node::Leaf(neg, pos) => return (neg, pos),
            }
        }
    }

    /// Positive-class fraction at the reached leaf.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (neg, pos) = self.leaf(x);
        pos as f64 / (neg + pos).max(1) as f64
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let (neg, pos) = self.leaf(x);
        pos > neg
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Split(_, _, l, r) => 1 + go(t, l as usize).max(go(t, r as usize)),
                Node::Leaf(..) => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub names: Vec<String>,
    pub params: ForestParams,
    /// Training-set size, needed to regenerate bootstrap samples.
    pub train_rows: usize,
    pub trees: Vec<Tree>,
}

/// A chosen split.  `score` is `(num, den)` of `Σ_child (pos² + neg²)/n_child`,
/// larger is purer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub score: (u128, u128),
}

fn better(a: (u128, u128), b: (u128, u128)) -> bool {
    a.0 * b.1 > b.0 * a.1
}

/// Best Gini split of `samples` over `features` (each feature considered once,
/// ascending).  Ties keep the lowest feature, then the lowest threshold.
/// `None` if no threshold leaves `min_leaf` samples on both sides.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[bool],
    samples: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = samples.len();
    let total_pos = samples.iter().filter(|&&i| y[i]).count() as u128;
    let total = n as u128;
    let mut feats = features.to_vec();
    feats.sort_unstable();
    feats.dedup();

    let mut best: Option<Split> = None;
    let mut column: Vec<(f64, bool)> = Vec::with_capacity(n);
    for &f in &feats {
        column.clear();
        column.extend(samples.iter().map(|&i| (x[i][f], y[i])));
        column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let (mut nl, mut pl) = (0u128, 0u128);
        for k in 0..n.saturating_sub(1) {
            nl += 1;
            pl += column[k].1 as u128;
            let (lo, hi) = (column[k].0, column[k + 1].0);
            if lo == hi {
                continue;
            }
            let nr = total - nl;
            if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
                continue;
            }
            let pr = total_pos - pl;
            let (ql, qr) = (nl - pl, nr - pr);
            let num = (pl * pl + ql * ql) * nr + (pr * pr + qr * qr) * nl;
            let score = (num, nl * nr);
            if best.is_none_or(|b| better(score, b.score)) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(tree as u64))
}

/// Bootstrap draw for one tree; the same RNG stream then drives feature sampling.
fn bootstrap(rng: &mut ChaCha8Rng, n: usize, params: &ForestParams) -> Vec<usize> {
    let m = ((n as f64 * params.bootstrap_ratio).round() as usize)
        .min(params.max_samples.unwrap_or(usize::MAX))
        .max(1);
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

/// Out-of-bag row indices of tree `t`, regenerated from the model seed.
pub fn oob_rows(model: &ForestModel, t: usize) -> Vec<usize> {
    let mut rng = tree_rng(model.params.seed, t);
    let drawn = bootstrap(&mut rng, model.train_rows, &model.params);
    let mut in_bag = vec![false; model.train_rows];
    drawn.iter().for_each(|&i| in_bag[i] = true);
    (0..model.train_rows).filter(|&i| !in_bag[i]).collect()
}

fn grow_tree(x: &[Vec<f64>], y: &[bool], params: &ForestParams, index: usize) -> Tree {
    let dim = x[0].len();
    let mtry = params.mtry.min(dim);
    let mut rng = tree_rng(params.seed, index);
    let root = bootstrap(&mut rng, x.len(), params);

    let mut nodes = vec![Node::Leaf(0, 0)];
    let mut stack = vec![(0usize, root, 0usize)];
    while let Some((slot, samples, depth)) = stack.pop() {
        let pos = samples.iter().filter(|&&i| y[i]).count();
        let neg = samples.len() - pos;
        let leaf = Node::Leaf(neg as u32, pos as u32);
        if pos == 0 || neg == 0 || depth >= params.max_depth || samples.len() < 2 * params.min_leaf {
            nodes[slot] = leaf;
            continue;
        }
        let feats = sample(&mut rng, dim, mtry).into_vec();
        match best_split(x, y, &samples, &feats, params.min_leaf) {
            None => nodes[slot] = leaf,
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf(0, 0));
                nodes.push(Node::Leaf(0, 0));
                nodes[slot] = Node::Split(s.feature as u32, s.threshold, l as u32, r as u32);
                // right pushed first so the left subtree is grown first
                stack.push((r, right, depth + 1));
                stack.push((l, left, depth + 1));
            }
        }
    }
    Tree { nodes }
}

fn check_matrix(x: &[Vec<f64>], dim: usize) -> Result<()> {
    for row in x {
        if row.len() != dim {
            return Err(Error::Schema {
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
    }
    Ok(())
}

/// Trains a forest; `names` labels the feature columns.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[bool],
    names: &[String],
    params: &ForestParams,
) -> Result<ForestModel> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::Training(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Training("at least two samples are required".into()));
    }
    let dim = names.len();
    check_matrix(x, dim)?;
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, params, t))
        .collect();
    Ok(ForestModel {
        version: MODEL_VERSION,
        names: names.to_vec(),
        params: *params,
        train_rows: x.len(),
        trees,
    })
}

impl ForestModel {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Schema {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.par_iter().map(|r| self.predict_proba(r)).collect()
    }

    /// Fraction of rows whose OOB majority vote matches the label; rows that
    /// are in-bag for every tree are skipped.
    pub fn oob_accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> Result<f64> {
        self.check_training_rows(x, y)?;
        let mut votes = vec![(0usize, 0usize); x.len()];
        for t in 0..self.trees.len() {
            for i in oob_rows(self, t) {
                if self.trees[t].predict(&x[i]) {
                    votes[i].1 += 1;
                } else {
                    votes[i].0 += 1;
                }
            }
        }
        let (mut seen, mut correct) = (0usize, 0usize);
        for (i, &(no, yes)) in votes.iter().enumerate() {
            if no + yes > 0 {
                seen += 1;
                correct += ((yes > no) == y[i]) as usize;
            }
        }
        if seen == 0 {
            return Err(Error::UndefinedImportance("no out-of-bag samples".into()));
        }
        Ok(correct as f64 / seen as f64)
    }

    fn check_training_rows(&self, x: &[Vec<f64>], y: &[bool]) -> Result<()> {
        if x.len() != self.train_rows || y.len() != self.train_rows {
            return Err(Error::Training(format!(
                "model was trained on {} rows, got {}",
                self.train_rows,
                x.len()
            )));
        }
        check_matrix(x, self.dim())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest model is serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        if probe.version != MODEL_VERSION {
            return Err(Error::Version {
                expected: MODEL_VERSION,
                found: probe.version,
            });
        }
        let model: ForestModel =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Parse("model has no trees".into()));
        }
        for t in &self.trees {
            if t.nodes.is_empty() {
                return Err(Error::Parse("empty tree".into()));
            }
            for (i, n) in t.nodes.iter().enumerate() {
                if let Node::Split(f, thr, l, r) = *n {
                    let ok = (f as usize) < self.dim()
                        && thr.is_finite()
                        && (l as usize) > i
                        && (r as usize) > i
                        && (l as usize) < t.nodes.len()
                        && (r as usize) < t.nodes.len();
                    if !ok {
                        return Err(Error::Parse(format!("malformed split node {i}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Parse(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(text)
    }
}

/// OOB vote importance: every internal node on the path of a correctly
/// classified out-of-bag sample votes for its feature.  Normalised to sum 1.
pub fn oob_importance(model: &ForestModel, x: &[Vec<f64>], y: &[bool]) -> Result<Vec<f64>> {
    model.check_training_rows(x, y)?;
    let per_tree: Vec<(Vec<u64>, usize)> = (0..model.trees.len())
        .into_par_iter()
        .map(|t| {
            let tree = &model.trees[t];
            let mut votes = vec![0u64; model.dim()];
            let rows = oob_rows(model, t);
            for &i in &rows {
                if tree.predict(&x[i]) != y[i] {
                    continue;
                }
                let mut k = 0;
                while let Node::Split(f, thr, l, r) = tree.nodes[k] {
                    votes[f as usize] += 1;
                    k = if x[i][f as usize] <= thr { l } else { r } as usize;
                }
            }
            (votes, rows.len())
        })
        .collect();
    let mut total = vec![0u64; model.dim()];
    let mut oob = 0;
    for (v, n) in per_tree {
        total.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        oob += n;
    }
    if oob == 0 {
        return Err(Error::UndefinedImportance("no out-of-bag samples".into()));
    }
    let sum: u64 = total.iter().sum();
    if sum == 0 {
        return Err(Error::UndefinedImportance("no correct out-of-bag votes".into()));
    }
    Ok(total.iter().map(|&v| v as f64 / sum as f64).collect())
}

/// Keeps every ON row and at most `OFF_PER_ON`× as many OFF rows, chosen at
/// random.  Returns sorted row indices.
pub fn balance(y: &[bool], seed: u64) -> Vec<usize> {
    let on: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let off: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let keep = (on.len() * OFF_PER_ON).min(off.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = on;
    idx.extend(sample(&mut rng, off.len(), keep).into_iter().map(|k| off[k]));
    idx.sort_unstable();
    idx
}

/// One row per adjacent instance pair `(n, m)`, `n < m`: concatenated
/// features, label ON iff both instances are ON.
pub fn build_pairwise_dataset<R: AsRef<[f64]>>(
    rows: &[R],
    graph: &EdgeletGraph,
    labels: &[bool],
) -> (Vec<Vec<f64>>, Vec<bool>, Vec<(usize, usize)>) {
    let pairs = graph.pairs();
    let x = pairs
        .iter()
        .map(|&(n, m)| {
            let mut r = rows[n].as_ref().to_vec();
            r.extend_from_slice(rows[m].as_ref());
            r
        })
        .collect();
    let y = pairs.iter().map(|&(n, m)| labels[n] && labels[m]).collect();
    (x, y, pairs)
}

/// Column names for a pairwise dataset built from `names`.
pub fn pairwise_names(names: &[String]) -> Vec<String> {
    let mut out: Vec<String> = names.iter().map(|n| format!("{n}_n")).collect();
    out.extend(names.iter().map(|n| format!("{n}_m")));
    out
}
