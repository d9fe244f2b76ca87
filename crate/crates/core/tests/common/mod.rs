//! Independent brute-force oracles and random payload generators shared by
//! the integration tests.
#![allow(dead_code)]

use occlusionbound::infer::{FactorGraph, Table};
use occlusionbound::learn::{ForestModel, ForestParams, Node, Tree, MODEL_VERSION};
use occlusionbound::media::{
    BinaryMap, FlowDirection, FlowField, GeometricContext, LabelVideo, ProbabilityVideo, GEOM_CLASSES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ------------------------------------------------------------------ BP

/// Exact marginals `P(e_n = 1)` by summing over all `2^N` labelings.
pub fn enumerate_marginals(fg: &FactorGraph) -> Vec<f64> {
    let n = fg.unary.len();
    let mut on = vec![0.0; n];
    let mut z = 0.0;
    for s in 0u32..(1 << n) {
        let bit = |i: usize| ((s >> i) & 1) as usize;
        let mut w: f64 = (0..n).map(|i| fg.unary[i][bit(i)]).product();
        for &(a, b, t) in &fg.factors {
            w *= t[bit(a)][bit(b)];
        }
        z += w;
        for (i, o) in on.iter_mut().enumerate() {
            if bit(i) == 1 {
                *o += w;
            }
        }
    }
    on.iter().map(|o| o / z).collect()
}

fn random_table(r: &mut ChaCha8Rng) -> Table {
    [[r.random_range(0.1..1.0), r.random_range(0.1..1.0)], [r.random_range(0.1..1.0), r.random_range(0.1..1.0)]]
}

fn random_unaries(r: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let p: f64 = r.random_range(0.02..0.98);
            [1.0 - p, p]
        })
        .collect()
}

/// Random tree (a forest when `n == 1`) over `n` variables.
pub fn random_tree(r: &mut ChaCha8Rng, n: usize) -> FactorGraph {
    let factors = (1..n)
        .map(|i| (r.random_range(0..i), i, random_table(r)))
        .collect();
    FactorGraph {
        unary: random_unaries(r, n),
        factors,
    }
}

/// A single cycle through `k >= 3` variables with tree branches hanging off it.
pub fn random_single_loop(r: &mut ChaCha8Rng, n: usize) -> FactorGraph {
    let k = r.random_range(3..=n);
    let mut factors: Vec<(usize, usize, Table)> = (0..k).map(|i| (i, (i + 1) % k, random_table(r))).collect();
    for i in k..n {
        factors.push((r.random_range(0..i), i, random_table(r)));
    }
    FactorGraph {
        unary: random_unaries(r, n),
        factors,
    }
}

// ------------------------------------------------------------------ Gini

/// Exhaustive weighted-Gini minimiser over `features` (midpoint thresholds,
/// both sides holding at least `min_leaf` samples).  Ties within 1e-12 keep the
/// lowest feature, then the lowest threshold.
pub fn brute_split(
    x: &[Vec<f64>],
    y: &[bool],
    samples: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let gini = |idx: &[usize]| {
        if idx.is_empty() {
            return 0.0;
        }
        let p = idx.iter().filter(|&&i| y[i]).count() as f64 / idx.len() as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let n = samples.len() as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut feats = features.to_vec();
    feats.sort_unstable();
    feats.dedup();
    for &f in &feats {
        let mut vals: Vec<f64> = samples.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (l, rr): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i][f] <= thr);
            if l.len() < min_leaf || rr.len() < min_leaf {
                continue;
            }
            let imp = l.len() as f64 / n * gini(&l) + rr.len() as f64 / n * gini(&rr);
            if best.is_none_or(|b| imp < b.2 - 1e-12) {
                best = Some((f, thr, imp));
            }
        }
    }
    best
}

/// Weighted Gini impurity of splitting `samples` at `x[f] <= thr`.
pub fn split_impurity(x: &[Vec<f64>], y: &[bool], samples: &[usize], f: usize, thr: f64) -> f64 {
    let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i][f] <= thr);
    let g = |idx: &[usize]| {
        let p = idx.iter().filter(|&&i| y[i]).count() as f64 / idx.len().max(1) as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let n = samples.len() as f64;
    l.len() as f64 / n * g(&l) + r.len() as f64 / n * g(&r)
}

/// Feature 0 separates the classes with margin 1 (`x < -0.5` vs `x > 0.5`);
/// the remaining `dim - 1` columns are uniform noise.
pub fn separable(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2 == 0;
        let mut row: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let m: f64 = r.random_range(0.5..2.0);
        row[0] = if label { m } else { -m };
        x.push(row);
        y.push(label);
    }
    (x, y)
}

// ------------------------------------------------------------------ matching

/// Per-pixel Chebyshev-radius-1 neighbourhood check.
pub fn brute_match(pred: &BinaryMap, gt: &BinaryMap) -> (u64, u64, u64, u64) {
    let near = |m: &BinaryMap, x: usize, y: usize| {
        let (w, h) = (m.width as i64, m.height as i64);
        (-1..=1i64).any(|dy| {
            (-1..=1i64).any(|dx| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                xx >= 0 && yy >= 0 && xx < w && yy < h && m.get(xx as usize, yy as usize)
            })
        })
    };
    let (mut tp_pred, mut fp, mut tp_gt, mut fn_) = (0, 0, 0, 0);
    for y in 0..pred.height {
        for x in 0..pred.width {
            if pred.get(x, y) {
                if near(gt, x, y) {
                    tp_pred += 1
                } else {
                    fp += 1
                }
            }
            if gt.get(x, y) {
                if near(pred, x, y) {
                    tp_gt += 1
                } else {
                    fn_ += 1
                }
            }
        }
    }
    (tp_pred, fp, tp_gt, fn_)
}

pub fn random_map(r: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMap {
    BinaryMap {
        width: w,
        height: h,
        data: (0..w * h).map(|_| r.random_bool(density)).collect(),
    }
}

// ------------------------------------------------------------------ payloads

pub fn random_flow(r: &mut ChaCha8Rng) -> FlowField {
    let (w, h) = (r.random_range(1..12), r.random_range(1..12));
    FlowField {
        width: w,
        height: h,
        direction: FlowDirection::Forward,
        data: (0..w * h)
            .map(|_| [r.random_range(-50.0f32..50.0), r.random_range(-50.0f32..50.0)])
            .collect(),
    }
}

pub fn random_labels(r: &mut ChaCha8Rng) -> LabelVideo {
    let (w, h, f) = (r.random_range(1..10), r.random_range(1..10), r.random_range(1..5));
    let k = r.random_range(1..40u32);
    LabelVideo::new(w, h, f, (0..w * h * f).map(|_| r.random_range(0..k)).collect()).unwrap()
}

pub fn random_geom(r: &mut ChaCha8Rng) -> GeometricContext {
    let (w, h, f) = (r.random_range(1..8), r.random_range(1..8), r.random_range(1..4));
    let data = (0..w * h * f)
        .map(|_| {
            let raw: [f32; GEOM_CLASSES] = std::array::from_fn(|_| r.random_range(0.0f32..1.0) + 1e-3);
            let s: f32 = raw.iter().sum();
            raw.map(|v| v / s)
        })
        .collect();
    GeometricContext {
        width: w,
        height: h,
        frames: f,
        data,
    }
}

pub fn random_probabilities(r: &mut ChaCha8Rng) -> ProbabilityVideo {
    let (w, h, f) = (r.random_range(1..8), r.random_range(1..8), r.random_range(1..4));
    ProbabilityVideo {
        width: w,
        height: h,
        frames: f,
        data: (0..w * h * f).map(|_| r.random_range(0.0f32..=1.0)).collect(),
    }
}

fn random_tree_nodes(r: &mut ChaCha8Rng, dim: u32, depth: usize, nodes: &mut Vec<Node>) -> u32 {
    let slot = nodes.len();
    nodes.push(Node::Leaf(0, 0));
    if depth == 0 || r.random_bool(0.3) {
        nodes[slot] = Node::Leaf(r.random_range(0..50), r.random_range(0..50));
    } else {
        let f = r.random_range(0..dim);
        let thr: f64 = r.random_range(-1e3..1e3);
        let l = random_tree_nodes(r, dim, depth - 1, nodes);
        let rr = random_tree_nodes(r, dim, depth - 1, nodes);
        nodes[slot] = Node::Split(f, thr, l, rr);
    }
    slot as u32
}

pub fn random_model(r: &mut ChaCha8Rng) -> ForestModel {
    let dim = r.random_range(1..30u32);
    let trees = (0..r.random_range(1..6))
        .map(|_| {
            let mut nodes = Vec::new();
            random_tree_nodes(r, dim, 5, &mut nodes);
            Tree { nodes }
        })
        .collect::<Vec<_>>();
    ForestModel {
        version: MODEL_VERSION,
        names: (0..dim).map(|i| format!("feature_{i}")).collect(),
        params: ForestParams {
            trees: trees.len(),
            mtry: r.random_range(1..=dim as usize),
            max_depth: 5,
            min_leaf: r.random_range(1..10),
            bootstrap_ratio: r.random_range(0.1..=1.0),
            max_samples: r.random_bool(0.5).then(|| r.random_range(1..5000)),
            seed: r.random(),
        },
        train_rows: r.random_range(1..1000),
        trees,
    }
}
