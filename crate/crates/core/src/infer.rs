//! Per-frame pairwise MRF over edgelet instances, loopy belief propagation
//! and causal temporal smoothing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::edgelet::{EdgeletGraph, EdgeletSet};
use crate::error::{Error, Result};
use crate::media::{BinaryMap, ProbabilityVideo};

pub const KAPPA: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 30;

pub type Table = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpParams {
    pub max_iters: usize,
    pub damping: f64,
    pub tol: f64,
}

impl Default for BpParams {
    fn default() -> Self {
        BpParams {
            max_iters: 50,
            damping: 0.5,
            tol: 1e-4,
        }
    }
}

impl BpParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Parameter(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tolerance must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// `[1 − p, p]`.
pub fn unary_table(p: f64) -> [f64; 2] {
    [1.0 - p, p]
}

/// Continuity factor: agreeing ON weighted by `p_c`, agreeing OFF by `1 − p_c`
/// (both floored at [`KAPPA`]), disagreement neutral; every entry raised to `λ`.
pub fn pairwise_table(p_c: f64, lambda: f64) -> Table {
    let on = p_c.max(KAPPA).powf(lambda);
    let off = (1.0 - p_c).max(KAPPA).powf(lambda);
    let mixed = 0.5f64.powf(lambda);
    [[off, mixed], [mixed, on]]
}

/// Binary pairwise MRF.  `factors` hold `(a, b, f)` with `f[e_a][e_b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub unary: Vec<[f64; 2]>,
    pub factors: Vec<(usize, usize, Table)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult {
    /// `P(e_n = 1)` per variable.
    pub marginals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn normalize(m: [f64; 2]) -> [f64; 2] {
    let s = m[0] + m[1];
    if s > 0.0 && s.is_finite() {
        [m[0] / s, m[1] / s]
    } else {
        [0.5, 0.5]
    }
}

impl FactorGraph {
    pub fn validate(&self) -> Result<()> {
        let n = self.unary.len();
        for &(a, b, t) in &self.factors {
            if a >= n || b >= n || a == b {
                return Err(Error::Parameter(format!("bad factor ({a}, {b}) over {n} variables")));
            }
            if t.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Numerical(format!("non-finite factor ({a}, {b})")));
            }
        }
        if self.unary.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numerical("non-finite unary potential".into()));
        }
        Ok(())
    }

    /// Synchronous damped sum-product.
    pub fn loopy_bp(&self, params: &BpParams) -> Result<BpResult> {
        params.validate()?;
        self.validate()?;
        let n = self.unary.len();
        // directed edge 2k: a -> b, 2k + 1: b -> a
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &(a, b, _)) in self.factors.iter().enumerate() {
            incoming[b].push(2 * k);
            incoming[a].push(2 * k + 1);
        }
        let ends = |d: usize| {
            let (a, b, _) = self.factors[d / 2];
            if d % 2 == 0 { (a, b) } else { (b, a) }
        };
        let mut msgs = vec![[0.5, 0.5]; 2 * self.factors.len()];
        let mut converged = self.factors.is_empty();
        let mut iterations = 0;
        while !converged && iterations < params.max_iters {
            let fresh: Vec<[f64; 2]> = (0..msgs.len())
                .map(|d| {
                    let (src, _) = ends(d);
                    let reverse = d ^ 1;
                    let mut h = self.unary[src];
                    for &k in &incoming[src] {
                        if k != reverse {
                            h[0] *= msgs[k][0];
                            h[1] *= msgs[k][1];
                        }
                    }
                    let t = self.factors[d / 2].2;
                    let f = |es: usize, ed: usize| if d % 2 == 0 { t[es][ed] } else { t[ed][es] };
                    normalize([
                        h[0] * f(0, 0) + h[1] * f(1, 0),
                        h[0] * f(0, 1) + h[1] * f(1, 1),
                    ])
                })
                .collect();
            let mut change: f64 = 0.0;
            for (old, new) in msgs.iter_mut().zip(fresh) {
                let damped = [
                    params.damping * old[0] + (1.0 - params.damping) * new[0],
                    params.damping * old[1] + (1.0 - params.damping) * new[1],
                ];
                change = change
                    .max((damped[0] - old[0]).abs())
                    .max((damped[1] - old[1]).abs());
                *old = damped;
            }
            iterations += 1;
            converged = change < params.tol;
        }
        let marginals = (0..n)
            .map(|v| {
                let mut b = self.unary[v];
                for &k in &incoming[v] {
                    b[0] *= msgs[k][0];
                    b[1] *= msgs[k][1];
                }
                normalize(b)[1]
            })
            .collect();
        Ok(BpResult {
            marginals,
            converged,
            iterations,
        })
    }
}

/// Marginals of every instance after per-frame BP.
///
/// `pair_probs` gives the continuity probability of each pair in
/// `graph.pairs()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInference {
    pub marginals: Vec<f64>,
    /// Frames whose BP stopped at `max_iters`.
    pub unconverged_frames: Vec<usize>,
}

pub fn infer_frames(
    set: &EdgeletSet,
    graph: &EdgeletGraph,
    unary: &[f64],
    pair_probs: &[f64],
    lambda: f64,
    params: &BpParams,
) -> Result<FrameInference> {
    let pairs = graph.pairs();
    if unary.len() != set.instances.len() || pair_probs.len() != pairs.len() {
        return Err(Error::Dimension(format!(
            "{} instances / {} pairs, got {} unary and {} pairwise probabilities",
            set.instances.len(),
            pairs.len(),
            unary.len(),
            pair_probs.len()
        )));
    }
    if unary.iter().chain(pair_probs).any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Numerical("probability outside [0, 1]".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); set.frames];
    let mut local = vec![0usize; set.instances.len()];
    for (i, inst) in set.instances.iter().enumerate() {
        local[i] = members[inst.frame].len();
        members[inst.frame].push(i);
    }
    let mut frame_pairs: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); set.frames];
    for (&(n, m), &p) in pairs.iter().zip(pair_probs) {
        let t = set.instances[n].frame;
        debug_assert_eq!(t, set.instances[m].frame);
        frame_pairs[t].push((local[n], local[m], p));
    }

    let results: Vec<Result<BpResult>> = (0..set.frames)
        .into_par_iter()
        .map(|t| {
            let fg = FactorGraph {
                unary: members[t].iter().map(|&i| unary_table(unary[i])).collect(),
                factors: frame_pairs[t]
                    .iter()
                    .map(|&(a, b, p)| (a, b, pairwise_table(p, lambda)))
                    .collect(),
            };
            fg.loopy_bp(params)
        })
        .collect();

    let mut marginals = vec![0.0; set.instances.len()];
    let mut unconverged_frames = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        let r = r?;
        if !r.converged {
            unconverged_frames.push(t);
        }
        for (&i, p) in members[t].iter().zip(r.marginals) {
            marginals[i] = p;
        }
    }
    Ok(FrameInference {
        marginals,
        unconverged_frames,
    })
}

/// Per edgelet: mean of the first `min(T, lifetime)` instance probabilities,
/// reported for every instance of that edgelet.  `T = 1` is per-frame
/// operation and returns the input unchanged.
pub fn temporal_smooth(probs: &[f64], set: &EdgeletSet, window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Parameter("temporal window must be >= 1".into()));
    }
    if probs.len() != set.instances.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities for {} instances",
            probs.len(),
            set.instances.len()
        )));
    }
    if window == 1 {
        return Ok(probs.to_vec());
    }
    let mut out = vec![0.0; probs.len()];
    for e in &set.edgelets {
        let k = window.min(e.lifetime);
        let frozen = probs[e.first..e.first + k].iter().sum::<f64>() / k as f64;
        out[e.first..e.first + e.lifetime].fill(frozen);
    }
    Ok(out)
}

/// Binary maps of instances with probability `>= tau`.
pub fn threshold_boundaries(set: &EdgeletSet, probs: &[f64], tau: f64) -> Vec<BinaryMap> {
    set.splat(|i| probs[i] >= tau)
}

/// Per-pixel maximum probability over the instances touching each pixel.
pub fn probability_splat(set: &EdgeletSet, probs: &[f64]) -> ProbabilityVideo {
    let mut out = ProbabilityVideo::zeros(set.width, set.height, set.frames);
    let plane = set.width * set.height;
    for (inst, &p) in set.instances.iter().zip(probs) {
        for &(a, b) in &inst.pairs {
            for (x, y) in [a, b] {
                let v = &mut out.data[inst.frame * plane + y * set.width + x];
                *v = v.max(p as f32);
            }
        }
    }
    out
}

/// `clamp(p + N(0, σ²), 0, 1)` with a seeded generator.
pub fn perturb_probabilities(probs: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::Parameter(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(probs
        .iter()
        .map(|p| (p + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edgelet::extract_edgelets;
    use crate::media::LabelVideo;

    fn tight() -> BpParams {
        BpParams {
            max_iters: 1000,
            damping: 0.5,
            tol: 1e-13,
        }
    }

    fn enumerate(fg: &FactorGraph) -> Vec<f64> {
        let n = fg.unary.len();
        let mut z = 0.0;
        let mut on = vec![0.0; n];
        for s in 0..1usize << n {
            let e = |v: usize| (s >> v) & 1;
            let mut w: f64 = (0..n).map(|v| fg.unary[v][e(v)]).product();
            for &(a, b, t) in &fg.factors {
                w *= t[e(a)][e(b)];
            }
            z += w;
            for (v, acc) in on.iter_mut().enumerate() {
                if e(v) == 1 {
                    *acc += w;
                }
            }
        }
        on.iter().map(|v| v / z).collect()
    }

    #[test]
    fn isolated_variable_keeps_unary() {
        let fg = FactorGraph {
            unary: vec![unary_table(0.7)],
            factors: vec![],
        };
        let r = fg.loopy_bp(&BpParams::default()).unwrap();
        assert!((r.marginals[0] - 0.7).abs() < 1e-15 && r.converged);
    }

    #[test]
    fn neutral_factors_keep_unaries() {
        for (p_c, lambda) in [(0.5, 1.0), (0.9, 0.0)] {
            let fg = FactorGraph {
                unary: vec![unary_table(0.3), unary_table(0.8)],
                factors: vec![(0, 1, pairwise_table(p_c, lambda))],
            };
            let m = fg.loopy_bp(&tight()).unwrap().marginals;
            assert!((m[0] - 0.3).abs() < 1e-10 && (m[1] - 0.8).abs() < 1e-10, "{m:?}");
        }
    }

    #[test]
    fn chain_of_two_matches_enumeration() {
        let fg = FactorGraph {
            unary: vec![unary_table(0.35), unary_table(0.6)],
            factors: vec![(0, 1, pairwise_table(0.8, 1.0))],
        };
        let bp = fg.loopy_bp(&tight()).unwrap().marginals;
        let exact = enumerate(&fg);
        for (a, b) in bp.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10, "{bp:?} vs {exact:?}");
        }
    }

    #[test]
    fn uniform_graph_is_one_half() {
        let fg = FactorGraph {
            unary: vec![[0.5, 0.5]; 4],
            factors: vec![
                (0, 1, [[1.0; 2]; 2]),
                (1, 2, [[1.0; 2]; 2]),
                (2, 3, [[1.0; 2]; 2]),
                (3, 0, [[1.0; 2]; 2]),
            ],
        };
        assert!(fg.loopy_bp(&BpParams::default()).unwrap().marginals.iter().all(|&m| m == 0.5));
    }

    #[test]
    fn table_floor_and_exponent() {
        let t = pairwise_table(0.95, 1.0);
        assert_eq!(t[1][1], 0.95);
        assert_eq!(t[0][0], KAPPA);
        assert_eq!(t[0][1], 0.5);
        let t2 = pairwise_table(0.95, 2.0);
        assert!((t2[0][0] - 0.01).abs() < 1e-15);
    }

    fn two_edgelet_set(frames: usize) -> EdgeletSet {
        let data: Vec<u32> = (0..frames)
            .flat_map(|_| (0..16).map(|i| if i % 4 < 2 { 0 } else { 1 }))
            .collect();
        extract_edgelets(&LabelVideo::new(4, 4, frames, data).unwrap(), 1).0
    }

    #[test]
    fn smoothing_freezes_window_mean() {
        let set = two_edgelet_set(5);
        let p = [0.2, 0.4, 0.6, 0.9, 0.9];
        let s = temporal_smooth(&p, &set, 3).unwrap();
        assert!(s.iter().all(|&v| (v - 0.4).abs() < 1e-15), "{s:?}");
        assert_eq!(temporal_smooth(&p, &set, 1).unwrap(), p.to_vec());
        let set3 = two_edgelet_set(3);
        let s = temporal_smooth(&p[..3], &set3, 30).unwrap();
        assert!(s.iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn thresholds_and_splat() {
        let set = two_edgelet_set(2);
        let all = threshold_boundaries(&set, &[0.3, 0.7], 0.0);
        assert!(all.iter().all(|m| m.count() == 8));
        let none = threshold_boundaries(&set, &[0.3, 0.7], 0.71);
        assert!(none.iter().all(|m| m.count() == 0));
        let splat = probability_splat(&set, &[0.3, 0.7]);
        assert_eq!(splat.at(1, 0, 0), 0.3);
        assert_eq!(splat.at(2, 3, 1), 0.7);
        assert_eq!(splat.at(0, 0, 1), 0.0);
    }
}
