mod common;

use occlusionbound::edgelet::extract_edgelets;
use occlusionbound::eval::{kfold_split, match_boundaries, match_frames, pr_curve, ScoredVideo};
use occlusionbound::features::*;
use occlusionbound::infer::{pairwise_table, temporal_smooth, BpParams, FactorGraph};
use occlusionbound::learn::{best_split, train_forest, ForestParams};
use occlusionbound::media::{FlowDirection, FlowField, LabelVideo};
use proptest::prelude::*;
use rand::Rng;

fn tight() -> BpParams {
    BpParams {
        max_iters: 500,
        damping: 0.5,
        tol: 1e-12,
    }
}

fn blocky_labels(seed: u64, w: usize, h: usize, frames: usize) -> LabelVideo {
    let mut r = common::rng(seed);
    let cells = r.random_range(2..5usize);
    let ids: Vec<u32> = (0..cells * cells).map(|_| r.random_range(0..6)).collect();
    let mut labels = Vec::with_capacity(w * h * frames);
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                let cx = ((x + t) * cells / w).min(cells - 1);
                let cy = (y * cells / h).min(cells - 1);
                labels.push(ids[cy * cells + cx]);
            }
        }
    }
    LabelVideo::new(w, h, frames, labels).unwrap()
}

fn random_field(seed: u64, w: usize, h: usize, dir: FlowDirection) -> FlowField {
    let mut r = common::rng(seed);
    let mut f = FlowField::zeros(w, h, dir);
    for p in &mut f.data {
        *p = [r.random_range(-3.0f32..3.0), r.random_range(-3.0f32..3.0)];
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bp_exact_on_trees(seed in any::<u64>(), n in 1usize..=12) {
        let fg = common::random_tree(&mut common::rng(seed), n);
        let bp = fg.loopy_bp(&tight()).unwrap();
        let exact = common::enumerate_marginals(&fg);
        for (a, b) in bp.marginals.iter().zip(&exact) {
            prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn bp_marginals_are_distributions(seed in any::<u64>(), n in 3usize..=12) {
        let fg = common::random_single_loop(&mut common::rng(seed), n);
        let a = fg.loopy_bp(&BpParams::default()).unwrap();
        prop_assert!(a.marginals.iter().all(|m| (0.0..=1.0).contains(m)));
        prop_assert_eq!(&a, &fg.loopy_bp(&BpParams::default()).unwrap());
    }

    #[test]
    fn neutral_pairwise_leaves_unaries(seed in any::<u64>(), n in 2usize..=10, lambda in 0.0f64..3.0) {
        let mut fg = common::random_tree(&mut common::rng(seed), n);
        for f in &mut fg.factors {
            f.2 = pairwise_table(0.5, lambda);
        }
        let bp = fg.loopy_bp(&BpParams::default()).unwrap();
        for (m, u) in bp.marginals.iter().zip(&fg.unary) {
            prop_assert!((m - u[1] / (u[0] + u[1])).abs() < 1e-9);
        }
    }

    #[test]
    fn split_matches_brute_force(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = r.random_range(2..=20usize);
        let dim = r.random_range(1..6usize);
        // coarse values force ties in both impurity and threshold
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.random_range(0..5) as f64).collect()).collect();
        let y: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let samples: Vec<usize> = (0..n).collect();
        let feats: Vec<usize> = (0..dim).filter(|_| r.random_bool(0.7)).collect();
        let min_leaf = r.random_range(1..4);
        let got = best_split(&x, &y, &samples, &feats, min_leaf);
        let want = common::brute_split(&x, &y, &samples, &feats, min_leaf);
        match (got, want) {
            (None, None) => {}
            (Some(s), Some((f, thr, imp))) => {
                prop_assert_eq!((s.feature, s.threshold), (f, thr));
                let mine = common::split_impurity(&x, &y, &samples, s.feature, s.threshold);
                prop_assert!((mine - imp).abs() < 1e-12);
            }
            other => prop_assert!(false, "mismatch {:?}", other),
        }
    }

    #[test]
    fn forest_probability_is_tree_mean(seed in any::<u64>()) {
        let (x, y) = common::separable(40, 4, seed);
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let params = ForestParams { trees: 7, mtry: 2, seed, ..ForestParams::default() };
        let m = train_forest(&x, &y, &names, &params).unwrap();
        for row in &x {
            let p = m.predict_proba(row).unwrap();
            let mean = m.trees.iter().map(|t| t.predict_proba(row)).sum::<f64>() / m.trees.len() as f64;
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((p - mean).abs() < 1e-15);
        }
        prop_assert!(m.trees.iter().all(|t| t.depth() <= params.max_depth));
        prop_assert_eq!(m.to_json(), train_forest(&x, &y, &names, &params).unwrap().to_json());
    }

    #[test]
    fn matching_matches_brute_force(seed in any::<u64>(), d1 in 0.0f64..0.5, d2 in 0.0f64..0.5) {
        let mut r = common::rng(seed);
        let (w, h) = (r.random_range(1..=16), r.random_range(1..=16));
        let pred = common::random_map(&mut r, w, h, d1);
        let gt = common::random_map(&mut r, w, h, d2);
        let c = match_boundaries(&pred, &gt, 1).unwrap();
        prop_assert_eq!((c.tp_pred, c.fp, c.tp_gt, c.fn_), common::brute_match(&pred, &gt));
    }

    #[test]
    fn counts_are_additive(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let preds: Vec<_> = (0..4).map(|_| common::random_map(&mut r, 9, 7, 0.2)).collect();
        let gts: Vec<_> = (0..4).map(|_| common::random_map(&mut r, 9, 7, 0.2)).collect();
        let total = match_frames(&preds, &gts, 1).unwrap();
        let summed = preds.iter().zip(&gts).map(|(p, g)| match_boundaries(p, g, 1).unwrap()).sum();
        prop_assert_eq!(total, summed);
    }

    #[test]
    fn recall_monotone_in_threshold(seed in any::<u64>()) {
        let labels = blocky_labels(seed, 16, 12, 4);
        let gt_labels = blocky_labels(seed ^ 1, 16, 12, 4);
        let (set, _) = extract_edgelets(&labels, 1);
        let mut r = common::rng(seed);
        let probs: Vec<f64> = set.instances.iter().map(|_| r.random()).collect();
        let gt = gt_labels.boundary_masks();
        let curve = pr_curve(&[ScoredVideo { set: &set, probs: &probs, gt: &gt }], 20).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[0].threshold > w[1].threshold);
            prop_assert!(w[1].recall >= w[0].recall);
        }
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
    }

    #[test]
    fn smoothing_freezes_window_mean(seed in any::<u64>(), window in 1usize..6) {
        let labels = blocky_labels(seed, 14, 10, 7);
        let (set, _) = extract_edgelets(&labels, 1);
        let mut r = common::rng(seed);
        let probs: Vec<f64> = set.instances.iter().map(|_| r.random()).collect();
        let smooth = temporal_smooth(&probs, &set, window).unwrap();
        for e in &set.edgelets {
            let k = window.min(e.lifetime);
            let mean = probs[e.first..e.first + k].iter().sum::<f64>() / k as f64;
            if window > 1 {
                for &s in &smooth[e.first..e.first + e.lifetime] {
                    prop_assert!((s - mean).abs() <= 1e-12);
                }
            }
            if e.lifetime >= window {
                // jitter bound over the averaging window: mean absolute deviation <= stdev
                let xs = &probs[e.first..e.first + window];
                let sd = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64).sqrt();
                let dev = xs.iter().map(|p| (p - mean).abs()).sum::<f64>() / window as f64;
                prop_assert!(dev <= sd + 1e-12);
            }
        }
        if window == 1 {
            prop_assert_eq!(smooth, probs);
        }
    }

    #[test]
    fn flow_features_are_bounded(seed in any::<u64>()) {
        let (w, h) = (9, 7);
        let fwd = random_field(seed, w, h, FlowDirection::Forward);
        let bwd = random_field(seed ^ 7, w, h, FlowDirection::Backward);
        let gray = |s| {
            let mut r = common::rng(s);
            let mut g = occlusionbound::media::GrayImage::new(w, h);
            g.data.iter_mut().for_each(|v| *v = r.random());
            g
        };
        let (a, b) = (gray(seed), gray(seed ^ 3));
        for y in 0..h {
            for x in 0..w {
                let (gx, gy) = flow_gradient(&fwd, x, y);
                prop_assert!(photo_consistency(&a, &b, &fwd, x, y) >= 0.0);
                prop_assert!(gx >= 0.0 && gy >= 0.0);
                prop_assert!(flow_mag_variance(&fwd, x, y) >= 0.0);
                prop_assert!(reverse_flow_constancy(&fwd, &bwd, x, y) >= 0.0);
                let th = reverse_flow_angle(&fwd, &bwd, x, y);
                prop_assert!((0.0..=std::f64::consts::PI).contains(&th));
            }
        }
    }

    #[test]
    fn magnitude_variance_scales_quadratically(seed in any::<u64>(), c in 0.1f64..4.0) {
        let f = random_field(seed, 6, 6, FlowDirection::Forward);
        let mut g = f.clone();
        for p in &mut g.data {
            *p = [(p[0] as f64 * c) as f32, (p[1] as f64 * c) as f32];
        }
        for (x, y) in [(0, 0), (2, 3), (5, 5)] {
            let (a, b) = (flow_mag_variance(&f, x, y), flow_mag_variance(&g, x, y));
            prop_assert!((b - c * c * a).abs() <= 1e-5 * (1.0 + b));
        }
    }

    #[test]
    fn flow_features_translate(seed in any::<u64>(), dx in 0usize..3, dy in 0usize..3) {
        let (w, h) = (10, 10);
        let f = random_field(seed, w, h, FlowDirection::Forward);
        let mut g = FlowField::zeros(w + dx, h + dy, FlowDirection::Forward);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = f.get(x, y);
                g.set(x + dx, y + dy, u, v);
            }
        }
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                prop_assert_eq!(flow_gradient(&f, x, y), flow_gradient(&g, x + dx, y + dy));
                prop_assert_eq!(flow_mag_variance(&f, x, y), flow_mag_variance(&g, x + dx, y + dy));
            }
        }
    }

    #[test]
    fn folds_partition(n in 2usize..40, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        let mut all = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (lo, hi) = (folds.iter().map(Vec::len).min().unwrap(), folds.iter().map(Vec::len).max().unwrap());
        prop_assert!(hi - lo <= 1);
    }
}

#[test]
fn uniform_graph_is_symmetric() {
    let fg = FactorGraph {
        unary: vec![[1.0, 1.0]; 5],
        factors: vec![(0, 1, [[1.0; 2]; 2]), (1, 2, [[1.0; 2]; 2]), (2, 0, [[1.0; 2]; 2]), (3, 4, [[1.0; 2]; 2])],
    };
    let bp = fg.loopy_bp(&BpParams::default()).unwrap();
    assert!(bp.marginals.iter().all(|&m| m == 0.5));
}
