//! Boundary-map matching with a one-pixel dilation margin, PR sweeps and
//! cross-validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::edgelet::EdgeletSet;
use crate::error::{Error, Result};
use crate::media::BinaryMap;

pub const DEFAULT_THRESHOLDS: usize = 50;

/// Matching counts, additive over frames and videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    /// Predicted pixels inside the dilated ground truth.
    pub tp_pred: u64,
    pub fp: u64,
    /// Ground-truth pixels inside the dilated prediction.
    pub tp_gt: u64,
    pub fn_: u64,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;
    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp_pred: self.tp_pred + o.tp_pred,
            fp: self.fp + o.fp,
            tp_gt: self.tp_gt + o.tp_gt,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), |a, b| a + b)
    }
}

impl MatchCounts {
    /// 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        let n = self.tp_pred + self.fp;
        if n == 0 {
            1.0
        } else {
            self.tp_pred as f64 / n as f64
        }
    }

    /// 1 when the ground truth is empty.
    pub fn recall(&self) -> f64 {
        let n = self.tp_gt + self.fn_;
        if n == 0 {
            1.0
        } else {
            self.tp_gt as f64 / n as f64
        }
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Dilation by a `(2r+1)²` square.
pub fn dilate(map: &BinaryMap, radius: usize) -> BinaryMap {
    let (w, h) = (map.width, map.height);
    let mut out = BinaryMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !map.get(x, y) {
                continue;
            }
            for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    out.set(xx, yy, true);
                }
            }
        }
    }
    out
}

/// Symmetric matching: each side is tested against the other side dilated by `radius`.
pub fn match_boundaries(pred: &BinaryMap, gt: &BinaryMap, radius: usize) -> Result<MatchCounts> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let (dp, dg) = (dilate(pred, radius), dilate(gt, radius));
    let mut c = MatchCounts::default();
    for i in 0..pred.data.len() {
        if pred.data[i] {
            if dg.data[i] {
                c.tp_pred += 1;
            } else {
                c.fp += 1;
            }
        }
        if gt.data[i] {
            if dp.data[i] {
                c.tp_gt += 1;
            } else {
                c.fn_ += 1;
            }
        }
    }
    Ok(c)
}

pub fn match_frames(pred: &[BinaryMap], gt: &[BinaryMap], radius: usize) -> Result<MatchCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted frames, {} ground-truth", pred.len(), gt.len())));
    }
    pred.par_iter()
        .zip(gt)
        .map(|(p, g)| match_boundaries(p, g, radius))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Ordered by descending threshold.
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Highest-F1 point; the first (highest threshold) wins ties.
    pub fn best(&self) -> PrPoint {
        let mut best = self.points[0];
        for p in &self.points[1..] {
            if p.f1 > best.f1 {
                best = *p;
            }
        }
        best
    }

    /// Highest precision among points with recall `>= r`.
    pub fn precision_at_recall(&self, r: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.recall >= r)
            .map(|p| p.precision)
            .max_by(f64::total_cmp)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f1\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.threshold, p.precision, p.recall, p.f1));
        }
        s
    }
}

/// `n` evenly spaced thresholds from 1 down to 0.
pub fn thresholds(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect(),
    }
}

/// One evaluated video: its edgelets, per-instance probabilities and
/// ground-truth boundary maps.
pub struct ScoredVideo<'a> {
    pub set: &'a EdgeletSet,
    pub probs: &'a [f64],
    pub gt: &'a [BinaryMap],
}

/// Micro-averaged PR curve over all frames of all videos.
pub fn pr_curve(videos: &[ScoredVideo], n_thresholds: usize) -> Result<PrCurve> {
    if n_thresholds == 0 {
        return Err(Error::Parameter("at least one threshold is required".into()));
    }
    for v in videos {
        if v.probs.len() != v.set.instances.len() {
            return Err(Error::Dimension(format!(
                "{} probabilities for {} instances",
                v.probs.len(),
                v.set.instances.len()
            )));
        }
    }
    let points = thresholds(n_thresholds)
        .into_par_iter()
        .map(|tau| {
            let c: MatchCounts = videos
                .iter()
                .map(|v| match_frames(&v.set.splat(|i| v.probs[i] >= tau), v.gt, 1))
                .sum::<Result<MatchCounts>>()?;
            Ok(PrPoint {
                threshold: tau,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrCurve { points })
}

/// Shuffles video indices with `seed` and deals them round-robin into `k` folds.
pub fn kfold_split(n_videos: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n_videos < k {
        return Err(Error::Parameter(format!("{n_videos} videos cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n_videos).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, v) in order.into_iter().enumerate() {
        folds[i % k].push(v);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub feature_set: String,
    pub window: usize,
    pub unary_noise: f64,
    pub best_f1: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("feature_set,window,unary_noise,best_f1\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.feature_set, r.window, r.unary_noise, r.best_f1));
    }
    s
}
