//! Edgelets: per-frame boundary fragments between pairs of super-voxels.
//!
//! An edgelet is identified by its region pair `(a, b)` with `a < b`; since
//! regions span frames, the same edgelet reappears in consecutive frames as
//! separate instances.  Instances are stored flat, ordered by `(id, frame)`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::media::{BinaryMap, LabelVideo};

pub const DEFAULT_MIN_LEN: usize = 4;
pub const DEFAULT_RHO: f64 = 0.5;

pub type Pixel = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EdgeletId {
    pub a: u32,
    pub b: u32,
}

impl EdgeletId {
    pub fn new(p: u32, q: u32) -> Self {
        EdgeletId {
            a: p.min(q),
            b: p.max(q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edgelet {
    pub id: EdgeletId,
    /// Index of the first instance in [`EdgeletSet::instances`].
    pub first: usize,
    /// Number of frames the edgelet is present in.
    pub lifetime: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeletInstance {
    /// Index into [`EdgeletSet::edgelets`].
    pub edgelet: usize,
    pub frame: usize,
    /// 4-adjacent pixel pairs, first pixel in region `a`, second in `b`.
    pub pairs: Vec<(Pixel, Pixel)>,
    /// Lattice-vertex endpoints (pixel corners); `None` for closed curves.
    pub endpoints: Option<[Pixel; 2]>,
    pub short: bool,
}

impl EdgeletInstance {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn endpoint_distance(&self) -> Option<f64> {
        self.endpoints.map(|[p, q]| {
            let dx = p.0 as f64 - q.0 as f64;
            let dy = p.1 as f64 - q.1 as f64;
            dx.hypot(dy)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeletSet {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub edgelets: Vec<Edgelet>,
    pub instances: Vec<EdgeletInstance>,
}

impl EdgeletSet {
    pub fn id_of(&self, instance: usize) -> EdgeletId {
        self.edgelets[self.instances[instance].edgelet].id
    }

    /// Instances of one edgelet, in frame order.
    pub fn instances_of(&self, edgelet: usize) -> &[EdgeletInstance] {
        let e = &self.edgelets[edgelet];
        &self.instances[e.first..e.first + e.lifetime]
    }

    /// Per-frame maps with both pixels of every pair of the selected instances set.
    pub fn splat(&self, selected: impl Fn(usize) -> bool) -> Vec<BinaryMap> {
        let mut maps = vec![BinaryMap::new(self.width, self.height); self.frames];
        for (i, inst) in self.instances.iter().enumerate() {
            if !selected(i) {
                continue;
            }
            let m = &mut maps[inst.frame];
            for &(p, q) in &inst.pairs {
                m.set(p.0, p.1, true);
                m.set(q.0, q.1, true);
            }
        }
        maps
    }
}

/// Per-frame junction adjacency over flat instance indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeletGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl EdgeletGraph {
    /// Adjacent pairs `(n, m)` with `n < m`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (n, ns) in self.neighbors.iter().enumerate() {
            out.extend(ns.iter().filter(|&&m| m > n).map(|&m| (n, m)));
        }
        out
    }
}

struct FrameFragments {
    pairs: BTreeMap<EdgeletId, Vec<(Pixel, Pixel)>>,
    /// Region pairs meeting at each junction.
    junctions: Vec<Vec<EdgeletId>>,
}

fn frame_fragments(labels: &LabelVideo, t: usize) -> FrameFragments {
    let (w, h) = (labels.width, labels.height);
    let at = |x: usize, y: usize| labels.at(x, y, t);
    let mut pairs: BTreeMap<EdgeletId, Vec<(Pixel, Pixel)>> = BTreeMap::new();
    let mut push = |p: Pixel, q: Pixel| {
        let (lp, lq) = (at(p.0, p.1), at(q.0, q.1));
        if lp != lq {
            let pair = if lp < lq { (p, q) } else { (q, p) };
            pairs.entry(EdgeletId::new(lp, lq)).or_default().push(pair);
        }
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                push((x, y), (x + 1, y));
            }
            if y + 1 < h {
                push((x, y), (x, y + 1));
            }
        }
    }

    let mut junctions = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let win = [at(x, y), at(x + 1, y), at(x, y + 1), at(x + 1, y + 1)];
            let distinct: BTreeSet<u32> = win.iter().copied().collect();
            if distinct.len() < 3 {
                continue;
            }
            // the four pixel pairs whose shared side touches the centre corner
            let mut ids = BTreeSet::new();
            for (i, j) in [(0, 1), (2, 3), (0, 2), (1, 3)] {
                if win[i] != win[j] {
                    ids.insert(EdgeletId::new(win[i], win[j]));
                }
            }
            junctions.push(ids.into_iter().collect());
        }
    }
    FrameFragments { pairs, junctions }
}

/// Lattice segment separating two 4-adjacent pixels, as a pair of corners.
fn dual_segment(p: Pixel, q: Pixel) -> (Pixel, Pixel) {
    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
    if lo.1 == hi.1 {
        // horizontal neighbours: vertical segment at x = hi.x
        ((hi.0, lo.1), (hi.0, lo.1 + 1))
    } else {
        ((lo.0, hi.1), (lo.0 + 1, hi.1))
    }
}

/// Corners of odd or branching degree; the farthest pair when there are more than two.
fn endpoints(pairs: &[(Pixel, Pixel)]) -> Option<[Pixel; 2]> {
    let mut degree: BTreeMap<Pixel, usize> = BTreeMap::new();
    for &(p, q) in pairs {
        let (u, v) = dual_segment(p, q);
        *degree.entry(u).or_default() += 1;
        *degree.entry(v).or_default() += 1;
    }
    let ends: Vec<Pixel> = degree
        .into_iter()
        .filter(|&(_, d)| d != 2)
        .map(|(v, _)| v)
        .collect();
    match ends.len() {
        0 => None,
        1 => Some([ends[0], ends[0]]),
        _ => {
            let d2 = |p: Pixel, q: Pixel| {
                let dx = p.0 as i64 - q.0 as i64;
                let dy = p.1 as i64 - q.1 as i64;
                dx * dx + dy * dy
            };
            let mut best = ([ends[0], ends[1]], d2(ends[0], ends[1]));
            for i in 0..ends.len() {
                for j in i + 1..ends.len() {
                    let d = d2(ends[i], ends[j]);
                    if d > best.1 {
                        best = ([ends[i], ends[j]], d);
                    }
                }
            }
            Some(best.0)
        }
    }
}

/// Extracts all edgelet instances and the per-frame junction graph.
pub fn extract_edgelets(labels: &LabelVideo, min_len: usize) -> (EdgeletSet, EdgeletGraph) {
    let per_frame: Vec<FrameFragments> = (0..labels.frames)
        .into_par_iter()
        .map(|t| frame_fragments(labels, t))
        .collect();

    let mut by_id: BTreeMap<EdgeletId, Vec<usize>> = BTreeMap::new();
    for (t, f) in per_frame.iter().enumerate() {
        for id in f.pairs.keys() {
            by_id.entry(*id).or_default().push(t);
        }
    }

    let mut edgelets = Vec::with_capacity(by_id.len());
    let mut slots = Vec::new();
    let mut index: BTreeMap<(usize, EdgeletId), usize> = BTreeMap::new();
    for (id, frames) in &by_id {
        let e = edgelets.len();
        edgelets.push(Edgelet {
            id: *id,
            first: slots.len(),
            lifetime: frames.len(),
        });
        for &t in frames {
            index.insert((t, *id), slots.len());
            slots.push((e, t, *id));
        }
    }

    let instances: Vec<EdgeletInstance> = slots
        .par_iter()
        .map(|&(e, t, id)| {
            let pairs = per_frame[t].pairs[&id].clone();
            EdgeletInstance {
                edgelet: e,
                frame: t,
                endpoints: endpoints(&pairs),
                short: pairs.len() < min_len,
                pairs,
            }
        })
        .collect();

    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); instances.len()];
    for (t, f) in per_frame.iter().enumerate() {
        for ids in &f.junctions {
            let members: Vec<usize> = ids.iter().map(|id| index[&(t, *id)]).collect();
            for &n in &members {
                for &m in &members {
                    if n != m {
                        neighbors[n].insert(m);
                    }
                }
            }
        }
    }

    let set = EdgeletSet {
        width: labels.width,
        height: labels.height,
        frames: labels.frames,
        edgelets,
        instances,
    };
    let graph = EdgeletGraph {
        neighbors: neighbors.into_iter().map(|s| s.into_iter().collect()).collect(),
    };
    (set, graph)
}

/// Fraction of each instance's pairs that straddle two different ground-truth IDs.
pub fn straddle_fractions(set: &EdgeletSet, gt: &LabelVideo) -> Result<Vec<f64>> {
    if (gt.width, gt.height, gt.frames) != (set.width, set.height, set.frames) {
        return Err(Error::Dimension(format!(
            "ground truth is {}x{}x{}, edgelets are {}x{}x{}",
            gt.width, gt.height, gt.frames, set.width, set.height, set.frames
        )));
    }
    Ok(set
        .instances
        .iter()
        .map(|inst| {
            let t = inst.frame;
            let hits = inst
                .pairs
                .iter()
                .filter(|&&(p, q)| gt.at(p.0, p.1, t) != gt.at(q.0, q.1, t))
                .count();
            hits as f64 / inst.len().max(1) as f64
        })
        .collect())
}

/// Instance is ON iff at least `rho` of its pairs straddle a ground-truth boundary.
pub fn label_edgelets(set: &EdgeletSet, gt: &LabelVideo, rho: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Parameter(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(straddle_fractions(set, gt)?
        .into_iter()
        .map(|f| f >= rho)
        .collect())
}

#[derive(Serialize)]
struct EdgeletDump<'a> {
    id: EdgeletId,
    frames: Vec<usize>,
    lengths: Vec<usize>,
    short: Vec<bool>,
    adjacency: Vec<&'a [usize]>,
}

/// Debug dump: one record per edgelet with its frames, lengths and neighbours.
pub fn to_json(set: &EdgeletSet, graph: &EdgeletGraph) -> String {
    let dump: Vec<EdgeletDump> = set
        .edgelets
        .iter()
        .enumerate()
        .map(|(e, rec)| {
            let inst = set.instances_of(e);
            EdgeletDump {
                id: rec.id,
                frames: inst.iter().map(|i| i.frame).collect(),
                lengths: inst.iter().map(|i| i.len()).collect(),
                short: inst.iter().map(|i| i.short).collect(),
                adjacency: (rec.first..rec.first + rec.lifetime)
                    .map(|n| graph.neighbors[n].as_slice())
                    .collect(),
            }
        })
        .collect();
    serde_json::to_string_pretty(&dump).expect("edgelet dump is serialisable")
}

pub fn write_json(path: &Path, set: &EdgeletSet, graph: &EdgeletGraph) -> Result<()> {
    crate::media::io::write_bytes(path, to_json(set, graph).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, f: impl Fn(usize, usize) -> u32) -> Vec<u32> {
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect()
    }

    #[test]
    fn straight_split() {
        let labels = LabelVideo::new(8, 10, 1, frame(8, 10, |x, _| (x >= 4) as u32)).unwrap();
        let (set, graph) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        assert_eq!(set.edgelets.len(), 1);
        assert_eq!(set.instances.len(), 1);
        let inst = &set.instances[0];
        assert_eq!(inst.len(), 10);
        assert_eq!(inst.endpoint_distance(), Some(10.0));
        assert!(!inst.short);
        assert!(graph.neighbors[0].is_empty());
        for &(p, q) in &inst.pairs {
            assert_eq!(labels.at(p.0, p.1, 0), 0);
            assert_eq!(labels.at(q.0, q.1, 0), 1);
        }
    }

    #[test]
    fn t_junction() {
        // top half region 0, bottom-left 1, bottom-right 2
        let labels = LabelVideo::new(
            8,
            8,
            1,
            frame(8, 8, |x, y| if y < 4 { 0 } else if x < 4 { 1 } else { 2 }),
        )
        .unwrap();
        let (set, graph) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        assert_eq!(set.instances.len(), 3);
        for n in 0..3 {
            let mut expect: Vec<usize> = (0..3).filter(|&m| m != n).collect();
            expect.sort();
            assert_eq!(graph.neighbors[n], expect);
        }
        assert_eq!(graph.pairs(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn single_region_has_no_edgelets() {
        let labels = LabelVideo::filled(5, 5, 3, 0);
        let (set, graph) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        assert!(set.instances.is_empty() && graph.neighbors.is_empty());
    }

    #[test]
    fn closed_curve_and_short_flag() {
        let labels =
            LabelVideo::new(6, 6, 1, frame(6, 6, |x, y| ((2..4).contains(&x) && (2..4).contains(&y)) as u32))
                .unwrap();
        let (set, _) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        assert_eq!(set.instances[0].len(), 8);
        assert_eq!(set.instances[0].endpoints, None);

        let (set, _) = extract_edgelets(&labels, 9);
        assert!(set.instances[0].short);
    }

    #[test]
    fn identity_is_stable_across_frames() {
        let mut data = frame(8, 6, |x, _| (x >= 3) as u32);
        data.extend(frame(8, 6, |x, _| (x >= 4) as u32));
        data.extend(frame(8, 6, |_, _| 0));
        let labels = LabelVideo::new(8, 6, 3, data).unwrap();
        let (set, _) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        assert_eq!(set.edgelets.len(), 1);
        assert_eq!(set.edgelets[0].lifetime, 2);
        assert_eq!(
            set.instances.iter().map(|i| i.frame).collect::<Vec<_>>(),
            vec![0, 1]
        );
    }

    #[test]
    fn labelling_threshold() {
        let labels = LabelVideo::new(4, 4, 1, frame(4, 4, |x, _| (x >= 2) as u32)).unwrap();
        let (set, _) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        let on = LabelVideo::new(4, 4, 1, frame(4, 4, |x, _| (x >= 2) as u32)).unwrap();
        let off = LabelVideo::filled(4, 4, 1, 7);
        let half = LabelVideo::new(4, 4, 1, frame(4, 4, |x, y| (x >= 2 && y < 2) as u32)).unwrap();
        assert_eq!(label_edgelets(&set, &on, 0.5).unwrap(), vec![true]);
        assert_eq!(label_edgelets(&set, &off, 0.5).unwrap(), vec![false]);
        assert_eq!(straddle_fractions(&set, &half).unwrap(), vec![0.5]);
        assert_eq!(label_edgelets(&set, &half, 0.5).unwrap(), vec![true]);
        let wrong = LabelVideo::filled(4, 5, 1, 0);
        assert!(matches!(label_edgelets(&set, &wrong, 0.5), Err(Error::Dimension(_))));
    }

    #[test]
    fn json_dump_lists_every_edgelet() {
        let labels = LabelVideo::new(4, 4, 1, frame(4, 4, |x, _| (x >= 2) as u32)).unwrap();
        let (set, graph) = extract_edgelets(&labels, DEFAULT_MIN_LEN);
        let v: serde_json::Value = serde_json::from_str(&to_json(&set, &graph)).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 1);
        assert_eq!(v[0]["lengths"][0], 4);
    }
}
