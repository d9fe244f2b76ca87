//! Per-edgelet-instance feature vectors.
//!
//! Layout (26 dims): boundary length, smoothness, region colour difference,
//! five mean flow cues, geometric confidences of both sides, their per-class
//! difference, its absolute sum and the two argmax classes.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::edgelet::EdgeletSet;
use crate::error::{Error, Result};
use crate::media::io::{read_bytes, write_bytes};
use crate::media::{
    lab_distance, FlowField, FrameSequence, GeometricContext, GrayImage, LabImage, LabelVideo,
    GEOM_CLASSES,
};

pub const FEATURE_DIM: usize = 26;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "length",
    "smoothness",
    "color_diff",
    "f_pc",
    "f_tg",
    "f_mag",
    "f_rc",
    "f_rc_theta",
    "gconf_a_sky",
    "gconf_a_ground",
    "gconf_a_solid",
    "gconf_a_porous",
    "gconf_a_movable",
    "gconf_b_sky",
    "gconf_b_ground",
    "gconf_b_solid",
    "gconf_b_porous",
    "gconf_b_movable",
    "gdiff_sky",
    "gdiff_ground",
    "gdiff_solid",
    "gdiff_porous",
    "gdiff_movable",
    "gdsum",
    "argmax_a",
    "argmax_b",
];

/// Guard below which a flow vector has no defined direction.
pub const ANGLE_EPS: f64 = 1e-6;

/// Frames on either side of an instance used for region mean colours.
const COLOR_WINDOW: usize = 2;

/// Feature subsets used in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    App,
    AppFlow,
    All,
}

impl FeatureSet {
    pub const ALL_SETS: [FeatureSet; 3] = [FeatureSet::App, FeatureSet::AppFlow, FeatureSet::All];

    pub fn dims(self) -> std::ops::Range<usize> {
        match self {
            FeatureSet::App => 0..3,
            FeatureSet::AppFlow => 0..8,
            FeatureSet::All => 0..FEATURE_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::App => "App",
            FeatureSet::AppFlow => "App+Flow",
            FeatureSet::All => "ALL",
        }
    }

    pub fn project(self, row: &[f64]) -> Vec<f64> {
        row[self.dims()].to_vec()
    }
}

/// `|I_t(x) − I_{t+1}(x + F(x))|`, bilinear with border clamping.
pub fn photo_consistency(i_t: &GrayImage, i_t1: &GrayImage, fwd: &FlowField, x: usize, y: usize) -> f64 {
    let (u, v) = fwd.get(x, y);
    (i_t.get(x, y) - i_t1.sample_bilinear(x as f64 + u, y as f64 + v)).abs()
}

fn central_diff(
    flow: &FlowField,
    x: usize,
    y: usize,
    comp: usize,
) -> (f64, f64) {
    let (w, h) = (flow.width, flow.height);
    let g = |x: usize, y: usize| flow.data[y * w + x][comp] as f64;
    let dx = if w == 1 {
        0.0
    } else if x == 0 {
        g(1, y) - g(0, y)
    } else if x == w - 1 {
        g(x, y) - g(x - 1, y)
    } else {
        (g(x + 1, y) - g(x - 1, y)) / 2.0
    };
    let dy = if h == 1 {
        0.0
    } else if y == 0 {
        g(x, 1) - g(x, 0)
    } else if y == h - 1 {
        g(x, y) - g(x, y - 1)
    } else {
        (g(x, y + 1) - g(x, y - 1)) / 2.0
    };
    (dx, dy)
}

/// `(‖∇u‖, ‖∇v‖)` with central differences, one-sided at the border.
pub fn flow_gradient(fwd: &FlowField, x: usize, y: usize) -> (f64, f64) {
    let (ux, uy) = central_diff(fwd, x, y, 0);
    let (vx, vy) = central_diff(fwd, x, y, 1);
    (ux.hypot(uy), vx.hypot(vy))
}

/// Population variance of `‖F‖` over the 3×3 window, clipped at the border.
pub fn flow_mag_variance(fwd: &FlowField, x: usize, y: usize) -> f64 {
    let mut vals = [0.0; 9];
    let mut n = 0;
    for yy in y.saturating_sub(1)..=(y + 1).min(fwd.height - 1) {
        for xx in x.saturating_sub(1)..=(x + 1).min(fwd.width - 1) {
            vals[n] = fwd.magnitude(xx, yy);
            n += 1;
        }
    }
    // centred on the first sample so a constant window gives exactly 0
    let vals = &vals[..n];
    let shift = vals[0];
    let mean = vals.iter().map(|m| m - shift).sum::<f64>() / n as f64;
    vals.iter().map(|m| (m - shift - mean).powi(2)).sum::<f64>() / n as f64
}

fn forward_target(fwd: &FlowField, x: usize, y: usize) -> (usize, usize) {
    let (u, v) = fwd.get(x, y);
    let tx = (x as f64 + u).round().clamp(0.0, (fwd.width - 1) as f64) as usize;
    let ty = (y as f64 + v).round().clamp(0.0, (fwd.height - 1) as f64) as usize;
    (tx, ty)
}

/// `‖x − (x'_F + F_bwd(x'_F))‖` with `x'_F = round(x + F_fwd(x))` clamped.
pub fn reverse_flow_constancy(fwd: &FlowField, bwd: &FlowField, x: usize, y: usize) -> f64 {
    let (tx, ty) = forward_target(fwd, x, y);
    let (bu, bv) = bwd.get(tx, ty);
    (x as f64 - (tx as f64 + bu)).hypot(y as f64 - (ty as f64 + bv))
}

/// `|π − arccos(cos θ)|` between `F_fwd(x)` and `F_bwd(x'_F)`; 0 if either is below [`ANGLE_EPS`].
pub fn reverse_flow_angle(fwd: &FlowField, bwd: &FlowField, x: usize, y: usize) -> f64 {
    let (tx, ty) = forward_target(fwd, x, y);
    let (fu, fv) = fwd.get(x, y);
    let (bu, bv) = bwd.get(tx, ty);
    let (nf, nb) = (fu.hypot(fv), bu.hypot(bv));
    if nf < ANGLE_EPS || nb < ANGLE_EPS {
        return 0.0;
    }
    let cos = ((fu * bu + fv * bv) / (nf * nb)).clamp(-1.0, 1.0);
    (std::f64::consts::PI - cos.acos()).abs()
}

/// Per-pixel maps of the five flow cues for one frame pair.
struct FlowCueMaps {
    width: usize,
    maps: Vec<[f64; 5]>,
}

fn flow_cue_maps(i_t: &GrayImage, i_t1: &GrayImage, fwd: &FlowField, bwd: &FlowField) -> FlowCueMaps {
    let (w, h) = (fwd.width, fwd.height);
    let maps = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (gx, gy) = flow_gradient(fwd, x, y);
            [
                photo_consistency(i_t, i_t1, fwd, x, y),
                gx.hypot(gy),
                flow_mag_variance(fwd, x, y),
                reverse_flow_constancy(fwd, bwd, x, y),
                reverse_flow_angle(fwd, bwd, x, y),
            ]
        })
        .collect();
    FlowCueMaps { width: w, maps }
}

/// Per-frame, per-region running sums.
type RegionSums<const N: usize> = HashMap<u32, ([f64; N], usize)>;

fn region_sums<const N: usize>(
    labels: &LabelVideo,
    t: usize,
    value: impl Fn(usize) -> [f64; N],
) -> RegionSums<N> {
    let mut out: RegionSums<N> = HashMap::new();
    for (i, &l) in labels.frame(t).iter().enumerate() {
        let e = out.entry(l).or_insert(([0.0; N], 0));
        let v = value(i);
        for k in 0..N {
            e.0[k] += v[k];
        }
        e.1 += 1;
    }
    out
}

fn mean_of<const N: usize>(sums: &[&RegionSums<N>], region: u32) -> [f64; N] {
    let mut acc = [0.0; N];
    let mut n = 0;
    for s in sums {
        if let Some((v, c)) = s.get(&region) {
            for k in 0..N {
                acc[k] += v[k];
            }
            n += c;
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|v| *v /= n as f64);
    }
    acc
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Geometric features (dims 8..26) from per-side mean confidences.
pub fn geometric_features(side_a: &[f64; GEOM_CLASSES], side_b: &[f64; GEOM_CLASSES]) -> [f64; 18] {
    let mut out = [0.0; 18];
    out[..5].copy_from_slice(side_a);
    out[5..10].copy_from_slice(side_b);
    let mut sum = 0.0;
    for c in 0..GEOM_CLASSES {
        let d = side_a[c] - side_b[c];
        out[10 + c] = d;
        sum += d.abs();
    }
    out[15] = sum;
    out[16] = argmax(side_a) as f64;
    out[17] = argmax(side_b) as f64;
    out
}

/// `pairs / max(1, endpoint distance)`; closed curves use `pairs`.
pub fn smoothness(pairs: usize, endpoint_distance: Option<f64>) -> f64 {
    match endpoint_distance {
        Some(d) => pairs as f64 / d.max(1.0),
        None => pairs as f64,
    }
}

/// Features for every instance of `set`, in instance order.
///
/// `flow_fwd[t]` / `flow_bwd[t]` belong to the pair `(t, t+1)`; instances in
/// the last frame use the final pair.
pub fn compute_features(
    set: &EdgeletSet,
    labels: &LabelVideo,
    frames: &FrameSequence,
    flow_fwd: &[FlowField],
    flow_bwd: &[FlowField],
    geom: &GeometricContext,
) -> Result<Vec<[f64; FEATURE_DIM]>> {
    let n = labels.frames;
    if frames.len() != n || geom.frames != n {
        return Err(Error::Dimension(format!(
            "labels have {n} frames, video {} and geometry {}",
            frames.len(),
            geom.frames
        )));
    }
    for (name, flows) in [("forward", flow_fwd), ("backward", flow_bwd)] {
        if flows.len() + 1 < n {
            return Err(Error::MissingArtifact(format!(
                "{name} flow for frame pair {} -> {}",
                flows.len(),
                flows.len() + 1
            )));
        }
        if flows.iter().any(|f| (f.width, f.height) != (labels.width, labels.height)) {
            return Err(Error::Dimension(format!("{name} flow size differs from labels")));
        }
    }
    if n < 2 {
        return Err(Error::MissingArtifact("at least one frame pair is required".into()));
    }

    let grays: Vec<GrayImage> = frames
        .frames
        .par_iter()
        .map(|f| f.to_gray().scaled(1.0 / 255.0))
        .collect();
    let cues: Vec<FlowCueMaps> = (0..n - 1)
        .into_par_iter()
        .map(|t| flow_cue_maps(&grays[t], &grays[t + 1], &flow_fwd[t], &flow_bwd[t]))
        .collect();
    let lab_sums: Vec<RegionSums<3>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let lab = LabImage::from_rgb(&frames.frames[t]);
            region_sums(labels, t, |i| lab.data[i])
        })
        .collect();
    let plane = labels.width * labels.height;
    let geom_sums: Vec<RegionSums<GEOM_CLASSES>> = (0..n)
        .into_par_iter()
        .map(|t| region_sums(labels, t, |i| geom.data[t * plane + i].map(f64::from)))
        .collect();

    Ok(set
        .instances
        .par_iter()
        .map(|inst| {
            let id = set.edgelets[inst.edgelet].id;
            let t = inst.frame;
            let mut row = [0.0; FEATURE_DIM];
            row[0] = (1.0 + inst.len() as f64).ln();
            row[1] = smoothness(inst.len(), inst.endpoint_distance());

            let lo = t.saturating_sub(COLOR_WINDOW);
            let hi = (t + COLOR_WINDOW).min(n - 1);
            let window: Vec<&RegionSums<3>> = lab_sums[lo..=hi].iter().collect();
            row[2] = lab_distance(&mean_of(&window, id.a), &mean_of(&window, id.b));

            let maps = &cues[t.min(n - 2)];
            let mut acc = [0.0; 5];
            for &(p, q) in &inst.pairs {
                for (x, y) in [p, q] {
                    let c = &maps.maps[y * maps.width + x];
                    for k in 0..5 {
                        acc[k] += c[k];
                    }
                }
            }
            let samples = (2 * inst.len()).max(1) as f64;
            for k in 0..5 {
                row[3 + k] = acc[k] / samples;
            }

            let gs = [&geom_sums[t]];
            let geo = geometric_features(&mean_of(&gs, id.a), &mean_of(&gs, id.b));
            row[8..].copy_from_slice(&geo);
            row
        })
        .collect())
}

/// Feature rows with their instance keys and optional ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<[f64; FEATURE_DIM]>,
    /// `(edgelet_a, edgelet_b, frame)` per row.
    pub keys: Vec<(u32, u32, usize)>,
    pub labels: Vec<Option<bool>>,
}

impl FeatureTable {
    pub fn new(set: &EdgeletSet, rows: Vec<[f64; FEATURE_DIM]>, labels: Option<&[bool]>) -> Self {
        let keys = set
            .instances
            .iter()
            .map(|i| {
                let id = set.edgelets[i.edgelet].id;
                (id.a, id.b, i.frame)
            })
            .collect();
        let labels = match labels {
            Some(l) => l.iter().map(|&b| Some(b)).collect(),
            None => vec![None; rows.len()],
        };
        FeatureTable { rows, keys, labels }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
        header.extend(["edgelet_a", "edgelet_b", "frame", "gt_label"]);
        w.write_record(&header).map_err(csv_err)?;
        for ((row, key), label) in self.rows.iter().zip(&self.keys).zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(key.0.to_string());
            rec.push(key.1.to_string());
            rec.push(key.2.to_string());
            rec.push(match label {
                Some(b) => (*b as u8).to_string(),
                None => String::new(),
            });
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() != FEATURE_DIM + 4 {
            return Err(Error::Schema {
                expected: FEATURE_DIM,
                found: header.len().saturating_sub(4),
            });
        }
        let mut table = FeatureTable::default();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number {:?} in column {i}", &rec[i])))
            };
            let mut row = [0.0; FEATURE_DIM];
            for (i, v) in row.iter_mut().enumerate() {
                *v = num(i)?;
            }
            let int = |i: usize| -> Result<u64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad integer {:?} in column {i}", &rec[i])))
            };
            table.rows.push(row);
            table.keys.push((
                int(FEATURE_DIM)? as u32,
                int(FEATURE_DIM + 1)? as u32,
                int(FEATURE_DIM + 2)? as usize,
            ));
            table.labels.push(match &rec[FEATURE_DIM + 3] {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(Error::Parse(format!("bad gt_label {other:?}"))),
            });
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&read_bytes(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::FlowDirection;

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> FlowField {
        let mut out = FlowField::zeros(w, h, FlowDirection::Forward);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = f(x, y);
                out.set(x, y, u, v);
            }
        }
        out
    }

    #[test]
    fn smoothness_cases() {
        assert_eq!(smoothness(10, Some(10.0)), 1.0);
        assert_eq!(smoothness(7, None), 7.0);
        assert_eq!(smoothness(3, Some(0.0)), 3.0);
    }

    #[test]
    fn geometric_cases() {
        let sky = [1.0, 0.0, 0.0, 0.0, 0.0];
        let ground = [0.0, 1.0, 0.0, 0.0, 0.0];
        let g = geometric_features(&sky, &sky);
        assert!(g[10..16].iter().all(|&v| v == 0.0));
        assert_eq!((g[16], g[17]), (0.0, 0.0));
        assert_eq!(geometric_features(&sky, &ground)[15], 2.0);
        let u = [0.2; 5];
        assert_eq!(geometric_features(&u, &u)[16], 0.0);
    }

    #[test]
    fn magnitude_variance_window() {
        let f = field(5, 5, |x, y| if (x, y) == (2, 2) { (9.0, 0.0) } else { (0.0, 0.0) });
        assert!((flow_mag_variance(&f, 2, 2) - 8.0).abs() < 1e-12);
        let g = field(5, 5, |x, y| if (x, y) == (2, 2) { (27.0, 0.0) } else { (0.0, 0.0) });
        assert!((flow_mag_variance(&g, 2, 2) - 72.0).abs() < 1e-9);
        let c = field(5, 5, |_, _| (1.5, -0.5));
        assert_eq!(flow_mag_variance(&c, 2, 2), 0.0);
    }

    #[test]
    fn feature_set_dims() {
        assert_eq!(FeatureSet::App.dims().len(), 3);
        assert_eq!(FeatureSet::AppFlow.dims().len(), 8);
        assert_eq!(FeatureSet::All.dims().len(), FEATURE_DIM);
    }

    #[test]
    fn csv_round_trip() {
        let mut row = [0.0; FEATURE_DIM];
        row[0] = 0.1 + 0.2;
        row[7] = std::f64::consts::PI;
        let table = FeatureTable {
            rows: vec![row, [1.5; FEATURE_DIM]],
            keys: vec![(0, 3, 1), (2, 9, 4)],
            labels: vec![Some(true), None],
        };
        let bytes = table.to_csv().unwrap();
        assert_eq!(FeatureTable::from_csv(&bytes).unwrap(), table);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("length,smoothness,color_diff"));
        assert!(text.lines().next().unwrap().ends_with("edgelet_a,edgelet_b,frame,gt_label"));
    }
}
