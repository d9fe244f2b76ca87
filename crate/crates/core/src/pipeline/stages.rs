//! Single-stage operations on dataset directories, as exposed by the CLI.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::edgelet::{self, extract_edgelets, label_edgelets, EdgeletSet};
use crate::error::{Error, Result};
use crate::eval::{pr_curve, PrCurve, ScoredVideo};
use crate::features::{compute_features, FeatureSet, FeatureTable, FEATURE_DIM, FEATURE_NAMES};
use crate::flow::{estimate_sequence, FlowParams};
use crate::infer::{infer_frames, probability_splat, temporal_smooth, threshold_boundaries, BpParams};
use crate::learn::{balance, build_pairwise_dataset, pairwise_names, train_forest, ForestModel, ForestParams};
use crate::media::io::{
    read_bytes, read_flow_dir, read_frames, read_label_video, read_probability_video,
    write_bytes, write_flow_dir, write_label_video, write_pbm_dir, write_probability_video,
};
use crate::media::{Dataset, DatasetLayout, FlowDirection, LabelVideo};
use crate::segment::{boundary_coverage, merge_hierarchy, oversegment, SegParams};
use crate::synth::{dataset_from_render, perturb_geometric, render_scene, SceneSpec};

use super::VideoOutput;

/// Per-instance probabilities as written to `probabilities.csv`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilityTable {
    pub keys: Vec<(u32, u32, usize)>,
    pub unary: Vec<f64>,
    pub bp: Vec<f64>,
    pub smooth: Vec<f64>,
    pub gt: Vec<Option<bool>>,
}

pub fn probability_table(set: &EdgeletSet, o: &VideoOutput, gt: Option<&[bool]>) -> ProbabilityTable {
    ProbabilityTable {
        keys: set
            .instances
            .iter()
            .map(|i| {
                let id = set.edgelets[i.edgelet].id;
                (id.a, id.b, i.frame)
            })
            .collect(),
        unary: o.unary.clone(),
        bp: o.bp.clone(),
        smooth: o.smooth.clone(),
        gt: match gt {
            Some(g) => g.iter().map(|&b| Some(b)).collect(),
            None => vec![None; set.instances.len()],
        },
    }
}

impl ProbabilityTable {
    const HEADER: [&'static str; 7] = ["edgelet_a", "edgelet_b", "frame", "p_unary", "p_bp", "p_smooth", "gt_label"];

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(Self::HEADER).map_err(err)?;
        for i in 0..self.keys.len() {
            let (a, b, t) = self.keys[i];
            let gt = self.gt[i].map(|g| (g as u8).to_string()).unwrap_or_default();
            w.write_record([
                a.to_string(),
                b.to_string(),
                t.to_string(),
                self.unary[i].to_string(),
                self.bp[i].to_string(),
                self.smooth[i].to_string(),
                gt,
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        let header = r.headers().map_err(err)?.clone();
        if header.iter().ne(Self::HEADER) {
            return Err(Error::Parse(format!("unexpected probability header {header:?}")));
        }
        let mut t = ProbabilityTable::default();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Parse(format!("bad value {:?}", &rec[i])))
            };
            let u = |i: usize| -> Result<u64> {
                rec[i].parse().map_err(|_| Error::Parse(format!("bad integer {:?}", &rec[i])))
            };
            t.keys.push((u(0)? as u32, u(1)? as u32, u(2)? as usize));
            t.unary.push(f(3)?);
            t.bp.push(f(4)?);
            t.smooth.push(f(5)?);
            t.gt.push(match &rec[6] {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(Error::Parse(format!("bad gt_label {other:?}"))),
            });
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&read_bytes(path)?)
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(format!("{what} ({})", path.display())))
    }
}

/// Renders a scene into a dataset directory with exact flow and perturbed geometry.
pub fn synth(spec: &SceneSpec, geom_noise: f64, seed: u64, dir: &Path) -> Result<()> {
    let (frames, truth) = render_scene(spec)?;
    let geom = perturb_geometric(&truth.gt_geometric, geom_noise, seed)?;
    let ds = dataset_from_render(frames, &truth, geom);
    ds.save(&DatasetLayout::new(dir))?;
    write_bytes(&dir.join("scene.txt"), spec.to_text().as_bytes())
}

/// Replaces the dataset's flow with a Horn–Schunck estimate.
pub fn flow(dir: &Path, params: &FlowParams) -> Result<()> {
    let layout = DatasetLayout::new(dir);
    require(&layout.frames_dir(), "frames")?;
    let frames = read_frames(&layout.frames_dir())?;
    let (fwd, bwd) = estimate_sequence(&frames, params)?;
    write_flow_dir(&fwd, &layout.flow_fwd_dir())?;
    write_flow_dir(&bwd, &layout.flow_bwd_dir())
}

/// Segments the dataset's frames; `occlusion` is required when `w_occl > 0`.
pub fn segment(dir: &Path, params: &SegParams, occlusion: Option<&Path>, out: &Path) -> Result<LabelVideo> {
    let layout = DatasetLayout::new(dir);
    require(&layout.frames_dir(), "frames")?;
    let frames = read_frames(&layout.frames_dir())?;
    let occl = match occlusion {
        Some(p) => {
            require(p, "occlusion probability map")?;
            Some(read_probability_video(p)?)
        }
        None => None,
    };
    let labels = oversegment(&frames, occl.as_ref(), params)?;
    write_label_video(&labels, out)?;
    Ok(labels)
}

/// Writes coarser merge levels of `labels` as `labels_level{i}.svlm`
/// (`i` = 1..=levels).  Flow histograms are used when forward flow exists.
pub fn segment_levels(dir: &Path, labels: &LabelVideo, levels: usize, k_region: f64) -> Result<Vec<(PathBuf, usize)>> {
    let layout = DatasetLayout::new(dir);
    let frames = read_frames(&layout.frames_dir())?;
    let flow = if layout.flow_fwd_dir().is_dir() {
        read_flow_dir(&layout.flow_fwd_dir(), FlowDirection::Forward)?
    } else {
        Vec::new()
    };
    let hierarchy = merge_hierarchy(labels, &frames, &flow, levels, k_region)?;
    let mut paths = Vec::new();
    for (i, level) in hierarchy.iter().enumerate().skip(1) {
        let p = dir.join(format!("labels_level{i}.svlm"));
        write_label_video(level, &p)?;
        paths.push((p, level.region_count()));
    }
    Ok(paths)
}

fn load_labels(layout: &DatasetLayout) -> Result<LabelVideo> {
    require(&layout.labels(), "segmentation labels")?;
    read_label_video(&layout.labels())
}

/// Writes the edgelet debug dump.
pub fn edgelets(dir: &Path, min_len: usize) -> Result<usize> {
    let layout = DatasetLayout::new(dir);
    let labels = load_labels(&layout)?;
    let (set, graph) = extract_edgelets(&labels, min_len);
    edgelet::write_json(&layout.edgelets_json(), &set, &graph)?;
    Ok(set.instances.len())
}

/// Writes `features.csv`, with ground-truth labels when the dataset has them.
pub fn features(dir: &Path, min_len: usize, rho: f64) -> Result<usize> {
    let layout = DatasetLayout::new(dir);
    require(&layout.manifest(), "dataset manifest")?;
    let labels = load_labels(&layout)?;
    let ds = Dataset::load(&layout)?;
    let (set, _) = extract_edgelets(&labels, min_len);
    let rows = compute_features(&set, &labels, &ds.frames, &ds.flow_fwd, &ds.flow_bwd, &ds.geom)?;
    let gt = match &ds.gt_labels {
        Some(g) => Some(label_edgelets(&set, g, rho)?),
        None => None,
    };
    FeatureTable::new(&set, rows, gt.as_deref()).write(&layout.features_csv())?;
    Ok(set.instances.len())
}

fn feature_set_for_dim(dim: usize) -> Result<FeatureSet> {
    FeatureSet::ALL_SETS
        .into_iter()
        .find(|s| s.dims().len() == dim)
        .ok_or(Error::Schema {
            expected: FEATURE_DIM,
            found: dim,
        })
}

fn is_short(row: &[f64; FEATURE_DIM], min_len: usize) -> bool {
    ((row[0].exp() - 1.0).round() as usize) < min_len
}

fn labelled(table: &FeatureTable, path: &Path) -> Result<Vec<bool>> {
    table
        .labels
        .iter()
        .map(|l| l.ok_or_else(|| Error::Training(format!("{} has unlabelled rows", path.display()))))
        .collect()
}

/// Trains the unary forest from labelled feature CSVs.
pub fn train_unary(
    csvs: &[PathBuf],
    fset: FeatureSet,
    params: &ForestParams,
    min_len: usize,
    out: &Path,
) -> Result<ForestModel> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for p in csvs {
        require(p, "feature table")?;
        let table = FeatureTable::read(p)?;
        let labels = labelled(&table, p)?;
        for (row, l) in table.rows.iter().zip(labels) {
            if !is_short(row, min_len) {
                x.push(fset.project(row));
                y.push(l);
            }
        }
    }
    let keep = balance(&y, params.seed);
    let x: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<bool> = keep.iter().map(|&i| y[i]).collect();
    let names: Vec<String> = FEATURE_NAMES[fset.dims()].iter().map(|s| s.to_string()).collect();
    let model = train_forest(&x, &y, &names, params)?;
    model.save(out)?;
    Ok(model)
}

/// Rows of `features.csv` checked against the edgelets of `labels.svlm`.
fn aligned_table(layout: &DatasetLayout, set: &EdgeletSet) -> Result<FeatureTable> {
    require(&layout.features_csv(), "feature table")?;
    let table = FeatureTable::read(&layout.features_csv())?;
    let keys = FeatureTable::new(set, vec![[0.0; FEATURE_DIM]; set.instances.len()], None).keys;
    if table.keys != keys {
        return Err(Error::Dimension(format!(
            "{} does not match the edgelets of {}",
            layout.features_csv().display(),
            layout.labels().display()
        )));
    }
    Ok(table)
}

/// Trains the continuity forest; edgelet adjacency is recomputed from each
/// dataset's `labels.svlm`.
pub fn train_pairwise(
    dirs: &[PathBuf],
    fset: FeatureSet,
    params: &ForestParams,
    min_len: usize,
    out: &Path,
) -> Result<ForestModel> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for d in dirs {
        let layout = DatasetLayout::new(d);
        let labels = load_labels(&layout)?;
        let (set, graph) = extract_edgelets(&labels, min_len);
        let table = aligned_table(&layout, &set)?;
        let gt = labelled(&table, &layout.features_csv())?;
        let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| fset.project(r)).collect();
        let (px, py, _) = build_pairwise_dataset(&rows, &graph, &gt);
        x.extend(px);
        y.extend(py);
    }
    let keep = balance(&y, params.seed);
    let x: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
    let y: Vec<bool> = keep.iter().map(|&i| y[i]).collect();
    let names: Vec<String> = FEATURE_NAMES[fset.dims()].iter().map(|s| s.to_string()).collect();
    let model = train_forest(&x, &y, &pairwise_names(&names), params)?;
    model.save(out)?;
    Ok(model)
}

pub struct InferOptions {
    pub window: usize,
    pub lambda: f64,
    pub threshold: f64,
    pub bp: BpParams,
    pub min_len: usize,
}

/// Scores a dataset's edgelets and writes probabilities, boundary maps and
/// the per-pixel probability splat.  Returns the frames whose BP did not converge.
pub fn infer(dir: &Path, unary: &Path, pairwise: &Path, opts: &InferOptions) -> Result<Vec<usize>> {
    let layout = DatasetLayout::new(dir);
    require(unary, "unary model")?;
    require(pairwise, "pairwise model")?;
    let unary = ForestModel::load(unary)?;
    let pairwise = ForestModel::load(pairwise)?;
    let fset = feature_set_for_dim(unary.dim())?;
    if pairwise.dim() != 2 * unary.dim() {
        return Err(Error::Schema {
            expected: 2 * unary.dim(),
            found: pairwise.dim(),
        });
    }
    let labels = load_labels(&layout)?;
    let (set, graph) = extract_edgelets(&labels, opts.min_len);
    let table = aligned_table(&layout, &set)?;
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| fset.project(r)).collect();
    let pu = unary.predict_many(&rows)?;
    let pairs = graph.pairs();
    let px: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(n, m)| [rows[n].as_slice(), rows[m].as_slice()].concat())
        .collect();
    let pc = pairwise.predict_many(&px)?;
    let fi = infer_frames(&set, &graph, &pu, &pc, opts.lambda, &opts.bp)?;
    let smooth = temporal_smooth(&fi.marginals, &set, opts.window)?;
    let out = VideoOutput {
        unary: pu,
        bp: fi.marginals,
        smooth,
    };
    let mut probs = probability_table(&set, &out, None);
    probs.gt = table.labels;
    probs.write(&layout.probabilities_csv())?;
    write_pbm_dir(&threshold_boundaries(&set, &out.smooth, opts.threshold), &layout.boundaries_dir())?;
    write_probability_video(&probability_splat(&set, &out.smooth), &layout.occlusion_map())?;
    Ok(fi.unconverged_frames)
}

/// PR curve of the smoothed probabilities of several datasets; writes
/// `pr_curve.csv` and `summary.txt` to `out`.
pub fn eval(dirs: &[PathBuf], n_thresholds: usize, min_len: usize, out: &Path) -> Result<PrCurve> {
    let mut loaded = Vec::new();
    for d in dirs {
        let layout = DatasetLayout::new(d);
        require(&layout.probabilities_csv(), "inference output")?;
        require(&layout.gt_labels(), "ground-truth labels")?;
        let labels = load_labels(&layout)?;
        let (set, _) = extract_edgelets(&labels, min_len);
        let probs = ProbabilityTable::read(&layout.probabilities_csv())?;
        let keys = FeatureTable::new(&set, vec![[0.0; FEATURE_DIM]; set.instances.len()], None).keys;
        if probs.keys != keys {
            return Err(Error::Dimension(format!(
                "{} does not match the edgelets of {}",
                layout.probabilities_csv().display(),
                layout.labels().display()
            )));
        }
        let gt = read_label_video(&layout.gt_labels())?.boundary_masks();
        loaded.push((set, probs.smooth, gt));
    }
    let scored: Vec<ScoredVideo> = loaded
        .iter()
        .map(|(set, p, gt)| ScoredVideo { set, probs: p, gt })
        .collect();
    let curve = pr_curve(&scored, n_thresholds)?;
    let best = curve.best();
    write_bytes(&out.join("pr_curve.csv"), curve.to_csv().as_bytes())?;
    let mut s = String::new();
    let _ = writeln!(s, "datasets = {}", dirs.len());
    let _ = writeln!(s, "best_f1 = {}", best.f1);
    let _ = writeln!(s, "best_threshold = {}", best.threshold);
    let _ = writeln!(s, "best_precision = {}", best.precision);
    let _ = writeln!(s, "best_recall = {}", best.recall);
    write_bytes(&out.join("summary.txt"), s.as_bytes())?;
    Ok(curve)
}

/// Occlusion-aware re-segmentation driven by the inferred probability splat.
/// Returns ground-truth boundary coverage `(colour only, occlusion-aware)`.
pub fn occlusion_segment(dir: &Path, params: &SegParams) -> Result<(f64, f64)> {
    let layout = DatasetLayout::new(dir);
    require(&layout.occlusion_map(), "inferred occlusion map")?;
    let occl = read_probability_video(&layout.occlusion_map())?;
    let frames = read_frames(&layout.frames_dir())?;
    let aware = oversegment(&frames, Some(&occl), params)?;
    write_label_video(&aware, &dir.join("labels_occlusion.svlm"))?;
    let gt_path = layout.gt_labels();
    if !gt_path.exists() {
        return Ok((f64::NAN, f64::NAN));
    }
    let masks = read_label_video(&gt_path)?.boundary_masks();
    let plain = oversegment(&frames, None, &SegParams { w_occl: 0.0, ..*params })?;
    Ok((boundary_coverage(&plain, &masks), boundary_coverage(&aware, &masks)))
}
