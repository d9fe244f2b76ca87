//! End-to-end orchestration: synthetic fleet, cross-validated training,
//! inference, evaluation and ablations.

mod config;
pub mod stages;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{FlowSource, PipelineConfig};

use crate::edgelet::{self, extract_edgelets, label_edgelets, EdgeletGraph, EdgeletSet};
use crate::error::{Error, Result};
use crate::eval::{ablation_csv, kfold_split, pr_curve, AblationRow, PrCurve, PrPoint, ScoredVideo};
use crate::features::{compute_features, FeatureSet, FeatureTable, FEATURE_DIM, FEATURE_NAMES};
use crate::flow::estimate_sequence;
use crate::infer::{infer_frames, perturb_probabilities, probability_splat, temporal_smooth, threshold_boundaries};
use crate::learn::{
    balance, build_pairwise_dataset, oob_importance, pairwise_names, train_forest, ForestModel,
    ForestParams,
};
use crate::media::io::{write_bytes, write_label_video, write_pbm_dir, write_probability_video};
use crate::media::{BinaryMap, Dataset, DatasetLayout, LabelVideo};
use crate::segment::oversegment;
use crate::synth::{fleet_scene, perturb_geometric, render_scene, SceneSpec};

/// Stage seed derived from the root seed and a namespace.
pub fn derive_seed(root: u64, namespace: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in namespace.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ root.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything the learning stages need from one video.
#[derive(Debug, Clone)]
pub struct VideoData {
    pub name: String,
    pub dataset: Dataset,
    /// Ground-truth occlusion boundary maps.
    pub gt_maps: Vec<BinaryMap>,
    pub labels: LabelVideo,
    pub set: EdgeletSet,
    pub graph: EdgeletGraph,
    pub rows: Vec<[f64; FEATURE_DIM]>,
    pub gt: Vec<bool>,
}

impl VideoData {
    /// Segments, extracts edgelets and computes features for a dataset with
    /// ground-truth labels.
    pub fn from_dataset(name: String, dataset: Dataset, cfg: &PipelineConfig) -> Result<Self> {
        let gt_ids = dataset
            .gt_labels
            .clone()
            .ok_or_else(|| Error::MissingArtifact(format!("{name}: ground-truth labels")))?;
        let labels = oversegment(&dataset.frames, None, &cfg.seg)?;
        let (set, graph) = extract_edgelets(&labels, cfg.min_len);
        let gt = label_edgelets(&set, &gt_ids, cfg.rho)?;
        let rows = compute_features(
            &set,
            &labels,
            &dataset.frames,
            &dataset.flow_fwd,
            &dataset.flow_bwd,
            &dataset.geom,
        )?;
        Ok(VideoData {
            name,
            gt_maps: gt_ids.boundary_masks(),
            dataset,
            labels,
            set,
            graph,
            rows,
            gt,
        })
    }
}

pub fn fleet_spec(cfg: &PipelineConfig, index: usize) -> SceneSpec {
    let seed = derive_seed(cfg.seed, "scene").wrapping_add(index as u64);
    fleet_scene(seed, cfg.width, cfg.height, cfg.frames)
}

/// Renders fleet video `index` and runs the per-video stages.
pub fn prepare_video(cfg: &PipelineConfig, index: usize) -> Result<VideoData> {
    let spec = fleet_spec(cfg, index);
    let (frames, truth) = render_scene(&spec)?;
    let geom = perturb_geometric(
        &truth.gt_geometric,
        cfg.geom_noise,
        derive_seed(cfg.seed, "geom").wrapping_add(index as u64),
    )?;
    let (flow_fwd, flow_bwd) = match cfg.flow_source {
        FlowSource::Truth => (truth.gt_flow_fwd.clone(), truth.gt_flow_bwd.clone()),
        FlowSource::Estimated => estimate_sequence(&frames, &cfg.flow)?,
    };
    let dataset = Dataset {
        frames,
        flow_fwd,
        flow_bwd,
        geom,
        gt_labels: Some(truth.gt_object_ids.clone()),
    };
    VideoData::from_dataset(format!("video_{index:02}"), dataset, cfg)
}

pub fn prepare_fleet(cfg: &PipelineConfig) -> Result<Vec<VideoData>> {
    (0..cfg.videos)
        .into_par_iter()
        .map(|i| prepare_video(cfg, i))
        .collect()
}

/// Unary and pairwise forests for one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub unary: ForestModel,
    pub pairwise: ForestModel,
}

fn names_of(fset: FeatureSet) -> Vec<String> {
    FEATURE_NAMES[fset.dims()].iter().map(|s| s.to_string()).collect()
}

fn forest_params(cfg: &PipelineConfig, namespace: &str, fold: usize) -> ForestParams {
    ForestParams {
        seed: derive_seed(cfg.seed ^ cfg.forest.seed, namespace).wrapping_add(fold as u64 * 1_000_003),
        ..cfg.forest
    }
}

/// Trains both forests on `videos` using only the `fset` dimensions.
/// Short instances are excluded from unary training; OFF rows are
/// downsampled to at most three per ON row.
pub fn train_models(videos: &[&VideoData], fset: FeatureSet, cfg: &PipelineConfig, fold: usize) -> Result<Models> {
    let tag = format!("{}-{fold}", fset.name());
    let (ux, uy) = unary_training_rows(videos, fset, cfg, fold);
    let mut px = Vec::new();
    let mut py = Vec::new();
    for v in videos {
        let projected: Vec<Vec<f64>> = v.rows.iter().map(|r| fset.project(r)).collect();
        let (x, y, _) = build_pairwise_dataset(&projected, &v.graph, &v.gt);
        px.extend(x);
        py.extend(y);
    }
    let keep = balance(&py, derive_seed(cfg.seed, &format!("balance-pairwise-{tag}")));
    let px: Vec<Vec<f64>> = keep.iter().map(|&i| px[i].clone()).collect();
    let py: Vec<bool> = keep.iter().map(|&i| py[i]).collect();

    let names = names_of(fset);
    let unary = train_forest(&ux, &uy, &names, &forest_params(cfg, "forest-unary", fold))?;
    let pairwise = train_forest(
        &px,
        &py,
        &pairwise_names(&names),
        &forest_params(cfg, "forest-pairwise", fold),
    )?;
    Ok(Models { unary, pairwise })
}

/// Unary probability per instance and continuity probability per adjacent pair.
pub fn score_video(v: &VideoData, models: &Models, fset: FeatureSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let projected: Vec<Vec<f64>> = v.rows.iter().map(|r| fset.project(r)).collect();
    let unary = models.unary.predict_many(&projected)?;
    let (px, _, _) = build_pairwise_dataset(&projected, &v.graph, &v.gt);
    let pair = models.pairwise.predict_many(&px)?;
    Ok((unary, pair))
}

/// Out-of-fold scores for every video.
pub struct CrossValidation {
    pub unary: Vec<Vec<f64>>,
    pub pair: Vec<Vec<f64>>,
    pub fold_models: Vec<Models>,
}

pub fn cross_validate(
    videos: &[VideoData],
    folds: &[Vec<usize>],
    fset: FeatureSet,
    cfg: &PipelineConfig,
) -> Result<CrossValidation> {
    let mut unary = vec![Vec::new(); videos.len()];
    let mut pair = vec![Vec::new(); videos.len()];
    let mut fold_models = Vec::with_capacity(folds.len());
    for (k, test) in folds.iter().enumerate() {
        let train: Vec<&VideoData> = (0..videos.len())
            .filter(|i| !test.contains(i))
            .map(|i| &videos[i])
            .collect();
        let models = train_models(&train, fset, cfg, k)?;
        for &i in test {
            let (u, p) = score_video(&videos[i], &models, fset)?;
            unary[i] = u;
            pair[i] = p;
        }
        fold_models.push(models);
    }
    Ok(CrossValidation {
        unary,
        pair,
        fold_models,
    })
}

/// BP marginals, optionally from noise-perturbed unaries.
pub fn marginals(v: &VideoData, unary: &[f64], pair: &[f64], cfg: &PipelineConfig) -> Result<Vec<f64>> {
    Ok(infer_frames(&v.set, &v.graph, unary, pair, cfg.lambda, &cfg.bp)?.marginals)
}

pub fn noisy_unary(v_index: usize, unary: &[f64], cfg: &PipelineConfig) -> Result<Vec<f64>> {
    perturb_probabilities(
        unary,
        cfg.unary_noise,
        derive_seed(cfg.seed, "unary-noise").wrapping_add(v_index as u64),
    )
}

pub fn curve_for(videos: &[VideoData], probs: &[Vec<f64>], n_thresholds: usize) -> Result<PrCurve> {
    let scored: Vec<ScoredVideo> = videos
        .iter()
        .zip(probs)
        .map(|(v, p)| ScoredVideo {
            set: &v.set,
            probs: p,
            gt: &v.gt_maps,
        })
        .collect();
    pr_curve(&scored, n_thresholds)
}

/// Per-scene precision at recall 0.8 from noisy unaries, before and after BP.
#[derive(Debug, Clone, PartialEq)]
pub struct MrfRow {
    pub video: String,
    pub precision_unary: Option<f64>,
    pub precision_bp: Option<f64>,
}

pub const MRF_RECALL: f64 = 0.8;

/// Final per-instance probabilities of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoOutput {
    pub unary: Vec<f64>,
    pub bp: Vec<f64>,
    pub smooth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub curve: PrCurve,
    pub best: PrPoint,
    pub ablation: Vec<AblationRow>,
    pub mrf: Vec<MrfRow>,
    pub importance: Vec<f64>,
    pub outputs: Vec<VideoOutput>,
    pub videos: Vec<VideoData>,
}

struct Log {
    start: Instant,
    text: String,
}

impl Log {
    fn line(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.text, "[{:8.2}s] {}", self.start.elapsed().as_secs_f64(), msg.as_ref());
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into())
}

/// Runs the full pipeline and writes the run directory `out`.
pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let mut log = Log {
        start: Instant::now(),
        text: String::new(),
    };
    write_bytes(&out.join("config.txt"), cfg.to_text().as_bytes())?;

    let videos = prepare_fleet(cfg)?;
    let instances: usize = videos.iter().map(|v| v.set.instances.len()).sum();
    let on: usize = videos.iter().map(|v| v.gt.iter().filter(|&&b| b).count()).sum();
    log.line(format!("prepared {} videos, {instances} edgelet instances, {on} ON", videos.len()));

    let folds = kfold_split(videos.len(), cfg.folds, derive_seed(cfg.seed, "folds"))?;
    let sets: &[FeatureSet] = if cfg.ablation {
        &[FeatureSet::All, FeatureSet::AppFlow, FeatureSet::App]
    } else {
        &[FeatureSet::All]
    };

    let mut ablation = Vec::new();
    let mut main: Option<(CrossValidation, Vec<VideoOutput>, PrCurve)> = None;
    let mut mrf = Vec::new();
    for &fset in sets {
        let cv = cross_validate(&videos, &folds, fset, cfg)?;
        log.line(format!("cross-validated {}", fset.name()));

        let bp: Vec<Vec<f64>> = videos
            .iter()
            .enumerate()
            .map(|(i, v)| marginals(v, &cv.unary[i], &cv.pair[i], cfg))
            .collect::<Result<_>>()?;
        let mut noisy_bp = Vec::new();
        let mut noisy_raw = Vec::new();
        if cfg.ablation {
            for (i, v) in videos.iter().enumerate() {
                let u = noisy_unary(i, &cv.unary[i], cfg)?;
                noisy_bp.push(marginals(v, &u, &cv.pair[i], cfg)?);
                noisy_raw.push(u);
            }
        }
        for &window in &[1, cfg.window] {
            let smooth: Vec<Vec<f64>> = videos
                .iter()
                .zip(&bp)
                .map(|(v, p)| temporal_smooth(p, &v.set, window))
                .collect::<Result<_>>()?;
            let curve = curve_for(&videos, &smooth, cfg.thresholds)?;
            ablation.push(AblationRow {
                feature_set: fset.name().into(),
                window,
                unary_noise: 0.0,
                best_f1: curve.best().f1,
            });
            if cfg.ablation {
                let smooth: Vec<Vec<f64>> = videos
                    .iter()
                    .zip(&noisy_bp)
                    .map(|(v, p)| temporal_smooth(p, &v.set, window))
                    .collect::<Result<_>>()?;
                ablation.push(AblationRow {
                    feature_set: fset.name().into(),
                    window,
                    unary_noise: cfg.unary_noise,
                    best_f1: curve_for(&videos, &smooth, cfg.thresholds)?.best().f1,
                });
            }
            if fset == FeatureSet::All && window == cfg.window {
                let outputs = videos
                    .iter()
                    .enumerate()
                    .map(|(i, _)| VideoOutput {
                        unary: cv.unary[i].clone(),
                        bp: bp[i].clone(),
                        smooth: smooth[i].clone(),
                    })
                    .collect();
                main = Some((
                    CrossValidation {
                        unary: cv.unary.clone(),
                        pair: cv.pair.clone(),
                        fold_models: cv.fold_models.clone(),
                    },
                    outputs,
                    curve,
                ));
            }
        }
        if fset == FeatureSet::All && cfg.ablation {
            for (i, v) in videos.iter().enumerate() {
                let one = std::slice::from_ref(v);
                let before = curve_for(one, std::slice::from_ref(&noisy_raw[i]), cfg.thresholds)?;
                let after = curve_for(one, std::slice::from_ref(&noisy_bp[i]), cfg.thresholds)?;
                mrf.push(MrfRow {
                    video: v.name.clone(),
                    precision_unary: before.precision_at_recall(MRF_RECALL),
                    precision_bp: after.precision_at_recall(MRF_RECALL),
                });
            }
        }
    }
    let (cv, outputs, curve) = main.expect("ALL feature set is always evaluated");
    let best = curve.best();
    log.line(format!("best F1 {:.4} at threshold {}", best.f1, best.threshold));

    let all: Vec<&VideoData> = videos.iter().collect();
    let final_models = train_models(&all, FeatureSet::All, cfg, folds.len())?;
    let (ix, iy) = unary_training_rows(&all, FeatureSet::All, cfg, folds.len());
    let importance = oob_importance(&final_models.unary, &ix, &iy)?;
    log.line("trained final models");

    let models_dir = out.join("models");
    final_models.unary.save(&models_dir.join("unary.model"))?;
    final_models.pairwise.save(&models_dir.join("pairwise.model"))?;
    for (k, m) in cv.fold_models.iter().enumerate() {
        let dir = models_dir.join(format!("fold_{k}"));
        m.unary.save(&dir.join("unary.model"))?;
        m.pairwise.save(&dir.join("pairwise.model"))?;
    }

    if cfg.save_videos {
        for (v, o) in videos.iter().zip(&outputs) {
            save_video(v, o, cfg, &out.join("videos").join(&v.name))?;
        }
    }

    write_bytes(&out.join("pr_curve.csv"), curve.to_csv().as_bytes())?;
    write_bytes(&out.join("ablation.csv"), ablation_csv(&ablation).as_bytes())?;
    let mut mrf_csv = String::from("video,precision_unary,precision_bp\n");
    for r in &mrf {
        let _ = writeln!(mrf_csv, "{},{},{}", r.video, fmt_opt(r.precision_unary), fmt_opt(r.precision_bp));
    }
    write_bytes(&out.join("mrf.csv"), mrf_csv.as_bytes())?;
    let mut imp_csv = String::from("feature,importance\n");
    for (n, v) in FEATURE_NAMES.iter().zip(&importance) {
        let _ = writeln!(imp_csv, "{n},{v}");
    }
    write_bytes(&out.join("importance.csv"), imp_csv.as_bytes())?;

    let mut summary = String::new();
    let _ = writeln!(summary, "videos = {}", videos.len());
    let _ = writeln!(summary, "instances = {instances}");
    let _ = writeln!(summary, "on_instances = {on}");
    let _ = writeln!(summary, "folds = {}", folds.len());
    let _ = writeln!(summary, "window = {}", cfg.window);
    let _ = writeln!(summary, "best_f1 = {}", best.f1);
    let _ = writeln!(summary, "best_threshold = {}", best.threshold);
    let _ = writeln!(summary, "best_precision = {}", best.precision);
    let _ = writeln!(summary, "best_recall = {}", best.recall);
    for r in &ablation {
        let _ = writeln!(summary, "ablation {} T={} noise={} f1 = {}", r.feature_set, r.window, r.unary_noise, r.best_f1);
    }
    write_bytes(&out.join("summary.txt"), summary.as_bytes())?;
    log.line("done");
    write_bytes(&out.join("log.txt"), log.text.as_bytes())?;

    Ok(RunReport {
        curve,
        best,
        ablation,
        mrf,
        importance,
        outputs,
        videos,
    })
}

fn unary_training_rows(
    videos: &[&VideoData],
    fset: FeatureSet,
    cfg: &PipelineConfig,
    fold: usize,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let tag = format!("{}-{fold}", fset.name());
    let mut x = Vec::new();
    let mut y = Vec::new();
    for v in videos {
        for (i, inst) in v.set.instances.iter().enumerate() {
            if !inst.short {
                x.push(fset.project(&v.rows[i]));
                y.push(v.gt[i]);
            }
        }
    }
    let keep = balance(&y, derive_seed(cfg.seed, &format!("balance-unary-{tag}")));
    (
        keep.iter().map(|&i| x[i].clone()).collect(),
        keep.iter().map(|&i| y[i]).collect(),
    )
}

/// Writes the dataset and every per-video artifact under `dir`.
pub fn save_video(v: &VideoData, o: &VideoOutput, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let layout = DatasetLayout::new(dir);
    v.dataset.save(&layout)?;
    write_label_video(&v.labels, &layout.labels())?;
    edgelet::write_json(&layout.edgelets_json(), &v.set, &v.graph)?;
    FeatureTable::new(&v.set, v.rows.clone(), Some(&v.gt)).write(&layout.features_csv())?;
    stages::probability_table(&v.set, o, Some(&v.gt)).write(&layout.probabilities_csv())?;
    write_pbm_dir(&threshold_boundaries(&v.set, &o.smooth, cfg.threshold), &layout.boundaries_dir())?;
    write_probability_video(&probability_splat(&v.set, &o.smooth), &layout.occlusion_map())?;
    Ok(())
}
