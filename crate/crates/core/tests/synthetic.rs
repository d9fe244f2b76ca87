//! Checks of features and segmentation against scenes whose ground truth is
//! known exactly.

use std::process::Command;

use occlusionbound::edgelet::extract_edgelets;
use occlusionbound::features::{compute_features, photo_consistency};
use occlusionbound::media::{GrayImage, ProbabilityVideo};
use occlusionbound::pipeline::{prepare_video, PipelineConfig};
use occlusionbound::segment::{boundary_coverage, oversegment, SegParams};
use occlusionbound::synth::{
    fleet_scene, low_contrast_scene, render_scene, BackgroundSpec, ObjectSpec, SceneSpec, Shape, FIRST_OBJECT_LAYER,
};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// (f_PC on pixels whose forward target shows the same surface, f_PC on
/// pixels whose target is covered by another surface)
fn photo_consistency_split(spec: &SceneSpec) -> (Vec<f64>, Vec<f64>) {
    let (frames, truth) = render_scene(spec).unwrap();
    let gray: Vec<GrayImage> = frames.frames.iter().map(|f| f.to_gray()).collect();
    let ids = &truth.gt_object_ids;
    let (mut kept, mut covered) = (Vec::new(), Vec::new());
    for t in 0..frames.len() - 1 {
        let f = &truth.gt_flow_fwd[t];
        for y in 0..spec.height {
            for x in 0..spec.width {
                let (u, v) = f.get(x, y);
                let (tx, ty) = (x as f64 + u, y as f64 + v);
                if tx < 0.0 || ty < 0.0 || tx > (spec.width - 1) as f64 || ty > (spec.height - 1) as f64 {
                    continue;
                }
                let pc = photo_consistency(&gray[t], &gray[t + 1], f, x, y);
                if ids.at(tx as usize, ty as usize, t + 1) == ids.at(x, y, t) {
                    kept.push(pc);
                } else {
                    covered.push(pc);
                }
            }
        }
    }
    (kept, covered)
}

#[test]
fn exact_flow_is_photo_consistent() {
    for seed in 0..3 {
        let (kept, covered) = photo_consistency_split(&fleet_scene(seed, 64, 64, 6));
        let worst = kept.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-6, "seed {seed}: f_PC {worst}");
        assert!(!covered.is_empty());
        assert!(mean(&covered) > mean(&kept), "seed {seed}");
    }
}

fn rectangle_scene() -> SceneSpec {
    SceneSpec {
        width: 48,
        height: 40,
        frame_count: 6,
        background: BackgroundSpec::default_for(40),
        objects: vec![ObjectSpec {
            shape: Shape::Rectangle,
            position: (8, 14),
            size: (12, 10),
            velocity: (2, 0),
            depth: 0,
            color: [220, 40, 40],
            texture_seed: 3,
            stripe: None,
        }],
        camera: (0, 0),
        texture_amplitude: 16.0,
        seed: 4,
    }
}

#[test]
fn magnitude_variance_peaks_on_moving_outline() {
    let spec = rectangle_scene();
    let (frames, truth) = render_scene(&spec).unwrap();
    let labels = &truth.gt_object_ids;
    let (set, _) = extract_edgelets(labels, 1);
    let rows = compute_features(&set, labels, &frames, &truth.gt_flow_fwd, &truth.gt_flow_bwd, &truth.gt_geometric)
        .unwrap();
    let (mut outline, mut internal) = (Vec::new(), Vec::new());
    for (i, row) in rows.iter().enumerate() {
        let id = set.id_of(i);
        if id.a == FIRST_OBJECT_LAYER || id.b == FIRST_OBJECT_LAYER {
            outline.push(row[5]);
        } else {
            internal.push(row[5]);
        }
    }
    assert!(!outline.is_empty() && !internal.is_empty());
    assert!(mean(&outline) > mean(&internal), "{} vs {}", mean(&outline), mean(&internal));
}

#[test]
fn static_scene_has_no_flow_cues() {
    let mut spec = rectangle_scene();
    spec.objects[0].velocity = (0, 0);
    let (frames, truth) = render_scene(&spec).unwrap();
    let labels = &truth.gt_object_ids;
    let (set, _) = extract_edgelets(labels, 1);
    let rows = compute_features(&set, labels, &frames, &truth.gt_flow_fwd, &truth.gt_flow_bwd, &truth.gt_geometric)
        .unwrap();
    assert!(rows.iter().all(|r| r[3..8].iter().all(|&v| v == 0.0)));
}

#[test]
fn occlusion_edgelets_dominate_on_cues() {
    let mut cfg = PipelineConfig::default();
    cfg.geom_noise = 0.0;
    cfg.frames = 10;
    for index in 0..2 {
        let v = prepare_video(&cfg, index).unwrap();
        for dim in [3usize, 5, 23] {
            let (on, off): (Vec<_>, Vec<_>) = v.rows.iter().zip(&v.gt).partition(|(_, &g)| g);
            let on: Vec<f64> = on.iter().map(|(r, _)| r[dim]).collect();
            let off: Vec<f64> = off.iter().map(|(r, _)| r[dim]).collect();
            assert!(mean(&on) > mean(&off), "video {index} dim {dim}: {} vs {}", mean(&on), mean(&off));
        }
    }
}

#[test]
fn occlusion_term_recovers_low_contrast_edges() {
    for seed in 0..3 {
        let (frames, truth) = render_scene(&low_contrast_scene(seed, 64, 64, 12)).unwrap();
        let masks = &truth.occlusion_mask;
        let o = ProbabilityVideo {
            width: 64,
            height: 64,
            frames: masks.len(),
            data: masks.iter().flat_map(|m| m.data.iter().map(|&b| b as u8 as f32)).collect(),
        };
        let plain = oversegment(&frames, None, &SegParams::default()).unwrap();
        let aware = oversegment(&frames, Some(&o), &SegParams { w_occl: 0.25, ..SegParams::default() }).unwrap();
        let (c0, c1) = (boundary_coverage(&plain, masks), boundary_coverage(&aware, masks));
        assert!(c1 >= 0.9, "seed {seed}: aware {c1}");
        assert!(c0 < 0.5, "seed {seed}: plain {c0}");
    }
}

#[test]
fn eval_without_inference_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("v");
    let bin = env!("CARGO_BIN_EXE_occlusionbound");
    let ok = Command::new(bin)
        .args(["synth", "--out"])
        .arg(&ds)
        .args(["--frames", "4", "--width", "32", "--height", "32"])
        .status()
        .unwrap();
    assert!(ok.success());
    let out = Command::new(bin)
        .arg("eval")
        .arg("--dataset")
        .arg(&ds)
        .arg("--out")
        .arg(dir.path().join("curve.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
