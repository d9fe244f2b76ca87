//! `key = value` run configuration.

use std::path::Path;

use crate::edgelet::{DEFAULT_MIN_LEN, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLDS;
use crate::flow::FlowParams;
use crate::infer::{BpParams, DEFAULT_WINDOW};
use crate::learn::ForestParams;
use crate::media::io::read_bytes;
use crate::segment::SegParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSource {
    /// Exact synthetic flow.
    Truth,
    /// Horn–Schunck estimate.
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub videos: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub flow_source: FlowSource,
    pub flow: FlowParams,
    pub geom_noise: f64,
    pub seg: SegParams,
    pub min_len: usize,
    pub rho: f64,
    pub forest: ForestParams,
    pub lambda: f64,
    pub window: usize,
    pub threshold: f64,
    pub bp: BpParams,
    pub folds: usize,
    pub thresholds: usize,
    pub ablation: bool,
    /// Gaussian noise added to unary probabilities in the ablation and MRF reports.
    pub unary_noise: f64,
    pub save_videos: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            videos: 10,
            width: 64,
            height: 64,
            frames: 30,
            flow_source: FlowSource::Truth,
            flow: FlowParams::default(),
            geom_noise: 0.2,
            seg: SegParams::default(),
            min_len: DEFAULT_MIN_LEN,
            rho: DEFAULT_RHO,
            forest: ForestParams {
                max_samples: Some(4000),
                ..ForestParams::default()
            },
            lambda: 1.0,
            window: DEFAULT_WINDOW,
            threshold: 0.5,
            bp: BpParams::default(),
            folds: 5,
            thresholds: DEFAULT_THRESHOLDS,
            ablation: true,
            unary_noise: 0.15,
            save_videos: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 33] = [
        "seed",
        "fleet.videos",
        "fleet.width",
        "fleet.height",
        "fleet.frames",
        "flow.source",
        "flow.alpha",
        "flow.iterations",
        "flow.levels",
        "flow.warps",
        "geom.noise",
        "seg.k",
        "seg.min_size",
        "seg.sigma",
        "seg.w_occl",
        "edgelet.min_len",
        "edgelet.rho",
        "forest.trees",
        "forest.mtry",
        "forest.max_depth",
        "forest.min_leaf",
        "forest.bootstrap_ratio",
        "infer.lambda",
        "infer.window",
        "infer.threshold",
        "infer.max_iters",
        "infer.damping",
        "infer.tol",
        "eval.folds",
        "eval.thresholds",
        "ablation.enabled",
        "ablation.unary_noise",
        "forest.max_samples",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "fleet.videos" => self.videos = parse(key, v)?,
            "fleet.width" => self.width = parse(key, v)?,
            "fleet.height" => self.height = parse(key, v)?,
            "fleet.frames" => self.frames = parse(key, v)?,
            "fleet.save_videos" => self.save_videos = parse_bool(key, v)?,
            "flow.source" => {
                self.flow_source = match v {
                    "truth" => FlowSource::Truth,
                    "estimated" => FlowSource::Estimated,
                    _ => return Err(Error::Parse(format!("flow.source: expected truth|estimated, got {v:?}"))),
                }
            }
            "flow.alpha" => self.flow.alpha = parse(key, v)?,
            "flow.iterations" => self.flow.iterations = parse(key, v)?,
            "flow.levels" => self.flow.levels = parse(key, v)?,
            "flow.warps" => self.flow.warps = parse(key, v)?,
            "geom.noise" => self.geom_noise = parse(key, v)?,
            "seg.k" => self.seg.k = parse(key, v)?,
            "seg.min_size" => self.seg.min_size = parse(key, v)?,
            "seg.sigma" => self.seg.sigma = parse(key, v)?,
            "seg.w_occl" => self.seg.w_occl = parse(key, v)?,
            "edgelet.min_len" => self.min_len = parse(key, v)?,
            "edgelet.rho" => self.rho = parse(key, v)?,
            "forest.trees" => self.forest.trees = parse(key, v)?,
            "forest.mtry" => self.forest.mtry = parse(key, v)?,
            "forest.max_depth" => self.forest.max_depth = parse(key, v)?,
            "forest.min_leaf" => self.forest.min_leaf = parse(key, v)?,
            "forest.bootstrap_ratio" => self.forest.bootstrap_ratio = parse(key, v)?,
            "forest.max_samples" => {
                self.forest.max_samples = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "infer.lambda" => self.lambda = parse(key, v)?,
            "infer.window" => self.window = parse(key, v)?,
            "infer.threshold" => self.threshold = parse(key, v)?,
            "infer.max_iters" => self.bp.max_iters = parse(key, v)?,
            "infer.damping" => self.bp.damping = parse(key, v)?,
            "infer.tol" => self.bp.tol = parse(key, v)?,
            "eval.folds" => self.folds = parse(key, v)?,
            "eval.thresholds" => self.thresholds = parse(key, v)?,
            "ablation.enabled" => self.ablation = parse_bool(key, v)?,
            "ablation.unary_noise" => self.unary_noise = parse(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Parse(format!("{} is not UTF-8", path.display())))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let source = match self.flow_source {
            FlowSource::Truth => "truth",
            FlowSource::Estimated => "estimated",
        };
        let values: Vec<String> = vec![
            self.seed.to_string(),
            self.videos.to_string(),
            self.width.to_string(),
            self.height.to_string(),
            self.frames.to_string(),
            source.to_string(),
            self.flow.alpha.to_string(),
            self.flow.iterations.to_string(),
            self.flow.levels.to_string(),
            self.flow.warps.to_string(),
            self.geom_noise.to_string(),
            self.seg.k.to_string(),
            self.seg.min_size.to_string(),
            self.seg.sigma.to_string(),
            self.seg.w_occl.to_string(),
            self.min_len.to_string(),
            self.rho.to_string(),
            self.forest.trees.to_string(),
            self.forest.mtry.to_string(),
            self.forest.max_depth.to_string(),
            self.forest.min_leaf.to_string(),
            self.forest.bootstrap_ratio.to_string(),
            self.lambda.to_string(),
            self.window.to_string(),
            self.threshold.to_string(),
            self.bp.max_iters.to_string(),
            self.bp.damping.to_string(),
            self.bp.tol.to_string(),
            self.folds.to_string(),
            self.thresholds.to_string(),
            self.ablation.to_string(),
            self.unary_noise.to_string(),
            self.forest.max_samples.map_or("none".into(), |m| m.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("fleet.save_videos = {}\n", self.save_videos));
        s
    }

    /// Checks every parameter group; all problems are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                problems.push(e.to_string());
            }
        };
        check(self.flow.validate());
        check(self.seg.validate());
        check(self.forest.validate());
        check(self.bp.validate());
        let mut require = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        require(self.videos >= 1, "fleet.videos must be >= 1".into());
        require(
            self.width >= 8 && self.height >= 8,
            format!("fleet size {}x{} is below 8x8", self.width, self.height),
        );
        require(self.frames >= 2, "fleet.frames must be >= 2".into());
        require((0.0..1.0).contains(&self.geom_noise), format!("geom.noise {} not in [0, 1)", self.geom_noise));
        require(self.min_len >= 1, "edgelet.min_len must be >= 1".into());
        require((0.0..=1.0).contains(&self.rho), format!("edgelet.rho {} not in [0, 1]", self.rho));
        require(self.lambda >= 0.0 && self.lambda.is_finite(), format!("infer.lambda {} must be >= 0", self.lambda));
        require(self.window >= 1, "infer.window must be >= 1".into());
        require(
            (0.0..=1.0).contains(&self.threshold),
            format!("infer.threshold {} not in [0, 1]", self.threshold),
        );
        require(
            self.folds >= 2 && self.folds <= self.videos,
            format!("eval.folds {} must lie in 2..={}", self.folds, self.videos),
        );
        require(self.thresholds >= 2, "eval.thresholds must be >= 2".into());
        require(
            self.unary_noise >= 0.0 && self.unary_noise.is_finite(),
            format!("ablation.unary_noise {} must be >= 0", self.unary_noise),
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.seed = 7;
        c.seg.k = 42.5;
        c.flow_source = FlowSource::Estimated;
        c.ablation = false;
        let mut back = PipelineConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_errors() {
        let mut c = PipelineConfig::default();
        c.apply_text("# header\nseg.k = 80 # inline\n\n").unwrap();
        assert_eq!(c.seg.k, 80.0);
        assert!(matches!(c.apply_text("nope = 1"), Err(Error::Parse(_))));
        assert!(matches!(c.apply_text("seg.k"), Err(Error::Parse(_))));
        assert!(matches!(c.apply_text("seg.k = abc"), Err(Error::Parse(_))));
    }

    #[test]
    fn validation_aggregates() {
        let mut c = PipelineConfig::default();
        c.seg.k = -1.0;
        c.window = 0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("k must be > 0") && msg.contains("infer.window"), "{msg}");
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
