//! On-disk dataset directory layout.
//!
//! ```text
//! <root>/
//!   manifest.txt          width=, height=, frames=
//!   frames/frame_%05d.ppm
//!   flow_fwd/frame_%05d.flo   t -> t+1, one per consecutive pair
//!   flow_bwd/frame_%05d.flo   t+1 -> t
//!   geom.gcm1             geometric-context confidences
//!   gt_labels.svlm        ground-truth object/layer IDs
//!   labels.svlm           over-segmentation
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::media::io::{self, read_bytes, write_bytes};
use crate::media::{FlowDirection, FlowField, FrameSequence, GeometricContext, LabelVideo};

#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetLayout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }
    pub fn frames_dir(&self) -> PathBuf {
        self.root.join("frames")
    }
    pub fn flow_fwd_dir(&self) -> PathBuf {
        self.root.join("flow_fwd")
    }
    pub fn flow_bwd_dir(&self) -> PathBuf {
        self.root.join("flow_bwd")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.svlm")
    }
    pub fn geom(&self) -> PathBuf {
        self.root.join("geom.gcm1")
    }
    pub fn gt_labels(&self) -> PathBuf {
        self.root.join("gt_labels.svlm")
    }
    pub fn edgelets_json(&self) -> PathBuf {
        self.root.join("edgelets.json")
    }
    pub fn features_csv(&self) -> PathBuf {
        self.root.join("features.csv")
    }
    pub fn probabilities_csv(&self) -> PathBuf {
        self.root.join("probabilities.csv")
    }
    pub fn boundaries_dir(&self) -> PathBuf {
        self.root.join("boundaries")
    }
    pub fn occlusion_map(&self) -> PathBuf {
        self.root.join("occlusion.gcm1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "width={}", self.width).unwrap();
        writeln!(s, "height={}", self.height).unwrap();
        writeln!(s, "frames={}", self.frames).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut w, mut h, mut f) = (None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("manifest line without '=': {line}")))?;
            let v: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("manifest value not an integer: {line}")))?;
            match k.trim() {
                "width" => w = Some(v),
                "height" => h = Some(v),
                "frames" => f = Some(v),
                _ => {}
            }
        }
        match (w, h, f) {
            (Some(width), Some(height), Some(frames)) => Ok(Manifest {
                width,
                height,
                frames,
            }),
            _ => Err(Error::Parse("manifest needs width, height and frames".into())),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        Manifest::parse(&String::from_utf8_lossy(&bytes))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }
}

/// Everything a detector run consumes for one video.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: FrameSequence,
    pub flow_fwd: Vec<FlowField>,
    pub flow_bwd: Vec<FlowField>,
    pub geom: GeometricContext,
    pub gt_labels: Option<LabelVideo>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let (w, h, n) = (self.frames.width, self.frames.height, self.frames.len());
        if self.flow_fwd.len() != n - 1 || self.flow_bwd.len() != n - 1 {
            return Err(Error::Dimension(format!(
                "{n} frames need {} flow fields per direction, found {} forward / {} backward",
                n - 1,
                self.flow_fwd.len(),
                self.flow_bwd.len()
            )));
        }
        for f in self.flow_fwd.iter().chain(&self.flow_bwd) {
            if f.width != w || f.height != h {
                return Err(Error::Dimension(format!(
                    "flow field {}x{} does not match frames {w}x{h}",
                    f.width, f.height
                )));
            }
        }
        if (self.geom.width, self.geom.height, self.geom.frames) != (w, h, n) {
            return Err(Error::Dimension("geometric context does not match frames".into()));
        }
        if let Some(gt) = &self.gt_labels {
            if (gt.width, gt.height, gt.frames) != (w, h, n) {
                return Err(Error::Dimension("ground-truth labels do not match frames".into()));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            width: self.frames.width,
            height: self.frames.height,
            frames: self.frames.len(),
        }
    }

    pub fn save(&self, layout: &DatasetLayout) -> Result<()> {
        self.validate()?;
        self.manifest().write(&layout.manifest())?;
        io::write_frames(&self.frames, &layout.frames_dir())?;
        io::write_flow_dir(&self.flow_fwd, &layout.flow_fwd_dir())?;
        io::write_flow_dir(&self.flow_bwd, &layout.flow_bwd_dir())?;
        io::write_confidence_video(&self.geom, &layout.geom())?;
        if let Some(gt) = &self.gt_labels {
            io::write_label_video(gt, &layout.gt_labels())?;
        }
        Ok(())
    }

    pub fn load(layout: &DatasetLayout) -> Result<Self> {
        let manifest = Manifest::read(&layout.manifest())?;
        let frames = io::read_frames(&layout.frames_dir())?;
        if (frames.width, frames.height, frames.len())
            != (manifest.width, manifest.height, manifest.frames)
        {
            return Err(Error::Dimension(format!(
                "frames directory does not match manifest {manifest:?}"
            )));
        }
        let flow_fwd = io::read_flow_dir(&layout.flow_fwd_dir(), FlowDirection::Forward)?;
        let flow_bwd = io::read_flow_dir(&layout.flow_bwd_dir(), FlowDirection::Backward)?;
        let geom = io::read_confidence_video(&layout.geom())?;
        let gt_path = layout.gt_labels();
        let gt_labels = if gt_path.is_file() {
            Some(io::read_label_video(&gt_path)?)
        } else {
            None
        };
        let ds = Dataset {
            frames,
            flow_fwd,
            flow_bwd,
            geom,
            gt_labels,
        };
        ds.validate()?;
        Ok(ds)
    }
}
