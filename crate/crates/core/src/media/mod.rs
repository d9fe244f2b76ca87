//! In-memory video containers shared by every stage of the pipeline.
//!
//! Frames are 8-bit RGB, flows are `f32` displacement pairs (the precision
//! of the `.flo` container), label videos carry one `u32` region ID per voxel
//! and geometric context carries a 5-class confidence vector per voxel.
//! The on-disk containers live in [`io`], the colour transform in [`color`].

pub mod color;
pub mod dataset;
pub mod io;

pub use color::{lab_distance, rgb_to_lab, rgb_to_lab_f64, Lab};
pub use dataset::{Dataset, DatasetLayout, Manifest};

use crate::error::{Error, Result};

/// Number of geometric-context classes.
pub const GEOM_CLASSES: usize = 5;

/// Geometric classes in their fixed channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum GeometricClass {
    Sky = 0,
    Ground = 1,
    StaticSolid = 2,
    Porous = 3,
    Movable = 4,
}

impl GeometricClass {
    pub const ALL: [GeometricClass; GEOM_CLASSES] = [
        GeometricClass::Sky,
        GeometricClass::Ground,
        GeometricClass::StaticSolid,
        GeometricClass::Porous,
        GeometricClass::Movable,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GeometricClass::Sky => "sky",
            GeometricClass::Ground => "ground",
            GeometricClass::StaticSolid => "static_solid",
            GeometricClass::Porous => "porous",
            GeometricClass::Movable => "movable",
        }
    }

    pub fn one_hot(self) -> [f32; GEOM_CLASSES] {
        let mut v = [0.0; GEOM_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

/// A single 8-bit RGB frame, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Length {
                expected: width * height * 3,
                found: data.len(),
            });
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec.601 luma in `[0, 255]`.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Real-valued single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Clamped integer access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample with border clamping.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(x0, y0);
        let b = self.get_clamped(x0 + 1, y0);
        let c = self.get_clamped(x0, y0 + 1);
        let d = self.get_clamped(x0 + 1, y0 + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    pub fn scaled(&self, factor: f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// An ordered list of equally-sized RGB frames (at least two).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<RgbImage>,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Validation(format!(
                "a frame sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (width, height) = (frames[0].width, frames[0].height);
        for (i, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(Error::Dimension(format!(
                    "frame {i} is {}x{}, expected {width}x{height}",
                    f.width, f.height
                )));
            }
        }
        Ok(FrameSequence {
            width,
            height,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-pixel CIE L*a*b* image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Lab>,
}

impl LabImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        LabImage {
            width: img.width,
            height: img.height,
            data: img.data.chunks_exact(3).map(|p| rgb_to_lab([p[0], p[1], p[2]])).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Lab {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowDirection {
    /// Frame t to t+1.
    Forward,
    /// Frame t+1 to t.
    Backward,
}

/// Dense displacement field in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub direction: FlowDirection,
    pub data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize, direction: FlowDirection) -> Self {
        FlowField {
            width,
            height,
            direction,
            data: vec![[0.0; 2]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let [u, v] = self.data[y * self.width + x];
        (u as f64, v as f64)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        self.data[y * self.width + x] = [u as f32, v as f32];
    }

    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (u, v) = self.get(x, y);
        u.hypot(v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

/// Spatio-temporal region labelling: one ID per voxel, frame-major then
/// row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVideo {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub labels: Vec<u32>,
}

impl LabelVideo {
    pub fn new(width: usize, height: usize, frames: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height * frames {
            return Err(Error::Length {
                expected: width * height * frames,
                found: labels.len(),
            });
        }
        Ok(LabelVideo {
            width,
            height,
            frames,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, frames: usize, label: u32) -> Self {
        LabelVideo {
            width,
            height,
            frames,
            labels: vec![label; width * height * frames],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, t: usize) -> u32 {
        self.labels[self.index(x, y, t)]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let n = self.width * self.height;
        &self.labels[t * n..(t + 1) * n]
    }

    /// One past the largest label present.
    pub fn region_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn is_dense(&self) -> bool {
        let n = self.region_count();
        let mut seen = vec![false; n];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen.into_iter().all(|s| s)
    }

    /// Renumber labels to `0..R` in order of first appearance (frame, row, column).
    pub fn relabel_dense(&mut self) -> usize {
        let mut map = std::collections::HashMap::new();
        for l in self.labels.iter_mut() {
            let next = map.len() as u32;
            *l = *map.entry(*l).or_insert(next);
        }
        map.len()
    }

    /// Pixels with a 4-neighbour carrying a different label, per frame.
    pub fn boundary_masks(&self) -> Vec<BinaryMap> {
        (0..self.frames)
            .map(|t| {
                let lab = self.frame(t);
                let (w, h) = (self.width, self.height);
                let mut map = BinaryMap::new(w, h);
                for y in 0..h {
                    for x in 0..w {
                        let l = lab[y * w + x];
                        if x + 1 < w && lab[y * w + x + 1] != l {
                            map.set(x, y, true);
                            map.set(x + 1, y, true);
                        }
                        if y + 1 < h && lab[(y + 1) * w + x] != l {
                            map.set(x, y, true);
                            map.set(x, y + 1, true);
                        }
                    }
                }
                map
            })
            .collect()
    }
}

/// Per-voxel confidences over the five geometric classes.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricContext {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub data: Vec<[f32; GEOM_CLASSES]>,
}

impl GeometricContext {
    pub fn uniform(width: usize, height: usize, frames: usize) -> Self {
        GeometricContext {
            width,
            height,
            frames,
            data: vec![[0.2; GEOM_CLASSES]; width * height * frames],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, t: usize) -> &[f32; GEOM_CLASSES] {
        &self.data[(t * self.height + y) * self.width + x]
    }

    /// Checks every voxel lies on the probability simplex within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.data.len() != self.width * self.height * self.frames {
            return Err(Error::Length {
                expected: self.width * self.height * self.frames,
                found: self.data.len(),
            });
        }
        for (i, c) in self.data.iter().enumerate() {
            let sum: f64 = c.iter().map(|&v| v as f64).sum();
            if c.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > tol {
                return Err(Error::Validation(format!(
                    "confidence vector at voxel {i} is off the simplex (sum {sum})"
                )));
            }
        }
        Ok(())
    }
}

/// Single-channel per-voxel probability map (e.g. splatted occlusion
/// probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVideo {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl ProbabilityVideo {
    pub fn zeros(width: usize, height: usize, frames: usize) -> Self {
        ProbabilityVideo {
            width,
            height,
            frames,
            data: vec![0.0; width * height * frames],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, t: usize) -> f32 {
        self.data[(t * self.height + y) * self.width + x]
    }
}

/// Binary per-frame map (boundary masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMap {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
