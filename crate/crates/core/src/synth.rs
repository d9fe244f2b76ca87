//! Layered synthetic scenes with exact ground truth.
//!
//! A scene is a static four-band background (sky, a skyline of static
//! solids, a porous band, ground) translated by the camera, plus textured
//! objects moving with integer velocities and composited back to front.
//! Textures are functions of layer-local integer coordinates, so a layer
//! pixel keeps its exact colour as the layer translates and the ground-truth
//! flow reproduces the next frame exactly wherever the layer stays visible.
//!
//! Conventions:
//! - a camera translation `c` moves every background pixel by `-c` per frame;
//! - forward flow at frame `t` is the velocity of the front-most layer at `t`;
//! - backward flow for the pair `(t, t+1)` is defined on frame `t+1` pixels as
//!   the negated velocity of the front-most layer at `t+1`, so revealed
//!   background carries background motion.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::media::{
    BinaryMap, Dataset, FlowDirection, FlowField, FrameSequence, GeometricClass,
    GeometricContext, LabelVideo, RgbImage, GEOM_CLASSES,
};

/// Layer IDs of the background bands; objects follow from [`FIRST_OBJECT_LAYER`].
pub const SKY_LAYER: u32 = 0;
pub const SOLID_LAYER: u32 = 1;
pub const POROUS_LAYER: u32 = 2;
pub const GROUND_LAYER: u32 = 3;
pub const FIRST_OBJECT_LAYER: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Ellipse,
}

impl Shape {
    fn name(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Top-left corner of the bounding box at frame 0 (may be off-screen).
    pub position: (i64, i64),
    /// Bounding box width and height.
    pub size: (u32, u32),
    /// Integer displacement per frame.
    pub velocity: (i32, i32),
    /// Smaller is nearer the camera.
    pub depth: u32,
    pub color: [u8; 3],
    pub texture_seed: u64,
    /// Horizontal paint band: object-local rows `[start, start + rows)`.
    pub stripe: Option<Stripe>,
}

/// Paint on an object's surface; moves with the object and leaves its ID unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stripe {
    pub start: u32,
    pub rows: u32,
    pub color: [u8; 3],
}

/// Paint on a static background band, in world coordinates, clipped to `layer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub layer: u32,
    pub position: (i64, i64),
    pub size: (u32, u32),
    pub color: [u8; 3],
}

impl Patch {
    fn contains(&self, wx: i64, wy: i64) -> bool {
        let (x0, y0) = self.position;
        wx >= x0 && wy >= y0 && wx < x0 + self.size.0 as i64 && wy < y0 + self.size.1 as i64
    }
}

impl ObjectSpec {
    fn local(&self, x: i64, y: i64, t: i64) -> Option<(i64, i64)> {
        let ox = self.position.0 + self.velocity.0 as i64 * t;
        let oy = self.position.1 + self.velocity.1 as i64 * t;
        let (lx, ly) = (x - ox, y - oy);
        let (w, h) = (self.size.0 as i64, self.size.1 as i64);
        if lx < 0 || ly < 0 || lx >= w || ly >= h {
            return None;
        }
        let inside = match self.shape {
            Shape::Rectangle => true,
            Shape::Ellipse => {
                // centre and radii in doubled coordinates keep the test integral
                let dx = 2 * lx + 1 - w;
                let dy = 2 * ly + 1 - h;
                dx * dx * h * h + dy * dy * w * w <= w * w * h * h
            }
        };
        inside.then_some((lx, ly))
    }
}

/// Background band layout in world rows; the camera translates world to screen.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    /// Rows `< sky_end` are sky (before skyline offsets).
    pub sky_end: i64,
    pub solid_end: i64,
    pub porous_end: i64,
    /// Maximum skyline offset in rows; 0 gives a straight sky/solid edge.
    pub skyline: u32,
    pub sky_color: [u8; 3],
    pub solid_color: [u8; 3],
    pub porous_color: [u8; 3],
    pub ground_color: [u8; 3],
    pub patches: Vec<Patch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub background: BackgroundSpec,
    pub objects: Vec<ObjectSpec>,
    pub camera: (i32, i32),
    /// Peak-to-peak amplitude of the value-noise texture, in 8-bit levels.
    pub texture_amplitude: f64,
    pub seed: u64,
}

/// Exact ground truth for a rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub gt_object_ids: LabelVideo,
    pub gt_geometric: GeometricContext,
    pub gt_flow_fwd: Vec<FlowField>,
    pub gt_flow_bwd: Vec<FlowField>,
    pub occlusion_mask: Vec<BinaryMap>,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn hash3(seed: u64, a: i64, b: i64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a as u64) ^ b as u64)
}

#[inline]
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1)` on a lattice of `cell` pixels.
fn value_noise(seed: u64, x: i64, y: i64, cell: i64) -> f64 {
    let (cx, cy) = (x.div_euclid(cell), y.div_euclid(cell));
    let fx = x.rem_euclid(cell) as f64 / cell as f64;
    let fy = y.rem_euclid(cell) as f64 / cell as f64;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let v00 = unit(hash3(seed, cx, cy));
    let v10 = unit(hash3(seed, cx + 1, cy));
    let v01 = unit(hash3(seed, cx, cy + 1));
    let v11 = unit(hash3(seed, cx + 1, cy + 1));
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

fn shade(base: [u8; 3], delta: f64) -> [u8; 3] {
    base.map(|c| (c as f64 + delta).round().clamp(0.0, 255.0) as u8)
}

impl BackgroundSpec {
    fn skyline_offset(&self, seed: u64, wx: i64) -> i64 {
        if self.skyline == 0 {
            return 0;
        }
        let block = wx.div_euclid(10);
        let span = 2 * self.skyline as u64 + 1;
        (hash3(seed ^ 0x5151, block, 0) % span) as i64 - self.skyline as i64
    }

    fn layer_at(&self, seed: u64, wx: i64, wy: i64) -> u32 {
        if wy < self.sky_end + self.skyline_offset(seed, wx) {
            SKY_LAYER
        } else if wy < self.solid_end {
            SOLID_LAYER
        } else if wy < self.porous_end {
            POROUS_LAYER
        } else {
            GROUND_LAYER
        }
    }

    fn color_at(&self, seed: u64, layer: u32, wx: i64, wy: i64, amp: f64) -> [u8; 3] {
        if let Some(p) = self.patches.iter().find(|p| p.layer == layer && p.contains(wx, wy)) {
            return shade(p.color, amp * (value_noise(seed ^ 0x56, wx, wy, 6) - 0.5));
        }
        match layer {
            SKY_LAYER => shade(
                self.sky_color,
                0.5 * amp * (value_noise(seed ^ 0x51, wx, wy, 16) - 0.5),
            ),
            SOLID_LAYER => {
                // facade noise with a darker window grid
                let n = value_noise(seed ^ 0x52, wx, wy, 6) - 0.5;
                let window = wx.rem_euclid(7) >= 4 && wy.rem_euclid(6) >= 3;
                let d = if window { -amp } else { 0.0 };
                shade(self.solid_color, amp * n + d)
            }
            POROUS_LAYER => {
                let speckle = unit(hash3(seed ^ 0x53, wx.div_euclid(2), wy.div_euclid(2))) - 0.5;
                let n = value_noise(seed ^ 0x54, wx, wy, 5) - 0.5;
                shade(self.porous_color, amp * (n + 0.6 * speckle))
            }
            _ => shade(
                self.ground_color,
                amp * (value_noise(seed ^ 0x55, wx, wy, 8) - 0.5),
            ),
        }
    }
}

fn layer_class(layer: u32) -> GeometricClass {
    match layer {
        SKY_LAYER => GeometricClass::Sky,
        SOLID_LAYER => GeometricClass::StaticSolid,
        POROUS_LAYER => GeometricClass::Porous,
        GROUND_LAYER => GeometricClass::Ground,
        _ => GeometricClass::Movable,
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::SceneSpec("frame dimensions must be positive".into()));
        }
        if self.frame_count < 2 {
            return Err(Error::SceneSpec("at least 2 frames are required".into()));
        }
        let b = &self.background;
        if !(b.sky_end <= b.solid_end && b.solid_end <= b.porous_end) {
            return Err(Error::SceneSpec("background bands must be ordered".into()));
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return Err(Error::SceneSpec("texture amplitude must be finite and >= 0".into()));
        }
        let mut depths: Vec<u32> = self.objects.iter().map(|o| o.depth).collect();
        depths.sort_unstable();
        if depths.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SceneSpec("object depths must be distinct".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size.0 == 0 || o.size.1 == 0 {
                return Err(Error::SceneSpec(format!("object {i} has zero area")));
            }
        }
        Ok(())
    }

    /// Objects sorted nearest first, with their layer IDs.
    fn depth_order(&self) -> Vec<(u32, &ObjectSpec)> {
        let mut objs: Vec<(u32, &ObjectSpec)> = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (FIRST_OBJECT_LAYER + i as u32, o))
            .collect();
        objs.sort_by_key(|(_, o)| o.depth);
        objs
    }

    fn layer_velocity(&self, layer: u32) -> (i32, i32) {
        if layer >= FIRST_OBJECT_LAYER {
            self.objects[(layer - FIRST_OBJECT_LAYER) as usize].velocity
        } else {
            (-self.camera.0, -self.camera.1)
        }
    }

    /// Front-most layer and its colour at a screen pixel.
    fn sample(&self, order: &[(u32, &ObjectSpec)], x: i64, y: i64, t: i64) -> (u32, [u8; 3]) {
        let amp = self.texture_amplitude;
        for &(layer, o) in order {
            if let Some((lx, ly)) = o.local(x, y, t) {
                let n = value_noise(o.texture_seed, lx, ly, 4) - 0.5;
                let base = match o.stripe {
                    Some(s) if (s.start as i64..(s.start + s.rows) as i64).contains(&ly) => s.color,
                    _ => o.color,
                };
                return (layer, shade(base, amp * n));
            }
        }
        let wx = x + self.camera.0 as i64 * t;
        let wy = y + self.camera.1 as i64 * t;
        let layer = self.background.layer_at(self.seed, wx, wy);
        (layer, self.background.color_at(self.seed, layer, wx, wy, amp))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rgb = |c: [u8; 3]| format!("{},{},{}", c[0], c[1], c[2]);
        let b = &self.background;
        writeln!(s, "width={}", self.width).unwrap();
        writeln!(s, "height={}", self.height).unwrap();
        writeln!(s, "frames={}", self.frame_count).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "camera={},{}", self.camera.0, self.camera.1).unwrap();
        writeln!(s, "texture_amplitude={}", self.texture_amplitude).unwrap();
        writeln!(s, "sky_end={}", b.sky_end).unwrap();
        writeln!(s, "solid_end={}", b.solid_end).unwrap();
        writeln!(s, "porous_end={}", b.porous_end).unwrap();
        writeln!(s, "skyline={}", b.skyline).unwrap();
        writeln!(s, "sky_color={}", rgb(b.sky_color)).unwrap();
        writeln!(s, "solid_color={}", rgb(b.solid_color)).unwrap();
        writeln!(s, "porous_color={}", rgb(b.porous_color)).unwrap();
        writeln!(s, "ground_color={}", rgb(b.ground_color)).unwrap();
        for p in &b.patches {
            writeln!(
                s,
                "patch={},{},{},{},{},{}",
                p.layer,
                p.position.0,
                p.position.1,
                p.size.0,
                p.size.1,
                rgb(p.color)
            )
            .unwrap();
        }
        for o in &self.objects {
            writeln!(s, "\n[object]").unwrap();
            writeln!(s, "shape={}", o.shape.name()).unwrap();
            writeln!(s, "position={},{}", o.position.0, o.position.1).unwrap();
            writeln!(s, "size={},{}", o.size.0, o.size.1).unwrap();
            writeln!(s, "velocity={},{}", o.velocity.0, o.velocity.1).unwrap();
            writeln!(s, "depth={}", o.depth).unwrap();
            writeln!(s, "color={}", rgb(o.color)).unwrap();
            writeln!(s, "texture_seed={}", o.texture_seed).unwrap();
            if let Some(st) = o.stripe {
                writeln!(s, "stripe={},{},{}", st.start, st.rows, rgb(st.color)).unwrap();
            }
        }
        s
    }

    /// Parses the `key=value` scene format with repeated `[object]` sections.
    pub fn parse(text: &str) -> Result<Self> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for {key}: {v}")))
        }
        fn list<T: std::str::FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
            let parts: Vec<&str> = v.split(',').collect();
            if parts.len() != N {
                return Err(Error::Parse(format!("{key} needs {N} comma-separated values")));
            }
            let vals = parts
                .into_iter()
                .map(|p| num::<T>(key, p))
                .collect::<Result<Vec<T>>>()?;
            Ok(vals.try_into().ok().unwrap())
        }

        let mut spec = SceneSpec {
            width: 0,
            height: 0,
            frame_count: 0,
            background: BackgroundSpec::default_for(64),
            objects: Vec::new(),
            camera: (0, 0),
            texture_amplitude: 30.0,
            seed: 0,
        };
        let mut current: Option<ObjectSpec> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[object]" {
                if let Some(o) = current.take() {
                    spec.objects.push(o);
                }
                current = Some(ObjectSpec {
                    shape: Shape::Rectangle,
                    position: (0, 0),
                    size: (1, 1),
                    velocity: (0, 0),
                    depth: spec.objects.len() as u32,
                    color: [128, 128, 128],
                    texture_seed: spec.objects.len() as u64,
                    stripe: None,
                });
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let k = k.trim();
            if let Some(o) = current.as_mut() {
                match k {
                    "shape" => {
                        o.shape = match v.trim() {
                            "rectangle" => Shape::Rectangle,
                            "ellipse" => Shape::Ellipse,
                            other => return Err(Error::Parse(format!("unknown shape {other}"))),
                        }
                    }
                    "position" => {
                        let [x, y] = list::<i64, 2>(k, v)?;
                        o.position = (x, y);
                    }
                    "size" => {
                        let [w, h] = list::<u32, 2>(k, v)?;
                        o.size = (w, h);
                    }
                    "velocity" => {
                        let [x, y] = list::<i32, 2>(k, v)?;
                        o.velocity = (x, y);
                    }
                    "depth" => o.depth = num(k, v)?,
                    "color" => o.color = list::<u8, 3>(k, v)?,
                    "texture_seed" => o.texture_seed = num(k, v)?,
                    "stripe" => {
                        let [start, rows, r, g, bl] = list::<u32, 5>(k, v)?;
                        let byte = |c: u32| u8::try_from(c).map_err(|_| Error::Parse(format!("bad stripe colour {v}")));
                        o.stripe = Some(Stripe {
                            start,
                            rows,
                            color: [byte(r)?, byte(g)?, byte(bl)?],
                        });
                    }
                    _ => return Err(Error::Parse(format!("unknown object key {k}"))),
                }
                continue;
            }
            let b = &mut spec.background;
            match k {
                "width" => spec.width = num(k, v)?,
                "height" => spec.height = num(k, v)?,
                "frames" => spec.frame_count = num(k, v)?,
                "seed" => spec.seed = num(k, v)?,
                "camera" => {
                    let [x, y] = list::<i32, 2>(k, v)?;
                    spec.camera = (x, y);
                }
                "texture_amplitude" => spec.texture_amplitude = num(k, v)?,
                "sky_end" => b.sky_end = num(k, v)?,
                "solid_end" => b.solid_end = num(k, v)?,
                "porous_end" => b.porous_end = num(k, v)?,
                "skyline" => b.skyline = num(k, v)?,
                "sky_color" => b.sky_color = list::<u8, 3>(k, v)?,
                "solid_color" => b.solid_color = list::<u8, 3>(k, v)?,
                "porous_color" => b.porous_color = list::<u8, 3>(k, v)?,
                "ground_color" => b.ground_color = list::<u8, 3>(k, v)?,
                "patch" => {
                    let [layer, x, y, w, h, r, g, bl] = list::<i64, 8>(k, v)?;
                    let byte = |c: i64| u8::try_from(c).map_err(|_| Error::Parse(format!("bad patch colour {v}")));
                    let dim = |c: i64| u32::try_from(c).map_err(|_| Error::Parse(format!("bad patch size {v}")));
                    b.patches.push(Patch {
                        layer: u32::try_from(layer).map_err(|_| Error::Parse(format!("bad patch layer {v}")))?,
                        position: (x, y),
                        size: (dim(w)?, dim(h)?),
                        color: [byte(r)?, byte(g)?, byte(bl)?],
                    });
                }
                _ => return Err(Error::Parse(format!("unknown scene key {k}"))),
            }
        }
        if let Some(o) = current.take() {
            spec.objects.push(o);
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl BackgroundSpec {
    /// Four equal-ish bands for a frame of the given height.
    pub fn default_for(height: usize) -> Self {
        let h = height as i64;
        BackgroundSpec {
            sky_end: h / 4,
            solid_end: h / 2,
            porous_end: 5 * h / 8,
            skyline: 0,
            sky_color: [150, 190, 235],
            solid_color: [150, 120, 100],
            porous_color: [60, 130, 50],
            ground_color: [90, 90, 95],
            patches: Vec::new(),
        }
    }
}

/// Renders frames and ground truth; deterministic in `spec`.
pub fn render_scene(spec: &SceneSpec) -> Result<(FrameSequence, SyntheticTruth)> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.frame_count);
    let order = spec.depth_order();

    let rendered: Vec<(RgbImage, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut img = RgbImage::new(w, h);
            let mut ids = vec![0u32; w * h];
            for y in 0..h {
                for x in 0..w {
                    let (layer, rgb) = spec.sample(&order, x as i64, y as i64, t as i64);
                    img.set(x, y, rgb);
                    ids[y * w + x] = layer;
                }
            }
            (img, ids)
        })
        .collect();

    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(w * h * n);
    for (img, ids) in rendered {
        frames.push(img);
        labels.extend(ids);
    }
    let gt_object_ids = LabelVideo::new(w, h, n, labels)?;

    let gt_geometric = GeometricContext {
        width: w,
        height: h,
        frames: n,
        data: gt_object_ids
            .labels
            .iter()
            .map(|&l| layer_class(l).one_hot())
            .collect(),
    };

    let flow_of = |t: usize, sign: i32, direction| {
        let mut f = FlowField::zeros(w, h, direction);
        for (i, &layer) in gt_object_ids.frame(t).iter().enumerate() {
            let (vx, vy) = spec.layer_velocity(layer);
            f.data[i] = [(sign * vx) as f32, (sign * vy) as f32];
        }
        f
    };
    let gt_flow_fwd = (0..n - 1).map(|t| flow_of(t, 1, FlowDirection::Forward)).collect();
    let gt_flow_bwd = (1..n).map(|t| flow_of(t, -1, FlowDirection::Backward)).collect();
    let occlusion_mask = gt_object_ids.boundary_masks();

    Ok((
        FrameSequence::new(frames)?,
        SyntheticTruth {
            gt_object_ids,
            gt_geometric,
            gt_flow_fwd,
            gt_flow_bwd,
            occlusion_mask,
        },
    ))
}

/// Blends each confidence vector with a random simplex point:
/// `(1 - noise) * c + noise * r`, `r ~ Dirichlet(1, ..., 1)`.
pub fn perturb_geometric(gt: &GeometricContext, noise: f64, seed: u64) -> Result<GeometricContext> {
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Parameter(format!(
            "geometric noise must lie in [0, 1), got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = gt
        .data
        .iter()
        .map(|c| {
            let mut r = [0f64; GEOM_CLASSES];
            for v in r.iter_mut() {
                *v = rng.sample::<f64, _>(Exp1);
            }
            let total: f64 = r.iter().sum();
            let mut out = [0f32; GEOM_CLASSES];
            for k in 0..GEOM_CLASSES {
                out[k] = ((1.0 - noise) * c[k] as f64 + noise * r[k] / total) as f32;
            }
            out
        })
        .collect();
    Ok(GeometricContext {
        width: gt.width,
        height: gt.height,
        frames: gt.frames,
        data,
    })
}

/// Assembles a dataset whose flow is the exact ground truth.
pub fn dataset_from_render(
    frames: FrameSequence,
    truth: &SyntheticTruth,
    geom: GeometricContext,
) -> Dataset {
    Dataset {
        frames,
        flow_fwd: truth.gt_flow_fwd.clone(),
        flow_bwd: truth.gt_flow_bwd.clone(),
        geom,
        gt_labels: Some(truth.gt_object_ids.clone()),
    }
}

fn random_color<R: Rng>(rng: &mut R) -> [u8; 3] {
    // saturated colours stand apart from the muted background palette
    let hue = rng.random_range(0..6);
    let hi = rng.random_range(190..=250u8);
    let lo = rng.random_range(10..=60u8);
    let mid = rng.random_range(lo..=hi);
    match hue {
        0 => [hi, lo, mid],
        1 => [hi, mid, lo],
        2 => [lo, hi, mid],
        3 => [mid, hi, lo],
        4 => [lo, mid, hi],
        _ => [mid, lo, hi],
    }
}

fn jitter<R: Rng>(rng: &mut R, base: [u8; 3], amount: i32) -> [u8; 3] {
    base.map(|c| (c as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// A randomised evaluation scene: four background bands under a slowly
/// panning camera and 2–4 moving objects in the lower half.
pub fn fleet_scene(seed: u64, width: usize, height: usize, frames: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = height as i64;
    let w = width as i64;
    let sky_end = h / 4 + rng.random_range(-h / 16..=h / 16);
    let solid_end = h / 2 + rng.random_range(-h / 16..=h / 16);
    let porous_end = 5 * h / 8 + rng.random_range(0..=h / 16);
    let mut background = BackgroundSpec {
        sky_end,
        solid_end,
        porous_end,
        skyline: (h / 16).max(1) as u32,
        sky_color: jitter(&mut rng, [150, 190, 235], 15),
        solid_color: jitter(&mut rng, [150, 120, 100], 20),
        porous_color: jitter(&mut rng, [60, 130, 50], 15),
        ground_color: jitter(&mut rng, [90, 90, 95], 15),
        patches: Vec::new(),
    };
    let camera = (rng.random_range(-1..=1), 0);
    let n_objects = rng.random_range(2..=4);
    let t_mid = frames as i64 / 2;
    let mut objects = (0..n_objects)
        .map(|i| {
            let size = (
                rng.random_range(w / 6..=w / 3) as u32,
                rng.random_range(h / 8..=h / 4) as u32,
            );
            let mut vx: i32 = rng.random_range(1..=2) * if rng.random_bool(0.5) { 1 } else { -1 };
            if vx == -camera.0 {
                vx = -vx;
            }
            let vy: i32 = if rng.random_bool(0.25) {
                if rng.random_bool(0.5) { 1 } else { -1 }
            } else {
                0
            };
            // centre the trajectory on a random point of the lower half
            let cx = rng.random_range(w / 4..=3 * w / 4);
            let cy = rng.random_range(solid_end..=h - h / 8);
            let x0 = cx - vx as i64 * t_mid - size.0 as i64 / 2;
            let y0 = (cy - size.1 as i64 / 2 - vy as i64 * t_mid).clamp(-(size.1 as i64) / 2, h);
            ObjectSpec {
                shape: if rng.random_bool(0.5) {
                    Shape::Rectangle
                } else {
                    Shape::Ellipse
                },
                position: (x0, y0),
                size,
                velocity: (vx, vy),
                depth: i as u32,
                color: random_color(&mut rng),
                texture_seed: rng.random(),
                stripe: None,
            }
        })
        .collect::<Vec<_>>();
    // paint marks: colour edges that are not occlusion boundaries
    for o in &mut objects {
        if rng.random_bool(0.6) {
            let rows = (o.size.1 / 4).max(2);
            o.stripe = Some(Stripe {
                start: rng.random_range(o.size.1 / 4..=o.size.1 / 2),
                rows,
                color: random_color(&mut rng),
            });
        }
    }
    let span = frames as i64 * camera.0 as i64;
    let (wx_lo, wx_hi) = (span.min(0), w + span.max(0));
    let bands = [
        (SKY_LAYER, 0, background.sky_end),
        (SOLID_LAYER, background.sky_end, background.solid_end),
        (GROUND_LAYER, background.porous_end, h),
    ];
    for _ in 0..rng.random_range(2..=4) {
        let (layer, y_lo, y_hi) = bands[rng.random_range(0..bands.len())];
        let size = (
            rng.random_range(w / 8..=w / 4) as u32,
            rng.random_range(2..=((y_hi - y_lo) / 2).max(2)) as u32,
        );
        background.patches.push(Patch {
            layer,
            position: (
                rng.random_range(wx_lo..=wx_hi - size.0 as i64),
                rng.random_range(y_lo..=(y_hi - size.1 as i64).max(y_lo)),
            ),
            size,
            color: random_color(&mut rng),
        });
    }
    SceneSpec {
        width,
        height,
        frame_count: frames,
        background,
        objects,
        camera,
        texture_amplitude: 24.0,
        seed: rng.random(),
    }
}

/// Two moving objects over four bands whose colours differ by only a few
/// 8-bit levels, with faint texture: occlusion edges carry almost no colour
/// contrast.
pub fn low_contrast_scene(seed: u64, width: usize, height: usize, frames: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as i64, height as i64);
    let base = [120u8, 120, 120];
    let shade = |k: u8| base.map(|c| c + k);
    let mut background = BackgroundSpec::default_for(height);
    background.sky_color = shade(0);
    background.solid_color = shade(1);
    background.porous_color = shade(2);
    background.ground_color = shade(3);
    let objects = (0..2u32)
        .map(|i| {
            let size = ((w / 3) as u32, (h / 4) as u32);
            let vx = if i == 0 { 1 } else { -1 };
            let t_mid = frames as i64 / 2;
            let cx = w / 2 + if i == 0 { -w / 6 } else { w / 6 };
            let cy = if i == 0 { h / 2 } else { 3 * h / 4 };
            ObjectSpec {
                shape: if i == 0 { Shape::Rectangle } else { Shape::Ellipse },
                position: (cx - vx as i64 * t_mid - size.0 as i64 / 2, cy - size.1 as i64 / 2),
                size,
                velocity: (vx, 0),
                depth: i,
                color: shade(1 + 2 * i as u8),
                texture_seed: rng.random(),
                stripe: None,
            }
        })
        .collect();
    SceneSpec {
        width,
        height,
        frame_count: frames,
        background,
        objects,
        camera: (0, 0),
        texture_amplitude: 2.0,
        seed: rng.random(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_scene() -> SceneSpec {
        SceneSpec {
            width: 24,
            height: 20,
            frame_count: 3,
            background: BackgroundSpec {
                sky_end: -100,
                solid_end: -100,
                porous_end: -100,
                ..BackgroundSpec::default_for(20)
            },
            objects: vec![],
            camera: (0, 0),
            texture_amplitude: 20.0,
            seed: 1,
        }
    }

    fn moving_rect_scene() -> SceneSpec {
        let mut s = static_scene();
        s.frame_count = 4;
        s.objects.push(ObjectSpec {
            shape: Shape::Rectangle,
            position: (4, 5),
            size: (6, 8),
            velocity: (2, 0),
            depth: 0,
            color: [220, 30, 30],
            texture_seed: 9,
            stripe: None,
        });
        s
    }

    #[test]
    fn static_single_layer_has_no_motion_or_boundaries() {
        let (_, truth) = render_scene(&static_scene()).unwrap();
        assert!(truth.gt_flow_fwd.iter().all(|f| f.data.iter().all(|p| *p == [0.0, 0.0])));
        assert!(truth.occlusion_mask.iter().all(|m| m.count() == 0));
    }

    #[test]
    fn moving_rectangle_flow_and_outline() {
        let spec = moving_rect_scene();
        let (_, truth) = render_scene(&spec).unwrap();
        for t in 0..spec.frame_count - 1 {
            let f = &truth.gt_flow_fwd[t];
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let inside = (4 + 2 * t..10 + 2 * t).contains(&x) && (5..13).contains(&y);
                    let expect = if inside { (2.0, 0.0) } else { (0.0, 0.0) };
                    assert_eq!(f.get(x, y), expect, "t={t} ({x},{y})");
                }
            }
        }
        // outline: pixels with a 4-neighbour across the rectangle edge
        let t = 1;
        let m = &truth.occlusion_mask[t];
        for y in 0..spec.height {
            for x in 0..spec.width {
                let inside = |x: i64, y: i64| (6..12).contains(&x) && (5..13).contains(&y);
                let (xi, yi) = (x as i64, y as i64);
                let here = inside(xi, yi);
                let on_edge = [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
                    let (nx, ny) = (xi + dx, yi + dy);
                    nx >= 0 && ny >= 0 && nx < 24 && ny < 20 && inside(nx, ny) != here
                });
                assert_eq!(m.get(x, y), on_edge, "({x},{y})");
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = fleet_scene(3, 32, 32, 5);
        let a = render_scene(&spec).unwrap();
        let b = render_scene(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_area_object_rejected() {
        let mut s = moving_rect_scene();
        s.objects[0].size = (0, 4);
        assert!(matches!(render_scene(&s), Err(Error::SceneSpec(_))));
    }

    #[test]
    fn gt_flow_warps_exactly() {
        let spec = fleet_scene(11, 48, 40, 6);
        let (frames, truth) = render_scene(&spec).unwrap();
        let (w, h) = (spec.width as i64, spec.height as i64);
        let mut checked = 0;
        for t in 0..spec.frame_count - 1 {
            let ids = &truth.gt_object_ids;
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = truth.gt_flow_fwd[t].get(x as usize, y as usize);
                    let (nx, ny) = (x + u as i64, y + v as i64);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let layer = ids.at(x as usize, y as usize, t);
                    if ids.at(nx as usize, ny as usize, t + 1) != layer {
                        continue; // occluded at t+1
                    }
                    checked += 1;
                    assert_eq!(
                        frames.frames[t].get(x as usize, y as usize),
                        frames.frames[t + 1].get(nx as usize, ny as usize)
                    );
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn backward_flow_follows_front_layer_at_next_frame() {
        let spec = moving_rect_scene();
        let (_, truth) = render_scene(&spec).unwrap();
        // pixel (4,6) is revealed background at t=1
        assert_eq!(truth.gt_object_ids.at(4, 6, 1), GROUND_LAYER);
        assert_eq!(truth.gt_flow_bwd[0].get(4, 6), (0.0, 0.0));
        assert_eq!(truth.gt_flow_bwd[0].get(7, 6), (-2.0, 0.0));
    }

    #[test]
    fn occlusion_mask_lies_on_flow_or_layer_changes() {
        let spec = fleet_scene(5, 40, 40, 4);
        let (_, truth) = render_scene(&spec).unwrap();
        let ids = &truth.gt_object_ids;
        for (t, m) in truth.occlusion_mask.iter().enumerate() {
            for y in 0..40 {
                for x in 0..40 {
                    if !m.get(x, y) {
                        continue;
                    }
                    let l = ids.at(x, y, t);
                    let differs = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        nx >= 0 && ny >= 0 && nx < 40 && ny < 40 && ids.at(nx as usize, ny as usize, t) != l
                    });
                    assert!(differs);
                }
            }
        }
    }

    #[test]
    fn scene_text_roundtrip() {
        let spec = fleet_scene(21, 64, 64, 30);
        let parsed = SceneSpec::parse(&spec.to_text()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn perturb_identity_and_closure() {
        let spec = fleet_scene(2, 24, 24, 3);
        let (_, truth) = render_scene(&spec).unwrap();
        let same = perturb_geometric(&truth.gt_geometric, 0.0, 5).unwrap();
        assert_eq!(same, truth.gt_geometric);
        let noisy = perturb_geometric(&truth.gt_geometric, 0.3, 5).unwrap();
        noisy.validate(1e-6).unwrap();
        assert!(matches!(
            perturb_geometric(&truth.gt_geometric, 1.0, 5),
            Err(Error::Parameter(_))
        ));
    }

    // Monte Carlo: argmax survives noise 0.3 for at least 95% of voxels.
    #[test]
    fn perturb_preserves_argmax() {
        let spec = fleet_scene(8, 32, 32, 2);
        let (_, truth) = render_scene(&spec).unwrap();
        let argmax = |c: &[f32; 5]| {
            (0..5).fold(0, |best, k| if c[k] > c[best] { k } else { best })
        };
        for seed in 0..10 {
            let noisy = perturb_geometric(&truth.gt_geometric, 0.3, seed).unwrap();
            let kept = noisy
                .data
                .iter()
                .zip(&truth.gt_geometric.data)
                .filter(|(a, b)| argmax(a) == argmax(b))
                .count();
            assert!(kept as f64 >= 0.95 * noisy.data.len() as f64);
        }
    }
}
