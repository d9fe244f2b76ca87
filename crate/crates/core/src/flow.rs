//! Dense optical flow: coarse-to-fine Horn–Schunck with image warping.
//!
//! Each warp linearises brightness constancy around the current flow and
//! minimises
//!
//! ```text
//! E(u, v) = Σ (Ix·(u−u0) + Iy·(v−v0) + It)² + α² Σ_{4-neighbour pairs} (Δu² + Δv²)
//! ```
//!
//! with red–black sweeps: every pixel of one colour is set to the exact
//! minimiser of `E` given its neighbours, which only have the other colour.
//! Both half-sweeps therefore never increase `E` and the result does not
//! depend on traversal order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::media::{FlowDirection, FlowField, FrameSequence, GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight α.
    pub alpha: f64,
    /// Red–black sweeps per warp.
    pub iterations: usize,
    pub levels: usize,
    pub warps: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 15.0,
            iterations: 200,
            levels: 4,
            warps: 2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("flow alpha must be > 0, got {}", self.alpha)));
        }
        if self.iterations == 0 || self.levels == 0 || self.warps == 0 {
            return Err(Error::Parameter(
                "flow iterations, levels and warps must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn downsample(img: &GrayImage) -> GrayImage {
    let w = img.width.div_ceil(2);
    let h = img.height.div_ceil(2);
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (x0, y0) = (2 * x as isize, 2 * y as isize);
            let s = img.get_clamped(x0, y0)
                + img.get_clamped(x0 + 1, y0)
                + img.get_clamped(x0, y0 + 1)
                + img.get_clamped(x0 + 1, y0 + 1);
            out.data[y * w + x] = 0.25 * s;
        }
    }
    out
}

/// Bilinear upsampling of a coarse flow component onto a finer grid, scaled by 2.
fn upsample(coarse: &GrayImage, width: usize, height: usize) -> GrayImage {
    let mut out = GrayImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let cx = (x as f64 + 0.5) / 2.0 - 0.5;
            let cy = (y as f64 + 0.5) / 2.0 - 0.5;
            out.data[y * width + x] = 2.0 * coarse.sample_bilinear(cx, cy);
        }
    }
    out
}

/// Central differences with replicated borders.
fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx[y * w + x] = 0.5 * (img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi));
            gy[y * w + x] = 0.5 * (img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1));
        }
    }
    (gx, gy)
}

/// Linearised problem for one warp.
struct WarpProblem {
    width: usize,
    height: usize,
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
    u0: Vec<f64>,
    v0: Vec<f64>,
    alpha2: f64,
}

impl WarpProblem {
    fn new(i1: &GrayImage, i2: &GrayImage, u0: &GrayImage, v0: &GrayImage, alpha: f64) -> Self {
        let (w, h) = (i1.width, i1.height);
        let mut warped = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                warped.data[k] = i2.sample_bilinear(x as f64 + u0.data[k], y as f64 + v0.data[k]);
            }
        }
        let (gx1, gy1) = gradients(i1);
        let (gx2, gy2) = gradients(&warped);
        let ix = gx1.iter().zip(&gx2).map(|(a, b)| 0.5 * (a + b)).collect();
        let iy = gy1.iter().zip(&gy2).map(|(a, b)| 0.5 * (a + b)).collect();
        let it = warped.data.iter().zip(&i1.data).map(|(a, b)| a - b).collect();
        WarpProblem {
            width: w,
            height: h,
            ix,
            iy,
            it,
            u0: u0.data.clone(),
            v0: v0.data.clone(),
            alpha2: alpha * alpha,
        }
    }

    fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut e = 0.0;
        for k in 0..w * h {
            let r = self.ix[k] * (u[k] - self.u0[k]) + self.iy[k] * (v[k] - self.v0[k]) + self.it[k];
            e += r * r;
        }
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                if x + 1 < w {
                    s += (u[k] - u[k + 1]).powi(2) + (v[k] - v[k + 1]).powi(2);
                }
                if y + 1 < h {
                    s += (u[k] - u[k + w]).powi(2) + (v[k] - v[k + w]).powi(2);
                }
            }
        }
        e + self.alpha2 * s
    }

    fn half_sweep(&self, u: &mut [f64], v: &mut [f64], parity: usize) {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in ((y + parity) % 2..w).step_by(2) {
                let k = y * w + x;
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
                if x > 0 {
                    su += u[k - 1];
                    sv += v[k - 1];
                    n += 1.0;
                }
                if x + 1 < w {
                    su += u[k + 1];
                    sv += v[k + 1];
                    n += 1.0;
                }
                if y > 0 {
                    su += u[k - w];
                    sv += v[k - w];
                    n += 1.0;
                }
                if y + 1 < h {
                    su += u[k + w];
                    sv += v[k + w];
                    n += 1.0;
                }
                if n == 0.0 {
                    // 1x1 image: pure data term, minimised along the gradient
                    let g2 = self.ix[k].powi(2) + self.iy[k].powi(2);
                    if g2 > 0.0 {
                        let r = self.ix[k] * (u[k] - self.u0[k])
                            + self.iy[k] * (v[k] - self.v0[k])
                            + self.it[k];
                        u[k] -= self.ix[k] * r / g2;
                        v[k] -= self.iy[k] * r / g2;
                    }
                    continue;
                }
                let (ub, vb) = (su / n, sv / n);
                let (gx, gy) = (self.ix[k], self.iy[k]);
                let r = gx * (ub - self.u0[k]) + gy * (vb - self.v0[k]) + self.it[k];
                let denom = self.alpha2 * n + gx * gx + gy * gy;
                u[k] = ub - gx * r / denom;
                v[k] = vb - gy * r / denom;
            }
        }
    }

    fn solve(&self, u: &mut [f64], v: &mut [f64], iterations: usize, mut trace: Option<&mut Vec<f64>>) {
        if let Some(t) = trace.as_deref_mut() {
            t.push(self.energy(u, v));
        }
        for _ in 0..iterations {
            self.half_sweep(u, v, 0);
            self.half_sweep(u, v, 1);
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.energy(u, v));
            }
        }
    }
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "flow inputs differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width == 0 || a.height == 0 {
        return Err(Error::Dimension("flow inputs are empty".into()));
    }
    Ok(())
}

fn estimate(
    a: &GrayImage,
    b: &GrayImage,
    params: &FlowParams,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<FlowField> {
    params.validate()?;
    check_dims(a, b)?;

    let mut pyr_a = vec![a.clone()];
    let mut pyr_b = vec![b.clone()];
    while pyr_a.len() < params.levels {
        let last = pyr_a.last().unwrap();
        if last.width < 8 || last.height < 8 {
            break;
        }
        let next_a = downsample(last);
        let next_b = downsample(pyr_b.last().unwrap());
        pyr_a.push(next_a);
        pyr_b.push(next_b);
    }

    let coarsest = pyr_a.last().unwrap();
    let mut u = GrayImage::new(coarsest.width, coarsest.height);
    let mut v = GrayImage::new(coarsest.width, coarsest.height);
    for level in (0..pyr_a.len()).rev() {
        let (i1, i2) = (&pyr_a[level], &pyr_b[level]);
        if u.width != i1.width || u.height != i1.height {
            u = upsample(&u, i1.width, i1.height);
            v = upsample(&v, i1.width, i1.height);
        }
        for _ in 0..params.warps {
            let problem = WarpProblem::new(i1, i2, &u, &v, params.alpha);
            let finest_trace = if level == 0 {
                trace.as_deref_mut().map(|t| {
                    t.push(Vec::new());
                    t.last_mut().unwrap()
                })
            } else {
                None
            };
            problem.solve(&mut u.data, &mut v.data, params.iterations, finest_trace);
        }
    }

    let mut field = FlowField::zeros(a.width, a.height, FlowDirection::Forward);
    for k in 0..a.width * a.height {
        field.data[k] = [u.data[k] as f32, v.data[k] as f32];
    }
    if !field.is_finite() {
        return Err(Error::Numerical("flow estimate is not finite".into()));
    }
    Ok(field)
}

/// Flow from `a` to `b` (intensities on any fixed scale, typically `[0,255]`).
/// Swap the arguments for the backward field.
pub fn estimate_flow(a: &GrayImage, b: &GrayImage, params: &FlowParams) -> Result<FlowField> {
    estimate(a, b, params, None)
}

/// As [`estimate_flow`], also returning the energy after every sweep of each
/// finest-level warp (one inner vector per warp, starting with the initial
/// energy).
pub fn estimate_flow_traced(
    a: &GrayImage,
    b: &GrayImage,
    params: &FlowParams,
) -> Result<(FlowField, Vec<Vec<f64>>)> {
    let mut trace = Vec::new();
    let f = estimate(a, b, params, Some(&mut trace))?;
    Ok((f, trace))
}

pub fn estimate_flow_rgb(a: &RgbImage, b: &RgbImage, params: &FlowParams) -> Result<FlowField> {
    estimate_flow(&a.to_gray(), &b.to_gray(), params)
}

/// Forward (`t → t+1`) and backward (`t+1 → t`) fields for every consecutive pair.
pub fn estimate_sequence(
    frames: &FrameSequence,
    params: &FlowParams,
) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let gray: Vec<GrayImage> = frames.frames.iter().map(RgbImage::to_gray).collect();
    let pairs: Vec<Result<(FlowField, FlowField)>> = (0..gray.len() - 1)
        .into_par_iter()
        .map(|t| {
            let fwd = estimate_flow(&gray[t], &gray[t + 1], params)?;
            let mut bwd = estimate_flow(&gray[t + 1], &gray[t], params)?;
            bwd.direction = FlowDirection::Backward;
            Ok((fwd, bwd))
        })
        .collect();
    let mut fwd = Vec::with_capacity(pairs.len());
    let mut bwd = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (f, b) = p?;
        fwd.push(f);
        bwd.push(b);
    }
    Ok((fwd, bwd))
}
