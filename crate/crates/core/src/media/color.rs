//! sRGB (D65) to CIE L*a*b* conversion.

/// CIE L*a*b* triple.
pub type Lab = [f64; 3];

// D65 reference white.
const XN: f64 = 0.95047;
const YN: f64 = 1.0;
const ZN: f64 = 1.08883;

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    let c = c / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// Converts an 8-bit sRGB pixel to L*a*b*, clamped to `L* ∈ [0,100]`,
/// `a*, b* ∈ [-128,127]`.
pub fn rgb_to_lab(rgb: [u8; 3]) -> Lab {
    rgb_to_lab_f64(rgb.map(f64::from))
}

/// As [`rgb_to_lab`] for real-valued channels on the `[0, 255]` scale
/// (e.g. after smoothing).
pub fn rgb_to_lab_f64(rgb: [f64; 3]) -> Lab {
    let r = srgb_to_linear(rgb[0].clamp(0.0, 255.0));
    let g = srgb_to_linear(rgb[1].clamp(0.0, 255.0));
    let b = srgb_to_linear(rgb[2].clamp(0.0, 255.0));

    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    let fx = lab_f(x / XN);
    let fy = lab_f(y / YN);
    let fz = lab_f(z / ZN);

    let l = (116.0 * fy - 16.0).clamp(0.0, 100.0);
    let a = (500.0 * (fx - fy)).clamp(-128.0, 127.0);
    let b = (200.0 * (fy - fz)).clamp(-128.0, 127.0);
    [l, a, b]
}

/// Euclidean distance between two Lab colours.
#[inline]
pub fn lab_distance(p: &Lab, q: &Lab) -> f64 {
    let dl = p[0] - q[0];
    let da = p[1] - q[1];
    let db = p[2] - q[2];
    (dl * dl + da * da + db * db).sqrt()
}
