//! CIE Lab (D65) to sRGB, including a differentiable recombination op.

use fuselang_core::{CoreError, CustomOp, Graph, Result, Tensor, Var};

/// Lab chroma is scaled by this factor into the editing-map range.
pub const CHROMA_SCALE: f64 = 110.0;

const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const DELTA: f64 = 6.0 / 29.0;

fn f_inv(t: f64) -> (f64, f64) {
    if t > DELTA {
        (t * t * t, 3.0 * t * t)
    } else {
        (3.0 * DELTA * DELTA * (t - 4.0 / 29.0), 3.0 * DELTA * DELTA)
    }
}

fn f_fwd(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn gamma(v: f64) -> (f64, f64) {
    if v <= 0.0031308 {
        (12.92 * v, 12.92)
    } else {
        let p = v.powf(1.0 / 2.4);
        (1.055 * p - 0.055, 1.055 / 2.4 * p / v)
    }
}

fn gamma_inv(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in [0, 1] (clipped) and the Jacobian `d rgb / d (L, a, b)`.
fn lab_to_rgb_jac(l: f64, a: f64, b: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let (x, dx) = f_inv(fx);
    let (y, dy) = f_inv(fy);
    let (z, dz) = f_inv(fz);
    let xyz = [WHITE[0] * x, WHITE[1] * y, WHITE[2] * z];
    // d xyz / d (L, a, b)
    let dxyz = [
        [WHITE[0] * dx / 116.0, WHITE[0] * dx / 500.0, 0.0],
        [WHITE[1] * dy / 116.0, 0.0, 0.0],
        [WHITE[2] * dz / 116.0, 0.0, -WHITE[2] * dz / 200.0],
    ];
    let mut rgb = [0.0; 3];
    let mut jac = [[0.0; 3]; 3];
    for c in 0..3 {
        let lin: f64 = (0..3).map(|k| XYZ_TO_RGB[c][k] * xyz[k]).sum();
        let (v, dv) = gamma(lin);
        let inside = (0.0..=1.0).contains(&v);
        rgb[c] = v.clamp(0.0, 1.0);
        for j in 0..3 {
            let dlin: f64 = (0..3).map(|k| XYZ_TO_RGB[c][k] * dxyz[k][j]).sum();
            jac[c][j] = if inside { dv * dlin } else { 0.0 };
        }
    }
    (rgb, jac)
}

/// Lab (L in [0, 100]) to sRGB in [0, 1], clipped.
pub fn lab_to_rgb(l: f64, a: f64, b: f64) -> [f64; 3] {
    lab_to_rgb_jac(l, a, b).0
}

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(gamma_inv);
    let xyz: Vec<f64> = (0..3).map(|r| (0..3).map(|k| RGB_TO_XYZ[r][k] * lin[k]).sum()).collect();
    let fx = f_fwd(xyz[0] / WHITE[0]);
    let fy = f_fwd(xyz[1] / WHITE[1]);
    let fz = f_fwd(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inputs: lightness `[1, H, W]` in [0, 1] (L / 100) and chroma `[2, H, W]`
/// scaled by [`CHROMA_SCALE`]. Output: sRGB `[3, H, W]`.
struct Recombine;

impl CustomOp for Recombine {
    fn name(&self) -> &'static str {
        "recombine"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (l, ab) = (inputs[0], inputs[1]);
        let (ls, abs) = (l.shape(), ab.shape());
        if ls.len() != 3 || abs.len() != 3 || ls[0] != 1 || abs[0] != 2 || ls[1..] != abs[1..] {
            return Err(CoreError::Shape {
                op: "recombine",
                detail: format!("lightness {ls:?} with chroma {abs:?}"),
            });
        }
        let n = ls[1] * ls[2];
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            let rgb = lab_to_rgb(100.0 * l.data()[i], CHROMA_SCALE * ab.data()[i], CHROMA_SCALE * ab.data()[n + i]);
            for c in 0..3 {
                out[c * n + i] = rgb[c];
            }
        }
        Tensor::new(&[3, ls[1], ls[2]], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (l, ab) = (inputs[0], inputs[1]);
        let n = l.numel();
        let mut gl = Tensor::zeros(l.shape());
        let mut gab = Tensor::zeros(ab.shape());
        for i in 0..n {
            let (_, jac) = lab_to_rgb_jac(100.0 * l.data()[i], CHROMA_SCALE * ab.data()[i], CHROMA_SCALE * ab.data()[n + i]);
            let go = [grad.data()[i], grad.data()[n + i], grad.data()[2 * n + i]];
            let dot = |j: usize| (0..3).map(|c| go[c] * jac[c][j]).sum::<f64>();
            gl.data_mut()[i] = 100.0 * dot(0);
            gab.data_mut()[i] = CHROMA_SCALE * dot(1);
            gab.data_mut()[n + i] = CHROMA_SCALE * dot(2);
        }
        vec![gl, gab]
    }
}

/// Combines grayscale lightness with predicted chroma into an sRGB image.
pub fn recombine(g: &Graph, lightness: Var, chroma: Var) -> Result<Var> {
    g.custom(Box::new(Recombine), &[lightness, chroma])
}

/// Splits interleaved 8-bit RGB into lightness `[1, n]` (L / 100) and scaled chroma `[2, n]` planes.
pub fn rgb_bytes_to_lab_planes(rgb: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let n = rgb.len() / 3;
    let mut l = vec![0.0; n];
    let mut ab = vec![0.0; 2 * n];
    for i in 0..n {
        let lab = rgb_to_lab([0, 1, 2].map(|c| rgb[3 * i + c] as f64 / 255.0));
        l[i] = lab[0] / 100.0;
        ab[i] = lab[1] / CHROMA_SCALE;
        ab[n + i] = lab[2] / CHROMA_SCALE;
    }
    (l, ab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_point_maps_to_white() {
        let rgb = lab_to_rgb(100.0, 0.0, 0.0);
        for c in rgb {
            assert!((c - 1.0).abs() < 1e-3, "{rgb:?}");
        }
        assert!(lab_to_rgb(0.0, 0.0, 0.0).iter().all(|c| c.abs() < 1e-12));
    }
}
