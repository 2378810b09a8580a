//! Raw spatial kernels over `[C, H, W]` buffers.
//!
//! These work directly on slices so the graph can call them for both the
//! forward pass and the vector-Jacobian products. Convolution is
//! cross-correlation with symmetric zero padding.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output rows `oy` for which `oy * stride + ky - pad` lands inside `0..extent`.
    fn valid_range(&self, kk: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= extent-1
        let hi_num = extent as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let hi = hi.min(out as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

/// `out[co] = bias[co] + sum_{ci,ky,kx} k[co,ci,ky,kx] * x[ci, oy*s+ky-p, ox*s+kx-p]`
pub fn conv2d_forward(g: &ConvGeometry, x: &[f64], k: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.c_out * oh * ow];
    for co in 0..g.c_out {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.c_in {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..g.k {
                    let wv = k[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let orow = &mut plane[oy * ow..oy * ow + ow];
                        let irow = &xin[iy * g.w..iy * g.w + g.w];
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad;
                            for (o, i) in orow[x0..x1].iter_mut().zip(&irow[ix0..ix0 + (x1 - x0)]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in x0..x1 {
                                orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Vector-Jacobian products of [`conv2d_forward`] for input, kernel and bias.
pub fn conv2d_backward(
    g: &ConvGeometry,
    x: &[f64],
    k: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let gplane = &gout[co * oh * ow..(co + 1) * oh * ow];
        gb[co] = gplane.iter().sum();
        for ci in 0..g.c_in {
            let base = ci * g.h * g.w;
            for ky in 0..g.k {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..g.k {
                    let widx = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
                    let wv = k[widx];
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gplane[oy * ow..oy * ow + ow];
                        let roff = base + iy * g.w;
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad;
                            let n = x1 - x0;
                            let irow = &x[roff + ix0..roff + ix0 + n];
                            let gs = &grow[x0..x1];
                            acc += gs.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            if wv != 0.0 {
                                for (gi, go) in gx[roff + ix0..roff + ix0 + n].iter_mut().zip(gs) {
                                    *gi += wv * go;
                                }
                            }
                        } else {
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kx - g.pad;
                                acc += grow[ox] * x[roff + ix];
                                gx[roff + ix] += wv * grow[ox];
                            }
                        }
                    }
                    gk[widx] += acc;
                }
            }
        }
    }
    (gx, gk, gb)
}

/// Geometry of a transposed convolution: input `[c_in, h, w]`, kernel
/// `[c_in, c_out, k, k]`, output extent `(h - 1) * stride - 2 * pad + k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeconvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn out_w(&self) -> usize {
        (self.w - 1) * self.stride + self.k - 2 * self.pad
    }
}

pub fn deconv2d_forward(g: &DeconvGeometry, x: &[f64], k: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.c_out * oh * ow];
    if let Some(b) = bias {
        for co in 0..g.c_out {
            out[co * oh * ow..(co + 1) * oh * ow].iter_mut().for_each(|v| *v = b[co]);
        }
    }
    deconv_scatter(g, |co, ci, oy, ox, iy, ix, widx| {
        out[(co * oh + oy) * ow + ox] += x[(ci * g.h + iy) * g.w + ix] * k[widx];
    });
    out
}

pub fn deconv2d_backward(
    g: &DeconvGeometry,
    x: &[f64],
    k: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        gb[co] = gout[co * oh * ow..(co + 1) * oh * ow].iter().sum();
    }
    deconv_scatter(g, |co, ci, oy, ox, iy, ix, widx| {
        let go = gout[(co * oh + oy) * ow + ox];
        let xi = (ci * g.h + iy) * g.w + ix;
        gx[xi] += go * k[widx];
        gk[widx] += go * x[xi];
    });
    (gx, gk, gb)
}

/// Visits every (output, input, weight) triple of a transposed convolution in
/// a fixed order, skipping targets cropped by the padding.
fn deconv_scatter(
    g: &DeconvGeometry,
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize),
) {
    let (oh, ow) = (g.out_h() as isize, g.out_w() as isize);
    for ci in 0..g.c_in {
        for co in 0..g.c_out {
            for iy in 0..g.h {
                for ky in 0..g.k {
                    let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                    if oy < 0 || oy >= oh {
                        continue;
                    }
                    for ix in 0..g.w {
                        for kx in 0..g.k {
                            let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                            if ox < 0 || ox >= ow {
                                continue;
                            }
                            let widx = ((ci * g.c_out + co) * g.k + ky) * g.k + kx;
                            f(co, ci, oy as usize, ox as usize, iy, ix, widx);
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 non-overlapping max pool. Odd extents are handled by replicating the
/// last row/column. Returns the pooled values and, per output, the flat input
/// index that won (first in row-major order on ties).
pub fn maxpool2_forward(c: usize, h: usize, w: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for dy in 0..2 {
                    let iy = (2 * oy + dy).min(h - 1);
                    for dx in 0..2 {
                        let ix = (2 * ox + dx).min(w - 1);
                        let i = base + iy * w + ix;
                        if best_i == usize::MAX || x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// Separable bilinear interpolation filter of size `k` (FCN-style upsampling init).
pub fn bilinear_filter(k: usize) -> Vec<f64> {
    let factor = k.div_ceil(2) as f64;
    let center = if k % 2 == 1 { factor - 1.0 } else { factor - 0.5 };
    let taps: Vec<f64> = (0..k)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor)
        .collect();
    let mut out = Vec::with_capacity(k * k);
    for ty in &taps {
        for tx in &taps {
            out.push(ty * tx);
        }
    }
    out
}
