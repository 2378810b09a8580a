//! Spatial ops against direct nested-loop reference implementations.

use fuselang_core::init::{bilinear_deconv_kernel, bilinear_upsampler};
use fuselang_core::{stream_rng, Graph, Tensor};
use proptest::prelude::*;

fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kk) = (k.shape()[0], k.shape()[2]);
    let oh = (h + 2 * pad - kk) / stride + 1;
    let ow = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; co_n * oh * ow];
    for co in 0..co_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b[co];
                for ci in 0..ci_n {
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += k.data()[((co * ci_n + ci) * kk + ky) * kk + kx]
                                * x.data()[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = s;
            }
        }
    }
    out
}

/// Gather form of the transposed convolution: each output pixel sums the
/// input pixels whose stride grid lands on it.
fn naive_deconv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kk) = (k.shape()[1], k.shape()[2]);
    let oh = (h - 1) * stride + kk - 2 * pad;
    let ow = (w - 1) * stride + kk - 2 * pad;
    let mut out = vec![0.0; co_n * oh * ow];
    for co in 0..co_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for ci in 0..ci_n {
                    for ky in 0..kk {
                        for kx in 0..kk {
                            let ny = oy as isize + pad as isize - ky as isize;
                            let nx = ox as isize + pad as isize - kx as isize;
                            if ny < 0 || nx < 0 || ny % stride as isize != 0 || nx % stride as isize != 0 {
                                continue;
                            }
                            let (iy, ix) = ((ny / stride as isize) as usize, (nx / stride as isize) as usize);
                            if iy >= h || ix >= w {
                                continue;
                            }
                            s += x.data()[(ci * h + iy) * w + ix] * k.data()[((ci * co_n + co) * kk + ky) * kk + kx];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = s;
            }
        }
    }
    (out, oh, ow)
}

fn naive_pool(x: &Tensor) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let v = |dy: usize, dx: usize| x.data()[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                out.push(v(0, 0).max(v(0, 1)).max(v(1, 0)).max(v(1, 1)));
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loops() {
    for seed in 0..20 {
        let mut rng = stream_rng(seed, &[]);
        let x = Tensor::uniform(&[2, 5, 5], 1.0, &mut rng);
        let k = Tensor::uniform(&[3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::uniform(&[3], 1.0, &mut rng);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let g = Graph::new();
            let (xv, kv, bv) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
            let y = g.conv2d(xv, kv, Some(bv), stride, pad).unwrap();
            let expect = naive_conv(&x, &k, b.data(), stride, pad);
            assert_eq!(g.value(y).numel(), expect.len());
            for (a, e) in g.value(y).data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {e}");
            }
        }
    }
}

#[test]
fn maxpool_matches_nested_loops() {
    for seed in 0..20 {
        let x = Tensor::uniform(&[1, 6, 6], 1.0, &mut stream_rng(seed, &[1]));
        let g = Graph::new();
        let y = g.maxpool2(g.constant(x.clone())).unwrap();
        assert_eq!(g.value(y).data(), &naive_pool(&x)[..]);
    }
}

#[test]
fn deconv_matches_gather_form() {
    for seed in 0..20 {
        let mut rng = stream_rng(seed, &[2]);
        let x = Tensor::uniform(&[2, 3, 4], 1.0, &mut rng);
        let k = Tensor::uniform(&[2, 3, 4, 4], 1.0, &mut rng);
        for &(stride, pad) in &[(2, 1), (2, 0), (1, 1), (3, 1)] {
            let g = Graph::new();
            let y = g.deconv2d(g.constant(x.clone()), g.constant(k.clone()), None, stride, pad).unwrap();
            let (expect, oh, ow) = naive_deconv(&x, &k, stride, pad);
            assert_eq!(g.shape(y), vec![3, oh, ow]);
            for (a, e) in g.value(y).data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn bilinear_impulse_gives_tent_filter() {
    let g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 1], 1.0));
    let k = g.constant(bilinear_deconv_kernel(1, 1, 4));
    let y = g.deconv2d(x, k, None, 2, 0).unwrap();
    assert_eq!(g.shape(y), vec![1, 4, 4]);
    // bilinear weight 1 - |i - 1.5| / 2 evaluated at i = 0..3
    let taps: Vec<f64> = (0..4).map(|i| 1.0 - (i as f64 - 1.5).abs() / 2.0).collect();
    assert_eq!(taps, vec![0.25, 0.75, 0.75, 0.25]);
    for r in 0..4 {
        for c in 0..4 {
            assert!((g.value(y).data()[r * 4 + c] - taps[r] * taps[c]).abs() < 1e-15);
        }
    }
}

#[test]
fn bilinear_upsampler_preserves_constants_in_interior() {
    let (kernel, pad) = bilinear_upsampler(1, 1, 16, 8).unwrap();
    let g = Graph::new();
    let y = g.deconv2d(g.constant(Tensor::full(&[1, 6, 6], 2.5)), g.constant(kernel), None, 8, pad).unwrap();
    assert_eq!(g.shape(y), vec![1, 48, 48]);
    let v = g.value(y);
    for r in 4..44 {
        for c in 4..44 {
            assert!((v.data()[r * 48 + c] - 2.5).abs() < 1e-12, "({r},{c}) = {}", v.data()[r * 48 + c]);
        }
    }
}

#[test]
fn bilinear_upsampler_rejects_incompatible_kernel() {
    assert!(bilinear_upsampler(1, 1, 15, 8).is_err());
    assert!(bilinear_upsampler(1, 1, 6, 3).is_err());
}

proptest! {
    #[test]
    fn softmax_is_positive_and_normalized(
        vals in prop::collection::vec(-30.0f64..30.0, 12),
        axis in 0usize..2,
    ) {
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 4], vals).unwrap());
        let y = g.softmax(x, axis).unwrap();
        let v = g.value(y);
        prop_assert!(v.data().iter().all(|&p| p > 0.0));
        let (outer, inner) = if axis == 0 { (4, 3) } else { (3, 4) };
        for o in 0..outer {
            let s: f64 = (0..inner)
                .map(|j| if axis == 0 { v.data()[j * 4 + o] } else { v.data()[o * 4 + j] })
                .sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_is_deterministic(seed in 0u64..1000) {
        let mut rng = stream_rng(seed, &[]);
        let x = Tensor::uniform(&[2, 4, 4], 1.0, &mut rng);
        let k = Tensor::uniform(&[2, 2, 3, 3], 1.0, &mut rng);
        let run = || {
            let g = Graph::new();
            let y = g.conv2d(g.constant(x.clone()), g.constant(k.clone()), None, 1, 1).unwrap();
            let v = g.value(y).clone();
            v
        };
        prop_assert_eq!(run(), run());
    }
}
