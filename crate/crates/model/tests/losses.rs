use fuselang_core::{grad_check, grad_check_params, stream_rng, GradCheckOptions, Graph, ParameterStore, Tensor};
use fuselang_model::color::{lab_to_rgb, recombine, rgb_to_lab, CHROMA_SCALE};
use fuselang_model::decoder::{decode, init_decoder};
use fuselang_model::discriminator::{discriminate, init_discriminator};
use fuselang_model::losses::*;
use fuselang_model::{DecoderConfig, DiscriminatorConfig, LanguageEncoderConfig};
use rand::Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn scalar(g: &Graph, v: fuselang_core::Var) -> f64 {
    g.value(v).data()[0]
}

#[test]
fn uniform_logits_give_log_num_classes() {
    let g = Graph::new();
    let e = g.constant(Tensor::zeros(&[4, 3, 5]));
    let labels: Vec<usize> = (0..15).map(|i| i % 4).collect();
    let l = scalar(&g, seg_loss(&g, e, &labels).unwrap());
    assert!((l - 4f64.ln()).abs() < 1e-14);
}

#[test]
fn confident_correct_logits_saturate() {
    let g = Graph::new();
    let mut v = vec![-30.0; 3 * 4];
    let labels = [0, 2, 1, 2];
    for (i, &c) in labels.iter().enumerate() {
        v[c * 4 + i] = 30.0;
    }
    let l = scalar(&g, seg_loss(&g, g.constant(t(&[3, 2, 2], &v)), &labels).unwrap());
    assert!((0.0..1e-10).contains(&l));
}

#[test]
fn two_pixel_hand_case() {
    let g = Graph::new();
    let e = g.constant(t(&[2, 1, 2], &[1.0, 0.0, 0.0, 2.0]));
    let l = scalar(&g, seg_loss(&g, e, &[0, 0]).unwrap());
    let p0 = 1.0f64.exp() / (1.0f64.exp() + 1.0);
    let p1 = 1.0 / (1.0 + 2.0f64.exp());
    let expect = -(p0.ln() + p1.ln()) / 2.0;
    assert!((l - expect).abs() < 1e-14);
    assert!(seg_loss(&g, e, &[0, 2]).is_err());
    assert!(seg_loss(&g, e, &[0]).is_err());
}

#[test]
fn seg_loss_grad_check() {
    for seed in 0..20 {
        let mut rng = stream_rng(seed, &[]);
        let e = Tensor::uniform(&[3, 2, 3], 2.0, &mut rng);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let r = grad_check(|g: &Graph, x: &[fuselang_core::Var]| seg_loss(g, x[0], &labels), &[e], &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "seed {seed}: {:?}", r.failures.first());
    }
}

#[test]
fn gan_losses_at_half() {
    let g = Graph::new();
    let half = g.constant(t(&[1, 1], &[0.5]));
    let e = g.constant(t(&[2, 1, 1], &[0.3, -0.2]));
    let gl = gen_loss(&g, e, e, half, 0.7).unwrap();
    assert!((scalar(&g, gl.loss) - 0.5f64.ln()).abs() < 1e-10);
    assert_eq!(gl.clamped, 0);
    let dl = disc_loss(&g, half, half).unwrap();
    assert!((scalar(&g, dl.loss) - 2.0 * 0.5f64.ln()).abs() < 1e-10);
}

#[test]
fn gan_loss_hand_cases_and_limits() {
    let g = Graph::new();
    let e = g.constant(t(&[2, 1, 2], &[0.1, 0.2, 0.3, 0.4]));
    let y = g.constant(t(&[2, 1, 2], &[0.0, 0.4, 0.3, 0.0]));
    let d = g.constant(t(&[1, 1], &[0.8]));
    let gl = gen_loss(&g, e, y, d, 0.5).unwrap();
    let expect = 0.2f64.ln() + 0.5 * (0.1 + 0.2 + 0.0 + 0.4) / 4.0;
    assert!((scalar(&g, gl.loss) - expect).abs() < 1e-12);

    let dl = disc_loss(&g, g.constant(t(&[1, 1], &[0.25])), g.constant(t(&[1, 1], &[0.9]))).unwrap();
    assert!((scalar(&g, dl.loss) - (0.25f64.ln() + 0.1f64.ln())).abs() < 1e-12);

    let one = g.constant(t(&[1, 1], &[1.0]));
    let zero = g.constant(t(&[1, 1], &[0.0]));
    let sat = gen_loss(&g, e, e, one, 1.0).unwrap();
    assert!(scalar(&g, sat.loss).is_finite() && sat.clamped == 1);
    assert!((scalar(&g, sat.loss) - SCORE_EPS.ln()).abs() < 1e-6);
    let ds = disc_loss(&g, zero, one).unwrap();
    assert!(scalar(&g, ds.loss).is_finite() && ds.clamped == 2);

    assert!(gen_loss(&g, e, g.constant(Tensor::zeros(&[2, 2, 1])), d, 1.0).is_err());
}

#[test]
fn gan_losses_are_monotone_in_the_score() {
    let g = Graph::new();
    let e = g.constant(Tensor::zeros(&[2, 1, 1]));
    let mut prev_gen = f64::INFINITY;
    let mut prev_fake = f64::NEG_INFINITY;
    let mut prev_real = f64::INFINITY;
    for i in 1..100 {
        let s = g.constant(t(&[1, 1], &[i as f64 / 100.0]));
        let gen = scalar(&g, gen_loss(&g, e, e, s, 1.0).unwrap().loss);
        let half = g.constant(t(&[1, 1], &[0.5]));
        let fake = scalar(&g, disc_loss(&g, s, half).unwrap().loss);
        let real = scalar(&g, disc_loss(&g, half, s).unwrap().loss);
        assert!(gen < prev_gen && fake > prev_fake && real < prev_real);
        (prev_gen, prev_fake, prev_real) = (gen, fake, real);
    }
}

#[test]
fn gan_loss_grad_checks() {
    for seed in 0..20 {
        let mut rng = stream_rng(seed, &[]);
        let e = Tensor::uniform(&[2, 2, 2], 1.0, &mut rng);
        let y = Tensor::uniform(&[2, 2, 2], 1.0, &mut rng);
        let d = t(&[1, 1], &[rng.gen_range(0.1..0.9)]);
        let r = t(&[1, 1], &[rng.gen_range(0.1..0.9)]);
        let opts = GradCheckOptions::default();
        let a = grad_check(|g: &Graph, x: &[fuselang_core::Var]| Ok(gen_loss(g, x[0], x[1], x[2], 0.3)?.loss), &[e, y, d.clone()], &opts).unwrap();
        assert!(a.passed(), "seed {seed}: {:?}", a.failures.first());
        let b = grad_check(|g: &Graph, x: &[fuselang_core::Var]| Ok(disc_loss(g, x[0], x[1])?.loss), &[d, r], &opts).unwrap();
        assert!(b.passed(), "seed {seed}: {:?}", b.failures.first());
    }
}

#[test]
fn lab_reference_colors() {
    // sRGB (255, 0, 0) is Lab (53.2408, 80.0925, 67.2032)
    let rgb = lab_to_rgb(53.2408, 80.0925, 67.2032);
    for (c, want) in rgb.iter().zip([1.0, 0.0, 0.0]) {
        assert!((c - want).abs() < 1.0 / 255.0, "{rgb:?}");
    }
    let lab = rgb_to_lab([1.0, 0.0, 0.0]);
    assert!((lab[0] - 53.2408).abs() < 1e-2 && (lab[1] - 80.0925).abs() < 1e-2 && (lab[2] - 67.2032).abs() < 1e-2);

    let gray = lab_to_rgb(53.585, 0.0, 0.0);
    assert!((gray[0] - gray[1]).abs() < 1e-6 && (gray[1] - gray[2]).abs() < 1e-6);
    assert!((gray[0] - 0.5).abs() < 1.0 / 255.0);
}

#[test]
fn lab_round_trip_within_two_levels() {
    let mut rng = stream_rng(9, &[]);
    for _ in 0..100 {
        let rgb: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(0..256) as f64 / 255.0);
        let lab = rgb_to_lab(rgb);
        let back = lab_to_rgb(lab[0], lab[1], lab[2]);
        for c in 0..3 {
            assert!((back[c] - rgb[c]).abs() < 2.0 / 255.0, "{rgb:?} -> {back:?}");
        }
    }
}

#[test]
fn recombine_matches_pointwise_conversion_and_grad_checks() {
    let g = Graph::new();
    let l = t(&[1, 1, 2], &[0.5, 0.8]);
    let ab = t(&[2, 1, 2], &[0.1, -0.05, 0.2, 0.0]);
    let out = g.value(recombine(&g, g.constant(l.clone()), g.constant(ab.clone())).unwrap()).clone();
    for i in 0..2 {
        let want = lab_to_rgb(100.0 * l.data()[i], CHROMA_SCALE * ab.data()[i], CHROMA_SCALE * ab.data()[2 + i]);
        for c in 0..3 {
            assert_eq!(out.data()[c * 2 + i], want[c]);
        }
    }
    assert!(recombine(&g, g.constant(l.clone()), g.constant(Tensor::zeros(&[2, 2, 1]))).is_err());

    let mut checked = 0;
    for seed in 0..200 {
        if checked == 20 {
            break;
        }
        let mut rng = stream_rng(seed, &[1]);
        let l = Tensor::new(&[1, 2, 2], (0..4).map(|_| rng.gen_range(0.3..0.8)).collect()).unwrap();
        let ab = Tensor::uniform(&[2, 2, 2], 0.15, &mut rng);
        let n = 4;
        let fy = |i: usize| (100.0 * l.data()[i] + 16.0) / 116.0;
        let safe = (0..n).all(|i| {
            let rgb = lab_to_rgb(100.0 * l.data()[i], CHROMA_SCALE * ab.data()[i], CHROMA_SCALE * ab.data()[n + i]);
            let fx = fy(i) + CHROMA_SCALE * ab.data()[i] / 500.0;
            let fz = fy(i) - CHROMA_SCALE * ab.data()[n + i] / 200.0;
            rgb.iter().all(|&c| c > 0.02 && c < 0.98) && [fx, fy(i), fz].iter().all(|&f| (f - 6.0 / 29.0).abs() > 0.01)
        });
        if !safe {
            continue;
        }
        let w = Tensor::uniform(&[3, 2, 2], 1.0, &mut rng);
        let r = grad_check(
            |g: &Graph, x: &[fuselang_core::Var]| Ok(g.sum(g.mul(recombine(g, x[0], x[1])?, g.constant(w.clone()))?)),
            &[l, ab],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed(), "seed {seed}: {:?}", r.failures.first());
        checked += 1;
    }
    assert_eq!(checked, 20);
}

fn tiny_disc() -> DiscriminatorConfig {
    DiscriminatorConfig {
        channels: vec![3, 2],
        kernel: 4,
        stride: 2,
        text: LanguageEncoderConfig {
            vocab_size: 6,
            sentence_units: 2,
            doc_units: 2,
            hierarchical: true,
        },
    }
}

fn sentences() -> Vec<Vec<u32>> {
    vec![vec![1, 2, 3], vec![4, 5]]
}

#[test]
fn zero_discriminator_scores_one_half() {
    let cfg = tiny_disc();
    let mut s = ParameterStore::new(0);
    init_discriminator(&mut s, "disc", &cfg).unwrap();
    for (_, p) in s.iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let g = Graph::new();
    let img = g.constant(Tensor::uniform(&[3, 8, 8], 1.0, &mut stream_rng(0, &[])));
    let d = discriminate(&g, &s.bind(&g), "disc", &cfg, img, &sentences()).unwrap();
    assert_eq!(g.value(d).numel(), 1);
    assert!((scalar(&g, d) - 0.5).abs() < 1e-15);
    assert!(discriminate(&g, &s.bind(&g), "disc", &cfg, g.constant(Tensor::zeros(&[1, 8, 8])), &sentences()).is_err());
}

#[test]
fn discriminator_scores_are_probabilities_and_grad_check() {
    let cfg = tiny_disc();
    for seed in 0..100 {
        let mut s = ParameterStore::new(seed);
        init_discriminator(&mut s, "disc", &cfg).unwrap();
        let img = Tensor::uniform(&[3, 8, 8], 1.0, &mut stream_rng(seed, &[2])).map(|v| 0.5 + 0.5 * v);
        let g = Graph::new();
        let d = scalar(&g, discriminate(&g, &s.bind(&g), "disc", &cfg, g.constant(img.clone()), &sentences()).unwrap());
        assert!(d > 0.0 && d < 1.0);
        if seed < 20 {
            let r = grad_check_params(
                |g: &Graph, p: &fuselang_core::Bound| discriminate(g, p, "disc", &cfg, g.constant(img.clone()), &sentences()),
                &s,
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passed(), "seed {seed}: {:?}", r.failures.first());
        }
    }
}

#[test]
fn decoder_restores_input_resolution() {
    let cfg = DecoderConfig::default();
    let mut s = ParameterStore::new(1);
    init_decoder(&mut s, "decoder", &cfg, 16).unwrap();
    let g = Graph::new();
    let o = g.constant(Tensor::uniform(&[16, 6, 6], 1.0, &mut stream_rng(1, &[])));
    let e = decode(&g, &s.bind(&g), "decoder", &cfg, o).unwrap();
    assert_eq!(g.shape(e), vec![4, 48, 48]);
}

#[test]
fn constant_features_decode_to_constant_interior() {
    let cfg = DecoderConfig::default();
    let mut s = ParameterStore::new(2);
    init_decoder(&mut s, "decoder", &cfg, 16).unwrap();
    let g = Graph::new();
    let col: Vec<f64> = (0..16).map(|c| 0.1 * c as f64 - 0.4).collect();
    let o = Tensor::new(&[16, 6, 6], col.iter().flat_map(|&v| std::iter::repeat_n(v, 36)).collect()).unwrap();
    let e = g.value(decode(&g, &s.bind(&g), "decoder", &cfg, g.constant(o)).unwrap()).clone();
    for c in 0..4 {
        let reference = e.data()[c * 48 * 48 + 4 * 48 + 4];
        for y in 4..44 {
            for x in 4..44 {
                assert!((e.data()[(c * 48 + y) * 48 + x] - reference).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn decoder_matches_naive_composition() {
    let cfg = DecoderConfig {
        classifier: vec![3, 2],
        out_channels: 2,
        up_kernel: 4,
        up_stride: 2,
    };
    let mut s = ParameterStore::new(3);
    init_decoder(&mut s, "dec", &cfg, 4).unwrap();
    let mut rng = stream_rng(3, &[1]);
    for (_, p) in s.iter_mut() {
        p.value = Tensor::uniform(p.value.shape(), 1.0, &mut rng);
    }
    let (h, w) = (3, 2);
    let o = Tensor::uniform(&[4, h, w], 1.0, &mut rng);
    let g = Graph::new();
    let e = g.value(decode(&g, &s.bind(&g), "dec", &cfg, g.constant(o.clone())).unwrap()).clone();

    let conv1x1 = |x: &[f64], c_in: usize, wt: &Tensor, b: &Tensor, relu: bool| -> Vec<f64> {
        let c_out = b.numel();
        let n = h * w;
        let mut out = vec![0.0; c_out * n];
        for co in 0..c_out {
            for i in 0..n {
                let mut acc = b.data()[co];
                for ci in 0..c_in {
                    acc += wt.data()[co * c_in + ci] * x[ci * n + i];
                }
                out[co * n + i] = if relu { acc.max(0.0) } else { acc };
            }
        }
        out
    };
    let x1 = conv1x1(o.data(), 4, s.get("dec.cls0.w").unwrap(), s.get("dec.cls0.b").unwrap(), true);
    let x2 = conv1x1(&x1, 3, s.get("dec.cls1.w").unwrap(), s.get("dec.cls1.b").unwrap(), false);
    let up = s.get("dec.up.w").unwrap();
    let (oh, ow) = (2 * h, 2 * w);
    let mut want = vec![0.0; 2 * oh * ow];
    for ci in 0..2 {
        for co in 0..2 {
            for iy in 0..h {
                for ix in 0..w {
                    for ky in 0..4 {
                        for kx in 0..4 {
                            let oy = (iy * 2 + ky) as isize - 1;
                            let ox = (ix * 2 + kx) as isize - 1;
                            if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                continue;
                            }
                            want[(co * oh + oy as usize) * ow + ox as usize] +=
                                x2[(ci * h + iy) * w + ix] * up.data()[((ci * 2 + co) * 4 + ky) * 4 + kx];
                        }
                    }
                }
            }
        }
    }
    assert_eq!(e.shape(), &[2, oh, ow]);
    for (a, b) in e.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}
