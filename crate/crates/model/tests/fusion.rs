use fuselang_core::{grad_check_params, stream_rng, GradCheckOptions, Graph, ParameterStore, Tensor};
use fuselang_model::encoders::LanguageFeatures;
use fuselang_model::fusion::*;
use fuselang_model::{FusionConfig, FusionMode};
use proptest::prelude::*;
use rand::Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

#[test]
fn single_position_attention_copies_u() {
    let g = Graph::new();
    let s = g.constant(Tensor::uniform(&[3, 4], 1.0, &mut stream_rng(0, &[])));
    let u = g.constant(t(&[2, 1], &[0.7, -1.2]));
    let w = g.constant(Tensor::uniform(&[3, 2], 1.0, &mut stream_rng(1, &[])));
    let (uh, beta) = attend(&g, s, u, w, &[true]).unwrap();
    assert!(g.value(beta).data().iter().all(|&b| b == 1.0));
    let uh = g.value(uh).clone();
    for i in 0..4 {
        assert_eq!(uh.data()[i], 0.7);
        assert_eq!(uh.data()[4 + i], -1.2);
    }
}

#[test]
fn zero_bilinear_weight_averages_valid_positions() {
    let g = Graph::new();
    let s = g.constant(Tensor::uniform(&[2, 3], 1.0, &mut stream_rng(2, &[])));
    let u = g.constant(t(&[1, 3], &[1.0, 100.0, 3.0]));
    let w = g.constant(Tensor::zeros(&[2, 1]));
    let (uh, beta) = attend(&g, s, u, w, &[true, false, true]).unwrap();
    let b = g.value(beta).clone();
    for i in 0..3 {
        assert!((b.data()[i * 3] - 0.5).abs() < 1e-15 && b.data()[i * 3 + 1] == 0.0);
        assert!((g.value(uh).data()[i] - 2.0).abs() < 1e-14);
    }
    assert!(attend(&g, s, u, w, &[false, false, false]).is_err());
}

#[test]
fn scalar_attention_hand_case() {
    let g = Graph::new();
    let (uh, beta) = attend(
        &g,
        g.constant(t(&[1, 1], &[1.0])),
        g.constant(t(&[1, 2], &[0.0, 3f64.ln()])),
        g.constant(t(&[1, 1], &[1.0])),
        &[true, true],
    )
    .unwrap();
    let b = g.value(beta).clone();
    assert!((b.data()[0] - 0.25).abs() < 1e-15 && (b.data()[1] - 0.75).abs() < 1e-15);
    let v = g.value(uh).data()[0];
    assert!((v - 0.75 * 3f64.ln()).abs() < 1e-15);
    assert!((v - 0.8240).abs() < 5e-5);
}

fn cgru_store(d: usize, k: usize, fill: f64) -> ParameterStore {
    let cfg = FusionConfig {
        attention_units: k,
        gru_units: d,
        ..Default::default()
    };
    let mut s = ParameterStore::new(0);
    init_fusion(&mut s, "f", &cfg, d, k).unwrap();
    for (_, p) in s.iter_mut() {
        p.value = Tensor::full(p.value.shape(), fill);
    }
    s
}

#[test]
fn zero_cgru_halves_the_state() {
    let s = cgru_store(2, 3, 0.0);
    let g = Graph::new();
    let p = CgruVars::bind(&s.bind(&g), "f.cgru").unwrap();
    let st = Tensor::uniform(&[2, 2, 2], 1.0, &mut stream_rng(3, &[]));
    let uh = g.constant(Tensor::uniform(&[3, 2, 2], 1.0, &mut stream_rng(4, &[])));
    let (next, o) = cgru_step(&g, &p, g.constant(st.clone()), uh).unwrap();
    for (a, b) in g.value(o).data().iter().zip(st.data()) {
        assert!((a - 0.5 * b).abs() < 1e-15);
    }
    assert!(g.value(next).data().iter().all(|&v| v == 0.0));
}

#[test]
fn saturated_update_gate_takes_the_candidate() {
    let mut s = cgru_store(2, 2, 0.0);
    s.get_mut("f.cgru.b1").unwrap().data_mut().fill(100.0);
    s.get_mut("f.cgru.b").unwrap().data_mut().fill(1.0);
    let g = Graph::new();
    let p = CgruVars::bind(&s.bind(&g), "f.cgru").unwrap();
    let st = g.constant(Tensor::uniform(&[2, 3, 1], 1.0, &mut stream_rng(5, &[])));
    let uh = g.constant(Tensor::uniform(&[2, 3, 1], 1.0, &mut stream_rng(6, &[])));
    let (_, o) = cgru_step(&g, &p, st, uh).unwrap();
    assert!(g.value(o).data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn scalar_cgru_matches_hand_evaluation() {
    let w = [0.4, -0.7, 0.2, 0.9, -0.5, 0.6, 1.3];
    let (b1, b2, b) = (0.1, -0.2, 0.3);
    let (sv, uv) = (0.8, -0.6);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let z = sig(w[0] * sv + w[1] * uv + b1);
    let r = sig(w[2] * sv + w[3] * uv + b2);
    let c = (w[4] * r * sv + w[5] * uv + b).max(0.0);
    let h = (1.0 - z) * sv + z * c;
    let next = w[6] * h;

    let mut s = cgru_store(1, 1, 0.0);
    for (i, &v) in w.iter().enumerate() {
        s.get_mut(&format!("f.cgru.W{}", i + 1)).unwrap().data_mut()[0] = v;
    }
    s.get_mut("f.cgru.b1").unwrap().data_mut()[0] = b1;
    s.get_mut("f.cgru.b2").unwrap().data_mut()[0] = b2;
    s.get_mut("f.cgru.b").unwrap().data_mut()[0] = b;
    let g = Graph::new();
    let p = CgruVars::bind(&s.bind(&g), "f.cgru").unwrap();
    let (sn, o) = cgru_step(&g, &p, g.constant(t(&[1, 1, 1], &[sv])), g.constant(t(&[1, 1, 1], &[uv]))).unwrap();
    assert!((g.value(o).data()[0] - h).abs() < 1e-15);
    assert!((g.value(sn).data()[0] - next).abs() < 1e-15);
}

#[test]
fn cgru_rejects_mismatched_attention_depth() {
    let s = cgru_store(2, 3, 0.1);
    let g = Graph::new();
    let p = CgruVars::bind(&s.bind(&g), "f.cgru").unwrap();
    let st = g.constant(Tensor::zeros(&[2, 2, 2]));
    assert!(cgru_step(&g, &p, st, g.constant(Tensor::zeros(&[2, 2, 2]))).is_err());
}

#[test]
fn halting_mass_examples() {
    assert_eq!(halting_masses(&[1.0, 0.3, 0.6]), vec![1.0, 0.0, 0.0]);
    let (raw, res) = halting_masses_raw(&[0.5, 0.5, 0.5]);
    assert_eq!(raw, vec![0.5, 0.25, 0.125]);
    assert_eq!(res, 0.125);
    assert_eq!(halting_masses(&[0.5, 0.5, 0.5]), vec![0.5, 0.25, 0.25]);
}

#[test]
fn log_masses_match_value_masses() {
    let g = Graph::new();
    let logits = [0.3, -1.2, 2.0, 0.7];
    let vars: Vec<_> = logits.iter().map(|&a| g.constant(t(&[1, 1], &[a]))).collect();
    let lb = g.value(log_halting_masses(&g, &vars).unwrap()).clone();
    let p: Vec<f64> = logits.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
    for (a, b) in lb.data().iter().zip(halting_masses(&p)) {
        assert!((a.exp() - b).abs() < 1e-14);
    }
    let one = g.value(log_halting_masses(&g, &vars[..1]).unwrap()).clone();
    assert_eq!(one.data(), &[0.0]);
}

#[test]
fn masses_sum_to_one_over_1000_seeds() {
    for seed in 0..1000 {
        let mut rng = stream_rng(seed, &[]);
        let t_max = rng.gen_range(1..6);
        let p: Vec<f64> = (0..t_max).map(|_| rng.gen_range(1e-6..1.0 - 1e-6)).collect();
        let (raw, res) = halting_masses_raw(&p);
        assert!((raw.iter().sum::<f64>() + res - 1.0).abs() < 1e-10);
        assert!((halting_masses(&p).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((res - p.iter().map(|q| 1.0 - q).product::<f64>()).abs() < 1e-15);
    }
}

#[test]
fn gumbel_examples() {
    assert!((gumbel_from_uniform(0.5) - 0.36651).abs() < 1e-5);
    assert!(gumbel_from_uniform(0.0).is_finite() && gumbel_from_uniform(1.0).is_finite());

    let g = Graph::new();
    let lb = g.constant(Tensor::full(&[3, 2], (1.0f64 / 3.0).ln()));
    let eps = g.constant(Tensor::full(&[3, 2], 0.4));
    for lambda in [0.1, 1.0, 7.0] {
        let z = g.value(gumbel_softmax(&g, lb, eps, lambda).unwrap()).clone();
        assert!(z.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
    assert!(gumbel_softmax(&g, lb, eps, 0.0).is_err());
}

#[test]
fn zero_temperature_limit_is_one_hot_argmax() {
    for seed in 0..50 {
        let mut rng = stream_rng(seed, &[]);
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..0.95)).collect();
        let lb_t = t(&[3, 1], &halting_masses(&p).iter().map(|m| m.ln()).collect::<Vec<_>>());
        let eps_t = sample_gumbel(&mut rng, &[3, 1]);
        let g = Graph::new();
        let z = g.value(gumbel_softmax(&g, g.constant(lb_t.clone()), g.constant(eps_t.clone()), 1e-4).unwrap()).clone();
        let idx = gumbel_max(&lb_t, &eps_t)[0];
        let max = z.data().iter().cloned().fold(0.0, f64::max);
        assert!(max > 1.0 - 1e-6, "seed {seed}: {max}");
        assert_eq!(z.data()[idx], max);
    }
}

proptest! {
    #[test]
    fn gumbel_softmax_lies_on_simplex(logits in prop::collection::vec(-5.0f64..5.0, 6), u in prop::collection::vec(0.0f64..1.0, 6), lambda in 0.05f64..5.0) {
        let g = Graph::new();
        let lb = g.constant(t(&[3, 2], &logits));
        let eps = g.constant(t(&[3, 2], &u.iter().map(|&x| gumbel_from_uniform(x)).collect::<Vec<_>>()));
        let z = g.value(gumbel_softmax(&g, lb, eps, lambda).unwrap()).clone();
        for c in 0..2 {
            let s: f64 = (0..3).map(|r| z.data()[r * 2 + c]).sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
        prop_assert!(z.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn straight_through_selection_ignores_temperature(logits in prop::collection::vec(-5.0f64..5.0, 6), u in prop::collection::vec(0.0f64..1.0, 6), l1 in 0.01f64..10.0, l2 in 0.01f64..10.0) {
        let g = Graph::new();
        let lb = g.constant(t(&[3, 2], &logits));
        let eps = g.constant(t(&[3, 2], &u.iter().map(|&x| gumbel_from_uniform(x)).collect::<Vec<_>>()));
        let a = g.straight_through(gumbel_softmax(&g, lb, eps, l1).unwrap()).unwrap();
        let b = g.straight_through(gumbel_softmax(&g, lb, eps, l2).unwrap()).unwrap();
        let (va, vb) = (g.value(a).clone(), g.value(b).clone());
        prop_assert_eq!(va.data(), vb.data());
    }

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..10_000) {
        let mut rng = stream_rng(seed, &[]);
        let g = Graph::new();
        let s = g.constant(Tensor::uniform(&[2, 3], 2.0, &mut rng));
        let u = g.constant(Tensor::uniform(&[2, 4], 2.0, &mut rng));
        let w = g.constant(Tensor::uniform(&[2, 2], 2.0, &mut rng));
        let mask: Vec<bool> = (0..4).map(|j| j == 0 || rng.gen_bool(0.5)).collect();
        let (_, beta) = attend(&g, s, u, w, &mask).unwrap();
        let b = g.value(beta).clone();
        for i in 0..3 {
            let row = &b.data()[i * 4..(i + 1) * 4];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

struct Instance {
    cfg: FusionConfig,
    store: ParameterStore,
    v: Tensor,
    u: Tensor,
}

fn instance(mode: FusionMode, t_max: usize, seed: u64) -> Instance {
    let cfg = FusionConfig {
        t_max,
        attention_units: 3,
        gru_units: 2,
        mode,
        ..Default::default()
    };
    let mut store = ParameterStore::new(seed);
    init_fusion(&mut store, "fusion", &cfg, 2, 3).unwrap();
    let mut rng = stream_rng(seed, &[5]);
    for b in ["fusion.cgru.b1", "fusion.cgru.b2", "fusion.cgru.b", "fusion.gate.b"] {
        let p = store.get_mut(b).unwrap();
        *p = Tensor::uniform(p.shape(), 0.5, &mut rng);
    }
    Instance {
        cfg,
        store,
        v: Tensor::uniform(&[2, 2, 2], 1.0, &mut rng),
        u: Tensor::uniform(&[3, 3], 1.0, &mut rng),
    }
}

fn lang(g: &Graph, u: &Tensor) -> LanguageFeatures {
    let u = g.constant(u.clone());
    LanguageFeatures {
        u,
        mask: vec![true, true, false],
        last: g.columns(u, &[1]).unwrap(),
    }
}

const ALL_MODES: [FusionMode; 5] = [
    FusionMode::Stochastic,
    FusionMode::GumbelSoft,
    FusionMode::GumbelStraightThrough,
    FusionMode::Expected,
    FusionMode::NoAttentionBaseline,
];

#[test]
fn single_step_output_is_first_candidate() {
    for mode in ALL_MODES {
        let inst = instance(mode, 1, 7);
        let g = Graph::new();
        let noise = sample_gumbel(&mut stream_rng(1, &[]), &[1, 4]);
        let out = fuse(&g, &inst.store.bind(&g), "fusion", &inst.cfg, g.constant(inst.v.clone()), &lang(&g, &inst.u), &noise, 0.7).unwrap();
        let o = g.value(out.o).clone();
        let oh = g.value(out.o_hats[0]).clone();
        for (a, b) in o.data().iter().zip(oh.data()) {
            assert!((a - b).abs() < 1e-14, "{mode:?}");
        }
    }
}

#[test]
fn saturated_gate_makes_modes_agree() {
    let mut outs = Vec::new();
    for mode in [FusionMode::Stochastic, FusionMode::GumbelSoft, FusionMode::GumbelStraightThrough, FusionMode::Expected] {
        let mut inst = instance(mode, 3, 8);
        inst.store.get_mut("fusion.gate.b").unwrap().data_mut()[0] = 100.0;
        *inst.store.get_mut("fusion.gate.w").unwrap() = Tensor::zeros(&[1, 2, 1, 1]);
        let g = Graph::new();
        let noise = sample_gumbel(&mut stream_rng(2, &[]), &[3, 4]);
        let out = fuse(&g, &inst.store.bind(&g), "fusion", &inst.cfg, g.constant(inst.v.clone()), &lang(&g, &inst.u), &noise, 0.5).unwrap();
        let o = g.value(out.o).clone();
        let oh = g.value(out.o_hats[0]).clone();
        for (a, b) in o.data().iter().zip(oh.data()) {
            assert!((a - b).abs() < 1e-12, "{mode:?}");
        }
        outs.push(o);
    }
    assert_eq!(outs.len(), 4);
}

#[test]
fn gumbel_soft_fuse_passes_grad_check_and_is_deterministic() {
    for seed in 0..20 {
        let inst = instance(FusionMode::GumbelSoft, 3, seed);
        let noise = sample_gumbel(&mut stream_rng(seed, &[3]), &[3, 4]);
        let w = Tensor::uniform(&[2, 2, 2], 1.0, &mut stream_rng(seed, &[4]));
        let run = |g: &Graph, p: &fuselang_core::Bound| {
            let out = fuse(g, p, "fusion", &inst.cfg, g.constant(inst.v.clone()), &lang(g, &inst.u), &noise, 0.8)?;
            Ok(g.sum(g.mul(out.o, g.constant(w.clone()))?))
        };
        let report = grad_check_params(run, &inst.store, &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.failures.first());

        let a = Graph::new();
        let b = Graph::new();
        let va = a.value(run(&a, &inst.store.bind(&a)).unwrap()).data()[0];
        let vb = b.value(run(&b, &inst.store.bind(&b)).unwrap()).data()[0];
        assert_eq!(va.to_bits(), vb.to_bits());
    }
}

#[test]
fn zero_steps_and_baseline_steps_are_rejected() {
    let mut s = ParameterStore::new(0);
    let bad = FusionConfig { t_max: 0, ..Default::default() };
    assert!(init_fusion(&mut s, "f", &bad, 16, 16).is_err());
    let base = FusionConfig {
        t_max: 2,
        mode: FusionMode::NoAttentionBaseline,
        ..Default::default()
    };
    assert!(base.validate(16, 16).is_err());
}

#[test]
fn baseline_has_no_attention_parameters() {
    let mut with = ParameterStore::new(0);
    let mut without = ParameterStore::new(0);
    let att = FusionConfig { t_max: 1, ..Default::default() };
    let base = FusionConfig {
        mode: FusionMode::NoAttentionBaseline,
        ..att.clone()
    };
    init_fusion(&mut with, "fusion", &att, 16, 16).unwrap();
    init_fusion(&mut without, "fusion", &base, 16, 16).unwrap();
    assert_eq!(without.num_scalars("fusion.attention"), 0);
    assert_eq!(with.num_scalars("fusion.attention"), 16 * 16);
    assert_eq!(with.num_scalars("fusion") - without.num_scalars("fusion"), 256);
}

#[test]
fn halting_record_and_trace_invariants() {
    let inst = instance(FusionMode::Stochastic, 3, 11);
    let g = Graph::new();
    let noise = sample_gumbel(&mut stream_rng(3, &[]), &[3, 4]);
    let out = fuse(&g, &inst.store.bind(&g), "fusion", &inst.cfg, g.constant(inst.v.clone()), &lang(&g, &inst.u), &noise, 1.0).unwrap();
    let rec = HaltingRecord::from_output(&g, &out);
    for i in 0..4 {
        let raw: f64 = (0..3).map(|t| rec.raw_mass[t][i]).sum();
        assert!((raw + rec.residual[i] - 1.0).abs() < 1e-10);
        let folded: f64 = (0..3).map(|t| rec.mass[t][i]).sum();
        assert!((folded - 1.0).abs() < 1e-10);
    }
    let stops = rec.stops.unwrap();
    for (i, &z) in stops.iter().enumerate() {
        assert_eq!(rec.weights[z][i], 1.0);
    }
    let trace = AttentionTrace::from_output(&g, &out);
    assert_eq!(trace.steps.len(), 3);
    for step in &trace.steps {
        for row in step {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert_eq!(row[2], 0.0);
        }
    }
}

#[test]
fn uniform_attention_ties_go_to_lowest_index() {
    let mut inst = instance(FusionMode::GumbelSoft, 1, 12);
    *inst.store.get_mut("fusion.attention.W").unwrap() = Tensor::zeros(&[2, 3]);
    let g = Graph::new();
    let noise = sample_gumbel(&mut stream_rng(3, &[]), &[1, 4]);
    let out = fuse(&g, &inst.store.bind(&g), "fusion", &inst.cfg, g.constant(inst.v.clone()), &lang(&g, &inst.u), &noise, 1.0).unwrap();
    let peaks = AttentionTrace::from_output(&g, &out).peaks();
    assert_eq!(peaks.len(), 1);
    for p in &peaks[0] {
        assert_eq!(p.sentence, 0);
        assert!(p.tie);
        assert!((p.weight - 0.5).abs() < 1e-15);
    }
}
