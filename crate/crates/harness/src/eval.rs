use anyhow::Result;
use fuselang_core::{Graph, Tensor};
use fuselang_metrics::{ConfusionAccumulator, MetricReport};
use fuselang_model::model::{colorize, forward, fusion_noise, predict_labels};
use fuselang_model::{FusionMode, Model, ModelConfig};
use rayon::prelude::*;

use crate::config::{RunConfig, RunTask};
use crate::data::Sample;

pub const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub seed: u64,
    pub lambda: f64,
    /// Use halting masses as weights (no sampling).
    pub expectation: bool,
}

impl EvalOptions {
    /// Fixed eval seed, temperature as scheduled at `step`.
    pub fn for_run(cfg: &RunConfig, step: u64) -> Self {
        EvalOptions {
            seed: cfg.training.eval_seed,
            lambda: cfg.model.fusion.temperature.at(step),
            expectation: cfg.training.expectation_eval,
        }
    }
}

fn eval_config(model: &ModelConfig, opts: &EvalOptions) -> ModelConfig {
    let mut cfg = model.clone();
    if opts.expectation && cfg.fusion.mode != FusionMode::NoAttentionBaseline {
        cfg.fusion.mode = FusionMode::Expected;
    }
    cfg
}

/// Nearest of white and the palette colors, as a class label.
pub fn classify_rgb(rgb: &Tensor, palette: &[[u8; 3]]) -> Vec<usize> {
    let n = rgb.numel() / 3;
    let d = rgb.data();
    let refs: Vec<[f64; 3]> = std::iter::once([255u8; 3])
        .chain(palette.iter().copied())
        .map(|c| c.map(|v| v as f64 / 255.0))
        .collect();
    (0..n)
        .map(|i| {
            let px = [d[i], d[n + i], d[2 * n + i]];
            let dist = |r: &[f64; 3]| (0..3).map(|c| (px[c] - r[c]).powi(2)).sum::<f64>();
            (0..refs.len()).fold(0, |b, k| if dist(&refs[k]) < dist(&refs[b]) { k } else { b })
        })
        .collect()
}

/// Predicted label map for one sample.
pub fn predict(cfg: &RunConfig, model: &Model, sample: &Sample, opts: &EvalOptions) -> Result<Vec<usize>> {
    let mcfg = eval_config(&model.config, opts);
    let g = Graph::new();
    let p = model.params.bind_where(&g, |_| false);
    let input = sample.input(cfg.task);
    let s = input.shape();
    let noise = fusion_noise(opts.seed, &[EVAL_STREAM, sample.index], mcfg.fusion.t_max, mcfg.regions(s[1], s[2])?);
    let x = g.constant(input.clone());
    Ok(match cfg.task {
        RunTask::CosalSeg => predict_labels(&g.value(forward(&g, &p, &mcfg, x, &sample.sentences, &noise, opts.lambda)?.edit)),
        RunTask::CosalColor => {
            let out = colorize(&g, &p, &mcfg, x, &sample.sentences, &noise, opts.lambda)?;
            let palette: Vec<[u8; 3]> = cfg.data.cosal.palette.iter().map(|c| c.rgb).collect();
            classify_rgb(&g.value(out.rgb), &palette)
        }
    })
}

/// Pooled metrics over `samples`. Deterministic: predictions are computed in
/// parallel but accumulated in sample order.
pub fn evaluate(cfg: &RunConfig, model: &Model, samples: &[Sample], opts: &EvalOptions) -> Result<MetricReport> {
    let preds: Vec<Result<Vec<usize>>> = samples.par_iter().map(|s| predict(cfg, model, s, opts)).collect();
    let classes = cfg.data.cosal.num_classes();
    let mut acc = ConfusionAccumulator::new(classes);
    for (s, p) in samples.iter().zip(preds) {
        acc.add(&p?, &s.labels)?;
    }
    Ok(acc.report())
}
