use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Result;
use fuselang_core::Graph;
use fuselang_model::fusion::AttentionTrace;
use fuselang_model::model::{forward, fusion_noise};
use fuselang_model::Model;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Sample;
use crate::eval::{EvalOptions, EVAL_STREAM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPeak {
    pub region: usize,
    pub sentence: usize,
    pub weight: f64,
    pub tie: bool,
    pub direct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub example: u64,
    pub sentences: Vec<String>,
    pub direct: Vec<bool>,
    /// Region grid `(M, N)`.
    pub grid: (usize, usize),
    /// `steps[t][i]`: peak for region `i` at step `t`.
    pub steps: Vec<Vec<RegionPeak>>,
}

impl AttentionReport {
    /// Share of first-step peaks that land on a direct description.
    pub fn first_step_direct_fraction(&self) -> Option<f64> {
        let first = self.steps.first()?;
        Some(first.iter().filter(|p| p.direct).count() as f64 / first.len() as f64)
    }
}

pub fn inspect_attention(cfg: &RunConfig, model: &Model, sample: &Sample, opts: &EvalOptions) -> Result<AttentionReport> {
    let mcfg = &model.config;
    let g = Graph::new();
    let p = model.params.bind_where(&g, |_| false);
    let input = sample.input(cfg.task);
    let s = input.shape();
    let grid = mcfg.image.output_extent(s[1], s[2])?;
    let noise = fusion_noise(opts.seed, &[EVAL_STREAM, sample.index], mcfg.fusion.t_max, grid.0 * grid.1);
    let out = forward(&g, &p, mcfg, g.constant(input.clone()), &sample.sentences, &noise, opts.lambda)?;
    let trace = AttentionTrace::from_output(&g, &out.fusion);
    let steps = trace
        .peaks()
        .into_iter()
        .map(|regions| {
            regions
                .into_iter()
                .enumerate()
                .map(|(i, pk)| RegionPeak {
                    region: i,
                    direct: sample.direct.get(pk.sentence).copied().unwrap_or(false),
                    sentence: pk.sentence,
                    weight: pk.weight,
                    tie: pk.tie,
                })
                .collect()
        })
        .collect();
    Ok(AttentionReport {
        example: sample.index,
        sentences: sample.texts.clone(),
        direct: sample.direct.clone(),
        grid,
        steps,
    })
}

fn hue(k: usize) -> [f64; 3] {
    const TABLE: [[f64; 3]; 8] = [
        [0.90, 0.10, 0.10],
        [0.10, 0.60, 0.10],
        [0.10, 0.20, 0.90],
        [0.95, 0.65, 0.00],
        [0.60, 0.10, 0.70],
        [0.00, 0.70, 0.70],
        [0.85, 0.40, 0.60],
        [0.45, 0.45, 0.45],
    ];
    TABLE[k % TABLE.len()]
}

/// One panel per step, side by side: the input with each region tinted by
/// the color of its highest-weight sentence.
pub fn write_overlay(path: &Path, sample: &Sample, report: &AttentionReport) -> Result<()> {
    let s = sample.ink.shape();
    let (h, w) = (s[1], s[2]);
    let steps = report.steps.len().max(1);
    let (m, n) = report.grid;
    let (bh, bw) = (h / m, w / n);
    let width = steps * w;
    let mut px = vec![0u8; 3 * width * h];
    for t in 0..steps {
        for y in 0..h {
            for x in 0..w {
                let base = 1.0 - sample.ink.data()[y * w + x];
                let tint = report
                    .steps
                    .get(t)
                    .map(|r| hue(r[(y / bh).min(m - 1) * n + (x / bw).min(n - 1)].sentence));
                let o = 3 * (y * width + t * w + x);
                for c in 0..3 {
                    let v = match tint {
                        Some(col) => 0.5 * base + 0.5 * col[c] * base.max(0.3),
                        None => base,
                    };
                    px[o + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), width as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(&px)?;
    Ok(())
}
