use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fuselang_core::{checkpoint, stream_rng, Graph, ParameterStore, Tensor};
use fuselang_metrics::MetricReport;
use fuselang_model::estimators::MovingAverage;
use fuselang_model::model::{discriminator_step, fusion_noise, generator_step, is_discriminator_param, seg_step};
use fuselang_model::Model;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunTask};
use crate::data::Sample;
use crate::eval::{evaluate, EvalOptions};
use crate::optim::Adam;

pub const TRAIN_STREAM: u64 = 0x7A1;
pub const SHUFFLE_STREAM: u64 = 0x5F1;
pub const REPORT_SCHEMA: &str = "fuselang-train-report-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    /// Colorization only.
    pub mean_disc_loss: Option<f64>,
    pub clamped_scores: usize,
    pub temperature: f64,
    pub seconds: f64,
    pub test: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema: String,
    pub build: String,
    pub seed: u64,
    pub task: RunTask,
    pub steps: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_train: MetricReport,
    pub final_test: MetricReport,
    pub wall_clock_seconds: f64,
}

pub fn build_id() -> String {
    format!("fuselang-{}", env!("CARGO_PKG_VERSION"))
}

pub fn save_checkpoint(dir: &Path, model: &Model, cfg: &RunConfig, step: u64) -> Result<()> {
    let meta = BTreeMap::from([
        ("step".to_string(), step.to_string()),
        ("task".to_string(), format!("{:?}", cfg.task)),
        ("build".to_string(), build_id()),
    ]);
    checkpoint::save(dir, &model.params, &meta)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Loads a checkpoint. The configuration comes from `config` when given,
/// otherwise from the copy stored next to the parameters. The parameter
/// layout must match a freshly built model exactly.
pub fn load_checkpoint(dir: &Path, config: Option<RunConfig>) -> Result<(Model, RunConfig, u64)> {
    let cfg = match config {
        Some(c) => c,
        None => RunConfig::load(&dir.join("config.toml"))?,
    };
    let (store, meta) = checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let mut model = Model::new(cfg.model.clone(), store.seed())?;
    let diff = model.params.layout_diff(&store);
    if !diff.is_empty() {
        bail!(
            "checkpoint {} does not match the configured model:\n{}",
            dir.display(),
            diff.join("\n")
        );
    }
    model.params = store;
    let step = meta.get("step").and_then(|s| s.parse().ok()).unwrap_or(0);
    Ok((model, cfg, step))
}

#[derive(Clone, Debug, Default)]
struct BatchOutcome {
    loss: f64,
    disc_loss: Option<f64>,
    clamped: usize,
}

fn all_finite(loss: f64, grads: &BTreeMap<String, Tensor>) -> bool {
    loss.is_finite() && grads.values().all(|t| t.data().iter().all(|v| v.is_finite()))
}

/// Sums gradient maps in order and scales by `1 / n`.
fn mean_grads(parts: Vec<BTreeMap<String, Tensor>>) -> BTreeMap<String, Tensor> {
    let n = parts.len() as f64;
    let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
    for part in parts {
        for (k, t) in part {
            match out.get_mut(&k) {
                Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                None => {
                    out.insert(k, t);
                }
            }
        }
    }
    for t in out.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    out
}

type Grads = BTreeMap<String, Tensor>;

pub struct Trainer<'a> {
    pub cfg: &'a RunConfig,
    pub model: Model,
    pub step: u64,
    gen_opt: Adam,
    disc_opt: Adam,
    baseline: MovingAverage,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            cfg,
            model: Model::new(cfg.model.clone(), cfg.seed)?,
            step: 0,
            gen_opt: Adam::new(cfg.optimizer.clone()),
            disc_opt: Adam::new(cfg.optimizer.clone()),
            baseline: MovingAverage::new(cfg.training.baseline_decay),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.cfg.model.fusion.temperature.at(self.step)
    }

    fn noise(&self, sample: &Sample) -> Result<Tensor> {
        let s = sample.ink.shape();
        let f = &self.cfg.model.fusion;
        Ok(fusion_noise(
            self.cfg.seed,
            &[TRAIN_STREAM, self.step, sample.index],
            f.t_max,
            self.cfg.model.regions(s[1], s[2])?,
        ))
    }

    fn seg_grads(&self, store: &ParameterStore, sample: &Sample, lambda: f64, baseline: f64) -> Result<(f64, Grads)> {
        let g = Graph::new();
        let p = store.bind(&g);
        let noise = self.noise(sample)?;
        let x = g.constant(sample.ink.clone());
        let out = seg_step(&g, &p, store_cfg(self), x, &sample.sentences, &sample.labels, &noise, lambda, baseline)?;
        let grads = g.backward(out.objective);
        let loss = g.value(out.loss).data()[0];
        Ok((loss, p.collect(&g, &grads)))
    }

    fn gen_grads(&self, store: &ParameterStore, sample: &Sample, lambda: f64) -> Result<(f64, usize, Grads)> {
        let g = Graph::new();
        let p = store.bind_where(&g, |n| !is_discriminator_param(n));
        let noise = self.noise(sample)?;
        let (loss, _) = generator_step(
            &g,
            &p,
            store_cfg(self),
            g.constant(sample.lightness.clone()),
            g.constant(sample.chroma.clone()),
            &sample.sentences,
            &noise,
            lambda,
        )?;
        let grads = g.backward(loss.loss);
        let mut grads = p.collect(&g, &grads);
        grads.retain(|k, _| !is_discriminator_param(k));
        let value = g.value(loss.loss).data()[0];
        Ok((value, loss.clamped, grads))
    }

    fn disc_grads(&self, store: &ParameterStore, sample: &Sample, lambda: f64) -> Result<(f64, usize, Grads)> {
        let g = Graph::new();
        let p = store.bind_where(&g, is_discriminator_param);
        let noise = self.noise(sample)?;
        let loss = discriminator_step(
            &g,
            &p,
            store_cfg(self),
            g.constant(sample.lightness.clone()),
            g.constant(sample.rgb.clone()),
            &sample.sentences,
            &noise,
            lambda,
        )?;
        let grads = g.backward(loss.loss);
        let mut grads = p.collect(&g, &grads);
        grads.retain(|k, _| is_discriminator_param(k));
        let value = g.value(loss.loss).data()[0];
        Ok((value, loss.clamped, grads))
    }

    /// One optimizer step on `batch`. Colorization takes a generator step and
    /// then a discriminator step. On a non-finite loss or gradient the
    /// parameters are left unchanged and an error is returned.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<f64> {
        Ok(self.step_inner(batch)?.loss)
    }

    fn step_inner(&mut self, batch: &[&Sample]) -> Result<BatchOutcome> {
        let lambda = self.temperature();
        let store = &self.model.params;
        let mut outcome = BatchOutcome::default();
        match self.cfg.task {
            RunTask::CosalSeg => {
                let b = self.baseline.value();
                let results: Vec<Result<(f64, Grads)>> =
                    batch.par_iter().map(|s| self.seg_grads(store, s, lambda, b)).collect();
                let mut losses = Vec::new();
                let mut parts = Vec::new();
                for r in results {
                    let (l, g) = r?;
                    if !all_finite(l, &g) {
                        bail!(NonFinite { step: self.step, loss: l });
                    }
                    losses.push(l);
                    parts.push(g);
                }
                outcome.loss = losses.iter().sum::<f64>() / losses.len() as f64;
                let grads = mean_grads(parts);
                self.gen_opt.step(&mut self.model.params, &grads, |_| true);
                self.baseline.update(outcome.loss);
            }
            RunTask::CosalColor => {
                let results: Vec<_> = batch.par_iter().map(|s| self.gen_grads(store, s, lambda)).collect();
                let (mut losses, mut parts) = (Vec::new(), Vec::new());
                for r in results {
                    let (l, c, g) = r?;
                    if !all_finite(l, &g) {
                        bail!(NonFinite { step: self.step, loss: l });
                    }
                    outcome.clamped += c;
                    losses.push(l);
                    parts.push(g);
                }
                outcome.loss = losses.iter().sum::<f64>() / losses.len() as f64;
                let gen = mean_grads(parts);

                let mut next = self.model.params.clone();
                self.gen_opt.step(&mut next, &gen, |n| !is_discriminator_param(n));
                let results: Vec<_> = batch.par_iter().map(|s| self.disc_grads(&next, s, lambda)).collect();
                let (mut dl, mut parts) = (Vec::new(), Vec::new());
                for r in results {
                    let (l, c, g) = r?;
                    if !all_finite(l, &g) {
                        bail!(NonFinite { step: self.step, loss: l });
                    }
                    outcome.clamped += c;
                    dl.push(l);
                    parts.push(g);
                }
                outcome.disc_loss = Some(dl.iter().sum::<f64>() / dl.len() as f64);
                let disc = mean_grads(parts);
                self.disc_opt.step(&mut next, &disc, is_discriminator_param);
                self.model.params = next;
            }
        }
        self.step += 1;
        Ok(outcome)
    }
}

fn store_cfg<'b>(t: &'b Trainer<'_>) -> &'b fuselang_model::ModelConfig {
    &t.model.config
}

#[derive(Debug)]
pub struct NonFinite {
    pub step: u64,
    pub loss: f64,
}

impl std::fmt::Display for NonFinite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "non-finite loss or gradient at step {} (loss {})", self.step, self.loss)
    }
}

impl std::error::Error for NonFinite {}

/// Full training run. Checkpoints go to `out/checkpoint` every
/// `checkpoint_every` steps and at the end; on a non-finite loss the last
/// good parameters are written to `out/last-good` before returning the error.
pub fn train(cfg: &RunConfig, train: &[Sample], test: &[Sample], out: Option<&Path>) -> Result<(Model, TrainReport)> {
    if train.is_empty() {
        bail!("training set is empty");
    }
    let start = Instant::now();
    let mut t = Trainer::new(cfg)?;
    let tc = &cfg.training;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    'outer: for epoch in 0..tc.epochs {
        let e_start = Instant::now();
        order.shuffle(&mut stream_rng(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let (mut sum, mut dsum, mut clamped, mut n) = (0.0, 0.0, 0, 0u64);
        for chunk in order.chunks(tc.batch_size) {
            if tc.max_steps.is_some_and(|m| t.step >= m) {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let last_good = t.model.clone();
            let o = match t.step_inner(&batch) {
                Ok(o) => o,
                Err(e) => {
                    if let (Some(dir), true) = (out, e.is::<NonFinite>()) {
                        save_checkpoint(&dir.join("last-good"), &last_good, cfg, t.step)?;
                        log::error!("aborting: {e}; last good parameters saved");
                    }
                    return Err(e);
                }
            };
            sum += o.loss;
            dsum += o.disc_loss.unwrap_or(0.0);
            clamped += o.clamped;
            n += 1;
            if let Some(dir) = out {
                if tc.checkpoint_every > 0 && t.step % tc.checkpoint_every == 0 {
                    save_checkpoint(&dir.join("checkpoint"), &t.model, cfg, t.step)?;
                }
            }
        }
        if n == 0 {
            break 'outer;
        }
        let test_metrics = if tc.eval_every_epoch && !test.is_empty() {
            Some(evaluate(cfg, &t.model, test, &EvalOptions::for_run(cfg, t.step))?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            steps: t.step,
            mean_loss: sum / n as f64,
            mean_disc_loss: (cfg.task == RunTask::CosalColor).then(|| dsum / n as f64),
            clamped_scores: clamped,
            temperature: t.temperature(),
            seconds: e_start.elapsed().as_secs_f64(),
            test: test_metrics,
        };
        log::info!(
            "epoch {epoch} step {} loss {:.5}{} lambda {:.4} ({:.1}s){}",
            rec.steps,
            rec.mean_loss,
            rec.mean_disc_loss.map(|d| format!(" disc {d:.5}")).unwrap_or_default(),
            rec.temperature,
            rec.seconds,
            rec.test.as_ref().map(|m| format!(" test IoU {:.4}", m.average_iou)).unwrap_or_default()
        );
        epochs.push(rec);
    }
    let opts = EvalOptions::for_run(cfg, t.step);
    let final_train = evaluate(cfg, &t.model, train, &opts)?;
    let final_test = if test.is_empty() {
        final_train.clone()
    } else {
        evaluate(cfg, &t.model, test, &opts)?
    };
    if let Some(dir) = out {
        save_checkpoint(&dir.join("checkpoint"), &t.model, cfg, t.step)?;
    }
    let report = TrainReport {
        schema: REPORT_SCHEMA.into(),
        build: build_id(),
        seed: cfg.seed,
        task: cfg.task,
        steps: t.step,
        epochs,
        final_train,
        final_test,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok((t.model, report))
}
