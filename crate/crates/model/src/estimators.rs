//! Score-function (REINFORCE) and relaxed estimators for the stop-step
//! choice, plus an exhaustively enumerable fixture used as an oracle.

use std::collections::BTreeMap;

use fuselang_core::{Bound, Graph, ParameterStore, Result, Tensor, Var};
use rand::Rng;

use crate::config::{FusionConfig, FusionMode};
use crate::encoders::LanguageFeatures;
use crate::fusion::{fuse, init_fusion, one_hot, sample_gumbel, FusionOutput};
use crate::init::param_rng;

/// `l + (stop_grad(l) − b) · log p(ζ)`: its gradient is
/// `(l − b)∇log p(ζ) + ∇l`, the single-sample score-function estimate.
pub fn reinforce_surrogate(g: &Graph, loss: Var, log_prob: Var, baseline: f64) -> Result<Var> {
    let centered = g.offset(g.detach(loss), -baseline);
    g.add(loss, g.mul(centered, log_prob)?)
}

/// Value-level estimate `(1/|S|) Σ (l_s − b) g_s + h_s` from per-sample losses
/// `l_s`, score gradients `g_s = ∇log p(ζ_s)` and optional pathwise gradients `h_s`.
pub fn reinforce_estimate(losses: &[f64], score_grads: &[Vec<f64>], path_grads: Option<&[Vec<f64>]>, baseline: f64) -> Vec<f64> {
    assert!(!losses.is_empty() && losses.len() == score_grads.len());
    let n = score_grads[0].len();
    let mut out = vec![0.0; n];
    for (s, (&l, sg)) in losses.iter().zip(score_grads).enumerate() {
        for j in 0..n {
            out[j] += (l - baseline) * sg[j];
            if let Some(h) = path_grads {
                out[j] += h[s][j];
            }
        }
    }
    let m = losses.len() as f64;
    out.iter_mut().for_each(|v| *v /= m);
    out
}

/// Exponential moving average of observed losses.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingAverage {
    pub decay: f64,
    value: Option<f64>,
}

impl MovingAverage {
    pub fn new(decay: f64) -> Self {
        MovingAverage { decay, value: None }
    }

    /// Current baseline, 0 before the first observation.
    pub fn value(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }

    pub fn update(&mut self, loss: f64) {
        self.value = Some(match self.value {
            Some(v) => self.decay * v + (1.0 - self.decay) * loss,
            None => loss,
        });
    }
}

/// Every assignment of a stop step in `0..t_max` to each of `regions` regions,
/// with region 0 varying slowest.
pub fn enumerate_stops(t_max: usize, regions: usize) -> Vec<Vec<usize>> {
    let total = t_max.pow(regions as u32);
    (0..total)
        .map(|mut code| {
            let mut z = vec![0; regions];
            for i in (0..regions).rev() {
                z[i] = code % t_max;
                code /= t_max;
            }
            z
        })
        .collect()
}

/// Fused `[D, R]` output with region `i` taking the candidate of step `stops[i]`.
pub fn select_steps(g: &Graph, out: &FusionOutput, stops: &[usize]) -> Result<Var> {
    let hot = g.constant(one_hot(stops, out.o_hats.len()));
    let mut acc = None;
    for (t, &oh) in out.o_hats.iter().enumerate() {
        let term = g.mul_row_bcast(oh, g.slice_rows(hot, t, 1)?)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.unwrap())
}

/// Small fusion instance (2 regions, T = 2) with a squared-error loss on the
/// fused output, small enough to enumerate every stop combination.
#[derive(Clone, Debug)]
pub struct EstimatorFixture {
    pub cfg: FusionConfig,
    pub store: ParameterStore,
    pub v: Tensor,
    pub u: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug)]
pub struct Enumeration {
    pub expected_loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    /// Folded halting masses `[T][R]`.
    pub stop_probs: Vec<Vec<f64>>,
    /// Loss of each combination from [`enumerate_stops`].
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EstimatorSample {
    pub loss: f64,
    pub stops: Vec<usize>,
    pub grads: BTreeMap<String, Tensor>,
}

pub const FIXTURE_PREFIX: &str = "fusion";

impl EstimatorFixture {
    pub const D: usize = 2;
    pub const K: usize = 2;
    pub const L: usize = 2;
    pub const REGIONS: usize = 2;
    pub const T: usize = 2;

    pub fn new(seed: u64) -> Result<Self> {
        let cfg = FusionConfig {
            t_max: Self::T,
            attention_units: Self::K,
            gru_units: Self::D,
            mode: FusionMode::Stochastic,
            ..Default::default()
        };
        let mut store = ParameterStore::new(seed);
        init_fusion(&mut store, FIXTURE_PREFIX, &cfg, Self::D, Self::K)?;
        let mut rng = param_rng(seed, "fixture.inputs");
        let mut draw = |shape: &[usize], scale: f64| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let v = draw(&[Self::D, 1, Self::REGIONS], 1.0);
        let u = draw(&[Self::K, Self::L], 1.0);
        let target = draw(&[Self::D, Self::REGIONS], 1.0);
        Ok(EstimatorFixture { cfg, store, v, u, target })
    }

    /// Fusion on the fixture inputs in `mode` with the given Gumbel noise.
    pub fn run(&self, g: &Graph, p: &Bound, mode: FusionMode, noise: &Tensor, lambda: f64) -> Result<FusionOutput> {
        let cfg = FusionConfig { mode, ..self.cfg.clone() };
        let u = g.constant(self.u.clone());
        let lang = LanguageFeatures {
            u,
            mask: vec![true; Self::L],
            last: g.columns(u, &[Self::L - 1])?,
        };
        fuse(g, p, FIXTURE_PREFIX, &cfg, g.constant(self.v.clone()), &lang, noise, lambda)
    }

    pub fn loss_of(&self, g: &Graph, o: Var) -> Result<Var> {
        let o = g.reshape(o, &[Self::D, Self::REGIONS])?;
        let diff = g.sub(o, g.constant(self.target.clone()))?;
        Ok(g.sum(g.mul(diff, diff)?))
    }

    /// Exact `E_ζ[l(ζ)] = Σ_ζ p(ζ) l(ζ)` and its gradient by autodiff.
    pub fn enumerate(&self) -> Result<Enumeration> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let none = Tensor::zeros(&[Self::T, Self::REGIONS]);
        let out = self.run(&g, &p, FusionMode::Expected, &none, 1.0)?;
        let mut total = None;
        let mut losses = Vec::new();
        for z in enumerate_stops(Self::T, Self::REGIONS) {
            let l = self.loss_of(&g, select_steps(&g, &out, &z)?)?;
            losses.push(g.value(l).data()[0]);
            let hot = g.constant(one_hot(&z, Self::T));
            let prob = g.exp(g.sum(g.mul(out.log_beta, hot)?));
            let term = g.mul(prob, l)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        let total = total.unwrap();
        let grads = g.backward(total);
        let beta = g.value(out.log_beta).map(f64::exp);
        let stop_probs = (0..Self::T)
            .map(|t| beta.data()[t * Self::REGIONS..(t + 1) * Self::REGIONS].to_vec())
            .collect();
        let expected_loss = g.value(total).data()[0];
        Ok(Enumeration {
            expected_loss,
            grads: p.collect(&g, &grads),
            stop_probs,
            losses,
        })
    }

    /// One stochastic run with the REINFORCE surrogate gradient.
    pub fn reinforce_sample<R: Rng + ?Sized>(&self, rng: &mut R, baseline: f64) -> Result<EstimatorSample> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let noise = sample_gumbel(rng, &[Self::T, Self::REGIONS]);
        let out = self.run(&g, &p, FusionMode::Stochastic, &noise, 1.0)?;
        let loss = self.loss_of(&g, out.o)?;
        let obj = reinforce_surrogate(&g, loss, out.log_prob.unwrap(), baseline)?;
        let grads = g.backward(obj);
        let loss = g.value(loss).data()[0];
        Ok(EstimatorSample {
            loss,
            stops: out.stops.unwrap(),
            grads: p.collect(&g, &grads),
        })
    }

    /// One Gumbel-Softmax run at temperature `lambda` (pathwise gradient).
    pub fn gumbel_sample<R: Rng + ?Sized>(&self, rng: &mut R, lambda: f64) -> Result<EstimatorSample> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let noise = sample_gumbel(rng, &[Self::T, Self::REGIONS]);
        let out = self.run(&g, &p, FusionMode::GumbelSoft, &noise, lambda)?;
        let loss = self.loss_of(&g, out.o)?;
        let grads = g.backward(loss);
        let w = g.value(out.weights).clone();
        let stops = (0..Self::REGIONS)
            .map(|i| (0..Self::T).fold(0, |b, t| if w.data()[t * Self::REGIONS + i] > w.data()[b * Self::REGIONS + i] { t } else { b }))
            .collect();
        let loss = g.value(loss).data()[0];
        Ok(EstimatorSample {
            loss,
            stops,
            grads: p.collect(&g, &grads),
        })
    }
}

/// Running mean and standard error per coordinate.
#[derive(Clone, Debug, Default)]
pub struct MeanAccumulator {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: &[f64]) {
        if self.sum.is_empty() {
            self.sum = vec![0.0; x.len()];
            self.sum_sq = vec![0.0; x.len()];
        }
        for (j, &v) in x.iter().enumerate() {
            self.sum[j] += v;
            self.sum_sq[j] += v * v;
        }
        self.n += 1;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n as f64).collect()
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0))
            .collect()
    }

    pub fn std_error(&self) -> Vec<f64> {
        self.variance().iter().map(|v| (v / self.n as f64).sqrt()).collect()
    }
}
