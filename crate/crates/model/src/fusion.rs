//! Recurrent attentive fusion: bilinear attention over language positions,
//! a convolutional GRU state update and per-region termination gates.

use fuselang_core::init::fan_in_uniform;
use fuselang_core::{Bound, CoreError, Graph, ParameterStore, Result, Tensor, Var};
use rand::Rng;
use serde::Serialize;

use crate::config::{FusionConfig, FusionMode};
use crate::encoders::LanguageFeatures;
use crate::init::{init_conv, param_rng};

const U_CLAMP: f64 = 1e-12;

pub fn init_fusion(store: &mut ParameterStore, prefix: &str, cfg: &FusionConfig, d: usize, k: usize) -> Result<()> {
    cfg.validate(d, k)?;
    let seed = store.seed();
    if cfg.mode != FusionMode::NoAttentionBaseline {
        let name = format!("{prefix}.attention.W");
        let t = fan_in_uniform(&[d, k], d, &mut param_rng(seed, &name));
        store.insert(name, t)?;
    }
    let ks = cfg.kernel;
    for (i, c_in) in [d, k, d, k, d, k, d].into_iter().enumerate() {
        let name = format!("{prefix}.cgru.W{}", i + 1);
        let t = fan_in_uniform(&[d, c_in, ks, ks], c_in * ks * ks, &mut param_rng(seed, &name));
        store.insert(name, t)?;
    }
    for b in ["b1", "b2", "b"] {
        store.insert(format!("{prefix}.cgru.{b}"), Tensor::zeros(&[d]))?;
    }
    init_conv(store, &format!("{prefix}.gate"), d, 1, 1, true)
}

#[derive(Clone, Copy, Debug)]
pub struct CgruVars {
    pub w: [Var; 7],
    pub b1: Var,
    pub b2: Var,
    pub b: Var,
}

impl CgruVars {
    pub fn bind(p: &Bound, prefix: &str) -> Result<Self> {
        let mut w = Vec::with_capacity(7);
        for i in 1..=7 {
            w.push(p.get(&format!("{prefix}.W{i}"))?);
        }
        Ok(CgruVars {
            w: w.try_into().unwrap(),
            b1: p.get(&format!("{prefix}.b1"))?,
            b2: p.get(&format!("{prefix}.b2"))?,
            b: p.get(&format!("{prefix}.b"))?,
        })
    }
}

/// `β_ij ∝ exp(s_iᵀ W u_j)` over valid language positions and
/// `û_i = Σ_j β_ij u_j`. `s` is `[D, R]`, `u` is `[K, L]`, `w` is `[D, K]`.
/// Returns `Û [K, R]` and `β [R, L]`.
pub fn attend(g: &Graph, s: Var, u: Var, w: Var, mask: &[bool]) -> Result<(Var, Var)> {
    let scores = g.matmul(g.transpose(s)?, g.matmul(w, u)?)?;
    let beta = g.softmax_masked(scores, 1, Some(mask))?;
    let u_hat = g.matmul(u, g.transpose(beta)?)?;
    Ok((u_hat, beta))
}

/// One C-GRU update on `[C, M, N]` maps:
/// z = σ(W1⊗S + W2⊗Û + b1), r = σ(W3⊗S + W4⊗Û + b2),
/// c = ReLU(W5⊗(r⊙S) + W6⊗Û + b), h = (1−z)⊙S + z⊙c, S' = W7⊗h.
/// Returns `(S', Ô = h)`.
pub fn cgru_step(g: &Graph, p: &CgruVars, s: Var, u_hat: Var) -> Result<(Var, Var)> {
    let ks = g.shape(p.w[0]);
    let pad = ks[2] / 2;
    let conv = |x: Var, w: Var, b: Option<Var>| g.conv2d(x, w, b, 1, pad);
    let z = g.sigmoid(g.add(conv(s, p.w[0], Some(p.b1))?, conv(u_hat, p.w[1], None)?)?);
    let r = g.sigmoid(g.add(conv(s, p.w[2], Some(p.b2))?, conv(u_hat, p.w[3], None)?)?);
    let c = g.relu(g.add(conv(g.mul(r, s)?, p.w[4], Some(p.b))?, conv(u_hat, p.w[5], None)?)?);
    let h = g.add(g.mul(g.one_minus(z), s)?, g.mul(z, c)?)?;
    let s_next = conv(h, p.w[6], None)?;
    Ok((s_next, h))
}

/// Termination gate pre-activations `w·s_i + b` as `[1, R]`.
pub fn gate_logits(g: &Graph, w: Var, b: Var, s: Var) -> Result<Var> {
    let a = g.conv2d(s, w, Some(b), 1, 0)?;
    let sh = g.shape(a);
    g.reshape(a, &[1, sh[1] * sh[2]])
}

/// Log halting masses `[T, R]` from gate pre-activations `a^t` with
/// `p^t = σ(a^t)`: `log β^t = log p^t + Σ_{k<t} log(1 − p^k)` for `t < T`,
/// and the last step takes the remaining mass `Σ_{k<T} log(1 − p^k)`.
pub fn log_halting_masses(g: &Graph, logits: &[Var]) -> Result<Var> {
    let t_max = logits.len();
    let mut rows = Vec::with_capacity(t_max);
    let mut carry: Option<Var> = None;
    for (t, &a) in logits.iter().enumerate() {
        let row = if t + 1 < t_max {
            let lp = g.log_sigmoid(a);
            match carry {
                Some(c) => g.add(lp, c)?,
                None => lp,
            }
        } else {
            match carry {
                Some(c) => c,
                None => g.scale(a, 0.0),
            }
        };
        rows.push(row);
        let lq = g.log_sigmoid(g.scale(a, -1.0));
        carry = Some(match carry {
            Some(c) => g.add(c, lq)?,
            None => lq,
        });
    }
    g.concat(&rows)
}

/// Raw masses `p^t Π_{k<t}(1 − p^k)` and the residual `Π_k (1 − p^k)`.
pub fn halting_masses_raw(p: &[f64]) -> (Vec<f64>, f64) {
    let mut alive = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for &q in p {
        out.push(q * alive);
        alive *= 1.0 - q;
    }
    (out, alive)
}

/// Masses with the residual folded into the final step.
pub fn halting_masses(p: &[f64]) -> Vec<f64> {
    let (mut m, residual) = halting_masses_raw(p);
    if let Some(last) = m.last_mut() {
        *last += residual;
    }
    m
}

/// Standard Gumbel sample `−log(−log u)` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    -(-u.ln()).ln()
}

pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| gumbel_from_uniform(rng.gen::<f64>())).collect();
    Tensor::new(shape, data).expect("positive extents")
}

/// `softmax((log β + ε) / λ)` along axis 0.
pub fn gumbel_softmax(g: &Graph, log_beta: Var, eps: Var, lambda: f64) -> Result<Var> {
    if lambda <= 0.0 {
        return Err(CoreError::Config(format!("temperature must be positive, got {lambda}")));
    }
    g.softmax(g.scale(g.add(log_beta, eps)?, 1.0 / lambda), 0)
}

/// Per-column argmax of `log β + ε`, first index on ties.
pub fn gumbel_max(log_beta: &Tensor, eps: &Tensor) -> Vec<usize> {
    let (t, r) = (log_beta.shape()[0], log_beta.shape()[1]);
    let v = |i: usize, j: usize| log_beta.data()[i * r + j] + eps.data()[i * r + j];
    (0..r)
        .map(|j| (0..t).fold(0, |b, i| if v(i, j) > v(b, j) { i } else { b }))
        .collect()
}

pub fn one_hot(index: &[usize], rows: usize) -> Tensor {
    let cols = index.len();
    let mut t = Tensor::zeros(&[rows, cols]);
    for (j, &i) in index.iter().enumerate() {
        t.data_mut()[i * cols + j] = 1.0;
    }
    t
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    /// Fused map `[D, M, N]`.
    pub o: Var,
    /// Per-step candidates `Ô^t` as `[D, R]`.
    pub o_hats: Vec<Var>,
    pub gate_logits: Vec<Var>,
    /// Folded log halting masses `[T, R]`.
    pub log_beta: Var,
    /// Selection weights over steps `[T, R]`.
    pub weights: Var,
    /// Sampled stop steps, stochastic mode only.
    pub stops: Option<Vec<usize>>,
    /// `Σ_i log β_i^{ζ_i}` of the sampled stop steps, stochastic mode only.
    pub log_prob: Option<Var>,
    /// Attention `[R, L]` per step; empty for the baseline.
    pub attention: Vec<Var>,
}

/// Runs fusion for `cfg.t_max` steps. `noise` holds Gumbel samples `[T, R]`
/// (ignored by the expected and baseline modes) and `lambda` the relaxation
/// temperature.
#[allow(clippy::too_many_arguments)]
pub fn fuse(
    g: &Graph,
    p: &Bound,
    prefix: &str,
    cfg: &FusionConfig,
    v: Var,
    lang: &LanguageFeatures,
    noise: &Tensor,
    lambda: f64,
) -> Result<FusionOutput> {
    let vs = g.shape(v);
    if vs.len() != 3 {
        return Err(CoreError::Config(format!("fusion expects V as [D, M, N], got {vs:?}")));
    }
    let (d, m, n) = (vs[0], vs[1], vs[2]);
    let r = m * n;
    let k = g.shape(lang.u)[0];
    cfg.validate(d, k)?;
    let t_max = cfg.t_max;
    let uses_noise = matches!(
        cfg.mode,
        FusionMode::Stochastic | FusionMode::GumbelSoft | FusionMode::GumbelStraightThrough
    );
    if uses_noise && noise.shape() != [t_max, r] {
        return Err(CoreError::Config(format!(
            "fusion noise must be [{t_max}, {r}], got {:?}",
            noise.shape()
        )));
    }

    let cgru = CgruVars::bind(p, &format!("{prefix}.cgru"))?;
    let gate_w = p.get(&format!("{prefix}.gate.w"))?;
    let gate_b = p.get(&format!("{prefix}.gate.b"))?;
    let w_att = match cfg.mode {
        FusionMode::NoAttentionBaseline => None,
        _ => Some(p.get(&format!("{prefix}.attention.W"))?),
    };

    let mut s = v;
    let mut o_hats = Vec::with_capacity(t_max);
    let mut logits = Vec::with_capacity(t_max);
    let mut attention = Vec::new();
    for _ in 0..t_max {
        let u_hat = match w_att {
            Some(w) => {
                let (u_hat, beta) = attend(g, g.reshape(s, &[d, r])?, lang.u, w, &lang.mask)?;
                attention.push(beta);
                u_hat
            }
            None => g.broadcast_cols(lang.last, r)?,
        };
        let (s_next, o_hat) = cgru_step(g, &cgru, s, g.reshape(u_hat, &[k, m, n])?)?;
        logits.push(gate_logits(g, gate_w, gate_b, s_next)?);
        o_hats.push(g.reshape(o_hat, &[d, r])?);
        s = s_next;
    }

    let log_beta = log_halting_masses(g, &logits)?;
    let mut stops = None;
    let mut log_prob = None;
    let weights = match cfg.mode {
        FusionMode::GumbelSoft => gumbel_softmax(g, log_beta, g.constant(noise.clone()), lambda)?,
        FusionMode::GumbelStraightThrough => {
            g.straight_through(gumbel_softmax(g, log_beta, g.constant(noise.clone()), lambda)?)?
        }
        FusionMode::Stochastic => {
            let idx = gumbel_max(&g.value(log_beta), noise);
            let hot = g.constant(one_hot(&idx, t_max));
            log_prob = Some(g.sum(g.mul(log_beta, hot)?));
            stops = Some(idx);
            hot
        }
        FusionMode::Expected | FusionMode::NoAttentionBaseline => g.exp(log_beta),
    };

    let mut o = None;
    for (t, &oh) in o_hats.iter().enumerate() {
        let term = g.mul_row_bcast(oh, g.slice_rows(weights, t, 1)?)?;
        o = Some(match o {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let o = g.reshape(o.unwrap(), &[d, m, n])?;
    Ok(FusionOutput {
        o,
        o_hats,
        gate_logits: logits,
        log_beta,
        weights,
        stops,
        log_prob,
        attention,
    })
}

/// Plain-value view of the halting state of one fusion run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HaltingRecord {
    /// Stop probabilities `p_i^t`, `[T][R]`.
    pub stop_prob: Vec<Vec<f64>>,
    /// Unfolded masses `p_i^t Π_{k<t}(1 − p_i^k)`.
    pub raw_mass: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    /// Masses with the residual folded into the last step.
    pub mass: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub stops: Option<Vec<usize>>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = t.rows_cols();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

impl HaltingRecord {
    pub fn from_output(g: &Graph, out: &FusionOutput) -> Self {
        let t_max = out.gate_logits.len();
        let stop_prob: Vec<Vec<f64>> = out
            .gate_logits
            .iter()
            .map(|&a| g.value(a).data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect())
            .collect();
        let r = stop_prob[0].len();
        let mut raw_mass = vec![vec![0.0; r]; t_max];
        let mut residual = vec![0.0; r];
        for i in 0..r {
            let p: Vec<f64> = (0..t_max).map(|t| stop_prob[t][i]).collect();
            let (m, res) = halting_masses_raw(&p);
            for t in 0..t_max {
                raw_mass[t][i] = m[t];
            }
            residual[i] = res;
        }
        HaltingRecord {
            stop_prob,
            raw_mass,
            residual,
            mass: rows_of(&g.value(out.log_beta).map(f64::exp)),
            weights: rows_of(&g.value(out.weights)),
            stops: out.stops.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionPeak {
    pub sentence: usize,
    pub weight: f64,
    pub tie: bool,
}

/// Attention weights per step, `[T][R][L]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionTrace {
    pub steps: Vec<Vec<Vec<f64>>>,
}

impl AttentionTrace {
    pub fn from_output(g: &Graph, out: &FusionOutput) -> Self {
        AttentionTrace {
            steps: out.attention.iter().map(|&b| rows_of(&g.value(b))).collect(),
        }
    }

    /// Highest-weight sentence per step and region; ties go to the lowest
    /// index and are flagged.
    pub fn peaks(&self) -> Vec<Vec<AttentionPeak>> {
        self.steps
            .iter()
            .map(|step| {
                step.iter()
                    .map(|row| {
                        let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                        let tie = row.iter().enumerate().any(|(j, &w)| j != best && w == row[best]);
                        AttentionPeak {
                            sentence: best,
                            weight: row[best],
                            tie,
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
