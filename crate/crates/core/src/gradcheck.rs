//! Central finite-difference verification of graph gradients.

use rand::seq::index::sample;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParameterStore};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are judged on absolute error.
    pub floor: f64,
    /// Above this many coordinates a seeded random subset of this size is checked.
    pub max_coords: usize,
    pub seed: u64,
    /// A failing coordinate is retried this many times, each with a step ten
    /// times smaller, before it counts as a failure. A kink of ReLU, max-pool or
    /// clamp lying within the step of the evaluation point spoils the central
    /// difference but moves out of reach of a smaller step; a wrong derivative
    /// does not.
    pub refine: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: 10_000,
            seed: 0,
            refine: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinates above tolerance, worst first.
    pub failures: Vec<CoordinateMismatch>,
    /// Coordinates that passed only at a refined step.
    pub refined: usize,
    /// Coordinates where the loss or a gradient was not finite.
    pub non_finite: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.non_finite.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences on every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        let v = g.value(out).item();
        Ok(v)
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let selected: Vec<(usize, usize)> = if coords.len() > opts.max_coords {
        let mut rng = stream_rng(opts.seed, &[coords.len() as u64]);
        let mut idx = sample(&mut rng, coords.len(), opts.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| coords[k]).collect()
    } else {
        coords
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    let central = |work: &mut [Tensor], i: usize, j: usize, h: f64| -> Result<f64> {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let plus = eval(work)?;
        work[i].data_mut()[j] = orig - h;
        let minus = eval(work)?;
        work[i].data_mut()[j] = orig;
        Ok((plus - minus) / (2.0 * h))
    };
    for (i, j) in selected {
        let a = analytic[i].data()[j];
        let mut numeric = central(&mut work, i, j, opts.step)?;
        report.checked += 1;
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite.push((i, j));
            continue;
        }
        let mut rel = relative_error(a, numeric, opts.floor);
        let mut h = opts.step;
        for _ in 0..opts.refine {
            if rel <= opts.tol {
                break;
            }
            h /= 10.0;
            let n = central(&mut work, i, j, h)?;
            let r = relative_error(a, n, opts.floor);
            if n.is_finite() && r < rel {
                (numeric, rel) = (n, r);
            }
        }
        if rel <= opts.tol && h < opts.step {
            report.refined += 1;
        }
        report.max_rel_error = report.max_rel_error.max(rel);
        if rel > opts.tol {
            report.failures.push(CoordinateMismatch {
                input: i,
                index: j,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    report
        .failures
        .sort_by(|x, y| y.rel_error.total_cmp(&x.rel_error));
    Ok(report)
}

/// [`grad_check`] over every parameter of a store; `f` receives the store
/// bound to the graph.
pub fn grad_check_params<F>(f: F, store: &ParameterStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &Bound) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let inputs: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
    grad_check(
        |g, vars| {
            let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            f(g, &bound)
        },
        &inputs,
        opts,
    )
}
