use anyhow::Result;
use fuselang_core::{stream_rng, Graph, Tensor};
use fuselang_model::estimators::{EstimatorFixture, MeanAccumulator, MovingAverage};
use fuselang_model::fusion::{gumbel_max, sample_gumbel};
use fuselang_model::FusionMode;
use serde::{Deserialize, Serialize};

/// Parameters whose gradient is compared against the enumeration oracle.
pub const CHECKED: [&str; 3] = ["fusion.gate.w", "fusion.gate.b", "fusion.cgru.b"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub seed: u64,
    pub samples: usize,
    /// Gumbel-Softmax temperature.
    pub lambda: f64,
    pub baseline_decay: f64,
    /// Samples used for the straight-through selection check.
    pub st_samples: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            seed: 0,
            samples: 100_000,
            lambda: 0.01,
            baseline_decay: 0.9,
            st_samples: 2_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub name: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
    /// `(mean − exact) / SE` per coordinate; 0 where the two agree exactly.
    pub z: Vec<f64>,
    pub within_3se: bool,
    /// Mean per-coordinate variance.
    pub mean_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub options: CompareOptions,
    pub coordinates: Vec<String>,
    pub enumeration_gradient: Vec<f64>,
    pub expected_loss: f64,
    pub stochastic_loss_mean: f64,
    pub stochastic_loss_se: f64,
    /// Folded halting masses `[T][R]` and empirical stop frequencies.
    pub stop_probs: Vec<Vec<f64>>,
    pub stop_frequencies: Vec<Vec<f64>>,
    pub rows: Vec<EstimatorRow>,
    /// Fraction of shared-noise draws where the straight-through forward
    /// pass at λ = 1e-4 selects the same steps as the stochastic sample.
    pub straight_through_agreement: f64,
}

fn checked_coords(grads: &std::collections::BTreeMap<String, Tensor>) -> Vec<f64> {
    CHECKED.iter().flat_map(|n| grads[*n].data().to_vec()).collect()
}

fn row(name: &str, acc: &MeanAccumulator, exact: &[f64]) -> EstimatorRow {
    let mean = acc.mean();
    let variance = acc.variance();
    let std_error = acc.std_error();
    let z: Vec<f64> = mean
        .iter()
        .zip(exact)
        .zip(&std_error)
        .map(|((m, e), s)| if m == e { 0.0 } else { (m - e) / s })
        .collect();
    EstimatorRow {
        name: name.into(),
        within_3se: z.iter().all(|v| v.abs() <= 3.0),
        mean_variance: variance.iter().sum::<f64>() / variance.len() as f64,
        mean,
        variance,
        std_error,
        z,
    }
}

pub fn compare_estimators(opts: &CompareOptions) -> Result<CompareReport> {
    let fx = EstimatorFixture::new(opts.seed)?;
    let exact_run = fx.enumerate()?;
    let exact = checked_coords(&exact_run.grads);
    let (t_max, regions) = (EstimatorFixture::T, EstimatorFixture::REGIONS);

    let mut plain = MeanAccumulator::default();
    let mut based = MeanAccumulator::default();
    let mut loss = MeanAccumulator::default();
    let mut counts = vec![vec![0usize; regions]; t_max];
    let mut baseline = MovingAverage::new(opts.baseline_decay);
    let mut rng = stream_rng(opts.seed, &[1]);
    let mut rng_b = stream_rng(opts.seed, &[2]);
    for _ in 0..opts.samples {
        let s = fx.reinforce_sample(&mut rng, 0.0)?;
        plain.push(&checked_coords(&s.grads));
        loss.push(&[s.loss]);
        for (i, &t) in s.stops.iter().enumerate() {
            counts[t][i] += 1;
        }
        let b = baseline.value();
        let s = fx.reinforce_sample(&mut rng_b, b)?;
        baseline.update(s.loss);
        based.push(&checked_coords(&s.grads));
    }

    let mut gumbel = MeanAccumulator::default();
    let mut rng = stream_rng(opts.seed, &[3]);
    for _ in 0..opts.samples {
        let s = fx.gumbel_sample(&mut rng, opts.lambda)?;
        gumbel.push(&checked_coords(&s.grads));
    }

    let mut agree = 0usize;
    let mut rng = stream_rng(opts.seed, &[4]);
    for _ in 0..opts.st_samples {
        let noise = sample_gumbel(&mut rng, &[t_max, regions]);
        let g = Graph::new();
        let p = fx.store.bind_where(&g, |_| false);
        let out = fx.run(&g, &p, FusionMode::GumbelStraightThrough, &noise, 1e-4)?;
        let w = g.value(out.weights).clone();
        let hard: Vec<usize> = (0..regions)
            .map(|i| (0..t_max).find(|&t| w.data()[t * regions + i] == 1.0).unwrap_or(usize::MAX))
            .collect();
        agree += usize::from(hard == gumbel_max(&g.value(out.log_beta), &noise));
    }

    let n = opts.samples as f64;
    Ok(CompareReport {
        options: opts.clone(),
        coordinates: CHECKED
            .iter()
            .flat_map(|name| (0..exact_run.grads[*name].numel()).map(move |j| format!("{name}[{j}]")))
            .collect(),
        enumeration_gradient: exact.clone(),
        expected_loss: exact_run.expected_loss,
        stochastic_loss_mean: loss.mean()[0],
        stochastic_loss_se: loss.std_error()[0],
        stop_probs: exact_run.stop_probs,
        stop_frequencies: counts.iter().map(|r| r.iter().map(|&c| c as f64 / n).collect()).collect(),
        rows: vec![
            row("reinforce", &plain, &exact),
            row("reinforce+baseline", &based, &exact),
            row("gumbel-softmax", &gumbel, &exact),
        ],
        straight_through_agreement: agree as f64 / opts.st_samples.max(1) as f64,
    })
}

impl CompareReport {
    /// Plain-text table for the terminal.
    pub fn table(&self) -> String {
        let mut s = format!(
            "expected loss {:.6}  stochastic mean {:.6} ± {:.6}\n",
            self.expected_loss, self.stochastic_loss_mean, self.stochastic_loss_se
        );
        s.push_str(&format!("{:<22}{:>14}", "coordinate", "exact"));
        for r in &self.rows {
            s.push_str(&format!("{:>22}", r.name));
        }
        s.push('\n');
        for (j, c) in self.coordinates.iter().enumerate() {
            s.push_str(&format!("{c:<22}{:>14.6}", self.enumeration_gradient[j]));
            for r in &self.rows {
                s.push_str(&format!("{:>13.6} z={:>+6.2}", r.mean[j], r.z[j]));
            }
            s.push('\n');
        }
        s.push_str(&format!("{:<36}", "mean variance"));
        for r in &self.rows {
            s.push_str(&format!("{:>22.6}", r.mean_variance));
        }
        s.push_str(&format!("\nstraight-through agreement {:.4}\n", self.straight_through_agreement));
        s
    }
}
