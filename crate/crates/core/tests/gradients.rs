//! Every differentiable primitive against central finite differences on
//! randomized small shapes, 20 seeds each.

use fuselang_core::{grad_check, stream_rng, GradCheckOptions, Graph, Result, Tensor, Var};

const SEEDS: u64 = 20;

/// Reduces an op output to a scalar through fixed random weights so every
/// output coordinate contributes a distinct amount.
fn weighted_sum(g: &Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y);
    let w = g.constant(Tensor::uniform(&shape, 1.0, &mut stream_rng(seed, &[99])));
    Ok(g.sum(g.mul(y, w)?))
}

fn check<F>(name: &str, shapes: &[&[usize]], lo: f64, hi: f64, f: F)
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let opts = GradCheckOptions::default();
    for seed in 0..SEEDS {
        let mut rng = stream_rng(seed, &[name.len() as u64]);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| {
                let t = Tensor::uniform(s, 1.0, &mut rng);
                t.map(|u| lo + (u + 1.0) * 0.5 * (hi - lo))
            })
            .collect();
        let report = grad_check(
            |g, v| {
                let y = f(g, v)?;
                weighted_sum(g, y, seed)
            },
            &inputs,
            &opts,
        )
        .unwrap();
        assert!(
            report.passed(),
            "{name} seed {seed}: max rel err {} failures {:?}",
            report.max_rel_error,
            &report.failures[..report.failures.len().min(3)]
        );
    }
}

#[test]
fn elementwise_binary() {
    check("add", &[&[3, 4], &[3, 4]], -1.0, 1.0, |g, v| g.add(v[0], v[1]));
    check("sub", &[&[3, 4], &[3, 4]], -1.0, 1.0, |g, v| g.sub(v[0], v[1]));
    check("mul", &[&[3, 4], &[3, 4]], -1.0, 1.0, |g, v| g.mul(v[0], v[1]));
}

#[test]
fn elementwise_unary() {
    check("scale", &[&[5]], -1.0, 1.0, |g, v| Ok(g.scale(v[0], -2.5)));
    check("offset", &[&[5]], -1.0, 1.0, |g, v| Ok(g.offset(v[0], 0.7)));
    check("one_minus", &[&[5]], -1.0, 1.0, |g, v| Ok(g.one_minus(v[0])));
    check("sigmoid", &[&[6]], -4.0, 4.0, |g, v| Ok(g.sigmoid(v[0])));
    check("tanh", &[&[6]], -3.0, 3.0, |g, v| Ok(g.tanh(v[0])));
    check("exp", &[&[6]], -2.0, 2.0, |g, v| Ok(g.exp(v[0])));
    check("log", &[&[6]], 0.2, 3.0, |g, v| Ok(g.log(v[0])));
    check("log_sigmoid", &[&[6]], -6.0, 6.0, |g, v| Ok(g.log_sigmoid(v[0])));
    // kinks excluded by the sampling range
    check("relu", &[&[6]], 0.1, 2.0, |g, v| Ok(g.relu(v[0])));
    check("relu_neg", &[&[6]], -2.0, -0.1, |g, v| Ok(g.relu(v[0])));
    check("abs", &[&[6]], 0.1, 2.0, |g, v| Ok(g.abs(v[0])));
    check("clamp", &[&[6]], 0.1, 0.9, |g, v| Ok(g.clamp(v[0], 0.0, 1.0)));
}

#[test]
fn linear_algebra_and_layout() {
    check("matmul", &[&[3, 4], &[4, 2]], -1.0, 1.0, |g, v| g.matmul(v[0], v[1]));
    check("transpose", &[&[3, 4]], -1.0, 1.0, |g, v| g.transpose(v[0]));
    check("reshape", &[&[3, 4]], -1.0, 1.0, |g, v| g.reshape(v[0], &[2, 6]));
    check("concat", &[&[2, 3], &[1, 3]], -1.0, 1.0, |g, v| g.concat(&[v[0], v[1], v[0]]));
    check("slice_rows", &[&[5, 2]], -1.0, 1.0, |g, v| g.slice_rows(v[0], 1, 3));
    check("columns", &[&[3, 4]], -1.0, 1.0, |g, v| g.columns(v[0], &[2, 0, 2]));
    check("broadcast_cols", &[&[3, 1]], -1.0, 1.0, |g, v| g.broadcast_cols(v[0], 4));
    check("add_col_bcast", &[&[3, 4], &[3, 1]], -1.0, 1.0, |g, v| g.add_col_bcast(v[0], v[1]));
    check("mul_row_bcast", &[&[3, 4], &[1, 4]], -1.0, 1.0, |g, v| g.mul_row_bcast(v[0], v[1]));
    check("sum", &[&[3, 4]], -1.0, 1.0, |g, v| Ok(g.sum(v[0])));
    check("mean", &[&[3, 4]], -1.0, 1.0, |g, v| Ok(g.mean(v[0])));
}

#[test]
fn softmax_variants() {
    check("softmax0", &[&[3, 4]], -2.0, 2.0, |g, v| g.softmax(v[0], 0));
    check("softmax1", &[&[3, 4]], -2.0, 2.0, |g, v| g.softmax(v[0], 1));
    check("softmax_mid", &[&[2, 3, 2]], -2.0, 2.0, |g, v| g.softmax(v[0], 1));
    check("softmax_masked", &[&[3, 4]], -2.0, 2.0, |g, v| {
        g.softmax_masked(v[0], 1, Some(&[true, false, true, true]))
    });
    check("cross_entropy", &[&[4, 6]], -3.0, 3.0, |g, v| {
        g.softmax_cross_entropy(v[0], &[0, 3, 1, 1, 2, 3])
    });
}

#[test]
fn spatial_ops() {
    for &(stride, pad) in &[(1, 1), (1, 0), (2, 1)] {
        check("conv2d", &[&[2, 5, 5], &[3, 2, 3, 3], &[3]], -1.0, 1.0, move |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, pad)
        });
    }
    check("conv2d_1x1", &[&[3, 2, 2], &[2, 3, 1, 1]], -1.0, 1.0, |g, v| g.conv2d(v[0], v[1], None, 1, 0));
    check("deconv2d", &[&[2, 3, 3], &[2, 2, 4, 4], &[2]], -1.0, 1.0, |g, v| {
        g.deconv2d(v[0], v[1], Some(v[2]), 2, 1)
    });
    // random inputs have no ties within the step size
    check("maxpool2", &[&[2, 4, 6]], -1.0, 1.0, |g, v| g.maxpool2(v[0]));
}
