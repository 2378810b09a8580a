//! LSTM cell with gate order input, forget, candidate, output.

use fuselang_core::init::glorot_uniform;
use fuselang_core::{Bound, Graph, ParameterStore, Result, Tensor, Var};

use crate::init::param_rng;

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub units: usize,
}

impl LstmVars {
    pub fn bind(g: &Graph, p: &Bound, prefix: &str) -> Result<Self> {
        let wh = p.get(&format!("{prefix}.wh"))?;
        Ok(LstmVars {
            wx: p.get(&format!("{prefix}.wx"))?,
            wh,
            b: p.get(&format!("{prefix}.b"))?,
            units: g.shape(wh)[1],
        })
    }
}

/// Registers `{prefix}.wx [4H, input]`, `{prefix}.wh [4H, H]` and
/// `{prefix}.b [4H]` with the forget-gate bias set to one.
pub fn init_lstm(store: &mut ParameterStore, prefix: &str, input: usize, units: usize) -> Result<()> {
    let seed = store.seed();
    let wx = format!("{prefix}.wx");
    let wh = format!("{prefix}.wh");
    let t = glorot_uniform(&[4 * units, input], input, units, &mut param_rng(seed, &wx));
    store.insert(wx, t)?;
    let t = glorot_uniform(&[4 * units, units], units, units, &mut param_rng(seed, &wh));
    store.insert(wh, t)?;
    let mut b = Tensor::zeros(&[4 * units]);
    b.data_mut()[units..2 * units].fill(1.0);
    store.insert(format!("{prefix}.b"), b)
}

/// One step on a batch of columns: `x [E, B]`, `h, c [H, B]`.
pub fn lstm_step(g: &Graph, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let n = p.units;
    let z = g.add_col_bcast(g.add(g.matmul(p.wx, x)?, g.matmul(p.wh, h)?)?, p.b)?;
    let i = g.sigmoid(g.slice_rows(z, 0, n)?);
    let f = g.sigmoid(g.slice_rows(z, n, n)?);
    let cand = g.tanh(g.slice_rows(z, 2 * n, n)?);
    let o = g.sigmoid(g.slice_rows(z, 3 * n, n)?);
    let c2 = g.add(g.mul(f, c)?, g.mul(i, cand)?)?;
    let h2 = g.mul(o, g.tanh(c2))?;
    Ok((h2, c2))
}

/// Runs the cell over `xs`, one `[E, B]` input per step. Where `masks[t][j]`
/// is false, column `j` keeps its previous state. Returns the hidden state
/// after every step.
pub fn run_masked(g: &Graph, p: &LstmVars, xs: &[Var], masks: &[Vec<bool>], batch: usize) -> Result<Vec<Var>> {
    let mut h = g.constant(Tensor::zeros(&[p.units, batch]));
    let mut c = g.constant(Tensor::zeros(&[p.units, batch]));
    let mut out = Vec::with_capacity(xs.len());
    for (t, &x) in xs.iter().enumerate() {
        let (h2, c2) = lstm_step(g, p, x, h, c)?;
        let m = &masks[t];
        if m.iter().all(|&v| v) {
            h = h2;
            c = c2;
        } else {
            let keep = g.constant(Tensor::new(&[batch], m.iter().map(|&v| f64::from(u8::from(v))).collect())?);
            h = g.add(h, g.mul_row_bcast(g.sub(h2, h)?, keep)?)?;
            c = g.add(c, g.mul_row_bcast(g.sub(c2, c)?, keep)?)?;
        }
        out.push(h);
    }
    Ok(out)
}
