use fuselang_core::{CoreError, Graph, Result, Var};

/// Discriminator scores are clamped into `[SCORE_EPS, 1 - SCORE_EPS]` before logs.
pub const SCORE_EPS: f64 = 1e-7;

/// Mean pixel-wise softmax cross-entropy of an editing map `[D_e, H, W]`
/// against row-major labels.
pub fn seg_loss(g: &Graph, e: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy(e, labels)
}

#[derive(Clone, Copy, Debug)]
pub struct GanLoss {
    pub loss: Var,
    /// Scores that fell outside the clamp range.
    pub clamped: usize,
}

fn clamp_score(g: &Graph, d: Var) -> (Var, usize) {
    let clamped = g
        .value(d)
        .data()
        .iter()
        .filter(|&&v| !(SCORE_EPS..=1.0 - SCORE_EPS).contains(&v))
        .count();
    (g.clamp(d, SCORE_EPS, 1.0 - SCORE_EPS), clamped)
}

/// `log(1 − D(E')) + γ · mean|E − Y|`.
pub fn gen_loss(g: &Graph, e: Var, y: Var, d_score: Var, gamma: f64) -> Result<GanLoss> {
    if g.shape(e) != g.shape(y) {
        return Err(CoreError::Config(format!(
            "generator output {:?} and target {:?} differ",
            g.shape(e),
            g.shape(y)
        )));
    }
    let (d, clamped) = clamp_score(g, d_score);
    let adv = g.log(g.one_minus(d));
    let l1 = g.mean(g.abs(g.sub(e, y)?));
    let loss = g.add(g.sum(adv), g.scale(l1, gamma))?;
    Ok(GanLoss { loss, clamped })
}

/// `log D(E') + log(1 − D(Y))`, minimized by the discriminator.
pub fn disc_loss(g: &Graph, d_fake: Var, d_real: Var) -> Result<GanLoss> {
    let (f, cf) = clamp_score(g, d_fake);
    let (r, cr) = clamp_score(g, d_real);
    let loss = g.add(g.sum(g.log(f)), g.sum(g.log(g.one_minus(r))))?;
    Ok(GanLoss { loss, clamped: cf + cr })
}
