//! Text-conditioned discriminator with its own language encoder and attention.

use fuselang_core::init::fan_in_uniform;
use fuselang_core::{Bound, CoreError, Graph, ParameterStore, Result, Var};

use crate::config::DiscriminatorConfig;
use crate::encoders::{encode_text, init_text_encoder};
use crate::init::{init_conv, param_rng};

pub fn init_discriminator(store: &mut ParameterStore, prefix: &str, cfg: &DiscriminatorConfig) -> Result<()> {
    cfg.validate()?;
    let mut c_in = 3;
    for (i, &c) in cfg.channels.iter().enumerate() {
        init_conv(store, &format!("{prefix}.conv{i}"), c_in, c, cfg.kernel, true)?;
        c_in = c;
    }
    init_text_encoder(store, &format!("{prefix}.text"), &cfg.text)?;
    let k = cfg.text.doc_units;
    let name = format!("{prefix}.attention.W");
    let t = fan_in_uniform(&[k, k], k, &mut param_rng(store.seed(), &name));
    store.insert(name, t)?;
    init_conv(store, &format!("{prefix}.score"), c_in + k, 1, 1, true)
}

/// Probability that `image [3, H, W]` is a real rendering of `sentences`.
/// Region features from the strided conv stack are concatenated with the
/// attended text vector (query: final document encoding); each region is
/// scored through a sigmoid and the scores are averaged.
pub fn discriminate(g: &Graph, p: &Bound, prefix: &str, cfg: &DiscriminatorConfig, image: Var, sentences: &[Vec<u32>]) -> Result<Var> {
    let s = g.shape(image);
    if s.len() != 3 || s[0] != 3 {
        return Err(CoreError::Config(format!("discriminator expects [3, H, W], got {s:?}")));
    }
    let pad = (cfg.kernel.saturating_sub(cfg.stride)).div_ceil(2);
    let mut x = image;
    for i in 0..cfg.channels.len() {
        let w = p.get(&format!("{prefix}.conv{i}.w"))?;
        let b = p.get(&format!("{prefix}.conv{i}.b"))?;
        let h = g.shape(x)[1];
        if h + 2 * pad < cfg.kernel {
            return Err(CoreError::Config(format!(
                "discriminator input too small for {} stride-{} layers",
                cfg.channels.len(),
                cfg.stride
            )));
        }
        x = g.relu(g.conv2d(x, w, Some(b), cfg.stride, pad)?);
    }
    let fs = g.shape(x);
    let regions = fs[1] * fs[2];

    let lang = encode_text(g, p, &format!("{prefix}.text"), &cfg.text, sentences)?;
    let k = cfg.text.doc_units;
    let w = p.get(&format!("{prefix}.attention.W"))?;
    let scores = g.matmul(g.transpose(lang.last)?, g.matmul(w, lang.u)?)?;
    let beta = g.softmax_masked(scores, 1, Some(&lang.mask))?;
    let text = g.matmul(lang.u, g.transpose(beta)?)?;
    let text_map = g.reshape(g.broadcast_cols(text, regions)?, &[k, fs[1], fs[2]])?;
    let joint = g.concat(&[x, text_map])?;

    let w = p.get(&format!("{prefix}.score.w"))?;
    let b = p.get(&format!("{prefix}.score.b"))?;
    Ok(g.mean(g.sigmoid(g.conv2d(joint, w, Some(b), 1, 0)?)))
}
