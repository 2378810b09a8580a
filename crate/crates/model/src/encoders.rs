use fuselang_core::init::fan_in_uniform;
use fuselang_core::{Bound, CoreError, Graph, ParameterStore, Result, Tensor, Var};

use crate::config::{ImageEncoderConfig, LanguageEncoderConfig};
use crate::init::{init_conv, param_rng};
use crate::lstm::{init_lstm, lstm_step, run_masked, LstmVars};

pub const PAD: u32 = 0;

pub fn init_image_encoder(store: &mut ParameterStore, prefix: &str, cfg: &ImageEncoderConfig) -> Result<()> {
    cfg.validate()?;
    let mut c_in = cfg.in_channels;
    for (i, &c) in cfg.channels.iter().enumerate() {
        init_conv(store, &format!("{prefix}.conv{i}"), c_in, c, cfg.kernel, true)?;
        c_in = c;
    }
    Ok(())
}

/// Conv + ReLU stack with a 2x2 max pool after every second layer. `image`
/// is `[C, H, W]`; the result is `V [D, M, N]`.
pub fn encode_image(g: &Graph, p: &Bound, prefix: &str, cfg: &ImageEncoderConfig, image: Var) -> Result<Var> {
    let s = g.shape(image);
    if s.len() != 3 || s[0] != cfg.in_channels {
        return Err(CoreError::Config(format!(
            "image encoder expects [{}, H, W], got {s:?}",
            cfg.in_channels
        )));
    }
    cfg.output_extent(s[1], s[2])?;
    let mut x = image;
    for i in 0..cfg.channels.len() {
        let w = p.get(&format!("{prefix}.conv{i}.w"))?;
        let b = p.get(&format!("{prefix}.conv{i}.b"))?;
        x = g.relu(g.conv2d(x, w, Some(b), 1, cfg.kernel / 2)?);
        if cfg.pool_every_two && i % 2 == 1 {
            x = g.maxpool2(x)?;
        }
    }
    Ok(x)
}

/// Language feature map `U [K, L]` with validity mask over the `L` positions.
#[derive(Clone, Debug)]
pub struct LanguageFeatures {
    pub u: Var,
    pub mask: Vec<bool>,
    /// Final state of the top-level LSTM, `[K, 1]`.
    pub last: Var,
}

impl LanguageFeatures {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

pub fn init_text_encoder(store: &mut ParameterStore, prefix: &str, cfg: &LanguageEncoderConfig) -> Result<()> {
    cfg.validate()?;
    let e = cfg.embed_dim();
    let name = format!("{prefix}.embed");
    let t = fan_in_uniform(&[e, cfg.vocab_size], e, &mut param_rng(store.seed(), &name));
    store.insert(name, t)?;
    if cfg.hierarchical {
        init_lstm(store, &format!("{prefix}.fwd"), e, cfg.sentence_units)?;
        init_lstm(store, &format!("{prefix}.bwd"), e, cfg.sentence_units)?;
        init_lstm(store, &format!("{prefix}.doc"), 2 * cfg.sentence_units, cfg.doc_units)?;
    } else {
        init_lstm(store, &format!("{prefix}.flat"), e, cfg.doc_units)?;
    }
    Ok(())
}

/// Hierarchical mode: a shared bidirectional LSTM encodes each sentence
/// (final forward and backward states concatenated) and a document LSTM runs
/// over the sentence encodings, giving one column of `U` per sentence. Flat
/// mode: one LSTM over all tokens, one column per token.
pub fn encode_text(
    g: &Graph,
    p: &Bound,
    prefix: &str,
    cfg: &LanguageEncoderConfig,
    sentences: &[Vec<u32>],
) -> Result<LanguageFeatures> {
    if sentences.iter().all(|s| s.is_empty()) {
        return Err(CoreError::Config("text encoder needs at least one non-empty sentence".into()));
    }
    if let Some(&bad) = sentences.iter().flatten().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(CoreError::Config(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    if cfg.hierarchical {
        encode_hierarchical(g, p, prefix, sentences)
    } else {
        encode_flat(g, p, prefix, sentences)
    }
}

/// Sentence encodings `[2H, L]` from the shared bidirectional LSTM: final
/// forward state over the tokens stacked on the final backward state.
/// Empty sentences give zero columns.
pub fn encode_sentences(g: &Graph, p: &Bound, prefix: &str, sentences: &[Vec<u32>]) -> Result<Var> {
    let embed = p.get(&format!("{prefix}.embed"))?;
    let fwd = LstmVars::bind(g, p, &format!("{prefix}.fwd"))?;
    let bwd = LstmVars::bind(g, p, &format!("{prefix}.bwd"))?;
    let l = sentences.len();
    let max_len = sentences.iter().map(Vec::len).max().unwrap_or(0);

    let run = |reverse: bool| -> Result<Var> {
        let p = if reverse { &bwd } else { &fwd };
        if max_len == 0 {
            return Ok(g.constant(Tensor::zeros(&[p.units, l])));
        }
        let mut xs = Vec::with_capacity(max_len);
        let mut masks = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let ids: Vec<usize> = sentences
                .iter()
                .map(|s| match (t < s.len(), reverse) {
                    (false, _) => PAD as usize,
                    (true, false) => s[t] as usize,
                    (true, true) => s[s.len() - 1 - t] as usize,
                })
                .collect();
            xs.push(g.columns(embed, &ids)?);
            masks.push(sentences.iter().map(|s| t < s.len()).collect());
        }
        Ok(*run_masked(g, p, &xs, &masks, l)?.last().unwrap())
    };
    g.concat(&[run(false)?, run(true)?])
}

fn encode_hierarchical(g: &Graph, p: &Bound, prefix: &str, sentences: &[Vec<u32>]) -> Result<LanguageFeatures> {
    let doc = LstmVars::bind(g, p, &format!("{prefix}.doc"))?;
    let l = sentences.len();
    let enc = encode_sentences(g, p, prefix, sentences)?;

    let mask: Vec<bool> = sentences.iter().map(|s| !s.is_empty()).collect();
    let mut h = g.constant(Tensor::zeros(&[doc.units, 1]));
    let mut c = g.constant(Tensor::zeros(&[doc.units, 1]));
    let mut rows = Vec::with_capacity(l);
    for (j, &valid) in mask.iter().enumerate() {
        if valid {
            let x = g.columns(enc, &[j])?;
            (h, c) = lstm_step(g, &doc, x, h, c)?;
        }
        rows.push(g.reshape(h, &[1, doc.units])?);
    }
    let u = g.transpose(g.concat(&rows)?)?;
    Ok(LanguageFeatures { u, mask, last: h })
}

fn encode_flat(g: &Graph, p: &Bound, prefix: &str, sentences: &[Vec<u32>]) -> Result<LanguageFeatures> {
    let embed = p.get(&format!("{prefix}.embed"))?;
    let flat = LstmVars::bind(g, p, &format!("{prefix}.flat"))?;
    let ids: Vec<usize> = sentences.iter().flatten().map(|&t| t as usize).collect();
    let x = g.columns(embed, &ids)?;
    let mut h = g.constant(Tensor::zeros(&[flat.units, 1]));
    let mut c = g.constant(Tensor::zeros(&[flat.units, 1]));
    let mut rows = Vec::with_capacity(ids.len());
    for j in 0..ids.len() {
        (h, c) = lstm_step(g, &flat, g.columns(x, &[j])?, h, c)?;
        rows.push(g.reshape(h, &[1, flat.units])?);
    }
    let u = g.transpose(g.concat(&rows)?)?;
    Ok(LanguageFeatures {
        u,
        mask: vec![true; ids.len()],
        last: h,
    })
}
