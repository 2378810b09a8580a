//! Full editing model: image and language encoders, fusion, decoder and,
//! for colorization, the discriminator.

use fuselang_core::{stream_rng, Bound, CoreError, Graph, ParameterStore, Result, Tensor, Var};

use crate::color::recombine;
use crate::config::{FusionMode, ModelConfig, Task};
use crate::decoder::{decode, init_decoder};
use crate::discriminator::{discriminate, init_discriminator};
use crate::encoders::{encode_image, encode_text, init_image_encoder, init_text_encoder};
use crate::estimators::reinforce_surrogate;
use crate::fusion::{fuse, init_fusion, sample_gumbel, FusionOutput};
use crate::losses::{disc_loss, gen_loss, seg_loss, GanLoss};

pub const IMAGE: &str = "encoders.image";
pub const TEXT: &str = "encoders.text";
pub const FUSION: &str = "fusion";
pub const DECODER: &str = "decoder";
pub const DISC: &str = "disc";

pub fn is_discriminator_param(name: &str) -> bool {
    name.starts_with("disc.")
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new(seed);
        init_image_encoder(&mut params, IMAGE, &config.image)?;
        init_text_encoder(&mut params, TEXT, &config.text)?;
        init_fusion(
            &mut params,
            FUSION,
            &config.fusion,
            config.image.out_channels(),
            config.text.doc_units,
        )?;
        init_decoder(&mut params, DECODER, &config.decoder, config.decoder_input())?;
        if let (Task::Colorization, Some(d)) = (config.task, &config.discriminator) {
            init_discriminator(&mut params, DISC, d)?;
        }
        Ok(Model { config, params })
    }
}

impl ModelConfig {
    /// Channel depth of the fused map fed to the decoder.
    pub fn decoder_input(&self) -> usize {
        self.image.out_channels()
    }

    /// Number of fusion regions for an `h x w` input.
    pub fn regions(&self, h: usize, w: usize) -> Result<usize> {
        let (m, n) = self.image.output_extent(h, w)?;
        Ok(m * n)
    }
}

/// Gumbel noise `[T, R]` for one forward pass, drawn from its own stream.
pub fn fusion_noise(seed: u64, stream: &[u64], t_max: usize, regions: usize) -> Tensor {
    sample_gumbel(&mut stream_rng(seed, stream), &[t_max, regions])
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// Editing map `[D_e, H, W]`.
    pub edit: Var,
    pub fusion: FusionOutput,
}

/// Encoders, fusion and decoder on one example. `image` is `[C, H, W]`.
pub fn forward(g: &Graph, p: &Bound, cfg: &ModelConfig, image: Var, sentences: &[Vec<u32>], noise: &Tensor, lambda: f64) -> Result<Forward> {
    let v = encode_image(g, p, IMAGE, &cfg.image, image)?;
    let lang = encode_text(g, p, TEXT, &cfg.text, sentences)?;
    let fusion = fuse(g, p, FUSION, &cfg.fusion, v, &lang, noise, lambda)?;
    let edit = decode(g, p, DECODER, &cfg.decoder, fusion.o)?;
    let (es, is) = (g.shape(edit), g.shape(image));
    if es[1..] != is[1..] {
        return Err(CoreError::Config(format!(
            "editing map {es:?} does not match the image extents {is:?}"
        )));
    }
    Ok(Forward { edit, fusion })
}

#[derive(Clone, Debug)]
pub struct SegStep {
    /// Quantity to differentiate. In stochastic mode this is the REINFORCE
    /// surrogate; otherwise the loss itself.
    pub objective: Var,
    pub loss: Var,
    pub forward: Forward,
}

#[allow(clippy::too_many_arguments)]
pub fn seg_step(
    g: &Graph,
    p: &Bound,
    cfg: &ModelConfig,
    image: Var,
    sentences: &[Vec<u32>],
    labels: &[usize],
    noise: &Tensor,
    lambda: f64,
    baseline: f64,
) -> Result<SegStep> {
    let forward = forward(g, p, cfg, image, sentences, noise, lambda)?;
    let loss = seg_loss(g, forward.edit, labels)?;
    let objective = match (cfg.fusion.mode, forward.fusion.log_prob) {
        (FusionMode::Stochastic, Some(lp)) => reinforce_surrogate(g, loss, lp, baseline)?,
        _ => loss,
    };
    Ok(SegStep { objective, loss, forward })
}

/// Per-pixel argmax class of a `[D_e, H, W]` editing map.
pub fn predict_labels(edit: &Tensor) -> Vec<usize> {
    let c = edit.shape()[0];
    let n = edit.numel() / c;
    let d = edit.data();
    (0..n)
        .map(|i| (0..c).fold(0, |b, k| if d[k * n + i] > d[b * n + i] { k } else { b }))
        .collect()
}

#[derive(Clone, Debug)]
pub struct ColorForward {
    /// Predicted scaled chroma `[2, H, W]`.
    pub chroma: Var,
    /// Recombined sRGB `[3, H, W]`.
    pub rgb: Var,
    pub forward: Forward,
}

/// Colorization generator: chroma from the lightness input, recombined with
/// the same lightness into an sRGB image.
pub fn colorize(g: &Graph, p: &Bound, cfg: &ModelConfig, lightness: Var, sentences: &[Vec<u32>], noise: &Tensor, lambda: f64) -> Result<ColorForward> {
    let forward = forward(g, p, cfg, lightness, sentences, noise, lambda)?;
    let rgb = recombine(g, lightness, forward.edit)?;
    Ok(ColorForward {
        chroma: forward.edit,
        rgb,
        forward,
    })
}

fn disc_config(cfg: &ModelConfig) -> Result<&crate::config::DiscriminatorConfig> {
    cfg.discriminator
        .as_ref()
        .ok_or_else(|| CoreError::Config("colorization needs a discriminator block".into()))
}

/// Generator objective `log(1 − D(E')) + γ mean|E − Y|`.
#[allow(clippy::too_many_arguments)]
pub fn generator_step(
    g: &Graph,
    p: &Bound,
    cfg: &ModelConfig,
    lightness: Var,
    target_chroma: Var,
    sentences: &[Vec<u32>],
    noise: &Tensor,
    lambda: f64,
) -> Result<(GanLoss, ColorForward)> {
    let d = disc_config(cfg)?;
    let fake = colorize(g, p, cfg, lightness, sentences, noise, lambda)?;
    let score = discriminate(g, p, DISC, d, fake.rgb, sentences)?;
    Ok((gen_loss(g, fake.chroma, target_chroma, score, cfg.l1_weight)?, fake))
}

/// Discriminator objective `log D(E') + log(1 − D(Y))` with the generated
/// image treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step(
    g: &Graph,
    p: &Bound,
    cfg: &ModelConfig,
    lightness: Var,
    target_rgb: Var,
    sentences: &[Vec<u32>],
    noise: &Tensor,
    lambda: f64,
) -> Result<GanLoss> {
    let d = disc_config(cfg)?;
    let fake = colorize(g, p, cfg, lightness, sentences, noise, lambda)?;
    let fake_score = discriminate(g, p, DISC, d, g.detach(fake.rgb), sentences)?;
    let real_score = discriminate(g, p, DISC, d, target_rgb, sentences)?;
    disc_loss(g, fake_score, real_score)
}
