use serde::{Deserialize, Serialize};

use fuselang_core::{CoreError, Result};

fn config_err<T>(msg: String) -> Result<T> {
    Err(CoreError::Config(msg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool_every_two: bool,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        ImageEncoderConfig {
            in_channels: 1,
            channels: vec![4, 4, 8, 8, 16, 16],
            kernel: 3,
            pool_every_two: true,
        }
    }
}

impl ImageEncoderConfig {
    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&self.in_channels)
    }

    pub fn pool_factor(&self) -> usize {
        if self.pool_every_two {
            1 << (self.channels.len() / 2)
        } else {
            1
        }
    }

    /// Feature-map extents for an `h x w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let f = self.pool_factor();
        if !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return config_err(format!(
                "image {h}x{w} not divisible by the encoder pooling factor {f}"
            ));
        }
        Ok((h / f, w / f))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.in_channels == 0 {
            return config_err(format!("invalid image encoder channels {:?}", self.channels));
        }
        if self.kernel.is_multiple_of(2) {
            return config_err(format!("image encoder kernel {} must be odd for same padding", self.kernel));
        }
        if self.pool_every_two && !self.channels.len().is_multiple_of(2) {
            return config_err(format!(
                "pooling after every two layers needs an even layer count, got {}",
                self.channels.len()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageEncoderConfig {
    pub vocab_size: usize,
    /// Units of the per-sentence LSTM; also the embedding width.
    pub sentence_units: usize,
    /// Units of the document LSTM (hierarchical) or the single LSTM (flat); this is `K`.
    pub doc_units: usize,
    pub hierarchical: bool,
}

impl Default for LanguageEncoderConfig {
    fn default() -> Self {
        LanguageEncoderConfig {
            vocab_size: 22,
            sentence_units: 16,
            doc_units: 16,
            hierarchical: true,
        }
    }
}

impl LanguageEncoderConfig {
    pub fn embed_dim(&self) -> usize {
        self.sentence_units
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.sentence_units == 0 || self.doc_units == 0 {
            return config_err(format!("invalid language encoder config {self:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    Stochastic,
    GumbelSoft,
    GumbelStraightThrough,
    /// Halting masses used directly as weights, no sampling.
    Expected,
    NoAttentionBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule {
            initial: 1.0,
            decay: 1e-4,
            floor: 0.5,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64) -> f64 {
        (self.initial * (-self.decay * step as f64).exp()).max(self.floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub t_max: usize,
    /// Width of the language side of the bilinear attention; must equal `K`.
    pub attention_units: usize,
    /// C-GRU state width; must equal the image feature depth `D`.
    pub gru_units: usize,
    pub kernel: usize,
    pub mode: FusionMode,
    pub temperature: TemperatureSchedule,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            t_max: 3,
            attention_units: 16,
            gru_units: 16,
            kernel: 1,
            mode: FusionMode::GumbelSoft,
            temperature: TemperatureSchedule::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.t_max < 1 {
            return config_err(format!("t_max must be at least 1, got {}", self.t_max));
        }
        if self.temperature.floor <= 0.0 || self.temperature.initial <= 0.0 {
            return config_err(format!("temperature must stay positive: {:?}", self.temperature));
        }
        if self.gru_units != d {
            return config_err(format!("gru_units {} must equal the image feature depth {d}", self.gru_units));
        }
        if self.attention_units != k {
            return config_err(format!(
                "attention_units {} must equal the language feature depth {k}",
                self.attention_units
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return config_err(format!("C-GRU kernel {} must be odd", self.kernel));
        }
        if self.mode == FusionMode::NoAttentionBaseline && self.t_max != 1 {
            return config_err(format!("the no-attention baseline runs a single step, got t_max {}", self.t_max));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Widths of the 1x1 classifier convolutions; the last one feeds the upsampler.
    pub classifier: Vec<usize>,
    /// Channels of the editing map, `D_e`.
    pub out_channels: usize,
    pub up_kernel: usize,
    pub up_stride: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            classifier: vec![16, 4],
            out_channels: 4,
            up_kernel: 16,
            up_stride: 8,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classifier.is_empty() || self.classifier.contains(&0) || self.out_channels == 0 {
            return config_err(format!("invalid decoder config {self:?}"));
        }
        if self.up_stride == 0 || self.up_stride % 2 == 1 || self.up_kernel != 2 * self.up_stride {
            return config_err(format!(
                "bilinear upsampling needs an even stride and kernel = 2 * stride, got kernel {}, stride {}",
                self.up_kernel, self.up_stride
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub text: LanguageEncoderConfig,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            channels: vec![256, 128, 64, 32, 31],
            kernel: 4,
            stride: 2,
            text: LanguageEncoderConfig::default(),
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.stride == 0 || self.kernel == 0 {
            return config_err(format!("invalid discriminator config {self:?}"));
        }
        self.text.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Segmentation,
    Colorization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub image: ImageEncoderConfig,
    pub text: LanguageEncoderConfig,
    pub fusion: FusionConfig,
    pub decoder: DecoderConfig,
    pub discriminator: Option<DiscriminatorConfig>,
    /// Weight of the L1 term in the colorization generator loss.
    pub l1_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Segmentation,
            image: ImageEncoderConfig::default(),
            text: LanguageEncoderConfig::default(),
            fusion: FusionConfig::default(),
            decoder: DecoderConfig::default(),
            discriminator: None,
            l1_weight: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.text.validate()?;
        self.fusion.validate(self.image.out_channels(), self.text.doc_units)?;
        self.decoder.validate()?;
        match self.task {
            Task::Segmentation => {}
            Task::Colorization => {
                if self.decoder.out_channels != 2 {
                    return config_err(format!(
                        "colorization predicts 2 chroma channels, decoder has {}",
                        self.decoder.out_channels
                    ));
                }
                match &self.discriminator {
                    Some(d) => d.validate()?,
                    None => return config_err("colorization needs a discriminator block".into()),
                }
            }
        }
        Ok(())
    }
}
