use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fuselang_cosal::CosalConfig;
use fuselang_model::{FusionMode, ModelConfig, Task};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "fuselang-config-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunTask {
    CosalSeg,
    CosalColor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct DataConfig {
    /// Directory written by `cosal-gen` (with `train/` and `test/`). When
    /// absent the scenes are generated in memory from `cosal`.
    pub dir: Option<PathBuf>,
    pub cosal: CosalConfig,
    /// Use only the first N training examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: "adam".into(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
    pub checkpoint_every: u64,
    pub eval_seed: u64,
    /// Decay of the REINFORCE moving-average baseline.
    pub baseline_decay: f64,
    /// Evaluate with halting masses as weights instead of sampled noise.
    pub expectation_eval: bool,
    /// Compute test metrics after every epoch.
    pub eval_every_epoch: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 8,
            epochs: 10,
            max_steps: None,
            checkpoint_every: 1000,
            eval_seed: 0,
            baseline_decay: 0.9,
            expectation_eval: false,
            eval_every_epoch: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub task: RunTask,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA.into(),
            task: RunTask::CosalSeg,
            seed: 0,
            out: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Segmentation defaults sized to the generator settings in `data.cosal`.
    pub fn segmentation() -> Self {
        let mut cfg = RunConfig::default();
        cfg.sync_dataset_shapes();
        cfg
    }

    /// Colorization defaults: lightness input, 2 chroma channels and a
    /// discriminator.
    pub fn colorization() -> Self {
        let mut cfg = RunConfig {
            task: RunTask::CosalColor,
            ..Default::default()
        };
        cfg.model.task = Task::Colorization;
        cfg.model.decoder.out_channels = 2;
        cfg.model.decoder.classifier = vec![16, 2];
        cfg.model.discriminator = Some(Default::default());
        cfg.sync_dataset_shapes();
        cfg
    }

    /// Sets vocabulary and class counts from the generator configuration.
    pub fn sync_dataset_shapes(&mut self) {
        let vocab = fuselang_cosal::Vocab::from_grammar(&self.data.cosal).len();
        self.model.text.vocab_size = vocab;
        if let Some(d) = self.model.discriminator.as_mut() {
            d.text.vocab_size = vocab;
        }
        if self.task == RunTask::CosalSeg {
            let c = self.data.cosal.num_classes();
            self.model.decoder.out_channels = c;
            if let Some(last) = self.model.decoder.classifier.last_mut() {
                *last = c;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!("config schema `{}` is not `{SCHEMA}`", self.schema);
        }
        let expected = match self.task {
            RunTask::CosalSeg => Task::Segmentation,
            RunTask::CosalColor => Task::Colorization,
        };
        if self.model.task != expected {
            bail!("task {:?} needs model.task {:?}, found {:?}", self.task, expected, self.model.task);
        }
        if self.optimizer.algorithm != "adam" {
            bail!("unsupported optimizer `{}`", self.optimizer.algorithm);
        }
        if self.training.batch_size == 0 {
            bail!("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.training.baseline_decay) {
            bail!("baseline_decay must lie in [0, 1)");
        }
        self.data.cosal.validate()?;
        self.model.validate()?;
        if self.task == RunTask::CosalColor && self.model.fusion.mode == FusionMode::Stochastic {
            bail!("stochastic fusion is only wired for segmentation");
        }
        Ok(())
    }
}
