use std::path::Path;

use anyhow::{bail, Result};
use fuselang_core::Tensor;
use fuselang_cosal::{build_examples, load_split, split_indices, Example, Vocab};
use fuselang_model::color::rgb_bytes_to_lab_planes;

use crate::config::{DataConfig, RunConfig, RunTask};

/// One example converted into model inputs and targets.
#[derive(Clone, Debug)]
pub struct Sample {
    pub index: u64,
    /// Ink density `[1, H, W]`.
    pub ink: Tensor,
    pub labels: Vec<usize>,
    pub sentences: Vec<Vec<u32>>,
    pub texts: Vec<String>,
    /// Per sentence: true for a direct description.
    pub direct: Vec<bool>,
    /// Lab lightness of the color target, `[1, H, W]` as L / 100.
    pub lightness: Tensor,
    /// Scaled Lab chroma of the color target, `[2, H, W]`.
    pub chroma: Tensor,
    /// sRGB target in [0, 1], `[3, H, W]`.
    pub rgb: Tensor,
}

impl Sample {
    pub fn from_example(ex: &Example) -> Self {
        let r = &ex.rendered;
        let n = r.size;
        let (l, ab) = rgb_bytes_to_lab_planes(&r.colors);
        Sample {
            index: ex.scene.index,
            ink: Tensor::new(&[1, n, n], r.ink()).unwrap(),
            labels: r.label_vec(),
            sentences: r.tokens.clone(),
            texts: ex.scene.texts(),
            direct: ex
                .scene
                .sentences
                .iter()
                .map(|s| s.kind == fuselang_cosal::SentenceKind::Direct)
                .collect(),
            lightness: Tensor::new(&[1, n, n], l).unwrap(),
            chroma: Tensor::new(&[2, n, n], ab).unwrap(),
            rgb: Tensor::new(&[3, n, n], r.color_planes()).unwrap(),
        }
    }

    /// Model input for the task.
    pub fn input(&self, task: RunTask) -> &Tensor {
        match task {
            RunTask::CosalSeg => &self.ink,
            RunTask::CosalColor => &self.lightness,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: Vocab,
    pub num_classes: usize,
}

fn truncate(mut v: Vec<Example>, limit: Option<usize>) -> Vec<Example> {
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

pub fn load_splits(cfg: &DataConfig) -> Result<Splits> {
    let (train, test, vocab, num_classes) = match &cfg.dir {
        Some(dir) => {
            let tr = load_split(&dir.join("train"))?;
            let te = load_split(&dir.join("test"))?;
            if tr.vocab != te.vocab {
                bail!("train and test vocabularies differ in {}", dir.display());
            }
            (tr.examples, te.examples, tr.vocab, tr.num_classes.max(te.num_classes))
        }
        None => {
            let c = &cfg.cosal;
            c.validate()?;
            let (tr, te) = split_indices(c);
            let n_train = cfg.train_limit.map_or(c.train_count, |l| l.min(c.train_count));
            let n_test = cfg.test_limit.map_or(c.test_count, |l| l.min(c.test_count));
            (
                build_examples(c, tr.start, n_train)?,
                build_examples(c, te.start, n_test)?,
                Vocab::from_grammar(c),
                c.num_classes(),
            )
        }
    };
    let conv = |v: Vec<Example>| v.iter().map(Sample::from_example).collect();
    Ok(Splits {
        train: conv(truncate(train, cfg.train_limit)),
        test: conv(truncate(test, cfg.test_limit)),
        vocab,
        num_classes,
    })
}

/// Checks that a dataset fits the model configuration.
pub fn check_compatible(cfg: &RunConfig, splits: &Splits) -> Result<()> {
    if splits.vocab.len() != cfg.model.text.vocab_size {
        bail!(
            "dataset vocabulary has {} entries, model expects {}",
            splits.vocab.len(),
            cfg.model.text.vocab_size
        );
    }
    if cfg.task == RunTask::CosalSeg && splits.num_classes > cfg.model.decoder.out_channels {
        bail!(
            "dataset has {} classes, decoder produces {}",
            splits.num_classes,
            cfg.model.decoder.out_channels
        );
    }
    if let Some(s) = splits.train.first().or(splits.test.first()) {
        let e = s.ink.shape();
        cfg.model.image.output_extent(e[1], e[2])?;
    }
    Ok(())
}

pub fn dataset_exists(dir: &Path) -> bool {
    dir.join("train").is_dir() && dir.join("test").is_dir()
}
