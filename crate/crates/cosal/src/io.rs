//! On-disk dataset layout: `scenes.jsonl`, `images/`, `labels/`, `colors/`
//! and `vocab.txt` per split directory.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::CosalConfig;
use crate::error::{CosalError, Result};
use crate::render::{render, RenderedExample, WHITE};
use crate::scene::{generate_scene, Scene};
use crate::vocab::Vocab;

#[derive(Clone, Debug)]
pub struct Example {
    pub scene: Scene,
    pub rendered: RenderedExample,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub vocab: Vocab,
    pub num_classes: usize,
}

/// Generates and renders scenes `start..start + count` in memory.
pub fn build_examples(config: &CosalConfig, start: u64, count: usize) -> Result<Vec<Example>> {
    let vocab = Vocab::from_grammar(config);
    (start..start + count as u64)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(config, i)?;
            let rendered = render(&scene, config, &vocab);
            Ok(Example { scene, rendered })
        })
        .collect()
}

/// Scene indices of the train and test splits; test scenes follow the train ones.
pub fn split_indices(config: &CosalConfig) -> (Range<u64>, Range<u64>) {
    let n = config.train_count as u64;
    (0..n, n..n + config.test_count as u64)
}

/// Writes `train/` and `test/` split directories under `out`.
pub fn write_dataset(config: &CosalConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    config.validate()?;
    let (tr, te) = split_indices(config);
    let train = out.join("train");
    let test = out.join("test");
    write_split(config, &train, tr.start, tr.count())?;
    write_split(config, &test, te.start, te.count())?;
    Ok((train, test))
}

pub fn write_split(config: &CosalConfig, dir: &Path, start: u64, count: usize) -> Result<()> {
    for sub in ["images", "labels", "colors"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let examples = build_examples(config, start, count)?;
    let mut palette: Vec<u8> = WHITE.to_vec();
    config.palette.iter().for_each(|c| palette.extend_from_slice(&c.rgb));

    examples.par_iter().try_for_each(|ex| -> Result<()> {
        let r = &ex.rendered;
        let idx = ex.scene.index;
        write_png(&dir.join(format!("images/{idx}.png")), r.size, png::ColorType::Grayscale, None, &r.image)?;
        write_png(
            &dir.join(format!("labels/{idx}.png")),
            r.size,
            png::ColorType::Indexed,
            Some(&palette),
            &r.labels,
        )?;
        write_png(&dir.join(format!("colors/{idx}.png")), r.size, png::ColorType::Rgb, None, &r.colors)?;
        Ok(())
    })?;

    let mut w = BufWriter::new(File::create(dir.join("scenes.jsonl"))?);
    for ex in &examples {
        serde_json::to_writer(&mut w, &ex.scene)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Vocab::from_grammar(config).save(&dir.join("vocab.txt"))?;
    log::info!("wrote {count} examples to {}", dir.display());
    Ok(())
}

fn write_png(path: &Path, size: usize, color: png::ColorType, palette: Option<&[u8]>, data: &[u8]) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, size as u32, size as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    if let Some(p) = palette {
        enc.set_palette(p.to_vec());
    }
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Side length, pixel bytes and palette entry count of an 8-bit square PNG.
fn read_png(path: &Path, channels: usize) -> Result<(usize, Vec<u8>, usize)> {
    let format_err = |detail: String| CosalError::Format {
        path: path.display().to_string(),
        detail,
    };
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let palette_len = reader.info().palette.as_ref().map_or(0, |p| p.len() / 3);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.bit_depth != png::BitDepth::Eight || info.color_type.samples() != channels || info.width != info.height {
        return Err(format_err(format!(
            "expected square 8-bit image with {channels} channel(s), got {}x{} {:?}",
            info.width, info.height, info.color_type
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, buf, palette_len))
}

/// Reads a split directory written by [`write_split`] or converted to its layout.
pub fn load_split(dir: &Path) -> Result<Dataset> {
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let scenes_path = dir.join("scenes.jsonl");
    let mut scenes = Vec::new();
    for (ln, line) in BufReader::new(File::open(&scenes_path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line).map_err(|e| CosalError::Format {
            path: scenes_path.display().to_string(),
            detail: format!("line {}: {e}", ln + 1),
        })?;
        scenes.push(scene);
    }
    if scenes.is_empty() {
        return Err(CosalError::Format {
            path: scenes_path.display().to_string(),
            detail: "no scenes".into(),
        });
    }

    let examples = scenes
        .into_par_iter()
        .map(|scene| {
            let idx = scene.index;
            let (size, image, _) = read_png(&dir.join(format!("images/{idx}.png")), 1)?;
            let (ls, labels, classes) = read_png(&dir.join(format!("labels/{idx}.png")), 1)?;
            let (cs, colors, _) = read_png(&dir.join(format!("colors/{idx}.png")), 3)?;
            if ls != size || cs != size {
                return Err(CosalError::Format {
                    path: dir.display().to_string(),
                    detail: format!("example {idx}: image, label and color extents differ"),
                });
            }
            let mut unknown_tokens = 0;
            let tokens = scene
                .sentences
                .iter()
                .map(|s| {
                    let (ids, unk) = vocab.tokenize(&s.text);
                    unknown_tokens += unk;
                    ids
                })
                .collect();
            Ok((classes, Example {
                scene,
                rendered: RenderedExample {
                    size,
                    image,
                    labels,
                    colors,
                    tokens,
                    unknown_tokens,
                },
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    // the label palette holds background plus one entry per color
    let num_classes = examples.iter().map(|(c, _)| *c).max().unwrap_or(0);
    let examples: Vec<Example> = examples.into_iter().map(|(_, e)| e).collect();
    if let Some(bad) = examples.iter().find(|e| e.rendered.labels.iter().any(|&l| l as usize >= num_classes)) {
        return Err(CosalError::Format {
            path: dir.display().to_string(),
            detail: format!("example {} has labels outside the {num_classes}-entry palette", bad.scene.index),
        });
    }
    let sizes: std::collections::BTreeSet<usize> = examples.iter().map(|e| e.rendered.size).collect();
    if sizes.len() != 1 {
        return Err(CosalError::Format {
            path: dir.display().to_string(),
            detail: format!("mixed image sizes {sizes:?}"),
        });
    }
    Ok(Dataset {
        examples,
        vocab,
        num_classes,
    })
}
