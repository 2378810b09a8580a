use std::collections::HashMap;

use fuselang_core::stream_rng;
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::CosalConfig;
use crate::error::{CosalError, Result};
use crate::shapes::{Relation, ShapeKind};
use crate::solver::{solve, Solution};
use crate::vocab::{direct_text, relational_text};

const MAX_ATTEMPTS: u64 = 16;
const SIZE_RANGE: (f64, f64) = (0.4, 0.8);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub shape: ShapeKind,
    /// Center offset from the cell center, in pixels `[dx, dy]`.
    pub offset: [f64; 2],
    /// Shape extent as a fraction of the cell extent.
    pub size: f64,
    pub color: usize,
}

impl Cell {
    /// Shape center in image pixel coordinates.
    pub fn center(&self, cell_size: f64) -> (f64, f64) {
        (
            (self.col as f64 + 0.5) * cell_size + self.offset[0],
            (self.row as f64 + 0.5) * cell_size + self.offset[1],
        )
    }

    pub fn fits_cell(&self, cell_size: f64) -> bool {
        let (hx, hy) = self.shape.half_extents(self.size * cell_size / 2.0);
        let (cx, cy) = self.center(cell_size);
        let (x0, y0) = (self.col as f64 * cell_size, self.row as f64 * cell_size);
        let eps = 1e-9;
        cx - hx >= x0 - eps
            && cx + hx <= x0 + cell_size + eps
            && cy - hy >= y0 - eps
            && cy + hy <= y0 + cell_size + eps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceKind {
    Direct,
    Relational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub kind: SentenceKind,
    pub anchor: ShapeKind,
    pub relation: Option<Relation>,
    pub color: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub index: u64,
    pub seed: u64,
    /// Nine cells in row-major order.
    pub cells: Vec<Cell>,
    pub sentences: Vec<Sentence>,
}

impl Scene {
    pub fn layout(&self) -> HashMap<ShapeKind, (usize, usize)> {
        self.cells.iter().map(|c| (c.shape, (c.row, c.col))).collect()
    }

    /// Color index per cell, row-major.
    pub fn colors(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.color).collect()
    }

    pub fn texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.text.clone()).collect()
    }

    pub fn cell_at(&self, row: usize, col: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }
}

/// Deterministic scene for `(config.seed, index)`.
pub fn generate_scene(config: &CosalConfig, index: u64) -> Result<Scene> {
    config.validate()?;
    for attempt in 0..MAX_ATTEMPTS {
        let scene = sample_scene(config, index, attempt);
        match solve(&scene.texts(), &scene.layout(), &config.color_names()) {
            Solution::Unique(c) if c == scene.colors() => return Ok(scene),
            other => log::warn!("scene {index} attempt {attempt} rejected by the oracle: {other:?}"),
        }
    }
    Err(CosalError::Config(format!(
        "scene {index} not solvable after {MAX_ATTEMPTS} attempts"
    )))
}

fn sample_scene(config: &CosalConfig, index: u64, attempt: u64) -> Scene {
    let mut rng = stream_rng(config.seed, &[index, attempt]);
    let cs = config.cell_size() as f64;

    let mut pool = config.shape_pool.clone();
    pool.shuffle(&mut rng);
    let cells: Vec<Cell> = pool
        .into_iter()
        .take(9)
        .enumerate()
        .map(|(i, shape)| {
            let size = rng.gen_range(SIZE_RANGE.0..=SIZE_RANGE.1);
            let (hx, hy) = shape.half_extents(size * cs / 2.0);
            let (jx, jy) = (cs / 2.0 - hx, cs / 2.0 - hy);
            let offset = [rng.gen_range(-jx..=jx), rng.gen_range(-jy..=jy)];
            Cell {
                row: i / 3,
                col: i % 3,
                shape,
                offset,
                size,
                color: rng.gen_range(0..config.num_colors()),
            }
        })
        .collect();

    let colors = config.color_names();
    let mut known = [false; 9];
    let mut sentences = Vec::with_capacity(9);
    for i in sample(&mut rng, 9, config.n_direct).into_vec() {
        known[i] = true;
        let c = &cells[i];
        sentences.push(Sentence {
            kind: SentenceKind::Direct,
            anchor: c.shape,
            relation: None,
            color: c.color,
            text: direct_text(c.shape, &colors[c.color]),
        });
    }

    // grow relational descriptions outward from already described cells
    while known.iter().any(|k| !k) {
        let frontier: Vec<(usize, Vec<(usize, Relation)>)> = (0..9)
            .filter(|&i| !known[i])
            .filter_map(|i| {
                let anchors: Vec<(usize, Relation)> = Relation::ALL
                    .into_iter()
                    .filter_map(|rel| {
                        // the anchor sits opposite the relation from the target
                        let a = inverse(rel).apply((i / 3, i % 3))?;
                        let ai = a.0 * 3 + a.1;
                        known[ai].then_some((ai, rel))
                    })
                    .collect();
                (!anchors.is_empty()).then_some((i, anchors))
            })
            .collect();
        let (target, anchors) = frontier.choose(&mut rng).expect("grid is connected");
        let &(anchor, rel) = anchors.choose(&mut rng).unwrap();
        known[*target] = true;
        let c = &cells[*target];
        sentences.push(Sentence {
            kind: SentenceKind::Relational,
            anchor: cells[anchor].shape,
            relation: Some(rel),
            color: c.color,
            text: relational_text(rel, cells[anchor].shape, &colors[c.color]),
        });
    }
    sentences.shuffle(&mut rng);

    Scene {
        index,
        seed: config.seed,
        cells,
        sentences,
    }
}

fn inverse(r: Relation) -> Relation {
    match r {
        Relation::LeftOf => Relation::RightOf,
        Relation::RightOf => Relation::LeftOf,
        Relation::Above => Relation::Below,
        Relation::Below => Relation::Above,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relational_anchor_resolves_to_target() {
        let cfg = CosalConfig {
            n_direct: 1,
            ..Default::default()
        };
        let s = generate_scene(&cfg, 3).unwrap();
        let layout = s.layout();
        for sent in s.sentences.iter().filter(|x| x.kind == SentenceKind::Relational) {
            let t = sent.relation.unwrap().apply(layout[&sent.anchor]).unwrap();
            assert_eq!(s.cell_at(t.0, t.1).unwrap().color, sent.color);
        }
    }

    #[test]
    fn cells_fit_and_kinds_are_distinct() {
        let cfg = CosalConfig::default();
        let s = generate_scene(&cfg, 0).unwrap();
        assert_eq!(s.layout().len(), 9);
        assert!(s.cells.iter().all(|c| c.fits_cell(16.0)));
    }
}
