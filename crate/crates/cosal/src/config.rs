use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CosalError, Result};
use crate::shapes::ShapeKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteColor {
    pub name: String,
    pub rgb: [u8; 3],
}

impl PaletteColor {
    pub fn new(name: &str, rgb: [u8; 3]) -> Self {
        PaletteColor {
            name: name.to_string(),
            rgb,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CosalConfig {
    /// Pixels per image side; must be a multiple of 3.
    pub image_size: usize,
    pub shape_pool: Vec<ShapeKind>,
    pub palette: Vec<PaletteColor>,
    /// Direct sentences per scene; the remaining cells are described relationally.
    pub n_direct: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for CosalConfig {
    fn default() -> Self {
        CosalConfig {
            image_size: 48,
            shape_pool: ShapeKind::ALL.to_vec(),
            palette: vec![
                PaletteColor::new("red", [220, 40, 40]),
                PaletteColor::new("green", [40, 170, 60]),
                PaletteColor::new("blue", [40, 80, 220]),
            ],
            n_direct: 4,
            train_count: 2000,
            test_count: 500,
            seed: 0,
        }
    }
}

impl CosalConfig {
    pub fn num_colors(&self) -> usize {
        self.palette.len()
    }

    /// Label classes including background.
    pub fn num_classes(&self) -> usize {
        self.palette.len() + 1
    }

    pub fn cell_size(&self) -> usize {
        self.image_size / 3
    }

    pub fn color_names(&self) -> Vec<String> {
        self.palette.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CosalError::Config(m));
        if self.image_size == 0 || !self.image_size.is_multiple_of(3) {
            return err(format!("image_size {} is not a positive multiple of 3", self.image_size));
        }
        let kinds: HashSet<_> = self.shape_pool.iter().collect();
        if kinds.len() != self.shape_pool.len() {
            return err("shape_pool contains duplicates".into());
        }
        if kinds.len() < 9 {
            return err(format!("shape_pool needs at least 9 distinct kinds, has {}", kinds.len()));
        }
        if self.palette.is_empty() || self.palette.len() > 254 {
            return err(format!("palette size {} out of range", self.palette.len()));
        }
        let names: HashSet<_> = self.palette.iter().map(|c| c.name.as_str()).collect();
        let rgbs: HashSet<_> = self.palette.iter().map(|c| c.rgb).collect();
        if names.len() != self.palette.len() || rgbs.len() != self.palette.len() {
            return err("palette colors must be pairwise distinct".into());
        }
        if rgbs.contains(&[255, 255, 255]) {
            return err("palette may not contain the white background".into());
        }
        for c in &self.palette {
            if c.name.is_empty() || c.name.contains(char::is_whitespace) {
                return err(format!("color name `{}` must be a single token", c.name));
            }
        }
        if self.n_direct == 0 || self.n_direct > 9 {
            return err(format!("n_direct {} outside 1..=9", self.n_direct));
        }
        Ok(())
    }
}
