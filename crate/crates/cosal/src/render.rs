use crate::config::CosalConfig;
use crate::scene::Scene;
use crate::vocab::Vocab;

pub const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedExample {
    pub size: usize,
    /// Black outlines on white, one byte per pixel.
    pub image: Vec<u8>,
    /// 0 for background, `color + 1` inside a shape.
    pub labels: Vec<u8>,
    /// Interleaved RGB target.
    pub colors: Vec<u8>,
    pub tokens: Vec<Vec<u32>>,
    pub unknown_tokens: usize,
}

impl RenderedExample {
    /// Model input: ink density in [0, 1], 1 on outlines.
    pub fn ink(&self) -> Vec<f64> {
        self.image.iter().map(|&g| 1.0 - g as f64 / 255.0).collect()
    }

    pub fn label_vec(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// RGB target in [0, 1] as three planes.
    pub fn color_planes(&self) -> Vec<f64> {
        let n = self.size * self.size;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for ch in 0..3 {
                out[ch * n + i] = self.colors[3 * i + ch] as f64 / 255.0;
            }
        }
        out
    }
}

/// Index of the cell whose shape covers each pixel, if any.
pub fn coverage(scene: &Scene, config: &CosalConfig) -> Vec<Option<usize>> {
    let n = config.image_size;
    let cs = config.cell_size() as f64;
    let mut cover = vec![None; n * n];
    for (ci, cell) in scene.cells.iter().enumerate() {
        let (cx, cy) = cell.center(cs);
        let s = cell.size * cs / 2.0;
        for y in 0..n {
            for x in 0..n {
                let (u, v) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if cover[y * n + x].is_none() && cell.shape.contains(u, v, s) {
                    cover[y * n + x] = Some(ci);
                }
            }
        }
    }
    cover
}

pub fn render(scene: &Scene, config: &CosalConfig, vocab: &Vocab) -> RenderedExample {
    let n = config.image_size;
    let cover = coverage(scene, config);
    let mut image = vec![255u8; n * n];
    let mut labels = vec![0u8; n * n];
    let mut colors = Vec::with_capacity(3 * n * n);
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let Some(ci) = cover[i] else {
                colors.extend_from_slice(&WHITE);
                continue;
            };
            let color = scene.cells[ci].color;
            labels[i] = color as u8 + 1;
            colors.extend_from_slice(&config.palette[color].rgb);
            let same = |xx: isize, yy: isize| {
                xx >= 0 && yy >= 0 && (xx as usize) < n && (yy as usize) < n && cover[yy as usize * n + xx as usize] == Some(ci)
            };
            let (xi, yi) = (x as isize, y as isize);
            if !(same(xi - 1, yi) && same(xi + 1, yi) && same(xi, yi - 1) && same(xi, yi + 1)) {
                image[i] = 0;
            }
        }
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
    RenderedExample {
        size: n,
        image,
        labels,
        colors,
        tokens,
        unknown_tokens,
    }
}
