use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CosalError;

/// Aspect of the short side for the elongated kinds.
const THIN: f64 = 0.55;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Square,
    FatRectangle,
    TallRectangle,
    Circle,
    FatEllipse,
    TallEllipse,
    Diamond,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 9] = [
        ShapeKind::Square,
        ShapeKind::FatRectangle,
        ShapeKind::TallRectangle,
        ShapeKind::Circle,
        ShapeKind::FatEllipse,
        ShapeKind::TallEllipse,
        ShapeKind::Diamond,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];

    /// The single vocabulary token naming this kind.
    pub fn token(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::FatRectangle => "fat-rectangle",
            ShapeKind::TallRectangle => "tall-rectangle",
            ShapeKind::Circle => "circle",
            ShapeKind::FatEllipse => "fat-ellipse",
            ShapeKind::TallEllipse => "tall-ellipse",
            ShapeKind::Diamond => "diamond",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
        }
    }

    /// Half extents `(x, y)` of the bounding box for a shape of half size `s`.
    pub fn half_extents(self, s: f64) -> (f64, f64) {
        match self {
            ShapeKind::FatRectangle | ShapeKind::FatEllipse => (s, THIN * s),
            ShapeKind::TallRectangle | ShapeKind::TallEllipse => (THIN * s, s),
            _ => (s, s),
        }
    }

    /// Inside test for a point `(u, v)` relative to the shape center, image
    /// axes (v grows downward).
    pub fn contains(self, u: f64, v: f64, s: f64) -> bool {
        let (hx, hy) = self.half_extents(s);
        match self {
            ShapeKind::Square | ShapeKind::FatRectangle | ShapeKind::TallRectangle => {
                u.abs() <= hx && v.abs() <= hy
            }
            ShapeKind::Circle | ShapeKind::FatEllipse | ShapeKind::TallEllipse => {
                (u / hx).powi(2) + (v / hy).powi(2) <= 1.0
            }
            ShapeKind::Diamond => u.abs() + v.abs() <= s,
            // apex at the top, base on the bottom edge of the box
            ShapeKind::Triangle => v >= -s && v <= s && u.abs() <= (v + s) / 2.0,
            ShapeKind::Cross => {
                let arm = s / 3.0;
                (u.abs() <= s && v.abs() <= arm) || (u.abs() <= arm && v.abs() <= s)
            }
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ShapeKind {
    type Err = CosalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| CosalError::Config(format!("unknown shape kind `{s}`")))
    }
}

/// Grid direction of the described shape relative to its anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    pub fn word(self) -> &'static str {
        match self {
            Relation::LeftOf => "left",
            Relation::RightOf => "right",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Surface phrase between "the shape" and the anchor name.
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left to",
            Relation::RightOf => "right to",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn offset(self) -> (isize, isize) {
        match self {
            Relation::LeftOf => (0, -1),
            Relation::RightOf => (0, 1),
            Relation::Above => (-1, 0),
            Relation::Below => (1, 0),
        }
    }

    /// Cell reached from `(row, col)` on a 3x3 grid, if any.
    pub fn apply(self, cell: (usize, usize)) -> Option<(usize, usize)> {
        let (dr, dc) = self.offset();
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        ((0..3).contains(&r) && (0..3).contains(&c)).then_some((r as usize, c as usize))
    }
}
