//! Solvability oracle that reads sentences from their surface text only.

use std::collections::HashMap;

use crate::shapes::{Relation, ShapeKind};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Solution {
    /// Color index per cell, row-major.
    Unique(Vec<usize>),
    /// Contradictory or unresolvable input.
    Unsat(String),
    /// Consistent, but these cells are left undetermined.
    Ambiguous(Vec<(usize, usize)>),
}

impl Solution {
    pub fn is_unique(&self) -> bool {
        matches!(self, Solution::Unique(_))
    }
}

#[derive(Debug, PartialEq)]
struct Parsed {
    anchor: ShapeKind,
    relation: Option<Relation>,
    color: usize,
}

fn parse(text: &str, colors: &[String]) -> Option<Parsed> {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let w: Vec<&str> = words.iter().map(String::as_str).collect();
    let color_of = |s: &str| colors.iter().position(|c| c == s);
    match w.as_slice() {
        [shape, "is", color] => Some(Parsed {
            anchor: shape.parse().ok()?,
            relation: None,
            color: color_of(color)?,
        }),
        ["the", "shape", rest @ ..] => {
            let (relation, tail) = match rest {
                ["left", "to", tail @ ..] => (Relation::LeftOf, tail),
                ["right", "to", tail @ ..] => (Relation::RightOf, tail),
                ["above", tail @ ..] => (Relation::Above, tail),
                ["below", tail @ ..] => (Relation::Below, tail),
                _ => return None,
            };
            match tail {
                [shape, "is", color] => Some(Parsed {
                    anchor: shape.parse().ok()?,
                    relation: Some(relation),
                    color: color_of(color)?,
                }),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Resolves every sentence to a grid cell through `layout` and assigns its
/// color, checking for conflicts and coverage of all nine cells.
pub fn solve(sentences: &[String], layout: &HashMap<ShapeKind, (usize, usize)>, colors: &[String]) -> Solution {
    let mut occupied = [[false; 3]; 3];
    for &(r, c) in layout.values() {
        if r >= 3 || c >= 3 || occupied[r][c] {
            return Solution::Unsat(format!("layout places two shapes at ({r},{c}) or off the grid"));
        }
        occupied[r][c] = true;
    }

    let mut assigned: [[Option<usize>; 3]; 3] = [[None; 3]; 3];
    for s in sentences {
        let Some(p) = parse(s, colors) else {
            return Solution::Unsat(format!("cannot parse `{s}`"));
        };
        let Some(&anchor_cell) = layout.get(&p.anchor) else {
            return Solution::Unsat(format!("`{s}` refers to {} which is not in the image", p.anchor));
        };
        let target = match p.relation {
            None => anchor_cell,
            Some(rel) => match rel.apply(anchor_cell) {
                Some(t) => t,
                None => return Solution::Unsat(format!("`{s}` points off the grid")),
            },
        };
        if !occupied[target.0][target.1] {
            return Solution::Unsat(format!("`{s}` points at an empty cell"));
        }
        let slot = &mut assigned[target.0][target.1];
        match *slot {
            Some(prev) if prev != p.color => {
                return Solution::Unsat(format!("cell {target:?} is both {} and {}", colors[prev], colors[p.color]))
            }
            _ => *slot = Some(p.color),
        }
    }

    let missing: Vec<(usize, usize)> = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .filter(|&(r, c)| assigned[r][c].is_none())
        .collect();
    if !missing.is_empty() {
        return Solution::Ambiguous(missing);
    }
    Solution::Unique(assigned.iter().flatten().map(|c| c.unwrap()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colors() -> Vec<String> {
        ["red", "green", "blue"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_both_sentence_forms() {
        assert_eq!(
            parse("Diamond is red", &colors()),
            Some(Parsed {
                anchor: ShapeKind::Diamond,
                relation: None,
                color: 0
            })
        );
        assert_eq!(
            parse("The shape left to Diamond is blue", &colors()),
            Some(Parsed {
                anchor: ShapeKind::Diamond,
                relation: Some(Relation::LeftOf),
                color: 2
            })
        );
        assert_eq!(parse("the shape near diamond is blue", &colors()), None);
        assert_eq!(parse("diamond is purple", &colors()), None);
    }
}
