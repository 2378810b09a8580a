//! CoSaL: nine shapes on a 3x3 grid, a colour per shape, and sentences that
//! pin every colour down either directly or relative to a neighbour.

pub mod config;
pub mod error;
pub mod io;
pub mod render;
pub mod scene;
pub mod shapes;
pub mod solver;
pub mod vocab;

pub use config::{CosalConfig, PaletteColor};
pub use error::{CosalError, Result};
pub use io::{build_examples, load_split, split_indices, write_dataset, write_split, Dataset, Example};
pub use render::{coverage, render, RenderedExample};
pub use scene::{generate_scene, Cell, Scene, Sentence, SentenceKind};
pub use shapes::{Relation, ShapeKind};
pub use solver::{solve, Solution};
pub use vocab::{enumerate_grammar, Vocab, PAD, UNK};
