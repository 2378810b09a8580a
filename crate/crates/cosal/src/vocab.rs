use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::config::CosalConfig;
use crate::error::{CosalError, Result};
use crate::shapes::{Relation, ShapeKind};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Words of the grammar that are neither shape names, colors nor relations.
pub const CLOSED_CLASS: [&str; 4] = ["the", "shape", "to", "is"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(CosalError::Config("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(CosalError::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Vocabulary of the closed synthetic grammar: reserved ids, closed-class
    /// words, relation words, shape names, then colors.
    pub fn from_grammar(config: &CosalConfig) -> Self {
        let mut tokens: Vec<String> = vec![PAD_TOKEN.into(), UNK_TOKEN.into()];
        let mut push = |t: &str| {
            if !tokens.iter().any(|x| x == t) {
                tokens.push(t.to_string());
            }
        };
        CLOSED_CLASS.iter().for_each(|t| push(t));
        Relation::ALL.iter().for_each(|r| push(r.word()));
        config.shape_pool.iter().for_each(|k| push(k.token()));
        config.palette.iter().for_each(|c| push(&c.name));
        Vocab::from_tokens(tokens).expect("grammar tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace tokenization; unknown words map to [`UNK`]. Returns the ids
    /// and the number of unknown words.
    pub fn tokenize(&self, text: &str) -> (Vec<u32>, usize) {
        let mut unknown = 0;
        let ids = text
            .split_whitespace()
            .map(|w| {
                self.id(&w.to_lowercase()).unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (ids, unknown)
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Every sentence the grammar can produce for the given config.
pub fn enumerate_grammar(config: &CosalConfig) -> Vec<String> {
    let mut out = Vec::new();
    for k in &config.shape_pool {
        for c in &config.palette {
            out.push(direct_text(*k, &c.name));
            for r in Relation::ALL {
                out.push(relational_text(r, *k, &c.name));
            }
        }
    }
    out
}

pub fn direct_text(shape: ShapeKind, color: &str) -> String {
    format!("{shape} is {color}")
}

pub fn relational_text(relation: Relation, anchor: ShapeKind, color: &str) -> String {
    format!("the shape {} {anchor} is {color}", relation.phrase())
}
