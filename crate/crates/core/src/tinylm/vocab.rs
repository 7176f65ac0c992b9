use std::collections::HashMap;
use std::sync::OnceLock;

use crate::gridworld::Target;
use crate::{Error, Result};

pub type TokenId = u16;

/// Largest coordinate with a dedicated cell token.
pub const MAX_COORD: usize = 10;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const NEWLINE: TokenId = 3;
pub const GRID: TokenId = 4;
pub const ARROW: TokenId = 5;
pub const EMPTY: TokenId = 6;
pub const WALL: TokenId = 7;
pub const START: TokenId = 8;
pub const GOAL: TokenId = 9;
const TAG_BASE: TokenId = 10;
const DIM_BASE: TokenId = 13;
const CELL_BASE: TokenId = DIM_BASE + MAX_COORD as TokenId;

/// Fixed vocabulary: specials, grid characters, target tags, dimension numbers and one token per cell.
#[derive(Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    fn build() -> Self {
        let mut tokens: Vec<String> = [
            "<PAD>", "<BOS>", "<EOS>", "\n", "GRID", "->", ".", "X", "S", "G", "<SHORT>", "<SAFE>", "<LONG>",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        tokens.extend((1..=MAX_COORD).map(|d| d.to_string()));
        for r in 1..=MAX_COORD {
            for c in 1..=MAX_COORD {
                tokens.push(format!("({r},{c})"));
            }
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Vocab { tokens, ids }
    }

    pub fn get() -> &'static Vocab {
        static VOCAB: OnceLock<Vocab> = OnceLock::new();
        VOCAB.get_or_init(Vocab::build)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn tag(target: Target) -> TokenId {
        TAG_BASE + target.index() as TokenId
    }

    pub fn dim(n: usize) -> Option<TokenId> {
        (1..=MAX_COORD).contains(&n).then(|| DIM_BASE + n as TokenId - 1)
    }

    pub fn cell(row: usize, col: usize) -> Option<TokenId> {
        ((1..=MAX_COORD).contains(&row) && (1..=MAX_COORD).contains(&col)).then(|| CELL_BASE + ((row - 1) * MAX_COORD + col - 1) as TokenId)
    }

    /// `(row, col)` of a cell token.
    pub fn cell_of(id: TokenId) -> Option<(usize, usize)> {
        let off = id.checked_sub(CELL_BASE)? as usize;
        (off < MAX_COORD * MAX_COORD).then(|| (off / MAX_COORD + 1, off % MAX_COORD + 1))
    }

    /// Greedy longest match over the vocabulary; spaces separate tokens and are dropped.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            if rest.starts_with(' ') {
                pos += 1;
                continue;
            }
            let best = self
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| rest.starts_with(t.as_str()))
                .max_by_key(|(_, t)| t.len());
            match best {
                Some((id, t)) => {
                    out.push(id as TokenId);
                    pos += t.len();
                }
                None => {
                    let span: String = rest.chars().take_while(|c| *c != ' ' && *c != '\n').collect();
                    let span = if span.is_empty() { rest.chars().take(1).collect() } else { span };
                    return Err(Error::Tokenize { offset: pos, span });
                }
            }
        }
        Ok(out)
    }

    /// Joins tokens with single spaces, except around newlines and between grid characters.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let glued = |id: TokenId| matches!(id, EMPTY | WALL | START | GOAL);
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                let prev = ids[i - 1];
                let tight = prev == NEWLINE || id == NEWLINE || (glued(prev) && glued(id));
                if !tight {
                    out.push(' ');
                }
            }
            out.push_str(self.token(id));
        }
        out
    }
}
