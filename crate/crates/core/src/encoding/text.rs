//! Character-level text encoding: vocabulary lookup, zero padding and
//! truncation to a fixed row count, and cyclic position-shift augmentation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scalar;

/// Lowercase letters, digits, space and common punctuation.
pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz0123456789 .,;:!?'\"-()";

/// What to do with characters outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownChar {
    /// Keep the position, encode it as an all-zero row.
    #[default]
    ZeroRow,
    /// Drop the character before padding/truncation.
    Skip,
}

/// Ordered character set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocabulary {
    chars: Vec<char>,
    unknown: UnknownChar,
    fold_case: bool,
}

impl CharVocabulary {
    pub fn new(alphabet: &str, unknown: UnknownChar, fold_case: bool) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        if chars.is_empty() {
            return Err(Error::Config("character vocabulary is empty".into()));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Config(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(CharVocabulary {
            chars,
            unknown,
            fold_case,
        })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        let c = if self.fold_case {
            c.to_lowercase().next().unwrap_or(c)
        } else {
            c
        };
        self.chars.iter().position(|&v| v == c)
    }

    /// Maps a text to at most `max_len` vocabulary indices; `None` marks an
    /// unknown character kept as a zero row.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<Option<usize>> {
        text.chars()
            .filter_map(|c| match (self.index_of(c), self.unknown) {
                (Some(i), _) => Some(Some(i)),
                (None, UnknownChar::ZeroRow) => Some(None),
                (None, UnknownChar::Skip) => None,
            })
            .take(max_len)
            .collect()
    }
}

impl Default for CharVocabulary {
    fn default() -> Self {
        CharVocabulary::new(DEFAULT_ALPHABET, UnknownChar::ZeroRow, true).expect("default alphabet")
    }
}

/// Looks tokens up in an embedding table (`vocab x embed_dim`, row-major) and
/// lays them out as a `max_len x embed_dim` grid. Rows past the text are zero.
pub fn embed_tokens<T: Scalar>(
    tokens: &[Option<usize>],
    table: &[T],
    embed_dim: usize,
    max_len: usize,
) -> Vec<T> {
    let mut grid = vec![T::zero(); max_len * embed_dim];
    for (row, token) in tokens.iter().take(max_len).enumerate() {
        if let Some(t) = token {
            grid[row * embed_dim..(row + 1) * embed_dim]
                .copy_from_slice(&table[t * embed_dim..(t + 1) * embed_dim]);
        }
    }
    grid
}

/// Encodes a text into a `max_len x embed_dim` character grid.
pub fn encode_text<T: Scalar>(
    text: &str,
    vocab: &CharVocabulary,
    table: &[T],
    embed_dim: usize,
    max_len: usize,
) -> Result<Vec<T>> {
    if max_len == 0 || embed_dim == 0 {
        return Err(Error::Config("text grid dimensions must be positive".into()));
    }
    if table.len() != vocab.len() * embed_dim {
        return Err(Error::Shape(format!(
            "embedding table has {} values, expected {}x{embed_dim}",
            table.len(),
            vocab.len()
        )));
    }
    Ok(embed_tokens(&vocab.tokenize(text, max_len), table, embed_dim, max_len))
}

/// Identity-like initial embedding. Characters whose index is below
/// `embed_dim` get an exact one-hot row; later characters reuse column
/// `index % embed_dim` plus a small seeded perturbation so rows stay distinct.
pub fn one_hot_like_table(vocab_len: usize, embed_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = vec![0.0; vocab_len * embed_dim];
    for v in 0..vocab_len {
        let row = &mut table[v * embed_dim..(v + 1) * embed_dim];
        row[v % embed_dim] = 1.0;
        if v >= embed_dim {
            for x in row.iter_mut() {
                *x += rng.random_range(-0.25..0.25);
            }
        }
    }
    table
}

/// Cyclic left rotation of the character sequence by `offset` positions.
pub fn position_shift(text: &str, offset: usize) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let k = offset % chars.len();
    chars[k..].iter().chain(&chars[..k]).collect()
}
