//! Whitespace tokenizer with FNV-1a feature hashing.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const EMPTY_ID: usize = 1;
const RESERVED: u64 = 2;

const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
const FNV_PRIME: u64 = 1_099_511_628_211;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 65_536,
            max_len: 32,
            lowercase: true,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 || !self.vocab_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "vocab_size must be a power of two >= 4, got {}",
                self.vocab_size
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fixed-length token ids with a validity mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenIds {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub n_valid: usize,
}

impl TokenIds {
    pub fn valid_ids(&self) -> &[usize] {
        &self.ids[..self.n_valid]
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

/// FNV-1a over the UTF-8 bytes, folded into `[2, vocab_size)`.
pub fn hash_token(token: &str, vocab_size: usize) -> usize {
    let mut h = FNV_OFFSET_BASIS;
    for &b in token.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % (vocab_size as u64 - RESERVED) + RESERVED) as usize
}

pub fn tokenize(text: &str, config: &TokenizerConfig) -> TokenIds {
    let lowered;
    let text = if config.lowercase {
        lowered = text.to_lowercase();
        lowered.as_str()
    } else {
        text
    };

    let mut ids: Vec<usize> = text
        .split_whitespace()
        .take(config.max_len)
        .map(|tok| hash_token(tok, config.vocab_size))
        .collect();
    if ids.is_empty() {
        ids.push(EMPTY_ID);
    }
    let n_valid = ids.len();
    ids.resize(config.max_len, PAD_ID);
    let mask = (0..config.max_len).map(|i| u8::from(i < n_valid)).collect();
    TokenIds { ids, mask, n_valid }
}
