//! Tokenization, vocabulary construction and integer encoding shared by the
//! scorers.
//!
//! Token ids are `u32`. The four special ids are fixed so that serialized
//! vocabularies and checkpoints stay stable:
//! `PAD = 0`, `UNK = 1`, `BOS = 2`, `EOS = 3`. Surface tokens start at id 4.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::corpus::Corpus;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Default vocabulary cap (surface tokens, excluding the 4 specials).
pub const DEFAULT_MAX_VOCAB: usize = 30_000;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("token id {0} out of range (vocab size {1})")]
    IdOutOfRange(u32, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// CJK ideograph check used by the fallback tokenizer. Covers the unified
/// ideograph block, extension A and the compatibility block.
fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}' | '\u{3400}'..='\u{4DBF}' | '\u{F900}'..='\u{FAFF}')
}

/// Splits on whitespace, then splits any run of CJK ideographs into single
/// characters. Deterministic; never produces empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut run = String::new();
        for c in chunk.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    tokens.push(std::mem::take(&mut run));
                }
                tokens.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            tokens.push(run);
        }
    }
    tokens
}

/// Frequency-ranked vocabulary with fixed special ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    max_size: usize,
}

impl Vocab {
    /// Builds a vocabulary from an explicit (token, frequency) table.
    /// Ordering is total: frequency descending, then token bytes ascending.
    pub fn from_counts<I>(counts: I, max_size: usize) -> Vocab
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| a.0.as_bytes().cmp(b.0.as_bytes()))
        });
        ranked.truncate(max_size);

        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::with_capacity(ranked.len());
        for (token, _) in ranked {
            let id = id_to_token.len() as u32;
            token_to_id.insert(token.clone(), id);
            id_to_token.push(token);
        }
        Vocab {
            token_to_id,
            id_to_token,
            max_size,
        }
    }

    /// Builds the vocabulary from the training split. Never feed dev or test
    /// corpora here; the split hygiene is the caller's contract.
    pub fn build(train: &Corpus, max_size: usize) -> Vocab {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for video in &train.videos {
            for comment in &video.comments {
                for tok in &comment.tokens {
                    *counts.entry(tok.as_str()).or_insert(0) += 1;
                }
            }
        }
        Vocab::from_counts(
            counts.into_iter().map(|(t, c)| (t.to_string(), c)),
            max_size,
        )
    }

    /// Total id count, specials included.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Unknown tokens map to [`UNK_ID`]. Never emits PAD/BOS/EOS; those are
    /// added by callers where the model contract requires them.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.token_to_id.get(t.as_str()).copied().unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, TextError> {
        ids.iter()
            .map(|&id| match self.id_to_token.get(id as usize) {
                Some(tok) => Ok(tok.clone()),
                None => Err(TextError::IdOutOfRange(id, self.len())),
            })
            .collect()
    }

    /// One surface token per line; line number = id - 4. Specials are
    /// implicit and never written.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for token in &self.id_to_token[NUM_SPECIALS..] {
            writeln!(out, "{token}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path, max_size: usize) -> Result<Vocab, TextError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for line in file.lines() {
            let token = line?;
            let id = id_to_token.len() as u32;
            token_to_id.insert(token.clone(), id);
            id_to_token.push(token);
        }
        Ok(Vocab {
            token_to_id,
            id_to_token,
            max_size,
        })
    }
}
