use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tokenizer::{tokenize, SPECIAL_TOKENS};
use super::Dialogue;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const BOS: usize = 4;
pub const EOS: usize = 5;
pub const NUM_RESERVED: usize = SPECIAL_TOKENS.len();

/// Token ↔ id mapping. Ids `0..6` are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// A vocabulary containing only the reserved tokens.
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, ids }
    }

    /// Builds a vocabulary from the given regular tokens, appended after the
    /// reserved block in the order supplied.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut vocab = Self::reserved_only();
        for token in tokens {
            if vocab.ids.contains_key(&token) {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary token `{token}`"
                )));
            }
            vocab.ids.insert(token.clone(), vocab.tokens.len());
            vocab.tokens.push(token);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined token string; unknown ids render as `[UNK]`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Like [`Vocab::decode`] but drops every reserved token.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= NUM_RESERVED)
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Line-oriented `token<TAB>id`, reserved ids first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Format {
                record: line_no + 1,
                message: format!("vocabulary line: {msg}"),
            };
            let (token, id) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("id is not an integer"))?;
            if id != tokens.len() {
                return Err(bad("ids must be contiguous and start at 0"));
            }
            if id < NUM_RESERVED && token != SPECIAL_TOKENS[id] {
                return Err(bad("reserved ids must hold the reserved tokens"));
            }
            tokens.push(token.to_string());
        }
        if tokens.len() < NUM_RESERVED {
            return Err(Error::Format {
                record: tokens.len() + 1,
                message: "vocabulary file lacks the reserved tokens".into(),
            });
        }
        Self::from_tokens(tokens.into_iter().skip(NUM_RESERVED))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    /// SHA-256 over the TSV serialization.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_tsv().as_bytes()).into()
    }
}

/// Every token with corpus frequency ≥ `min_freq`, ordered by frequency
/// descending and then lexicographically, after the reserved ids. Situations
/// and all turns contribute to the counts.
pub fn build_vocab(dialogues: &[Dialogue], min_freq: usize) -> Result<Vocab> {
    if min_freq == 0 {
        return Err(Error::Validation("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for d in dialogues {
        let texts =
            std::iter::once(d.situation.as_str()).chain(d.turns.iter().map(|t| t.text.as_str()));
        for text in texts {
            for token in tokenize(text) {
                *counts.entry(token).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t))
}
