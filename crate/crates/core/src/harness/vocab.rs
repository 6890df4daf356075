use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{TokenSequence, FIRST_WORD_ID, UNK_ID};

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const UNK_TOKEN: &str = "[UNK]";

/// Metadata key under which a checkpoint stores its vocabulary.
pub const VOCAB_META_KEY: &str = "vocab.tokens";

/// Whitespace-token vocabulary. Ids 0..3 are reserved for padding, `[CLS]`
/// and unknown words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size - 3` most frequent words (ties broken
    /// alphabetically).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size <= FIRST_WORD_ID {
            return Err(Error::Config(format!("vocabulary size must exceed {FIRST_WORD_ID}")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for w in t.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        words.truncate(max_size - FIRST_WORD_ID);
        Self::from_words(words.into_iter().map(|(w, _)| w.to_string()))
    }

    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), CLS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("bad vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS]` followed by word ids, truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        let body: Vec<usize> = text.split_whitespace().map(|w| self.id(w)).collect();
        TokenSequence::with_cls(&body).truncated(max_len)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// Space-joined words (reserved tokens omitted).
    pub fn to_meta(&self) -> String {
        self.tokens[FIRST_WORD_ID..].join(" ")
    }

    pub fn from_meta(s: &str) -> Result<Self> {
        Self::from_words(s.split(' ').filter(|w| !w.is_empty()).map(str::to_string))
    }
}
