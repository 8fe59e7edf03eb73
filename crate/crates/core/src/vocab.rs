//! Token and label vocabularies.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Token vocabulary with a reserved unknown-token id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(into = "TokenVocabRepr", try_from = "TokenVocabRepr")
)]
pub struct TokenVocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
    unk_id: usize,
}

impl TokenVocab {
    /// A vocabulary holding only [`UNK_TOKEN`] at id 0.
    pub fn new() -> Self {
        let mut v = TokenVocab {
            token_to_id: BTreeMap::new(),
            id_to_token: Vec::new(),
            unk_id: 0,
        };
        v.insert(UNK_TOKEN);
        v
    }

    /// Builds from an explicit id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, unk_id: usize) -> Result<Self> {
        if unk_id >= tokens.len() {
            return Err(Error::invalid("token vocabulary", "unk id out of range"));
        }
        let mut token_to_id = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(
                    "token vocabulary",
                    alloc::format!("duplicate token {t:?}"),
                ));
            }
        }
        Ok(TokenVocab {
            token_to_id,
            id_to_token: tokens,
            unk_id,
        })
    }

    /// Builds from token occurrences in first-occurrence order, keeping only
    /// tokens seen at least `min_count` times.
    pub fn build<'a, I>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut order = Vec::new();
        for t in tokens {
            let c = counts.entry(t).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
        let mut v = TokenVocab::new();
        for t in order {
            if counts[t] >= min_count {
                v.insert(t);
            }
        }
        v
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    /// Id of `token`, or the unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Tokenizes and maps to ids.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or(UNK_TOKEN));
        }
        out
    }
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Closed label set (markers or relations); ids follow first occurrence.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(into = "Vec<String>", try_from = "Vec<String>")
)]
pub struct LabelVocab {
    label_to_id: BTreeMap<String, usize>,
    id_to_label: Vec<String>,
}

/// The `N` candidate markers.
pub type MarkerVocab = LabelVocab;

impl LabelVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut v = LabelVocab::new();
        for l in &labels {
            if v.label_to_id.contains_key(l.as_str()) {
                return Err(Error::invalid(
                    "label vocabulary",
                    alloc::format!("duplicate label {l:?}"),
                ));
            }
            v.insert(l);
        }
        Ok(v)
    }

    pub fn insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.label_to_id.get(label) {
            return id;
        }
        let id = self.id_to_label.len();
        self.label_to_id.insert(label.to_string(), id);
        self.id_to_label.push(label.to_string());
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.label_to_id.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.id_to_label.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.id_to_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_label.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.id_to_label
    }
}

#[cfg(feature = "serde")]
#[derive(Serialize, Deserialize)]
struct TokenVocabRepr {
    unk_id: usize,
    tokens: Vec<String>,
}

#[cfg(feature = "serde")]
impl From<TokenVocab> for TokenVocabRepr {
    fn from(v: TokenVocab) -> Self {
        TokenVocabRepr {
            unk_id: v.unk_id,
            tokens: v.id_to_token,
        }
    }
}

#[cfg(feature = "serde")]
impl TryFrom<TokenVocabRepr> for TokenVocab {
    type Error = Error;
    fn try_from(r: TokenVocabRepr) -> Result<Self> {
        TokenVocab::from_tokens(r.tokens, r.unk_id)
    }
}

#[cfg(feature = "serde")]
impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.id_to_label
    }
}

#[cfg(feature = "serde")]
impl TryFrom<Vec<String>> for LabelVocab {
    type Error = Error;
    fn try_from(labels: Vec<String>) -> Result<Self> {
        LabelVocab::from_labels(labels)
    }
}
