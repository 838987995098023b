use std::collections::HashMap;

use crate::error::{Result, SceError};

/// Lowercased alphanumeric word tokens; everything else separates words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Returns the single token of `label`, or a single-token violation.
pub fn single_token(label: &str) -> Result<String> {
    let mut toks = tokenize(label);
    if toks.len() != 1 {
        return Err(SceError::SingleTokenViolation(label.to_string()));
    }
    Ok(toks.pop().unwrap())
}

/// Bijective token ↔ id map with contiguous ids from 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary over texts and labels.
    ///
    /// Entries are sorted first and ids are assigned in first-seen order, so
    /// the result does not depend on the input order. Every label must be
    /// exactly one token.
    pub fn build<S: AsRef<str>, L: AsRef<str>>(texts: &[S], labels: &[L]) -> Result<Self> {
        if texts.is_empty() && labels.is_empty() {
            return Err(SceError::Validation("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut entries: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
        for l in labels {
            single_token(l.as_ref())?;
            entries.push(l.as_ref());
        }
        entries.sort_unstable();
        let mut vocab = Self::default();
        for e in entries {
            for tok in tokenize(e) {
                vocab.insert(tok);
            }
        }
        Ok(vocab)
    }

    /// Vocabulary from an explicit token list; ids follow list order.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut vocab = Self::default();
        for t in tokens {
            let t = t.as_ref();
            if vocab.ids.contains_key(t) {
                return Err(SceError::Validation(format!("token `{t}` listed twice")));
            }
            vocab.insert(t.to_string());
        }
        Ok(vocab)
    }

    fn insert(&mut self, tok: String) -> usize {
        if let Some(&id) = self.ids.get(&tok) {
            return id;
        }
        let id = self.tokens.len();
        self.ids.insert(tok.clone(), id);
        self.tokens.push(tok);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token ids of `label`, failing on the first out-of-vocabulary token.
    pub fn encode_label(&self, label: &str) -> Result<Vec<usize>> {
        let toks = tokenize(label);
        if toks.is_empty() {
            return Err(SceError::UnknownToken(label.to_string()));
        }
        toks.into_iter()
            .map(|t| self.id(&t).ok_or(SceError::UnknownToken(t)))
            .collect()
    }
}
