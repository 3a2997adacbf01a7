//! Lowercasing word tokenizer with byte offsets, and the vocabulary built
//! from a training corpus.
//!
//! Words are maximal alphanumeric runs; a possessive `'s` is its own token;
//! every other non-space character is a one-character token.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// Lowercased surface form.
    pub text: String,
    /// Byte offset of the first character in the source text.
    pub start: usize,
    /// Byte offset one past the last character.
    pub end: usize,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if c.is_alphanumeric() {
            let mut end = start + c.len_utf8();
            while let Some(&(i, n)) = chars.peek() {
                if n.is_alphanumeric() {
                    end = i + n.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                text: text[start..end].to_lowercase(),
                start,
                end,
            });
            continue;
        }
        if c == '\'' || c == '\u{2019}' {
            let rest = &text[start + c.len_utf8()..];
            let mut follow = rest.chars();
            let is_possessive = matches!(follow.next(), Some('s' | 'S'))
                && !follow.next().is_some_and(|n| n.is_alphanumeric())
                && tokens.last().is_some_and(|t: &Token| t.end == start);
            if is_possessive {
                chars.next();
                let end = start + c.len_utf8() + 1;
                tokens.push(Token {
                    text: "'s".into(),
                    start,
                    end,
                });
                continue;
            }
        }
        tokens.push(Token {
            text: c.to_lowercase().collect(),
            start,
            end: start + c.len_utf8(),
        });
    }
    tokens
}

/// Token to id mapping. Ids 0 and 1 are reserved for padding and unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary ordered by descending frequency, ties broken
    /// alphabetically, so the result does not depend on corpus order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for t in tokenize(text) {
                *counts.entry(t.text).or_default() += 1;
            }
        }
        let mut ordered: Vec<(String, usize)> = counts.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(ordered.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(Error::Config("vocabulary must start with <pad>, <unk>".into()));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(&t.text)).collect()
    }
}

/// Token ids truncated or padded to a fixed length, with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedIds {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PaddedIds {
    pub fn new(mut ids: Vec<usize>, max_len: usize) -> Result<Self> {
        ids.truncate(max_len);
        if ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let valid = ids.len();
        ids.resize(max_len, PAD_ID);
        let mask = (0..max_len).map(|i| i < valid).collect();
        Ok(PaddedIds { ids, mask })
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn splits_words_possessives_and_punctuation() {
        let t = tokenize("Jake's wine glass, Query: it's.");
        assert_eq!(
            texts(&t),
            ["jake", "'s", "wine", "glass", ",", "query", ":", "it", "'s", "."]
        );
        assert_eq!(&"Jake's wine"[t[1].start..t[1].end], "'s");
    }

    #[test]
    fn apostrophe_not_possessive() {
        let t = tokenize("the 'quote' ok");
        assert_eq!(texts(&t), ["the", "'", "quote", "'", "ok"]);
    }

    #[test]
    fn offsets_point_into_source() {
        let src = "  Émile met Ava. ";
        for tok in tokenize(src) {
            assert_eq!(src[tok.start..tok.end].to_lowercase(), tok.text);
        }
    }

    #[test]
    fn vocab_is_order_independent() {
        let a = Vocab::build(["b a a", "c"]);
        let b = Vocab::build(["c", "b a a"]);
        assert_eq!(a, b);
        assert_eq!(a.token(2), "a");
        assert_eq!(a.id("zzz"), UNK_ID);
    }

    #[test]
    fn padding_and_truncation() {
        let p = PaddedIds::new(vec![5, 6], 4).unwrap();
        assert_eq!(p.ids, [5, 6, PAD_ID, PAD_ID]);
        assert_eq!(p.mask, [true, true, false, false]);
        assert_eq!(PaddedIds::new(vec![1, 2, 3], 2).unwrap().ids, [1, 2]);
        assert!(PaddedIds::new(vec![], 4).is_err());
        assert!(PaddedIds::new(vec![3], 0).is_err());
    }
}
