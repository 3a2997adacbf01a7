use std::ops::Range;

use crate::error::{Error, Result};
use crate::linguistic::Span;
use crate::tokenizer::{tokenize, Token};

const QUERY_MARK: &str = "Query: ";
const KNOWLEDGE_MARK: &str = " Knowledge: ";

/// Which text a span refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Query,
    Knowledge,
}

/// `Query: T. Knowledge: K.` with the bookkeeping to map source spans onto
/// prompt tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub tokens: Vec<Token>,
    query_at: usize,
    query_len: usize,
    knowledge_at: Option<usize>,
    knowledge_len: usize,
    /// Bytes of K that survived truncation.
    knowledge_kept: usize,
}

fn ends_terminal(s: &str) -> bool {
    s.ends_with(['.', '!', '?'])
}

/// Builds the prompt. With `knowledge == None` or an empty knowledge text the
/// result is the query-only prompt. Knowledge beyond `max_knowledge_tokens`
/// is dropped from the tail at a sentence boundary when one fits.
pub fn build_prompt(query: &str, knowledge: Option<&str>, max_knowledge_tokens: usize) -> Result<Prompt> {
    if query.trim().is_empty() {
        return Err(Error::Empty("query"));
    }
    let mut text = String::from(QUERY_MARK);
    let query_at = text.len();
    text.push_str(query);
    if !ends_terminal(query) {
        text.push('.');
    }
    let mut knowledge_at = None;
    let mut knowledge_len = 0;
    let mut knowledge_kept = 0;
    if let Some(k) = knowledge.filter(|k| !k.trim().is_empty()) {
        knowledge_len = k.len();
        knowledge_kept = truncate_point(k, max_knowledge_tokens);
        if knowledge_kept > 0 {
            let kept = &k[..knowledge_kept];
            text.push_str(KNOWLEDGE_MARK);
            knowledge_at = Some(text.len());
            text.push_str(kept);
            if !ends_terminal(kept) {
                text.push('.');
            }
        }
    }
    Ok(Prompt {
        tokens: tokenize(&text),
        text,
        query_at,
        query_len: query.len(),
        knowledge_at,
        knowledge_len,
        knowledge_kept,
    })
}

/// Byte length of the retained prefix of `k`.
fn truncate_point(k: &str, max_tokens: usize) -> usize {
    let toks = tokenize(k);
    if toks.len() <= max_tokens {
        return k.len();
    }
    let boundary = toks[..max_tokens]
        .iter()
        .rev()
        .find(|t| matches!(t.text.as_str(), "." | "!" | "?"));
    match boundary {
        Some(t) => t.end,
        None if max_tokens == 0 => 0,
        None => toks[max_tokens - 1].end,
    }
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_knowledge(&self) -> bool {
        self.knowledge_at.is_some()
    }

    /// Token index range of a source span; `None` when truncation dropped any
    /// part of it.
    pub fn map_span(&self, source: Source, span: Span) -> Result<Option<Range<usize>>> {
        let (offset, len, kept) = match source {
            Source::Query => (Some(self.query_at), self.query_len, self.query_len),
            Source::Knowledge => (self.knowledge_at, self.knowledge_len, self.knowledge_kept),
        };
        span.check(len)?;
        let Some(offset) = offset.filter(|_| span.end <= kept) else {
            return Ok(None);
        };
        let (s, e) = (span.start + offset, span.end + offset);
        let first = self.tokens.iter().position(|t| t.end > s);
        let last = self.tokens.iter().rposition(|t| t.start < e);
        Ok(match (first, last) {
            (Some(a), Some(b)) if a <= b => Some(a..b + 1),
            _ => None,
        })
    }

    pub fn token_ids(&self, vocab: &crate::tokenizer::Vocab) -> Vec<usize> {
        vocab.encode(&self.tokens)
    }
}

/// Maps spans of one source onto prompt token ranges; dropped spans are
/// `None`.
pub fn spans_to_tokens(spans: &[Span], source: Source, prompt: &Prompt) -> Result<Vec<Option<Range<usize>>>> {
    spans.iter().map(|&s| prompt.map_span(source, s)).collect()
}
