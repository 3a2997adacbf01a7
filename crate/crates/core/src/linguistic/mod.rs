//! Head-entity extraction from queries and coreference linking into the
//! scene knowledge.

mod coref;
mod head;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coref::{find_mentions, resolve_corefs, AliasTable, CorefHints};
pub use head::{extract_head, HeadEntity, Lexicon};
pub use tree::{Arc, DependencyTree, Pos, TreeToken};

/// Half-open byte range `[start, end)` into a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Non-empty and within a text of `len` bytes.
    pub fn check(&self, len: usize) -> Result<()> {
        if self.start >= self.end || self.end > len {
            return Err(Error::SpanOutOfRange {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}
