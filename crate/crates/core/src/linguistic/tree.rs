use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Universal-dependencies style coarse tags used by the rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Propn,
    Pron,
    Adj,
    Det,
    Verb,
    Aux,
    Adp,
    Part,
    Adv,
    Punct,
    X,
}

impl Pos {
    pub fn is_nominal(self) -> bool {
        matches!(self, Pos::Noun | Pos::Propn)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub pos: Pos,
}

/// `(head, dependent, label)` with 0-based token indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arc(pub usize, pub usize, pub String);

/// Labeled dependency tree over the tokens of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct DependencyTree {
    tokens: Vec<TreeToken>,
    root: usize,
    heads: Vec<Option<(usize, String)>>,
}

#[derive(Serialize, Deserialize)]
struct RawTree {
    tokens: Vec<TreeToken>,
    root: usize,
    arcs: Vec<Arc>,
}

impl TryFrom<RawTree> for DependencyTree {
    type Error = Error;

    fn try_from(raw: RawTree) -> Result<Self> {
        DependencyTree::new(raw.tokens, raw.root, raw.arcs)
    }
}

impl From<DependencyTree> for RawTree {
    fn from(t: DependencyTree) -> Self {
        let arcs = t.arcs();
        RawTree {
            tokens: t.tokens,
            root: t.root,
            arcs,
        }
    }
}

impl DependencyTree {
    /// Validates that `arcs` give every non-root token exactly one head and
    /// that all heads lead to `root`.
    pub fn new(tokens: Vec<TreeToken>, root: usize, arcs: Vec<Arc>) -> Result<Self> {
        let n = tokens.len();
        let bad = |msg: String| Err(Error::Config(format!("dependency tree: {msg}")));
        if root >= n {
            return bad(format!("root {root} out of {n} tokens"));
        }
        let mut heads: Vec<Option<(usize, String)>> = vec![None; n];
        for Arc(h, d, label) in arcs {
            if h >= n || d >= n {
                return bad(format!("arc ({h}, {d}) out of range"));
            }
            if d == root {
                return bad("root has a head".into());
            }
            if heads[d].is_some() {
                return bad(format!("token {d} has two heads"));
            }
            heads[d] = Some((h, label));
        }
        for d in 0..n {
            if d != root && heads[d].is_none() {
                return bad(format!("token {d} has no head"));
            }
            let mut cur = d;
            let mut steps = 0;
            while let Some((h, _)) = &heads[cur] {
                cur = *h;
                steps += 1;
                if steps > n {
                    return bad("cycle".into());
                }
            }
        }
        Ok(DependencyTree { tokens, root, heads })
    }

    pub fn tokens(&self) -> &[TreeToken] {
        &self.tokens
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn head_of(&self, token: usize) -> Option<(usize, &str)> {
        self.heads[token].as_ref().map(|(h, l)| (*h, l.as_str()))
    }

    pub fn arcs(&self) -> Vec<Arc> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(d, h)| h.as_ref().map(|(h, l)| Arc(*h, d, l.clone())))
            .collect()
    }

    /// Dependents of `token` in textual order with their labels.
    pub fn dependents(&self, token: usize) -> Vec<(usize, &str)> {
        self.heads
            .iter()
            .enumerate()
            .filter_map(|(d, h)| match h {
                Some((h, l)) if *h == token => Some((d, l.as_str())),
                _ => None,
            })
            .collect()
    }

    /// All tokens dominated by `token`, itself included, sorted.
    pub fn subtree(&self, token: usize) -> Vec<usize> {
        let mut out = vec![token];
        let mut i = 0;
        while i < out.len() {
            let t = out[i];
            out.extend(self.dependents(t).into_iter().map(|(d, _)| d));
            i += 1;
        }
        out.sort_unstable();
        out
    }
}
