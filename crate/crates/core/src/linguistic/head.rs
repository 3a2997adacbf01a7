//! Head-entity extraction from a referring expression.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::tree::{DependencyTree, Pos};
use super::Span;
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, Token};

/// The grammatical head of a query plus the cues the coreference rules use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadEntity {
    /// Byte span in the query; excludes determiners, possessors and clauses.
    pub span: Span,
    pub text: String,
    /// Lowercased head noun (last token of the span).
    pub noun: String,
    /// Lowercased modifier and noun tokens of the span.
    pub phrase: Vec<String>,
    /// Possessor noun phrase without determiner or `'s`, e.g. `jake`.
    pub possessor: Option<Vec<String>>,
    pub possessor_is_name: bool,
    /// Lowercased tokens of a relative or participial clause on the head.
    pub clause: Vec<String>,
}

/// Closed word lists for the tree-less fallback.
#[derive(Debug, Clone)]
pub struct Lexicon {
    nouns: BTreeSet<String>,
    adjectives: BTreeSet<String>,
}

const NOUNS: &[&str] = &[
    "square",
    "circle",
    "triangle",
    "diamond",
    "star",
    "man",
    "woman",
    "person",
    "boy",
    "girl",
    "child",
    "people",
    "cup",
    "glass",
    "glasses",
    "wine",
    "table",
    "chair",
    "dog",
    "cat",
    "car",
    "hat",
    "bag",
    "bottle",
    "phone",
    "book",
    "one",
    "colleague",
    "friend",
    "brother",
    "sister",
    "neighbor",
    "boss",
    "servant",
    "cousin",
    "mother",
    "father",
    "wife",
    "husband",
    "son",
    "daughter",
    "assistant",
    "partner",
    "doctor",
    "teacher",
    "chef",
    "pilot",
    "painter",
    "farmer",
    "lawyer",
    "singer",
    "nurse",
    "driver",
    "writer",
    "baker",
    "guard",
    "student",
    "officer",
];

const ADJECTIVES: &[&str] = &[
    "red", "green", "blue", "yellow", "purple", "orange", "pink", "brown", "black", "white", "gray", "grey", "big",
    "small", "large", "little", "tall", "short", "old", "young",
];

const CLAUSE_OPENERS: &[&str] = &["who", "that", "which", "called", "named", "wearing", "holding"];
const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "his", "her", "their"];

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            nouns: NOUNS.iter().map(|s| s.to_string()).collect(),
            adjectives: ADJECTIVES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Lexicon {
    pub fn with_nouns<'a>(mut self, words: impl IntoIterator<Item = &'a str>) -> Self {
        self.nouns.extend(words.into_iter().map(str::to_lowercase));
        self
    }

    pub fn with_adjectives<'a>(mut self, words: impl IntoIterator<Item = &'a str>) -> Self {
        self.adjectives.extend(words.into_iter().map(str::to_lowercase));
        self
    }

    pub fn is_noun(&self, w: &str) -> bool {
        self.nouns.contains(w)
    }

    pub fn is_adjective(&self, w: &str) -> bool {
        self.adjectives.contains(w)
    }
}

/// Extracts the head entity of `query`, from its dependency tree when one is
/// given and otherwise by a lexicon scan.
pub fn extract_head(query: &str, tree: Option<&DependencyTree>, lexicon: &Lexicon) -> Result<HeadEntity> {
    if query.trim().is_empty() {
        return Err(Error::Empty("query"));
    }
    match tree {
        Some(t) => from_tree(query, t),
        None => from_lexicon(query, lexicon),
    }
}

fn is_capitalized(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

fn from_tree(query: &str, tree: &DependencyTree) -> Result<HeadEntity> {
    let toks = tree.tokens();
    let root = tree.root();
    let head = if toks[root].pos.is_nominal() {
        root
    } else {
        const ARGS: &[&str] = &["obj", "dobj", "nsubj", "nsubj:pass", "obl", "xcomp", "nmod"];
        let deps = tree.dependents(root);
        deps.iter()
            .find(|(d, l)| ARGS.contains(l) && toks[*d].pos.is_nominal())
            .or_else(|| deps.iter().find(|(d, _)| toks[*d].pos.is_nominal()))
            .map(|(d, _)| *d)
            .ok_or_else(|| Error::NoNominal(query.to_string()))?
    };
    let deps = tree.dependents(head);
    let mut first = head;
    while first > 0 {
        let prev = first - 1;
        let modifies = deps
            .iter()
            .any(|(d, l)| *d == prev && matches!(*l, "amod" | "compound"));
        if !modifies {
            break;
        }
        first = prev;
    }
    let possessor = deps.iter().find(|(_, l)| *l == "nmod:poss").map(|(p, _)| {
        let words: Vec<String> = tree
            .subtree(*p)
            .into_iter()
            .filter(|&t| !matches!(tree.head_of(t), Some((_, "case" | "det"))))
            .map(|t| toks[t].text.to_lowercase())
            .collect();
        (words, toks[*p].pos == Pos::Propn)
    });
    let clause = deps
        .iter()
        .filter(|(_, l)| matches!(*l, "acl" | "acl:relcl"))
        .flat_map(|(c, _)| tree.subtree(*c))
        .map(|t| toks[t].text.to_lowercase())
        .collect();
    let span = Span::new(toks[first].start, toks[head].end);
    span.check(query.len())?;
    Ok(HeadEntity {
        span,
        text: query[span.start..span.end].to_string(),
        noun: toks[head].text.to_lowercase(),
        phrase: (first..=head).map(|t| toks[t].text.to_lowercase()).collect(),
        possessor_is_name: possessor.as_ref().is_some_and(|p| p.1),
        possessor: possessor.map(|p| p.0),
        clause,
    })
}

fn from_lexicon(query: &str, lexicon: &Lexicon) -> Result<HeadEntity> {
    let toks: Vec<Token> = tokenize(query);
    let followed_by_possessive = |i: usize| toks.get(i + 1).is_some_and(|t| t.text == "'s");
    let mut possessor: Option<(Vec<String>, bool)> = None;
    let mut phrase_start = 0;
    let mut head = None;
    let mut i = 0;
    while i < toks.len() {
        if followed_by_possessive(i) {
            let words: Vec<String> = toks[phrase_start..=i]
                .iter()
                .filter(|t| !DETERMINERS.contains(&t.text.as_str()))
                .map(|t| t.text.clone())
                .collect();
            possessor = Some((words, is_capitalized(&query[toks[i].start..toks[i].end])));
            i += 2;
            phrase_start = i;
            continue;
        }
        if lexicon.is_noun(&toks[i].text) {
            let mut end = i;
            while end + 1 < toks.len() && lexicon.is_noun(&toks[end + 1].text) && !followed_by_possessive(end + 1) {
                end += 1;
            }
            head = Some((i, end));
            break;
        }
        i += 1;
    }
    let (mut first, last) = head.ok_or_else(|| Error::NoNominal(query.to_string()))?;
    while first > 0 && lexicon.is_adjective(&toks[first - 1].text) {
        first -= 1;
    }
    let clause = match toks.get(last + 1) {
        Some(t) if CLAUSE_OPENERS.contains(&t.text.as_str()) => toks[last + 1..]
            .iter()
            .filter(|t| t.text != ".")
            .map(|t| t.text.clone())
            .collect(),
        _ => Vec::new(),
    };
    let span = Span::new(toks[first].start, toks[last].end);
    Ok(HeadEntity {
        span,
        text: query[span.start..span.end].to_string(),
        noun: toks[last].text.clone(),
        phrase: toks[first..=last].iter().map(|t| t.text.clone()).collect(),
        possessor_is_name: possessor.as_ref().is_some_and(|p| p.1),
        possessor: possessor.map(|p| p.0),
        clause,
    })
}
