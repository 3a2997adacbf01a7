//! Rule-based linking of a query's head entity to its mentions in the scene
//! knowledge.
//!
//! With an alias table the referent's surface forms are scanned directly.
//! Without one, the rules read copular sentences (`Mia is the red circle`,
//! `Mia works as a pilot`) and possessive relations (`Mia is Jake's
//! colleague`) to find a unique proper name, then scan for that name.
//! Pronouns are never resolved here.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::head::{HeadEntity, Lexicon};
use super::Span;
use crate::tokenizer::{tokenize, Token};

/// Entity id to the surface forms naming it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl AliasTable {
    pub fn forms(&self, id: &str) -> &[String] {
        self.entries.get(id).map_or(&[], Vec::as_slice)
    }
}

/// Gold linking information: which alias-table entry the head denotes.
#[derive(Debug, Clone, Copy)]
pub struct CorefHints<'a> {
    pub aliases: &'a AliasTable,
    pub referent: &'a str,
}

const STOPWORDS: &[&str] = &[
    "the",
    "a",
    "an",
    "it",
    "they",
    "everyone",
    "he",
    "she",
    "his",
    "her",
    "their",
    "later",
    "when",
    "after",
    "before",
    "in",
    "on",
    "at",
    "this",
    "there",
    "nobody",
    "someone",
    "yesterday",
    "today",
    "query",
    "knowledge",
    "all",
    "both",
    "outside",
    "inside",
    "that",
    "then",
];
const COPULAS: &[&str] = &["is", "was", "are", "appears", "works"];
const CLAUSE_FILLER: &[&str] = &["who", "that", "which", "is", "was", "works", "as", "a", "an", "the"];

struct Sentence {
    words: Vec<String>,
    names: Vec<String>,
    copular: bool,
}

fn sentences(knowledge: &str, lexicon: &Lexicon) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut cur: Vec<Token> = Vec::new();
    let toks = tokenize(knowledge);
    for t in toks {
        let end = matches!(t.text.as_str(), "." | "!" | "?");
        cur.push(t);
        if end {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.into_iter()
        .map(|toks| {
            let names = toks
                .iter()
                .filter(|t| is_name(&knowledge[t.start..t.end], lexicon))
                .map(|t| t.text.clone())
                .collect();
            let words: Vec<String> = toks.into_iter().map(|t| t.text).collect();
            let copular = words.iter().any(|w| COPULAS.contains(&w.as_str()));
            Sentence { words, names, copular }
        })
        .collect()
}

fn is_name(surface: &str, lexicon: &Lexicon) -> bool {
    let lower = surface.to_lowercase();
    surface.chars().next().is_some_and(char::is_uppercase)
        && surface.chars().all(char::is_alphabetic)
        && !STOPWORDS.contains(&lower.as_str())
        && !lexicon.is_noun(&lower)
        && !lexicon.is_adjective(&lower)
}

fn contains_seq(words: &[String], seq: &[String]) -> bool {
    !seq.is_empty() && words.windows(seq.len()).any(|w| w == seq)
}

/// Names that a single-name copular sentence describes with `phrase`.
fn described(sents: &[Sentence], phrase: &[String]) -> BTreeSet<String> {
    sents
        .iter()
        .filter(|s| s.copular && s.names.len() == 1 && contains_seq(&s.words, phrase))
        .map(|s| s.names[0].clone())
        .collect()
}

/// Names `Y` with a sentence relating them as `anchor 's noun`.
fn possessed(sents: &[Sentence], anchor: &str, noun: &str) -> BTreeSet<String> {
    let pattern = [anchor.to_string(), "'s".to_string(), noun.to_string()];
    sents
        .iter()
        .filter(|s| s.copular && contains_seq(&s.words, &pattern))
        .flat_map(|s| s.names.iter().filter(|n| n.as_str() != anchor).cloned())
        .collect()
}

fn heuristic_referent(head: &HeadEntity, sents: &[Sentence], lexicon: &Lexicon) -> Option<String> {
    let head_is_name = head.phrase.len() == 1 && is_name(&head.text, lexicon);
    let refs: BTreeSet<String> = if head_is_name {
        BTreeSet::from([head.noun.clone()])
    } else if let Some(possessor) = &head.possessor {
        let anchors = if head.possessor_is_name {
            BTreeSet::from([possessor.join(" ")])
        } else {
            described(sents, possessor)
        };
        anchors.iter().flat_map(|a| possessed(sents, a, &head.noun)).collect()
    } else {
        let mut refs = described(sents, &head.phrase);
        let named = head
            .clause
            .windows(2)
            .find(|w| w[0] == "called" || w[0] == "named")
            .map(|w| w[1].clone());
        if let Some(name) = named {
            refs.retain(|r| *r == name);
        } else {
            let cue: Vec<String> = head
                .clause
                .iter()
                .filter(|w| !CLAUSE_FILLER.contains(&w.as_str()))
                .cloned()
                .collect();
            if !cue.is_empty() {
                let with_cue = described(sents, &cue);
                refs.retain(|r| with_cue.contains(r));
            }
        }
        refs
    };
    (refs.len() == 1).then(|| refs.into_iter().next().expect("one element"))
}

/// Word-aligned, non-overlapping occurrences of any form, in textual order.
pub fn find_mentions(knowledge: &str, forms: &[String]) -> Vec<Span> {
    let toks = tokenize(knowledge);
    let words: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
    let mut found: Vec<Span> = Vec::new();
    for form in forms {
        let pattern: Vec<String> = tokenize(form).into_iter().map(|t| t.text).collect();
        if pattern.is_empty() || pattern.len() > words.len() {
            continue;
        }
        for i in 0..=words.len() - pattern.len() {
            if words[i..i + pattern.len()].iter().zip(&pattern).all(|(a, b)| a == b) {
                found.push(Span::new(toks[i].start, toks[i + pattern.len() - 1].end));
            }
        }
    }
    found.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut out: Vec<Span> = Vec::new();
    for s in found {
        if out.last().is_none_or(|l| s.start >= l.end) {
            out.push(s);
        }
    }
    out
}

/// Mentions in `knowledge` co-referring with the head entity. May be empty.
pub fn resolve_corefs(
    head: &HeadEntity,
    knowledge: &str,
    hints: Option<CorefHints<'_>>,
    lexicon: &Lexicon,
) -> Vec<Span> {
    if let Some(h) = hints {
        return find_mentions(knowledge, h.aliases.forms(h.referent));
    }
    let sents = sentences(knowledge, lexicon);
    match heuristic_referent(head, &sents, lexicon) {
        Some(name) => find_mentions(knowledge, &[name]),
        None => find_mentions(knowledge, std::slice::from_ref(&head.text)),
    }
}
