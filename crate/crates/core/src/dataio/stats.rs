use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::generate::{area_counts, difficulty_counts, proportions};
use super::types::GroundingSample;
use crate::error::{Error, Result};
use crate::linguistic::{extract_head, Lexicon};
use crate::tokenizer::tokenize;

/// Lower edges of the story-length buckets, in words; the last is open.
pub const LENGTH_EDGES: [usize; 10] = [0, 10, 20, 30, 40, 50, 70, 90, 120, 160];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub lo: usize,
    /// Exclusive; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub samples: usize,
    pub stories: usize,
    pub length_histogram: Vec<LengthBucket>,
    pub head_nouns: BTreeMap<String, usize>,
    pub area_counts: BTreeMap<String, usize>,
    pub area_mix: BTreeMap<String, f64>,
    pub difficulty_counts: BTreeMap<String, usize>,
    pub difficulty_mix: BTreeMap<String, f64>,
}

pub fn word_count(text: &str) -> usize {
    tokenize(text)
        .iter()
        .filter(|t| t.text.chars().any(char::is_alphanumeric))
        .count()
}

pub fn length_bucket(words: usize) -> usize {
    LENGTH_EDGES
        .iter()
        .rposition(|&lo| words >= lo)
        .expect("first edge is 0")
}

fn head_noun(s: &GroundingSample, lexicon: &Lexicon) -> String {
    if let Some(g) = &s.gold {
        if let Some(t) = tokenize(&s.query[g.head.start..g.head.end]).last() {
            return t.text.clone();
        }
    }
    extract_head(&s.query, None, lexicon).map_or_else(|_| "<unparsed>".into(), |h| h.noun)
}

/// Story lengths (over distinct stories), head nouns, area bins and
/// difficulty levels of a sample set.
pub fn compute_stats(samples: &[GroundingSample], lexicon: &Lexicon) -> Result<Stats> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let stories: BTreeSet<(&str, &str)> = samples
        .iter()
        .map(|s| (s.image_id.as_str(), s.knowledge.as_str()))
        .collect();
    let mut length_histogram: Vec<LengthBucket> = LENGTH_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| LengthBucket {
            lo,
            hi: LENGTH_EDGES.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    for (_, k) in &stories {
        length_histogram[length_bucket(word_count(k))].count += 1;
    }
    let mut head_nouns = BTreeMap::new();
    for s in samples {
        *head_nouns.entry(head_noun(s, lexicon)).or_insert(0) += 1;
    }
    let area_counts = area_counts(samples);
    let difficulty_counts = difficulty_counts(samples);
    Ok(Stats {
        samples: samples.len(),
        stories: stories.len(),
        length_histogram,
        head_nouns,
        area_mix: proportions(&area_counts),
        area_counts,
        difficulty_mix: proportions(&difficulty_counts),
        difficulty_counts,
    })
}

impl Stats {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples {}  stories {}", self.samples, self.stories);
        let _ = writeln!(out, "{:<12} {:>8}", "words", "stories");
        for b in &self.length_histogram {
            let range = match b.hi {
                Some(hi) => format!("{}-{}", b.lo, hi),
                None => format!("{}+", b.lo),
            };
            let _ = writeln!(out, "{range:<12} {:>8}", b.count);
        }
        let _ = writeln!(out, "{:<12} {:>8} {:>8}", "area", "count", "share");
        for (k, c) in &self.area_counts {
            let _ = writeln!(out, "{k:<12} {c:>8} {:>8.4}", self.area_mix[k]);
        }
        let _ = writeln!(out, "{:<12} {:>8} {:>8}", "difficulty", "count", "share");
        for (k, c) in &self.difficulty_counts {
            let _ = writeln!(out, "{k:<12} {c:>8} {:>8.4}", self.difficulty_mix[k]);
        }
        let _ = writeln!(out, "{:<12} {:>8}", "head noun", "count");
        for (k, c) in &self.head_nouns {
            let _ = writeln!(out, "{k:<12} {c:>8}");
        }
        out
    }
}
