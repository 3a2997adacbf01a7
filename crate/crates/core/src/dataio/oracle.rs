//! Exhaustive interpretation of generator queries against a scene graph.

use super::types::{GroundingSample, SceneEntity, SceneGraph};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tokenizer::tokenize;

/// Whether story facts (names, professions, relations) may be consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facts {
    Visible,
    Masked,
}

enum Constraint {
    Color(String),
    Shape(String),
    Name(String),
    Profession(String),
    /// The entity is `kind` of anyone satisfying the inner constraints.
    Related(String, Vec<Constraint>),
}

fn parse_error(query: &str) -> Error {
    Error::Oracle {
        query: query.to_string(),
        count: 0,
    }
}

fn parse(query: &str) -> Result<Vec<Constraint>> {
    let mut words: Vec<String> = tokenize(query).into_iter().map(|t| t.text).collect();
    if words.last().is_some_and(|w| w == ".") {
        words.pop();
    }
    if words.first().is_some_and(|w| w == "find" || w == "locate") {
        words.remove(0);
    }
    let w: Vec<&str> = words.iter().map(String::as_str).collect();
    use Constraint::*;
    let s = |x: &str| x.to_string();
    Ok(match w.as_slice() {
        [name, "'s", kind] => vec![Related(s(kind), vec![Name(s(name))])],
        ["the", prof, "'s", kind] => vec![Related(s(kind), vec![Profession(s(prof))])],
        ["the", color, shape] => vec![Color(s(color)), Shape(s(shape))],
        ["the", shape, "that", "is", color] => vec![Shape(s(shape)), Color(s(color))],
        ["the", shape, "who", "is", "a" | "an", prof] => vec![Shape(s(shape)), Profession(s(prof))],
        ["the", shape, "who", "works", "as", "a" | "an", prof] => vec![Shape(s(shape)), Profession(s(prof))],
        ["the", shape, "called", name] => vec![Shape(s(shape)), Name(s(name))],
        _ => return Err(parse_error(query)),
    })
}

fn holds(c: &Constraint, e: &SceneEntity, scene: &SceneGraph, facts: Facts) -> bool {
    let visible = facts == Facts::Visible;
    match c {
        Constraint::Color(x) => e.color == *x,
        Constraint::Shape(x) => e.shape == *x,
        Constraint::Name(x) => !visible || e.name.to_lowercase() == *x,
        Constraint::Profession(x) => !visible || e.profession == *x,
        Constraint::Related(kind, inner) => {
            !visible
                || scene.relations.iter().any(|r| {
                    r.kind == *kind
                        && r.target == e.id
                        && scene
                            .entity(&r.anchor)
                            .is_some_and(|a| inner.iter().all(|c| holds(c, a, scene, facts)))
                })
        }
    }
}

/// Indices of all scene entities satisfying `query`.
pub fn satisfiers(query: &str, scene: &SceneGraph, facts: Facts) -> Result<Vec<usize>> {
    let constraints = parse(query)?;
    Ok(scene
        .entities
        .iter()
        .enumerate()
        .filter(|(_, e)| constraints.iter().all(|c| holds(c, e, scene, facts)))
        .map(|(i, _)| i)
        .collect())
}

/// The box of the unique entity the query denotes, with facts masked or not.
pub fn solve(query: &str, scene: &SceneGraph, facts: Facts) -> Result<BBox> {
    let found = satisfiers(query, scene, facts)?;
    if found.len() != 1 {
        return Err(Error::Oracle {
            query: query.to_string(),
            count: found.len(),
        });
    }
    Ok(scene.entities[found[0]].bbox)
}

pub fn oracle_solve(sample: &GroundingSample) -> Result<BBox> {
    let scene = sample
        .scene
        .as_ref()
        .ok_or_else(|| Error::Config(format!("sample {} has no scene graph", sample.id)))?;
    solve(&sample.query, scene, Facts::Visible)
}
