//! Seeded synthetic scenes: flat-colored shapes, a story binding names to
//! them, and referring expressions of three difficulty levels with gold
//! dependency trees and coreference chains.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::types::{Difficulty, GoldAnnotation, GroundingSample, Relation, SceneEntity, SceneGraph};
use crate::encoders::Raster;
use crate::error::{Error, Result};
use crate::geometry::{area_bin, iou, AreaBin, BBox, ImageSize};
use crate::linguistic::{AliasTable, Arc, DependencyTree, Lexicon, Pos, Span, TreeToken};
use crate::tokenizer::tokenize;

pub const BACKGROUND: [u8; 3] = [240, 240, 240];
pub const SHAPES: [&str; 3] = ["square", "circle", "triangle"];

/// How the generator operationalizes the medium level.
pub const MEDIUM_DEFINITION: &str =
    "one visual cue shared by at least two objects in the scene (the shape) plus one knowledge fact (profession or name)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedColor {
    pub name: String,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyMix {
    pub easy: f64,
    pub medium: f64,
    pub hard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Set from the run seed; not part of the file format.
    #[serde(skip)]
    pub seed: u64,
    pub image_size: usize,
    pub cell_size: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub stories_per_image: usize,
    pub queries_per_story: usize,
    pub difficulty_mix: DifficultyMix,
    pub max_relations: usize,
    pub frame_probability: f64,
    /// Relation sentences restate the related person's look
    /// ("Mia, the blue square, is Jake's colleague.").
    pub appositive_relations: bool,
    /// Sentences carrying no grounding fact.
    pub filler_sentences: usize,
    pub colors: Vec<NamedColor>,
    pub shapes: Vec<String>,
    pub names: Vec<String>,
    pub professions: Vec<String>,
    pub relation_kinds: Vec<String>,
}

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let color = |name: &str, rgb| NamedColor { name: name.into(), rgb };
        GeneratorConfig {
            seed: 0,
            image_size: 320,
            cell_size: 64,
            min_entities: 3,
            max_entities: 5,
            stories_per_image: 2,
            queries_per_story: 5,
            difficulty_mix: DifficultyMix {
                easy: 0.3,
                medium: 0.3,
                hard: 0.4,
            },
            max_relations: 3,
            frame_probability: 0.2,
            appositive_relations: true,
            filler_sentences: 2,
            colors: vec![
                color("red", [220, 50, 47]),
                color("orange", [245, 140, 30]),
                color("yellow", [235, 205, 40]),
                color("green", [50, 160, 70]),
                color("blue", [40, 90, 210]),
                color("purple", [130, 60, 180]),
                color("pink", [240, 120, 180]),
                color("brown", [120, 75, 40]),
            ],
            shapes: strings(&SHAPES),
            names: strings(&[
                "Jake", "Mia", "Ava", "Noah", "Liam", "Emma", "Olivia", "Lucas", "Ethan", "Sophia", "Chloe", "Ryan",
                "Leo", "Zoe", "Nina", "Owen", "Ella", "Henry", "Isaac", "Lily", "Mason", "Ruby", "Sam", "Tara",
                "Victor", "Wendy", "Oscar", "Hugo", "Maya", "Felix",
            ]),
            professions: strings(&[
                "doctor", "teacher", "chef", "pilot", "painter", "farmer", "lawyer", "singer", "nurse", "driver",
                "writer", "baker", "guard", "student", "engineer", "artist", "actor",
            ]),
            relation_kinds: strings(&[
                "colleague",
                "friend",
                "brother",
                "sister",
                "neighbor",
                "boss",
                "cousin",
                "assistant",
            ]),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let unsat = |m: String| Err(Error::Unsatisfiable(m));
        if self.min_entities < 2 || self.max_entities < self.min_entities {
            return unsat(format!(
                "entity range {}..={} must start at 2 or more",
                self.min_entities, self.max_entities
            ));
        }
        if self.colors.len() < self.max_entities {
            return unsat(format!(
                "{} colors cannot keep {} entities distinct",
                self.colors.len(),
                self.max_entities
            ));
        }
        for (what, pool) in [("names", &self.names), ("professions", &self.professions)] {
            if pool.len() < self.max_entities {
                return unsat(format!("{} {what} for {} entities", pool.len(), self.max_entities));
            }
        }
        if self.shapes.is_empty() || self.shapes.iter().any(|s| !SHAPES.contains(&s.as_str())) {
            return unsat(format!("shapes must be drawn from {SHAPES:?}"));
        }
        if self.relation_kinds.is_empty() || self.max_relations == 0 {
            return unsat("hard queries need at least one relation".into());
        }
        if self.stories_per_image == 0 || self.queries_per_story == 0 {
            return unsat("stories and queries per image must be positive".into());
        }
        let mix = self.difficulty_mix;
        if [mix.easy, mix.medium, mix.hard].iter().any(|w| !(*w >= 0.0)) || mix.easy + mix.medium + mix.hard <= 0.0 {
            return unsat("difficulty mix weights must be non-negative with a positive sum".into());
        }
        if self.cell_size == 0 || !self.image_size.is_multiple_of(self.cell_size) || self.image_size / self.cell_size < 3 {
            return unsat(format!(
                "cell size {} must divide image size {} into at least 3 cells",
                self.cell_size, self.image_size
            ));
        }
        let side = self.image_size / self.cell_size;
        if self.max_entities * 2 > side * side {
            return unsat(format!(
                "{} entities do not fit a {side}x{side} grid",
                self.max_entities
            ));
        }
        let mut words = BTreeSet::new();
        let vocab = self
            .colors
            .iter()
            .map(|c| &c.name)
            .chain(&self.shapes)
            .chain(&self.professions)
            .chain(&self.relation_kinds);
        for w in vocab.chain(&self.names) {
            if !words.insert(w.to_lowercase()) {
                return unsat(format!("word {w:?} appears in two vocabularies"));
            }
        }
        Ok(())
    }

    /// Noun and adjective lists covering everything the generator says.
    pub fn lexicon(&self) -> Lexicon {
        Lexicon::default()
            .with_nouns(
                self.shapes
                    .iter()
                    .chain(&self.professions)
                    .chain(&self.relation_kinds)
                    .map(String::as_str),
            )
            .with_adjectives(self.colors.iter().map(|c| c.name.as_str()))
    }

    fn samples_per_image(&self) -> usize {
        self.stories_per_image * self.queries_per_story
    }
}

/// Counts and proportions of the generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub images: usize,
    pub samples: usize,
    pub difficulty_counts: BTreeMap<String, usize>,
    pub difficulty_mix: BTreeMap<String, f64>,
    pub area_counts: BTreeMap<String, usize>,
    pub area_mix: BTreeMap<String, f64>,
    pub medium_definition: String,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub samples: Vec<GroundingSample>,
    pub images: BTreeMap<String, Raster>,
    pub manifest: Manifest,
}

pub fn image_id(index: usize) -> String {
    format!("img{index:05}")
}

/// Generates `n` samples; image `i` depends only on `(seed, i)`.
pub fn generate(config: &GeneratorConfig, n: usize) -> Result<Generated> {
    config.validate()?;
    let per_image = config.samples_per_image();
    let num_images = n.div_ceil(per_image);
    let scenes: Vec<(Vec<GroundingSample>, Raster)> = (0..num_images)
        .into_par_iter()
        .map(|i| generate_image(config, i))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(n);
    let mut images = BTreeMap::new();
    for (i, (s, raster)) in scenes.into_iter().enumerate() {
        samples.extend(s);
        images.insert(image_id(i), raster);
    }
    samples.truncate(n);
    let used: BTreeSet<&str> = samples.iter().map(|s| s.image_id.as_str()).collect();
    images.retain(|k, _| used.contains(k.as_str()));
    let manifest = manifest(config, &samples, images.len());
    Ok(Generated {
        samples,
        images,
        manifest,
    })
}

pub(crate) fn proportions(counts: &BTreeMap<String, usize>) -> BTreeMap<String, f64> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(k, &c)| (k.clone(), if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect()
}

pub(crate) fn difficulty_counts(samples: &[GroundingSample]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = Difficulty::ALL.iter().map(|d| (d.name().to_string(), 0)).collect();
    for d in samples.iter().filter_map(|s| s.difficulty) {
        *counts.get_mut(d.name()).expect("all levels present") += 1;
    }
    counts
}

pub(crate) fn area_counts(samples: &[GroundingSample]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = AreaBin::ALL.iter().map(|b| (b.name().to_string(), 0)).collect();
    for s in samples {
        *counts.get_mut(area_bin(&s.bbox).name()).expect("all bins present") += 1;
    }
    counts
}

fn manifest(config: &GeneratorConfig, samples: &[GroundingSample], images: usize) -> Manifest {
    let difficulty_counts = difficulty_counts(samples);
    let area_counts = area_counts(samples);
    Manifest {
        format: "skvg-synthetic".into(),
        version: 1,
        seed: config.seed,
        config: config.clone(),
        images,
        samples: samples.len(),
        difficulty_mix: proportions(&difficulty_counts),
        difficulty_counts,
        area_mix: proportions(&area_counts),
        area_counts,
        medium_definition: MEDIUM_DEFINITION.into(),
    }
}

struct VisualObject {
    color: usize,
    shape: String,
    bbox: BBox,
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn generate_image(config: &GeneratorConfig, index: usize) -> Result<(Vec<GroundingSample>, Raster)> {
    let mut rng = image_rng(config.seed, index);
    let objects = place_objects(config, &mut rng)?;
    let raster = render(config, &objects);
    let id = image_id(index);
    let mut samples = Vec::with_capacity(config.samples_per_image());
    for story in 0..config.stories_per_image {
        let scene = story_scene(config, &objects, &mut rng);
        let (knowledge, mentions) = realize_story(config, &scene, &mut rng);
        let aliases = AliasTable {
            entries: scene
                .entities
                .iter()
                .map(|e| (e.id.clone(), vec![e.name.clone()]))
                .collect(),
        };
        let mut used = BTreeSet::new();
        for q in 0..config.queries_per_story {
            let spec = (0..200)
                .find_map(|_| {
                    let d = pick_difficulty(config, &mut rng);
                    make_query(config, &scene, d, &mut rng).filter(|s| !used.contains(&s.text))
                })
                .ok_or_else(|| Error::Unsatisfiable(format!("no fresh query for image {id} story {story}")))?;
            used.insert(spec.text.clone());
            let target = scene.entity(&spec.target).expect("target from scene");
            samples.push(GroundingSample {
                id: format!("{id}-s{story}-q{q}"),
                image_id: id.clone(),
                image_path: format!("images/{id}.png"),
                knowledge: knowledge.clone(),
                query: spec.text,
                bbox: target.bbox,
                difficulty: Some(spec.difficulty),
                split: None,
                gold: Some(GoldAnnotation {
                    tree: spec.tree,
                    head: spec.head,
                    mentions: mentions.get(&spec.target).cloned().unwrap_or_default(),
                    aliases: aliases.clone(),
                    referent: spec.target,
                }),
                scene: Some(scene.clone()),
            });
        }
    }
    Ok((samples, raster))
}

fn place_objects(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Vec<VisualObject>> {
    let size = config.image_size as f64;
    let image = ImageSize {
        width: size as u32,
        height: size as u32,
    };
    let cell = config.cell_size as f64;
    let side = config.image_size / config.cell_size;
    for _ in 0..100 {
        let k = rng.gen_range(config.min_entities..=config.max_entities);
        let mut colors: Vec<usize> = (0..config.colors.len()).collect();
        colors.shuffle(rng);
        let mut shapes: Vec<String> = (0..k)
            .map(|_| config.shapes.choose(rng).expect("non-empty").clone())
            .collect();
        let distinct: BTreeSet<&String> = shapes.iter().collect();
        if distinct.len() == k {
            shapes[1] = shapes[0].clone();
        }
        let mut placed: Vec<VisualObject> = Vec::with_capacity(k);
        'objects: for (i, shape) in shapes.into_iter().enumerate() {
            for _ in 0..200 {
                let scale = if rng.gen_bool(0.5) { 1.0 } else { 2.0 };
                let (r, c) = (rng.gen_range(0..side), rng.gen_range(0..side));
                let cx = (c as f64 + 0.5) * cell + rng.gen_range(-0.1..0.1) * cell;
                let cy = (r as f64 + 0.5) * cell + rng.gen_range(-0.1..0.1) * cell;
                let w = (scale * cell * rng.gen_range(0.8..1.1)).round();
                let h = (scale * cell * rng.gen_range(0.8..1.1)).round();
                let (x1, y1) = ((cx - w / 2.0).round(), (cy - h / 2.0).round());
                let Ok(bbox) = BBox::new(x1, y1, x1 + w, y1 + h) else {
                    continue;
                };
                let margin = BBox::new(x1 - 4.0, y1 - 4.0, x1 + w + 4.0, y1 + h + 4.0)?;
                if !bbox.within(image) || placed.iter().any(|p| p.bbox.intersects(&margin)) {
                    continue;
                }
                let ccx = (c as f64 + 0.5) * cell;
                let ccy = (r as f64 + 0.5) * cell;
                let half = scale * cell / 2.0;
                let anchor = BBox::new(ccx - half, ccy - half, ccx + half, ccy + half)?.clip(image)?;
                if iou(&anchor, &bbox) < 0.55 {
                    continue;
                }
                placed.push(VisualObject {
                    color: colors[i],
                    shape,
                    bbox,
                });
                continue 'objects;
            }
            break;
        }
        if placed.len() == k {
            return Ok(placed);
        }
    }
    Err(Error::Unsatisfiable("could not place non-overlapping objects".into()))
}

fn inside(shape: &str, b: &BBox, x: f64, y: f64) -> bool {
    if x < b.x1() || x >= b.x2() || y < b.y1() || y >= b.y2() {
        return false;
    }
    match shape {
        "circle" => {
            let (cx, cy) = ((b.x1() + b.x2()) / 2.0, (b.y1() + b.y2()) / 2.0);
            let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
            ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
        }
        "triangle" => {
            // apex at top middle, base along the bottom edge
            let t = (y - b.y1()) / b.height();
            let cx = (b.x1() + b.x2()) / 2.0;
            (x - cx).abs() <= t * b.width() / 2.0 + 0.5
        }
        _ => true,
    }
}

fn render(config: &GeneratorConfig, objects: &[VisualObject]) -> Raster {
    let mut raster = Raster::filled(config.image_size, config.image_size, BACKGROUND);
    for o in objects {
        let rgb = config.colors[o.color].rgb;
        let (x0, y0) = (o.bbox.x1() as usize, o.bbox.y1() as usize);
        let (x1, y1) = (o.bbox.x2() as usize, o.bbox.y2() as usize);
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(&o.shape, &o.bbox, x as f64 + 0.5, y as f64 + 0.5) {
                    raster.set_pixel(x, y, &rgb);
                }
            }
        }
    }
    raster
}

/// Names, professions and relations for one story over the drawn objects.
fn story_scene(config: &GeneratorConfig, objects: &[VisualObject], rng: &mut ChaCha8Rng) -> SceneGraph {
    let k = objects.len();
    let names: Vec<&String> = config.names.choose_multiple(rng, k).collect();
    let profs: Vec<&String> = config.professions.choose_multiple(rng, k).collect();
    let entities: Vec<SceneEntity> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| SceneEntity {
            id: format!("e{i}"),
            name: names[i].clone(),
            color: config.colors[o.color].name.clone(),
            shape: o.shape.clone(),
            profession: profs[i].clone(),
            bbox: o.bbox,
        })
        .collect();
    let count = config.max_relations.min(k - 1).min(config.relation_kinds.len());
    let kinds: Vec<&String> = config.relation_kinds.choose_multiple(rng, count).collect();
    let relations = kinds
        .into_iter()
        .map(|kind| {
            let anchor = rng.gen_range(0..k);
            let mut target = rng.gen_range(0..k - 1);
            if target >= anchor {
                target += 1;
            }
            Relation {
                kind: kind.clone(),
                anchor: entities[anchor].id.clone(),
                target: entities[target].id.clone(),
            }
        })
        .collect();
    SceneGraph { entities, relations }
}

enum Piece<'a> {
    Text(String),
    Name(&'a SceneEntity),
}

fn lit(s: impl Into<String>) -> Piece<'static> {
    Piece::Text(s.into())
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

const OPENINGS: &[&str] = &[
    "It was a quiet evening in the town.",
    "The party had just started.",
    "Everyone gathered in the old hall.",
    "It was raining outside that day.",
    "The market was crowded that morning.",
];

/// Story text plus, per entity id, the byte spans of its name mentions.
fn realize_story(
    config: &GeneratorConfig,
    scene: &SceneGraph,
    rng: &mut ChaCha8Rng,
) -> (String, BTreeMap<String, Vec<Span>>) {
    let look = |e: &SceneEntity| format!("{} {}", e.color, e.shape);
    let mut sentences: Vec<Vec<Piece>> = Vec::new();
    for e in &scene.entities {
        sentences.push(match rng.gen_range(0..3) {
            0 => vec![Piece::Name(e), lit(format!(" is the {}.", look(e)))],
            1 => vec![lit(format!("The {} is ", look(e))), Piece::Name(e), lit(".")],
            _ => vec![Piece::Name(e), lit(format!(" appears as the {}.", look(e)))],
        });
        let p = &e.profession;
        sentences.push(if rng.gen_bool(0.5) {
            vec![Piece::Name(e), lit(format!(" is {} {p}.", article(p)))]
        } else {
            vec![Piece::Name(e), lit(format!(" works as {} {p}.", article(p)))]
        });
    }
    for r in &scene.relations {
        let x = scene.entity(&r.anchor).expect("relation anchor");
        let y = scene.entity(&r.target).expect("relation target");
        sentences.push(if config.appositive_relations {
            vec![
                Piece::Name(y),
                lit(format!(", the {}, is ", look(y))),
                Piece::Name(x),
                lit(format!("'s {}.", r.kind)),
            ]
        } else if rng.gen_bool(0.5) {
            vec![
                Piece::Name(y),
                lit(" is "),
                Piece::Name(x),
                lit(format!("'s {}.", r.kind)),
            ]
        } else {
            vec![
                Piece::Name(x),
                lit(format!("'s {} is ", r.kind)),
                Piece::Name(y),
                lit("."),
            ]
        });
    }
    let people: Vec<&SceneEntity> = scene.entities.iter().collect();
    for _ in 0..config.filler_sentences {
        let pair: Vec<&&SceneEntity> = people.choose_multiple(rng, 2).collect();
        let (a, b) = (*pair[0], *pair[1]);
        sentences.push(match rng.gen_range(0..4) {
            0 => vec![Piece::Name(a), lit(" smiled at "), Piece::Name(b), lit(".")],
            1 => vec![Piece::Name(a), lit(" felt a little nervous.")],
            2 => vec![
                lit("Later, "),
                Piece::Name(a),
                lit(" talked with "),
                Piece::Name(b),
                lit("."),
            ],
            _ => vec![Piece::Name(a), lit(" laughed at the joke.")],
        });
    }
    sentences.shuffle(rng);
    sentences.insert(0, vec![lit(*OPENINGS.choose(rng).expect("non-empty"))]);

    let mut text = String::new();
    let mut mentions: BTreeMap<String, Vec<Span>> = BTreeMap::new();
    for sentence in sentences {
        if !text.is_empty() {
            text.push(' ');
        }
        for piece in sentence {
            match piece {
                Piece::Text(s) => text.push_str(&s),
                Piece::Name(e) => {
                    let start = text.len();
                    text.push_str(&e.name);
                    mentions
                        .entry(e.id.clone())
                        .or_default()
                        .push(Span::new(start, text.len()));
                }
            }
        }
    }
    (text, mentions)
}

fn pick_difficulty(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Difficulty {
    let m = config.difficulty_mix;
    let u = rng.gen::<f64>() * (m.easy + m.medium + m.hard);
    if u < m.easy {
        Difficulty::Easy
    } else if u < m.easy + m.medium {
        Difficulty::Medium
    } else {
        Difficulty::Hard
    }
}

struct QuerySpec {
    text: String,
    difficulty: Difficulty,
    target: String,
    tree: DependencyTree,
    head: Span,
}

/// Words, tags, root, arcs and head-token range of an unframed query.
type Template = (
    Vec<String>,
    Vec<Pos>,
    usize,
    Vec<(usize, usize, &'static str)>,
    (usize, usize),
);

fn make_query(config: &GeneratorConfig, scene: &SceneGraph, d: Difficulty, rng: &mut ChaCha8Rng) -> Option<QuerySpec> {
    use Pos::*;
    let w = |s: &str| s.to_string();
    let (target, template): (&SceneEntity, Template) = match d {
        Difficulty::Easy => {
            let e = scene.entities.choose(rng)?;
            let t = if rng.gen_bool(0.5) {
                (
                    vec![w("the"), e.color.clone(), e.shape.clone()],
                    vec![Det, Adj, Noun],
                    2,
                    vec![(2, 0, "det"), (2, 1, "amod")],
                    (1, 2),
                )
            } else {
                (
                    vec![w("the"), e.shape.clone(), w("that"), w("is"), e.color.clone()],
                    vec![Det, Noun, Pron, Aux, Adj],
                    1,
                    vec![(1, 0, "det"), (1, 4, "acl:relcl"), (4, 2, "nsubj"), (4, 3, "cop")],
                    (1, 1),
                )
            };
            (e, t)
        }
        Difficulty::Medium => {
            let shared: Vec<&SceneEntity> = scene
                .entities
                .iter()
                .filter(|e| scene.entities.iter().filter(|o| o.shape == e.shape).count() > 1)
                .collect();
            let e = *shared.choose(rng)?;
            let p = &e.profession;
            let t = match rng.gen_range(0..3) {
                0 => (
                    vec![w("the"), e.shape.clone(), w("who"), w("is"), w(article(p)), p.clone()],
                    vec![Det, Noun, Pron, Aux, Det, Noun],
                    1,
                    vec![
                        (1, 0, "det"),
                        (1, 5, "acl:relcl"),
                        (5, 2, "nsubj"),
                        (5, 3, "cop"),
                        (5, 4, "det"),
                    ],
                    (1, 1),
                ),
                1 => (
                    vec![
                        w("the"),
                        e.shape.clone(),
                        w("who"),
                        w("works"),
                        w("as"),
                        w(article(p)),
                        p.clone(),
                    ],
                    vec![Det, Noun, Pron, Verb, Adp, Det, Noun],
                    1,
                    vec![
                        (1, 0, "det"),
                        (1, 3, "acl:relcl"),
                        (3, 2, "nsubj"),
                        (3, 6, "obl"),
                        (6, 4, "case"),
                        (6, 5, "det"),
                    ],
                    (1, 1),
                ),
                _ => (
                    vec![w("the"), e.shape.clone(), w("called"), e.name.clone()],
                    vec![Det, Noun, Verb, Propn],
                    1,
                    vec![(1, 0, "det"), (1, 2, "acl"), (2, 3, "xcomp")],
                    (1, 1),
                ),
            };
            (e, t)
        }
        Difficulty::Hard => {
            let r = scene.relations.choose(rng)?;
            let x = scene.entity(&r.anchor)?;
            let y = scene.entity(&r.target)?;
            let t = if rng.gen_bool(0.5) {
                (
                    vec![x.name.clone(), w("'s"), r.kind.clone()],
                    vec![Propn, Part, Noun],
                    2,
                    vec![(2, 0, "nmod:poss"), (0, 1, "case")],
                    (2, 2),
                )
            } else {
                (
                    vec![w("the"), x.profession.clone(), w("'s"), r.kind.clone()],
                    vec![Det, Noun, Part, Noun],
                    3,
                    vec![(3, 1, "nmod:poss"), (1, 0, "det"), (1, 2, "case")],
                    (3, 3),
                )
            };
            (y, t)
        }
    };
    let (mut words, mut pos, mut root, mut arcs, (mut h0, mut h1)) = template;
    if rng.gen_bool(config.frame_probability) {
        let verb = if rng.gen_bool(0.5) { "find" } else { "locate" };
        words.insert(0, verb.into());
        pos.insert(0, Verb);
        arcs = arcs.into_iter().map(|(h, d, l)| (h + 1, d + 1, l)).collect();
        arcs.push((0, root + 1, "obj"));
        root = 0;
        h0 += 1;
        h1 += 1;
    }
    let mut text = String::new();
    for word in &words {
        if !text.is_empty() && word != "'s" {
            text.push(' ');
        }
        text.push_str(word);
    }
    let toks = tokenize(&text);
    debug_assert_eq!(toks.len(), words.len());
    let tokens = toks
        .iter()
        .zip(&pos)
        .map(|(t, p)| TreeToken {
            text: text[t.start..t.end].to_string(),
            start: t.start,
            end: t.end,
            pos: *p,
        })
        .collect();
    let arcs = arcs.into_iter().map(|(h, d, l)| Arc(h, d, l.to_string())).collect();
    let tree = DependencyTree::new(tokens, root, arcs).ok()?;
    Some(QuerySpec {
        head: Span::new(toks[h0].start, toks[h1].end),
        text,
        difficulty: d,
        target: target.id.clone(),
        tree,
    })
}
