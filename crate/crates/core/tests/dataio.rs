use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;

use skvg::dataio::{
    compute_stats, generate, length_bucket, oracle_solve, parse_records, satisfiers, solve, split_dataset, word_count,
    Corpus, Difficulty, Facts, GeneratorConfig, GroundingSample, Split, LENGTH_EDGES,
};
use skvg::geometry::BBox;
use skvg::tokenizer::tokenize;
use skvg::Error;

fn config(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&config(0), 1).unwrap();
    let b = generate(&config(0), 1).unwrap();
    assert_eq!(a.samples.len(), 1);
    assert_eq!(
        serde_json::to_string(&a.samples).unwrap(),
        serde_json::to_string(&b.samples).unwrap()
    );
    assert_eq!(a.images, b.images);
    let c = generate(&config(1), 1).unwrap();
    assert_ne!(a.samples, c.samples);
}

#[test]
fn corpus_shape_is_two_stories_of_five() {
    let g = generate(&config(3), 20).unwrap();
    assert_eq!(g.images.len(), 2);
    for id in g.images.keys() {
        let of_image: Vec<&GroundingSample> = g.samples.iter().filter(|s| &s.image_id == id).collect();
        assert_eq!(of_image.len(), 10);
        let stories: BTreeSet<&str> = of_image.iter().map(|s| s.knowledge.as_str()).collect();
        assert_eq!(stories.len(), 2);
        for k in stories {
            assert_eq!(of_image.iter().filter(|s| s.knowledge == k).count(), 5);
        }
    }
}

#[test]
fn oracle_agrees_and_difficulty_audit_holds() {
    let g = generate(&config(7), 500).unwrap();
    let mut seen = BTreeSet::new();
    for s in &g.samples {
        assert_eq!(oracle_solve(s).unwrap(), s.bbox, "{}", s.query);
        let scene = s.scene.as_ref().unwrap();
        let target = scene.entity(&s.gold.as_ref().unwrap().referent).unwrap();
        let words: BTreeSet<String> = tokenize(&s.query).into_iter().map(|t| t.text).collect();
        let masked = satisfiers(&s.query, scene, Facts::Masked).unwrap();
        let d = s.difficulty.unwrap();
        seen.insert(d);
        match d {
            Difficulty::Easy => assert_eq!(masked.len(), 1, "{}", s.query),
            Difficulty::Medium => assert!(masked.len() > 1, "{}", s.query),
            Difficulty::Hard => {
                assert!(
                    !words.contains(&target.color) && !words.contains(&target.shape),
                    "{}",
                    s.query
                );
                assert!(masked.len() > 1);
            }
        }
    }
    assert_eq!(seen.len(), 3);
}

#[test]
fn duplicated_attribute_is_reported() {
    let g = generate(&config(2), 1).unwrap();
    let s = &g.samples[0];
    let mut scene = s.scene.clone().unwrap();
    let copy = scene.entities[0].clone();
    scene.entities.push(copy);
    let q = format!("the {} {}", scene.entities[0].color, scene.entities[0].shape);
    assert!(matches!(
        solve(&q, &scene, Facts::Visible),
        Err(Error::Oracle { count: 2, .. })
    ));
    assert!(solve("the lonely wizard", &scene, Facts::Visible).is_err());
}

#[test]
fn records_round_trip_on_disk() {
    let g = generate(&config(4), 100).unwrap();
    let corpus = Corpus::from(g);
    let dir = tempfile::tempdir().unwrap();
    corpus.save(dir.path()).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    assert_eq!(back.samples, corpus.samples);
    assert_eq!(back.images, corpus.images);
    assert_eq!(back.manifest, corpus.manifest);
}

#[test]
fn malformed_lines_report_their_number() {
    let g = generate(&config(5), 2).unwrap();
    let mut good: Vec<serde_json::Value> = g.samples.iter().map(|s| serde_json::to_value(s).unwrap()).collect();
    good[1].as_object_mut().unwrap().remove("bbox");
    let text = format!("{}\n{}\n", good[0], good[1]);
    match parse_records(Cursor::new(text)) {
        Err(Error::Record { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("bbox"));
        }
        other => panic!("expected a record error, got {other:?}"),
    }
}

#[test]
fn plain_records_load_without_gold() {
    let line = r#"{"id":"m1","image_id":"movie1","image_path":"movie1.jpg","knowledge":"Jake is a pilot.","query":"the man in a hat","bbox":[1,2,30,40]}"#;
    let s = &parse_records(Cursor::new(line)).unwrap()[0];
    assert!(s.gold.is_none() && s.scene.is_none() && s.difficulty.is_none());
    assert_eq!(s.bbox, BBox::new(1.0, 2.0, 30.0, 40.0).unwrap());
}

#[test]
fn split_is_image_disjoint() {
    let g = generate(&config(6), 100).unwrap();
    let a = split_dataset(g.samples.clone(), 11).unwrap();
    let b = split_dataset(g.samples.clone(), 11).unwrap();
    assert_eq!(a, b);
    let mut by_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for s in &a {
        by_split.entry(s.split.unwrap()).or_default().insert(s.image_id.clone());
    }
    let sizes: Vec<usize> = by_split.values().map(BTreeSet::len).collect();
    assert_eq!(sizes, [6, 2, 2]);
    let all: Vec<&String> = by_split.values().flatten().collect();
    assert_eq!(all.len(), all.iter().collect::<BTreeSet<_>>().len());
    let few = generate(&config(6), 40).unwrap();
    assert!(split_dataset(few.samples, 0).is_err());
}

#[test]
fn stats_match_manifest() {
    let g = generate(&config(8), 300).unwrap();
    let stats = compute_stats(&g.samples, &config(8).lexicon()).unwrap();
    assert_eq!(stats.area_mix, g.manifest.area_mix);
    assert_eq!(stats.difficulty_mix, g.manifest.difficulty_mix);
    assert_eq!(stats.area_counts, g.manifest.area_counts);
    assert!(stats.area_counts.values().all(|&c| c > 0));
    let total: f64 = stats.area_mix.values().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(stats.stories, 60);
    assert_eq!(stats.length_histogram.iter().map(|b| b.count).sum::<usize>(), 60);
    assert!(LENGTH_EDGES.windows(2).any(|w| w == [50, 70]));
}

#[test]
fn sixty_word_story_lands_in_fifty_to_seventy() {
    let story = vec!["word"; 60].join(" ");
    assert_eq!(word_count(&story), 60);
    assert_eq!(LENGTH_EDGES[length_bucket(60)], 50);
    let g = generate(&config(9), 1).unwrap();
    let mut s = g.samples[0].clone();
    s.knowledge = story;
    let stats = compute_stats(&[s.clone()], &config(9).lexicon()).unwrap();
    let bucket = stats.length_histogram.iter().find(|b| b.count == 1).unwrap();
    assert_eq!((bucket.lo, bucket.hi), (50, Some(70)));

    s.bbox = BBox::new(0.0, 0.0, 200.0, 200.0).unwrap();
    let large = compute_stats(&[s.clone(), s], &config(9).lexicon()).unwrap();
    let mix: Vec<f64> = ["small", "medium", "large"]
        .iter()
        .map(|k| large.area_mix[*k])
        .collect();
    assert_eq!(mix, [0.0, 0.0, 1.0]);
    assert!(compute_stats(&[], &config(9).lexicon()).is_err());
}
