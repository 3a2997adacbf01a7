//! Synthetic grounding data: generation, oracle, records, splits and
//! statistics.

mod generate;
mod oracle;
mod records;
mod split;
mod stats;
mod types;

pub use generate::{
    generate, image_id, DifficultyMix, Generated, GeneratorConfig, Manifest, NamedColor, BACKGROUND, MEDIUM_DEFINITION,
    SHAPES,
};
pub use oracle::{oracle_solve, satisfiers, solve, Facts};
pub use records::{load_records, parse_records, save_records, Corpus, MANIFEST_FILE, RECORDS_FILE};
pub use split::{split_dataset, split_sizes, MIN_IMAGES};
pub use stats::{compute_stats, length_bucket, word_count, LengthBucket, Stats, LENGTH_EDGES};
pub use types::{Difficulty, GoldAnnotation, GroundingSample, Relation, SceneEntity, SceneGraph, Split};
