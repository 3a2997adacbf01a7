use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::{GroundingSample, Split};
use crate::error::{Error, Result};

pub const MIN_IMAGES: usize = 5;

/// Image counts for a 60/20/20 split, rounded, with the remainder in test.
pub fn split_sizes(images: usize) -> (usize, usize, usize) {
    let train = (images as f64 * 0.6).round() as usize;
    let val = ((images as f64 * 0.2).round() as usize).min(images - train);
    (train, val, images - train - val)
}

/// Tags every sample with the split of its image; images are shuffled with
/// `seed` and never shared between splits.
pub fn split_dataset(mut samples: Vec<GroundingSample>, seed: u64) -> Result<Vec<GroundingSample>> {
    let mut images: Vec<String> = samples
        .iter()
        .map(|s| s.image_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if images.len() < MIN_IMAGES {
        return Err(Error::Config(format!(
            "{} images cannot be split; at least {MIN_IMAGES} are required",
            images.len()
        )));
    }
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = split_sizes(images.len());
    let assign: BTreeMap<String, Split> = images
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();
    for s in &mut samples {
        s.split = Some(assign[&s.image_id]);
    }
    Ok(samples)
}
