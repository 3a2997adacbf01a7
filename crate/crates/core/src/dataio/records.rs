//! Line-delimited JSON records and on-disk corpus directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::generate::{Generated, Manifest};
use super::types::GroundingSample;
use crate::encoders::Raster;
use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn save_records(samples: &[GroundingSample], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses one record per non-blank line; errors carry 1-based line numbers.
pub fn parse_records(reader: impl BufRead) -> Result<Vec<GroundingSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<GroundingSample>> {
    parse_records(BufReader::new(fs::File::open(path)?))
}

/// Records, images and manifest kept together.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<GroundingSample>,
    pub images: BTreeMap<String, Raster>,
    pub manifest: Option<Manifest>,
}

impl From<Generated> for Corpus {
    fn from(g: Generated) -> Self {
        Corpus {
            samples: g.samples,
            images: g.images,
            manifest: Some(g.manifest),
        }
    }
}

impl Corpus {
    pub fn image(&self, sample: &GroundingSample) -> Result<&Raster> {
        self.images.get(&sample.image_id).ok_or_else(|| Error::Image {
            path: sample.image_path.clone().into(),
            message: "image not loaded".into(),
        })
    }

    /// Writes `records.jsonl`, `manifest.json` and every image as PNG under
    /// its record's `image_path`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_records(&self.samples, &dir.join(RECORDS_FILE))?;
        if let Some(m) = &self.manifest {
            fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(m)? + "\n")?;
        }
        let mut written = std::collections::BTreeSet::new();
        for s in &self.samples {
            if !written.insert(&s.image_id) {
                continue;
            }
            let path = dir.join(&s.image_path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            self.image(s)?.to_rgb()?.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let samples = load_records(&dir.join(RECORDS_FILE))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
            m.config.seed = m.seed;
            Some(m)
        } else {
            None
        };
        let mut images = BTreeMap::new();
        for s in &samples {
            if images.contains_key(&s.image_id) {
                continue;
            }
            let path = dir.join(&s.image_path);
            let img = image::open(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            images.insert(s.image_id.clone(), Raster::from_rgb(&img.to_rgb8()));
        }
        Ok(Corpus {
            samples,
            images,
            manifest,
        })
    }
}
