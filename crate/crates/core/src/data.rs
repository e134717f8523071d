//! COCO-style annotation ingestion, precomputed feature tables, batching,
//! and synthetic desk-scale dataset generation.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::numeric::Vector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON at byte offset {offset}: {reason}")]
    Json { offset: usize, reason: String },
    #[error("annotations reference image ids missing from \"images\": {ids:?}")]
    MissingImages { ids: Vec<i64> },
    #[error("feature file line {line}: {reason}")]
    FeatureFormat { line: usize, reason: String },
    #[error("duplicate image id {id} in feature file")]
    DuplicateImageId { id: i64 },
    #[error("non-finite feature value for image id {id}")]
    NonFiniteFeature { id: i64 },
    #[error("cannot batch an empty example list")]
    EmptyExamples,
}

/// One training pair: precomputed image feature plus an encoded caption.
#[derive(Debug, Clone)]
pub struct CaptionedExample {
    pub image_id: i64,
    pub feature: Vector,
    pub caption_ids: Vec<usize>,
}

/// image_id → feature vector, all of one dimension `d`.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    d: usize,
    map: HashMap<i64, Vector>,
    order: Vec<i64>,
}

impl FeatureTable {
    pub fn new(d: usize) -> Self {
        FeatureTable {
            d,
            map: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, image_id: i64) -> Option<&Vector> {
        self.map.get(&image_id)
    }

    /// Ids in file/insertion order.
    pub fn ids(&self) -> &[i64] {
        &self.order
    }

    pub fn insert(&mut self, image_id: i64, feature: Vector) -> Result<(), DataError> {
        if feature.len() != self.d {
            return Err(DataError::FeatureFormat {
                line: 0,
                reason: format!("expected dimension {}, got {}", self.d, feature.len()),
            });
        }
        if !feature.all_finite() {
            return Err(DataError::NonFiniteFeature { id: image_id });
        }
        if self.map.insert(image_id, feature).is_some() {
            return Err(DataError::DuplicateImageId { id: image_id });
        }
        self.order.push(image_id);
        Ok(())
    }
}

#[derive(Deserialize)]
struct CocoImage {
    id: i64,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    caption: String,
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.lines().enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

/// Parse a COCO-captions-style JSON file into (image_id, caption) pairs,
/// order preserved. Every annotation's image_id must appear in "images".
pub fn load_annotations(path: &Path) -> Result<Vec<(i64, String)>, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<(i64, String)>, DataError> {
    let parsed: CocoFile = serde_json::from_str(text).map_err(|e| DataError::Json {
        offset: byte_offset(text, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let known: std::collections::HashSet<i64> = parsed.images.iter().map(|i| i.id).collect();
    let mut missing: Vec<i64> = parsed
        .annotations
        .iter()
        .map(|a| a.image_id)
        .filter(|id| !known.contains(id))
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(DataError::MissingImages { ids: missing });
    }
    Ok(parsed
        .annotations
        .into_iter()
        .map(|a| (a.image_id, a.caption))
        .collect())
}

/// Feature CSV: header `image_id,<D>`, then one `id,v1,...,vD` row per image.
pub fn load_features(path: &Path) -> Result<FeatureTable, DataError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let header = lines.next().ok_or(DataError::FeatureFormat {
        line: 1,
        reason: "empty file".into(),
    })??;
    let d: usize = header
        .strip_prefix("image_id,")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| DataError::FeatureFormat {
            line: 1,
            reason: format!("expected header \"image_id,<D>\", got {header:?}"),
        })?;
    let mut table = FeatureTable::new(d);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id: i64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::FeatureFormat {
                line: lineno,
                reason: "bad image id".into(),
            })?;
        let values: Result<Vec<f64>, _> = parts.map(|s| s.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| DataError::FeatureFormat {
            line: lineno,
            reason: format!("bad float: {e}"),
        })?;
        if values.len() != d {
            return Err(DataError::FeatureFormat {
                line: lineno,
                reason: format!("expected {} values, got {}", d, values.len()),
            });
        }
        table.insert(id, Vector::new(values)).map_err(|e| match e {
            DataError::FeatureFormat { reason, .. } => DataError::FeatureFormat {
                line: lineno,
                reason,
            },
            other => other,
        })?;
    }
    Ok(table)
}

/// Writes the table in the same CSV format `load_features` reads. Floats use
/// Rust's shortest round-trip representation, so write→load is bit-exact.
pub fn save_features(path: &Path, table: &FeatureTable) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "image_id,{}", table.d())?;
    for &id in table.ids() {
        let v = table.get(id).unwrap();
        let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
        writeln!(f, "{},{}", id, vals.join(","))?;
    }
    Ok(())
}

/// Deterministic seeded shuffle, then chunks of `batch_size` (last may be
/// short). Examples appear exactly once across the batches.
pub fn make_batches<T: Clone>(
    examples: &[T],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>, DataError> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    if examples.is_empty() {
        return Err(DataError::EmptyExamples);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&i| examples[i].clone()).collect())
        .collect())
}

/// One feature pattern and the caption it deterministically maps to.
#[derive(Debug, Clone)]
pub struct SyntheticPattern {
    pub caption: String,
}

/// Recipe for a learnable toy dataset: features are one-hot-plus-noise and
/// the caption is a pure function of which pattern the feature encodes.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_images: usize,
    pub d: usize,
    pub seed: u64,
    pub noise: f64,
    pub patterns: Vec<SyntheticPattern>,
}

impl SyntheticSpec {
    /// The two-pattern cat/dog dataset used by the overfit tests.
    pub fn two_pattern(num_images: usize, d: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_images,
            d,
            seed,
            noise: 0.05,
            patterns: vec![
                SyntheticPattern {
                    caption: "a cat".into(),
                },
                SyntheticPattern {
                    caption: "a dog".into(),
                },
            ],
        }
    }
}

/// Image i gets pattern i mod P: feature = e_{pattern} + noise, caption =
/// that pattern's template.
pub fn generate_synthetic(spec: &SyntheticSpec) -> (FeatureTable, Vec<(i64, String)>) {
    assert!(!spec.patterns.is_empty());
    assert!(spec.d >= spec.patterns.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table = FeatureTable::new(spec.d);
    let mut annotations = Vec::new();
    for i in 0..spec.num_images {
        let p = i % spec.patterns.len();
        let mut feat = vec![0.0; spec.d];
        feat[p] = 1.0;
        for v in &mut feat {
            *v += spec.noise * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        let id = i as i64 + 1;
        table.insert(id, Vector::new(feat)).unwrap();
        annotations.push((id, spec.patterns[p].caption.clone()));
    }
    (table, annotations)
}
