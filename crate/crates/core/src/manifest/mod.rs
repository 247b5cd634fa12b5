//! On-disk formats: the JSONL corpus manifest, tar shards, score tables,
//! the `TMEB` embedding matrix and image decoding.

mod embeddings;
mod images;
pub(crate) mod jsonl;
mod scores;
mod shard;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use embeddings::{read_embeddings, write_embeddings, EmbeddingMatrix};
pub use images::{decode_image, encode_png, load_image, save_png, DirImages, ImageSource, ShardImages};
pub use scores::{read_score_table, write_score_table, ScoreTable};
pub use shard::{merge_shards, read_shard, read_shard_with_images};

/// Axis-aligned pixel rectangle, half-open on the max edges.
///
/// Coordinates are signed so raw detector output (which may poke outside the
/// image) can be represented before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TextBox {
    pub x_min: i32,
    pub y_min: i32,
    pub x_max: i32,
    pub y_max: i32,
}

impl TextBox {
    pub const fn new(x_min: i32, y_min: i32, x_max: i32, y_max: i32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// `0 <= x_min < x_max` and `0 <= y_min < y_max`.
    pub fn is_valid(&self) -> bool {
        0 <= self.x_min && self.x_min < self.x_max && 0 <= self.y_min && self.y_min < self.y_max
    }

    pub fn width(&self) -> i32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i32 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        self.x_min <= x && x < self.x_max && self.y_min <= y && y < self.y_max
    }

    /// Key of the canonical box order: ascending `(y_min, x_min, y_max, x_max)`.
    pub fn canonical_key(&self) -> (i32, i32, i32, i32) {
        (self.y_min, self.x_min, self.y_max, self.x_max)
    }
}

impl fmt::Display for TextBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

impl Serialize for TextBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x_min, self.y_min, self.x_max, self.y_max].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TextBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[i32; 4]>::deserialize(deserializer)?;
        Ok(Self::new(x_min, y_min, x_max, y_max))
    }
}

/// One image-caption pair.
///
/// Field declaration order is the canonical serialization order; absent
/// optional fields are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image_ref: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<TextBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags_visual: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags_text: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, image_ref: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_ref: image_ref.into(),
            caption: caption.into(),
            boxes: None,
            tags_visual: None,
            tags_text: None,
            scores: None,
        }
    }

    pub fn with_boxes(mut self, boxes: Vec<TextBox>) -> Self {
        self.boxes = Some(boxes);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.image_ref.is_empty() {
            return Err(invalid("empty image_ref".into()));
        }
        if let Some(b) = self.boxes.iter().flatten().find(|b| !b.is_valid()) {
            return Err(invalid(format!("invalid text box {b}")));
        }
        if let Some((m, _)) = self.scores.iter().flatten().find(|(_, s)| !s.is_finite()) {
            return Err(invalid(format!("non-finite score for method {m:?}")));
        }
        Ok(())
    }
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Reads a JSONL manifest, preserving file order.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in jsonl::read_lines(path)? {
        let record: SampleRecord = jsonl::parse_line(path, line_no, &line)?;
        record.validate()?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records as canonical JSONL. Byte-deterministic.
pub fn write_manifest(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    check_unique(records.iter().map(|r| r.id.as_str()))?;
    for r in records {
        r.validate()?;
    }
    jsonl::write_values(path.as_ref(), records)
}
