//! Five-way classification of image-caption pairs by which image features
//! (visual content, rendered text) correlate with the caption, and the
//! text-match baseline filter.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::RetentionSet;
use crate::manifest::{jsonl, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Image and caption unrelated.
    #[serde(rename = "S_r")]
    Sr,
    /// Visual content matches, no text in the image.
    #[serde(rename = "S_i")]
    Si,
    /// Visual content matches, image also carries unrelated text.
    #[serde(rename = "S_irt")]
    Sirt,
    /// Both visual content and in-image text match.
    #[serde(rename = "S_it")]
    Sit,
    /// Only the in-image text matches.
    #[serde(rename = "S_t")]
    St,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Sr, Category::Si, Category::Sirt, Category::Sit, Category::St];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Sr => "S_r",
            Category::Si => "S_i",
            Category::Sirt => "S_irt",
            Category::Sit => "S_it",
            Category::St => "S_t",
        }
    }

    /// Whether the image carries caption-correlated visual content.
    pub fn has_visual(self) -> bool {
        matches!(self, Category::Si | Category::Sirt | Category::Sit)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown category {s:?}")))
    }
}

/// Human (or fixture) annotation of one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedPair {
    pub visual_correlated: bool,
    pub ocr_strings: Vec<String>,
    pub caption: String,
}

/// Number of consecutive characters that must agree for a text match.
pub const MATCH_WINDOW: usize = 5;

/// Case-folds and collapses each whitespace run to one space. Punctuation is
/// kept verbatim.
pub fn normalize(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    let mut in_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.extend(c.to_lowercase());
            in_space = false;
        }
    }
    out
}

/// True iff some window of five consecutive characters of a normalized OCR
/// string also occurs in the normalized caption.
pub fn text_match<S: AsRef<str>>(ocr_strings: &[S], caption: &str) -> bool {
    let caption = normalize(caption);
    let windows: HashSet<&[char]> = caption.windows(MATCH_WINDOW).collect();
    if windows.is_empty() {
        return false;
    }
    ocr_strings
        .iter()
        .any(|s| normalize(s.as_ref()).windows(MATCH_WINDOW).any(|w| windows.contains(w)))
}

pub fn classify_pair(pair: &AnnotatedPair) -> Category {
    let has_ocr = !pair.ocr_strings.is_empty();
    let matched = has_ocr && text_match(&pair.ocr_strings, &pair.caption);
    match (pair.visual_correlated, has_ocr, matched) {
        (true, false, _) => Category::Si,
        (true, true, false) => Category::Sirt,
        (true, true, true) => Category::Sit,
        (false, _, true) => Category::St,
        (false, _, false) => Category::Sr,
    }
}

/// Keeps exactly the records whose OCR text does not match their caption.
pub fn text_match_filter(records: &[SampleRecord], ocr: &BTreeMap<String, Vec<String>>) -> Result<RetentionSet> {
    let mut kept = BTreeSet::new();
    for r in records {
        let strings = ocr
            .get(&r.id)
            .ok_or_else(|| Error::MissingAnnotation(format!("{} (no OCR annotation)", r.id)))?;
        if !text_match(strings, &r.caption) {
            kept.insert(r.id.clone());
        }
    }
    RetentionSet::new(kept, "text_match", records.len())
}

#[derive(Serialize, Deserialize)]
struct CategoryLine {
    id: String,
    category: Category,
    /// Source example shared by synthetic sibling variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct OcrLine {
    id: String,
    ocr: Vec<String>,
}

/// One category entry as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryEntry {
    pub category: Category,
    pub source: Option<String>,
}

pub fn write_categories(entries: &BTreeMap<String, CategoryEntry>, path: impl AsRef<Path>) -> Result<()> {
    jsonl::write_values(
        path.as_ref(),
        entries.iter().map(|(id, e)| CategoryLine {
            id: id.clone(),
            category: e.category,
            source: e.source.clone(),
        }),
    )
}

pub fn read_category_entries(path: impl AsRef<Path>) -> Result<BTreeMap<String, CategoryEntry>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (line_no, line) in jsonl::read_lines(path)? {
        let l: CategoryLine = jsonl::parse_line(path, line_no, &line)?;
        let entry = CategoryEntry {
            category: l.category,
            source: l.source,
        };
        if out.insert(l.id.clone(), entry).is_some() {
            return Err(Error::DuplicateId(l.id));
        }
    }
    Ok(out)
}

/// Reads a category file as a plain id → category map.
pub fn read_categories(path: impl AsRef<Path>) -> Result<BTreeMap<String, Category>> {
    Ok(read_category_entries(path)?
        .into_iter()
        .map(|(id, e)| (id, e.category))
        .collect())
}

pub fn write_ocr(ocr: &BTreeMap<String, Vec<String>>, path: impl AsRef<Path>) -> Result<()> {
    jsonl::write_values(
        path.as_ref(),
        ocr.iter().map(|(id, s)| OcrLine {
            id: id.clone(),
            ocr: s.clone(),
        }),
    )
}

pub fn read_ocr(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (line_no, line) in jsonl::read_lines(path)? {
        let l: OcrLine = jsonl::parse_line(path, line_no, &line)?;
        if let Some(empty_at) = l.ocr.iter().position(String::is_empty) {
            return Err(Error::InvalidRecord {
                id: l.id,
                reason: format!("OCR string {empty_at} is empty"),
            });
        }
        if out.insert(l.id.clone(), l.ocr).is_some() {
            return Err(Error::DuplicateId(l.id));
        }
    }
    Ok(out)
}
