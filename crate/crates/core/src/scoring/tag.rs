//! Indicator embeddings over decoded tag strips: a semantic test double in
//! which image and caption agree exactly when they carry the same tags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::masking::Image;
use crate::synth::decode_tag_strips;
use crate::Embedding;

pub const TAG_BUCKETS: usize = 4096;
/// Bucket used when no tag is present, so the vector is never zero.
pub const SENTINEL_BUCKET: usize = TAG_BUCKETS - 1;

/// Caption token → tag id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagVocab {
    tokens: BTreeMap<String, u32>,
}

impl TagVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `token` (case-folded).
    pub fn insert(&mut self, token: &str, tag: u32) {
        self.tokens.insert(token.to_lowercase(), tag);
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.tokens.get(&token.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tags of every vocabulary token in `caption`. Tokens are maximal runs of
    /// alphanumeric characters.
    pub fn caption_tags(&self, caption: &str) -> BTreeSet<u32> {
        caption
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .filter_map(|t| self.get(t))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: BTreeMap<String, u32> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut vocab = Self::new();
        for (t, id) in tokens {
            vocab.insert(&t, id);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(&self.tokens).expect("vocab serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn indicator(tags: &BTreeSet<u32>) -> Embedding {
    let mut v = vec![0.0; TAG_BUCKETS];
    let buckets: BTreeSet<usize> = tags.iter().map(|&t| t as usize % TAG_BUCKETS).collect();
    if buckets.is_empty() {
        v[SENTINEL_BUCKET] = 1.0;
        return v;
    }
    let w = 1.0 / (buckets.len() as f64).sqrt();
    for b in buckets {
        v[b] = w;
    }
    v
}

/// L2-normalized indicator of the tags decoded from every strip in the image.
pub fn tag_embed_image(image: &Image) -> Embedding {
    indicator(&decode_tag_strips(image))
}

/// L2-normalized indicator of the vocabulary tags found in the caption.
pub fn tag_embed_text(caption: &str, vocab: &TagVocab) -> Embedding {
    indicator(&vocab.caption_tags(caption))
}

#[derive(Debug, Clone)]
pub struct TagEmbedder {
    vocab: TagVocab,
}

impl TagEmbedder {
    pub fn new(vocab: TagVocab) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &TagVocab {
        &self.vocab
    }
}

impl EmbeddingProvider for TagEmbedder {
    fn dim(&self) -> usize {
        TAG_BUCKETS
    }

    fn embed_image(&self, _id: &str, image: &Image) -> Result<Embedding> {
        Ok(tag_embed_image(image))
    }

    fn embed_text(&self, _id: &str, text: &str) -> Result<Embedding> {
        Ok(tag_embed_text(text, &self.vocab))
    }
}
