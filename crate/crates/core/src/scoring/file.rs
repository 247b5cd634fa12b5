use std::path::Path;

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::manifest::{read_embeddings, EmbeddingMatrix};
use crate::masking::Image;
use crate::Embedding;

/// Precomputed embeddings looked up by sample id.
///
/// The directory holds `image.tmeb` and `text.tmeb` (each with its `.idx.jsonl`
/// sidecar). Image rows are returned regardless of the pixels passed in, so a
/// masked-score run needs a directory whose image rows were computed on masked
/// images.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    images: EmbeddingMatrix,
    texts: EmbeddingMatrix,
}

impl FileEmbedder {
    pub const IMAGE_FILE: &'static str = "image.tmeb";
    pub const TEXT_FILE: &'static str = "text.tmeb";

    pub fn new(images: EmbeddingMatrix, texts: EmbeddingMatrix) -> Result<Self> {
        if images.dim() != texts.dim() {
            return Err(Error::Config(format!(
                "image dim {} differs from text dim {}",
                images.dim(),
                texts.dim()
            )));
        }
        Ok(Self { images, texts })
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::new(
            read_embeddings(dir.join(Self::IMAGE_FILE))?,
            read_embeddings(dir.join(Self::TEXT_FILE))?,
        )
    }

    fn lookup(matrix: &EmbeddingMatrix, kind: &str, id: &str) -> Result<Embedding> {
        matrix
            .get(id)
            .map(|row| row.iter().map(|&v| f64::from(v)).collect())
            .ok_or_else(|| Error::provider(format!("no precomputed {kind} embedding")).for_sample(id))
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn dim(&self) -> usize {
        self.images.dim()
    }

    fn embed_image(&self, id: &str, _image: &Image) -> Result<Embedding> {
        Self::lookup(&self.images, "image", id)
    }

    fn embed_text(&self, id: &str, _text: &str) -> Result<Embedding> {
        Self::lookup(&self.texts, "text", id)
    }
}
