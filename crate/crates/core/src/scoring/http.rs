//! Adapter for a remote embedding service.
//!
//! `POST /v1/embed` takes `{"kind": "image"|"text", "data_b64": str}` and
//! answers `{"dim": n, "embedding": [..]}`. `POST /v1/embed_batch` takes a
//! list of such requests and answers a list of responses in the same order.
//! Images are sent PNG-encoded.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::manifest::encode_png;
use crate::masking::Image;
use crate::Embedding;

/// Environment variable naming the default service URL.
pub const EMBED_URL_ENV: &str = "TMARS_EMBED_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    pub data_b64: String,
}

impl EmbedRequest {
    pub fn image(image: &Image) -> Self {
        Self {
            kind: EmbedKind::Image,
            data_b64: STANDARD.encode(encode_png(image)),
        }
    }

    pub fn text(text: &str) -> Self {
        Self {
            kind: EmbedKind::Text,
            data_b64: STANDARD.encode(text.as_bytes()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    base_url: String,
    dim: usize,
    client: Client,
}

impl HttpEmbedder {
    /// Uses a known output dimension; every response must match it.
    pub fn new(base_url: impl Into<String>, dim: usize) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::provider(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            dim,
            client,
        })
    }

    /// Learns the dimension by embedding the empty caption once.
    pub fn connect(base_url: impl Into<String>) -> Result<Self> {
        let mut this = Self::new(base_url, 0)?;
        let probe: EmbedResponse = this.post("/v1/embed", &EmbedRequest::text(""))?;
        if probe.dim == 0 {
            return Err(Error::provider("service reported dim 0"));
        }
        this.dim = probe.dim;
        Ok(this)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R> {
        let url = format!("{}{path}", self.base_url);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| Error::provider(format!("{url}: {e}")))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            return Err(Error::provider(format!("{url}: HTTP {status}")));
        }
        resp.json()
            .map_err(|e| Error::provider(format!("{url}: malformed response: {e}")))
    }

    fn check(&self, resp: EmbedResponse) -> Result<Embedding> {
        if resp.dim != self.dim || resp.embedding.len() != self.dim {
            return Err(Error::provider(format!(
                "dim mismatch: expected {}, response declares {} with {} values",
                self.dim,
                resp.dim,
                resp.embedding.len()
            )));
        }
        let norm = resp.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::provider("embedding has zero or non-finite norm"));
        }
        Ok(resp.embedding.into_iter().map(|x| x / norm).collect())
    }

    pub fn embed(&self, request: &EmbedRequest) -> Result<Embedding> {
        let resp = self.post("/v1/embed", request)?;
        self.check(resp)
    }

    /// Order-preserving batch call.
    pub fn embed_batch(&self, requests: &[EmbedRequest]) -> Result<Vec<Embedding>> {
        let resps: Vec<EmbedResponse> = self.post("/v1/embed_batch", &requests)?;
        if resps.len() != requests.len() {
            return Err(Error::provider(format!(
                "batch of {} requests returned {} embeddings",
                requests.len(),
                resps.len()
            )));
        }
        resps.into_iter().map(|r| self.check(r)).collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, id: &str, image: &Image) -> Result<Embedding> {
        self.embed(&EmbedRequest::image(image)).map_err(|e| e.for_sample(id))
    }

    fn embed_text(&self, id: &str, text: &str) -> Result<Embedding> {
        self.embed(&EmbedRequest::text(text)).map_err(|e| e.for_sample(id))
    }
}
