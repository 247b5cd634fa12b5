//! Parsing of `--embedder` and `--method` values into scorer specs.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use tmars_core::masking::OracleDetector;
use tmars_core::scoring::{
    CheckpointSequence, FileEmbedder, HttpEmbedder, MockEmbedder, TagEmbedder, TagVocab, EMBED_URL_ENV,
};
use tmars_core::{EmbeddingProvider, ScorerSpec};

/// `mock`, `mock:<salt>`, `tag`, `file=<dir>`, `http=<url>`, or `http`
/// (URL taken from the environment).
pub fn embedder(value: &str, vocab: Option<&Path>) -> Result<Arc<dyn EmbeddingProvider>> {
    let provider: Arc<dyn EmbeddingProvider> = match value {
        "mock" => Arc::new(MockEmbedder::new(MockEmbedder::DEFAULT_DIM)?),
        "tag" => {
            let path = vocab.context("the tag embedder needs --vocab")?;
            Arc::new(TagEmbedder::new(TagVocab::load(path)?))
        }
        "http" => {
            let url = std::env::var(EMBED_URL_ENV).with_context(|| format!("{EMBED_URL_ENV} is not set"))?;
            Arc::new(HttpEmbedder::connect(url)?)
        }
        _ => {
            if let Some(salt) = value.strip_prefix("mock:") {
                let salt = salt.parse().with_context(|| format!("bad mock salt {salt:?}"))?;
                Arc::new(MockEmbedder::salted(MockEmbedder::DEFAULT_DIM, salt)?)
            } else if let Some(dir) = value.strip_prefix("file=") {
                Arc::new(FileEmbedder::open(dir)?)
            } else if let Some(url) = value.strip_prefix("http=") {
                Arc::new(HttpEmbedder::connect(url)?)
            } else {
                bail!("unknown embedder {value:?} (expected mock, mock:<salt>, tag, file=<dir>, http or http=<url>)")
            }
        }
    };
    Ok(provider)
}

pub struct ScorerArgs<'a> {
    pub method: &'a str,
    pub embedder: &'a str,
    pub checkpoints: &'a [String],
    pub train: Option<&'a str>,
    pub val: Option<&'a str>,
    pub vocab: Option<&'a Path>,
}

pub fn scorer(args: &ScorerArgs<'_>) -> Result<ScorerSpec> {
    let spec = match args.method {
        "clip" => ScorerSpec::Clip {
            provider: embedder(args.embedder, args.vocab)?,
        },
        "tmars" => ScorerSpec::Tmars {
            detector: Arc::new(OracleDetector),
            provider: embedder(args.embedder, args.vocab)?,
        },
        "cssft" => {
            if args.checkpoints.is_empty() {
                bail!("cssft needs at least one --checkpoint");
            }
            let providers = args
                .checkpoints
                .iter()
                .map(|c| embedder(c, args.vocab))
                .collect::<Result<Vec<_>>>()?;
            ScorerSpec::Cssft {
                checkpoints: CheckpointSequence::new(providers)?,
            }
        }
        "crho" => ScorerSpec::Crho {
            train: embedder(args.train.context("crho needs --train-embedder")?, args.vocab)?,
            val: embedder(args.val.context("crho needs --val-embedder")?, args.vocab)?,
        },
        other => bail!("unknown method {other:?} (expected clip, tmars, cssft or crho)"),
    };
    Ok(spec)
}
