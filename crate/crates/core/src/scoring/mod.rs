//! Image-caption similarity scores: the plain score, the masked re-score, the
//! checkpoint-averaged score and the validation-minus-train score.

mod file;
mod http;
mod mock;
mod similarity;
mod tag;

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{ImageSource, SampleRecord, ScoreTable};
use crate::masking::{mask_image, DetectorProvider, Image};
use crate::Embedding;

pub use file::FileEmbedder;
pub use http::{EmbedKind, EmbedRequest, EmbedResponse, HttpEmbedder, EMBED_URL_ENV};
pub use mock::{fnv1a64, image_bytes, mock_embed, MockEmbedder, SplitMix64};
pub use similarity::cosine_similarity;
pub use tag::{tag_embed_image, tag_embed_text, TagEmbedder, TagVocab, SENTINEL_BUCKET, TAG_BUCKETS};

/// Two-tower encoder: images and captions into one embedding space.
///
/// Implementations must be deterministic. `id` identifies the sample being
/// embedded and is used by lookup-based providers and in error messages.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_image(&self, id: &str, image: &Image) -> Result<Embedding>;
    fn embed_text(&self, id: &str, text: &str) -> Result<Embedding>;

    /// Upper bound on concurrent calls; `Some(1)` serializes the pipeline.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }
}

fn checked(provider: &dyn EmbeddingProvider, v: Embedding) -> Result<Embedding> {
    if v.len() != provider.dim() {
        return Err(Error::provider(format!(
            "provider returned {} values, declared dim {}",
            v.len(),
            provider.dim()
        )));
    }
    Ok(v)
}

fn score_pair(record: &SampleRecord, image: &Image, provider: &dyn EmbeddingProvider) -> Result<f64> {
    let f = checked(provider, provider.embed_image(&record.id, image)?)?;
    let g = checked(provider, provider.embed_text(&record.id, &record.caption)?)?;
    cosine_similarity(&f, &g).map_err(|e| Error::provider(e.to_string()))
}

/// Cosine similarity between the image embedding and the caption embedding.
pub fn clip_score(record: &SampleRecord, image: &Image, provider: &dyn EmbeddingProvider) -> Result<f64> {
    score_pair(record, image, provider).map_err(|e| e.for_sample(&record.id))
}

/// Masks detected text, then scores the masked image against the original caption.
pub fn tmars_score(
    record: &SampleRecord,
    image: &Image,
    detector: &dyn DetectorProvider,
    provider: &dyn EmbeddingProvider,
) -> Result<f64> {
    let boxes = detector.detect(image, record).map_err(|e| match e {
        e @ Error::MissingAnnotation(_) => e,
        other => Error::Provider {
            id: Some(record.id.clone()),
            message: format!("text detection failed: {other}"),
        },
    })?;
    clip_score(record, &mask_image(image, &boxes), provider)
}

/// Ordered fine-tuning checkpoints sharing one embedding dimension.
#[derive(Clone)]
pub struct CheckpointSequence {
    providers: Vec<Arc<dyn EmbeddingProvider>>,
}

impl CheckpointSequence {
    pub fn new(providers: Vec<Arc<dyn EmbeddingProvider>>) -> Result<Self> {
        let Some(first) = providers.first() else {
            return Err(Error::Config("checkpoint sequence is empty".into()));
        };
        let dim = first.dim();
        if let Some(p) = providers.iter().find(|p| p.dim() != dim) {
            return Err(Error::Config(format!(
                "checkpoints disagree on dim: {dim} vs {}",
                p.dim()
            )));
        }
        Ok(Self { providers })
    }

    pub fn len(&self) -> usize {
        self.providers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.providers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn EmbeddingProvider> {
        self.providers.iter().map(|p| p.as_ref())
    }
}

/// Mean similarity across checkpoints. The mean ranks samples exactly as the
/// sum does and does not depend on the number of checkpoints.
pub fn cssft_score(record: &SampleRecord, image: &Image, checkpoints: &CheckpointSequence) -> Result<f64> {
    let per_checkpoint = checkpoints
        .iter()
        .map(|p| clip_score(record, image, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&per_checkpoint))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Validation-model similarity minus train-model similarity.
pub fn crho_score(
    record: &SampleRecord,
    image: &Image,
    train: &dyn EmbeddingProvider,
    val: &dyn EmbeddingProvider,
) -> Result<f64> {
    Ok(clip_score(record, image, val)? - clip_score(record, image, train)?)
}

/// Scoring method plus its dependencies.
#[derive(Clone)]
pub enum ScorerSpec {
    Clip {
        provider: Arc<dyn EmbeddingProvider>,
    },
    Tmars {
        detector: Arc<dyn DetectorProvider>,
        provider: Arc<dyn EmbeddingProvider>,
    },
    Cssft {
        checkpoints: CheckpointSequence,
    },
    Crho {
        train: Arc<dyn EmbeddingProvider>,
        val: Arc<dyn EmbeddingProvider>,
    },
}

impl ScorerSpec {
    pub fn method(&self) -> &'static str {
        match self {
            ScorerSpec::Clip { .. } => "clip",
            ScorerSpec::Tmars { .. } => "tmars",
            ScorerSpec::Cssft { .. } => "cssft",
            ScorerSpec::Crho { .. } => "crho",
        }
    }

    fn providers(&self) -> Vec<&dyn EmbeddingProvider> {
        match self {
            ScorerSpec::Clip { provider } | ScorerSpec::Tmars { provider, .. } => vec![provider.as_ref()],
            ScorerSpec::Cssft { checkpoints } => checkpoints.iter().collect(),
            ScorerSpec::Crho { train, val } => vec![train.as_ref(), val.as_ref()],
        }
    }

    /// Tightest concurrency limit among the providers involved.
    pub fn max_concurrency(&self) -> Option<usize> {
        self.providers().iter().filter_map(|p| p.max_concurrency()).min()
    }

    pub fn score(&self, record: &SampleRecord, image: &Image) -> Result<f64> {
        match self {
            ScorerSpec::Clip { provider } => clip_score(record, image, provider.as_ref()),
            ScorerSpec::Tmars { detector, provider } => {
                tmars_score(record, image, detector.as_ref(), provider.as_ref())
            }
            ScorerSpec::Cssft { checkpoints } => cssft_score(record, image, checkpoints),
            ScorerSpec::Crho { train, val } => crho_score(record, image, train.as_ref(), val.as_ref()),
        }
    }
}

/// Runs `f` over every record on a pool of `workers` threads. Results come
/// back in input order; any failure yields an aggregate error listing every
/// failing id in ascending order.
pub(crate) fn par_map_records<R, F>(
    records: &[SampleRecord],
    images: &dyn ImageSource,
    workers: usize,
    f: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&SampleRecord, &Image) -> Result<R> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<R>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| images.load(r).and_then(|img| f(r, &img)))
            .collect()
    });
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((r.id.clone(), e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        failures.sort();
        Err(Error::Aggregate(failures))
    }
}

/// Scores every record. The table is keyed by id, so its content does not
/// depend on the worker count. No partial table is returned on failure.
pub fn score_manifest(
    records: &[SampleRecord],
    images: &dyn ImageSource,
    spec: &ScorerSpec,
    workers: usize,
) -> Result<ScoreTable<f64>> {
    let workers = spec.max_concurrency().map_or(workers, |m| workers.min(m)).max(1);
    let scores = par_map_records(records, images, workers, |r, img| spec.score(r, img))?;
    ScoreTable::from_entries(spec.method(), records.iter().map(|r| r.id.clone()).zip(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{write_score_table, TextBox};
    use crate::masking::{NoTextDetector, OracleDetector, Rgb};
    use proptest::prelude::*;
    use std::collections::HashMap;

    /// Fixed vectors: image → `f`, caption → `g`.
    struct Fixed {
        f: Vec<f64>,
        g: Vec<f64>,
    }

    impl EmbeddingProvider for Fixed {
        fn dim(&self) -> usize {
            self.f.len()
        }
        fn embed_image(&self, _: &str, _: &Image) -> Result<Embedding> {
            Ok(self.f.clone())
        }
        fn embed_text(&self, _: &str, _: &str) -> Result<Embedding> {
            Ok(self.g.clone())
        }
    }

    fn fixed_at(angle: f64) -> Arc<dyn EmbeddingProvider> {
        Arc::new(Fixed {
            f: vec![1.0, 0.0],
            g: vec![angle.cos(), angle.sin()],
        })
    }

    /// Provider whose similarity is exactly `s`.
    fn with_sim(s: f64) -> Arc<dyn EmbeddingProvider> {
        fixed_at(s.acos())
    }

    struct MapImages(HashMap<String, Image>);

    impl ImageSource for MapImages {
        fn load(&self, r: &SampleRecord) -> Result<Image> {
            self.0.get(&r.image_ref).cloned().ok_or_else(|| Error::Image {
                id: r.id.clone(),
                message: "missing".into(),
            })
        }
    }

    fn sample() -> (SampleRecord, Image) {
        let mut img = Image::filled(12, 8, Rgb([30, 60, 90]));
        img.set(3, 3, Rgb([255, 255, 255]));
        (
            SampleRecord::new("s", "s.png", "a caption").with_boxes(vec![TextBox::new(2, 2, 5, 5)]),
            img,
        )
    }

    #[test]
    fn clip_score_closed_form() {
        let (r, img) = sample();
        let p = Fixed {
            f: vec![1.0, 0.0],
            g: vec![1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()],
        };
        assert!((clip_score(&r, &img, &p).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let mock = MockEmbedder::new(32).unwrap();
        let s = clip_score(&r, &img, &mock).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert_eq!(s, clip_score(&r, &img, &mock).unwrap());
    }

    #[test]
    fn tmars_equals_clip_without_boxes() {
        let (r, img) = sample();
        let mock = MockEmbedder::new(32).unwrap();
        assert_eq!(
            tmars_score(&r, &img, &NoTextDetector, &mock).unwrap(),
            clip_score(&r, &img, &mock).unwrap()
        );
        let masked = tmars_score(&r, &img, &OracleDetector, &mock).unwrap();
        assert_ne!(masked, clip_score(&r, &img, &mock).unwrap());
    }

    #[test]
    fn tmars_detector_failure_names_sample() {
        struct Broken;
        impl DetectorProvider for Broken {
            fn detect(&self, _: &Image, _: &SampleRecord) -> Result<Vec<TextBox>> {
                Err(Error::Domain("boom".into()))
            }
        }
        let (r, img) = sample();
        let mock = MockEmbedder::new(8).unwrap();
        assert!(matches!(
            tmars_score(&r, &img, &Broken, &mock),
            Err(Error::Provider { id: Some(id), .. }) if id == "s"
        ));
    }

    #[test]
    fn cssft_is_checkpoint_mean() {
        let (r, img) = sample();
        let seq = CheckpointSequence::new(vec![with_sim(0.3), with_sim(0.2), with_sim(0.1)]).unwrap();
        assert!((cssft_score(&r, &img, &seq).unwrap() - 0.2).abs() < 1e-12);

        let single = CheckpointSequence::new(vec![with_sim(0.42)]).unwrap();
        assert_eq!(
            cssft_score(&r, &img, &single).unwrap(),
            clip_score(&r, &img, &*with_sim(0.42)).unwrap()
        );

        let mock: Arc<dyn EmbeddingProvider> = Arc::new(MockEmbedder::new(16).unwrap());
        let five = CheckpointSequence::new(vec![mock.clone(); 5]).unwrap();
        let c = clip_score(&r, &img, mock.as_ref()).unwrap();
        assert!((cssft_score(&r, &img, &five).unwrap() - c).abs() < 1e-15);

        assert!(matches!(CheckpointSequence::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn crho_is_val_minus_train() {
        let (r, img) = sample();
        let d = crho_score(&r, &img, &*with_sim(0.3), &*with_sim(0.5)).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        let d = crho_score(&r, &img, &*with_sim(0.4), &*with_sim(0.1)).unwrap();
        assert!((d + 0.3).abs() < 1e-12);
        let mock = MockEmbedder::new(16).unwrap();
        assert_eq!(crho_score(&r, &img, &mock, &mock).unwrap(), 0.0);
    }

    fn corpus(n: usize) -> (Vec<SampleRecord>, MapImages) {
        let mut records = Vec::new();
        let mut images = HashMap::new();
        for i in 0..n {
            let id = format!("r{i:02}");
            records.push(SampleRecord::new(&id, format!("{id}.png"), format!("caption {i}")));
            images.insert(format!("{id}.png"), Image::filled(4, 4, Rgb([i as u8, 7, 9])));
        }
        (records, MapImages(images))
    }

    #[test]
    fn score_manifest_is_schedule_independent() {
        let (records, images) = corpus(40);
        let spec = ScorerSpec::Clip {
            provider: Arc::new(MockEmbedder::new(32).unwrap()),
        };
        let one = score_manifest(&records, &images, &spec, 1).unwrap();
        let eight = score_manifest(&records, &images, &spec, 8).unwrap();
        assert_eq!(one.len(), 40);
        let dir = tempfile::tempdir().unwrap();
        write_score_table(&one, dir.path().join("a")).unwrap();
        write_score_table(&eight, dir.path().join("b")).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a")).unwrap(),
            std::fs::read(dir.path().join("b")).unwrap()
        );
    }

    #[test]
    fn unreadable_image_fails_whole_manifest() {
        let (mut records, images) = corpus(3);
        records[1].image_ref = "missing.png".into();
        let spec = ScorerSpec::Clip {
            provider: Arc::new(MockEmbedder::new(8).unwrap()),
        };
        match score_manifest(&records, &images, &spec, 4) {
            Err(Error::Aggregate(failures)) => {
                assert_eq!(failures.len(), 1);
                assert_eq!(failures[0].0, "r01");
            }
            other => panic!("expected aggregate error, got {other:?}"),
        }
    }

    #[test]
    fn serial_providers_limit_workers() {
        struct Serial(MockEmbedder);
        impl EmbeddingProvider for Serial {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn embed_image(&self, id: &str, i: &Image) -> Result<Embedding> {
                self.0.embed_image(id, i)
            }
            fn embed_text(&self, id: &str, t: &str) -> Result<Embedding> {
                self.0.embed_text(id, t)
            }
            fn max_concurrency(&self) -> Option<usize> {
                Some(1)
            }
        }
        let spec = ScorerSpec::Crho {
            train: Arc::new(Serial(MockEmbedder::new(8).unwrap())),
            val: Arc::new(MockEmbedder::new(8).unwrap()),
        };
        assert_eq!(spec.max_concurrency(), Some(1));
        let (records, images) = corpus(5);
        let t = score_manifest(&records, &images, &spec, 8).unwrap();
        assert!(t.scores().all(|s| s == 0.0));
    }

    proptest! {
        #[test]
        fn mean_and_sum_rank_identically(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 2..30)) {
            let by = |key: &dyn Fn(&[f64]) -> f64| {
                let mut idx: Vec<usize> = (0..rows.len()).collect();
                idx.sort_by(|&a, &b| key(&rows[a]).total_cmp(&key(&rows[b])).then(a.cmp(&b)));
                idx
            };
            let sum_rank = by(&|r| r.iter().sum::<f64>());
            let mean_rank = by(&|r| mean(r));
            prop_assert_eq!(sum_rank, mean_rank);
        }
    }
}
