//! End-to-end scoring runs with atomic output writes.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filtering::{write_retention, FilterStrategy, RetentionSet};
use crate::manifest::{read_manifest, read_shard_with_images, save_png, write_score_table, DirImages, ImageSource};
use crate::manifest::{SampleRecord, ScoreTable, TextBox};
use crate::masking::{mask_image, DetectorProvider};
use crate::scoring::{par_map_records, score_manifest, ScorerSpec};

pub const HISTOGRAM_BINS: usize = 50;

pub const SCORES_FILE: &str = "scores.jsonl";
pub const RETENTION_FILE: &str = "retention.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

#[derive(Clone)]
pub struct PipelineConfig {
    /// A JSONL manifest, or a `.tar` shard whose members carry the images.
    pub manifest: PathBuf,
    /// Root for `image_ref` paths. Ignored for shards.
    pub images: Option<PathBuf>,
    pub scorer: ScorerSpec,
    pub strategy: FilterStrategy,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub force: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if !self.manifest.is_file() {
            return Err(Error::Config(format!(
                "manifest {} does not exist",
                self.manifest.display()
            )));
        }
        if !is_shard(&self.manifest) {
            match &self.images {
                Some(root) if root.is_dir() => {}
                Some(root) => return Err(Error::Config(format!("image root {} does not exist", root.display()))),
                None => return Err(Error::Config("an image root is required for JSONL manifests".into())),
            }
        }
        if self.out_dir.exists() && !self.out_dir.is_dir() {
            return Err(Error::Config(format!("{} is not a directory", self.out_dir.display())));
        }
        if !self.force {
            check_overwrite(&outputs(&self.out_dir))?;
        }
        Ok(())
    }
}

fn is_shard(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tar"))
}

fn outputs(dir: &Path) -> [PathBuf; 4] {
    [SCORES_FILE, RETENTION_FILE, REPORT_FILE, HISTOGRAM_FILE].map(|f| dir.join(f))
}

/// Fails if any of `paths` already exists.
pub fn check_overwrite(paths: &[PathBuf]) -> Result<()> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            p.display()
        ))),
        None => Ok(()),
    }
}

/// Reads a manifest and builds the matching image source.
pub fn load_inputs(manifest: &Path, images: Option<&Path>) -> Result<(Vec<SampleRecord>, Box<dyn ImageSource>)> {
    if is_shard(manifest) {
        let (records, imgs) = read_shard_with_images(manifest)?;
        return Ok((records, Box::new(imgs)));
    }
    let root = images.ok_or_else(|| Error::Config("an image root is required for JSONL manifests".into()))?;
    Ok((read_manifest(manifest)?, Box::new(DirImages::new(root))))
}

/// Counts and provenance of a run. Timing is deliberately absent so that the
/// file is byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: String,
    pub strategy: String,
    pub provenance: String,
    pub samples: usize,
    pub retained: usize,
    pub seed: u64,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scores: ScoreTable<f64>,
    /// Unmasked scores, present for text-masking runs.
    pub unmasked: Option<ScoreTable<f64>>,
    pub retention: RetentionSet,
    pub report: RunReport,
    pub elapsed: Duration,
}

/// Counts per uniform bin over [-1, 1]; out-of-range scores land in the edge bins.
pub fn histogram<T: crate::Scalar>(table: &ScoreTable<T>) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0; HISTOGRAM_BINS];
    for s in table.scores() {
        let s = s.to_f64_lossy();
        let i = ((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor();
        bins[(i.max(0.0) as usize).min(HISTOGRAM_BINS - 1)] += 1;
    }
    bins
}

/// One row per bin: `bin_lo,bin_hi,unmasked,masked` for text-masking runs,
/// `bin_lo,bin_hi,count` otherwise.
pub fn histogram_csv(scores: &ScoreTable<f64>, unmasked: Option<&ScoreTable<f64>>) -> String {
    let width = 2.0 / HISTOGRAM_BINS as f64;
    let main = histogram(scores);
    let before = unmasked.map(histogram);
    let mut out = String::from(if before.is_some() {
        "bin_lo,bin_hi,unmasked,masked\n"
    } else {
        "bin_lo,bin_hi,count\n"
    });
    for i in 0..HISTOGRAM_BINS {
        let lo = -1.0 + i as f64 * width;
        let hi = lo + width;
        match before {
            Some(b) => out.push_str(&format!("{lo:.2},{hi:.2},{},{}\n", b[i], main[i])),
            None => out.push_str(&format!("{lo:.2},{hi:.2},{}\n", main[i])),
        }
    }
    out
}

/// Writes every `(path, bytes)` pair via a temporary sibling and a rename.
/// If anything fails, files written so far are removed.
pub fn write_all_or_nothing(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged: Vec<PathBuf> = Vec::new();
    let cleanup = |staged: &[PathBuf]| {
        for p in staged {
            let _ = std::fs::remove_file(p);
        }
    };
    for (path, bytes) in files {
        let tmp = path.with_extension("partial");
        if let Err(e) = std::fs::write(&tmp, bytes) {
            cleanup(&staged);
            return Err(Error::io(&tmp, e));
        }
        staged.push(tmp);
    }
    let mut done: Vec<PathBuf> = Vec::new();
    for ((path, _), tmp) in files.iter().zip(&staged) {
        if let Err(e) = std::fs::rename(tmp, path) {
            cleanup(&staged);
            cleanup(&done);
            return Err(Error::io(path, e));
        }
        done.push(path.clone());
    }
    Ok(())
}

fn read_back(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<Vec<u8>> {
    write(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e));
    let _ = std::fs::remove_file(path);
    bytes
}

/// Scores and filters the manifest, then writes the run outputs into
/// `out_dir`. Nothing is written unless every sample scores.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let start = Instant::now();
    let (records, images) = load_inputs(&config.manifest, config.images.as_deref())?;
    if records.is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }
    let scores = score_manifest(&records, images.as_ref(), &config.scorer, config.workers)?.rounded();
    let unmasked = match &config.scorer {
        ScorerSpec::Tmars { provider, .. } => {
            let clip = ScorerSpec::Clip {
                provider: Arc::clone(provider),
            };
            Some(score_manifest(&records, images.as_ref(), &clip, config.workers)?.rounded())
        }
        _ => None,
    };
    let retention = config.strategy.apply(&scores)?;
    let report = RunReport {
        method: config.scorer.method().to_string(),
        strategy: config.strategy.to_string(),
        provenance: retention.provenance().to_string(),
        samples: records.len(),
        retained: retention.len(),
        seed: config.seed,
        histogram_bins: HISTOGRAM_BINS,
    };

    std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let [scores_path, retention_path, report_path, histogram_path] = outputs(&config.out_dir);
    let scratch = config.out_dir.join(".scratch");
    let files = vec![
        (scores_path, read_back(&scratch, |p| write_score_table(&scores, p))?),
        (retention_path, read_back(&scratch, |p| write_retention(&retention, p))?),
        (report_path, {
            let mut b = serde_json::to_vec_pretty(&report).expect("report serializes");
            b.push(b'\n');
            b
        }),
        (histogram_path, histogram_csv(&scores, unmasked.as_ref()).into_bytes()),
    ];
    write_all_or_nothing(&files)?;
    Ok(RunOutput {
        scores,
        unmasked,
        retention,
        report,
        elapsed: start.elapsed(),
    })
}

/// Runs the detector over every record and returns the records with their
/// `boxes` replaced by the detections.
pub fn detect_records(
    records: &[SampleRecord],
    images: &dyn ImageSource,
    detector: &dyn DetectorProvider,
    workers: usize,
) -> Result<Vec<SampleRecord>> {
    let boxes = par_map_records(records, images, workers, |r, img| detector.detect(img, r))?;
    Ok(records
        .iter()
        .zip(boxes)
        .map(|(r, b): (&SampleRecord, Vec<TextBox>)| r.clone().with_boxes(b))
        .collect())
}

/// Writes a masked copy of every image to `out_dir/<image_ref>` as PNG.
pub fn mask_records(
    records: &[SampleRecord],
    images: &dyn ImageSource,
    detector: &dyn DetectorProvider,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<PathBuf>> {
    par_map_records(records, images, workers, |r, img| {
        let boxes = detector.detect(img, r)?;
        let path = out_dir.join(Path::new(&r.image_ref).with_extension("png"));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        save_png(&mask_image(img, &boxes), &path)?;
        Ok(path)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::{read_retention, retention_stats};
    use crate::manifest::{read_score_table, write_manifest};
    use crate::masking::OracleDetector;
    use crate::scoring::{MockEmbedder, TagEmbedder};
    use crate::synth::{build_pilot, PilotSpec};
    use crate::taxonomy::Category;
    use std::collections::BTreeMap;

    fn pilot_dir(dir: &Path) -> crate::synth::SynthPool {
        let counts = Category::ALL.iter().map(|&c| (c, 8)).collect();
        let pool = build_pilot(&PilotSpec::new(counts, 3)).unwrap();
        pool.write(dir).unwrap();
        pool
    }

    fn config(dir: &Path, pool: &crate::synth::SynthPool, out: &str, workers: usize) -> PipelineConfig {
        PipelineConfig {
            manifest: dir.join("manifest.jsonl"),
            images: Some(dir.to_path_buf()),
            scorer: ScorerSpec::Tmars {
                detector: Arc::new(OracleDetector),
                provider: Arc::new(TagEmbedder::new(pool.vocab.clone())),
            },
            strategy: FilterStrategy::Median,
            out_dir: dir.join(out),
            workers,
            seed: 0,
            force: false,
        }
    }

    #[test]
    fn tmars_median_run_drops_text_only_samples() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        let out = run_pipeline(&config(dir.path(), &pool, "run", 2)).unwrap();
        assert_eq!(out.retention.len(), 20);
        let stats = retention_stats(&out.retention, &pool.category_map()).unwrap();
        assert_eq!(stats[&Category::St], Some(0.0));
        assert_eq!(stats[&Category::Sr], Some(0.0));
        let on_disk = read_retention(dir.path().join("run").join(RETENTION_FILE)).unwrap();
        assert_eq!(on_disk, out.retention);
        let table = read_score_table::<f64>(dir.path().join("run").join(SCORES_FILE)).unwrap();
        assert_eq!(table, out.scores);
        let hist = std::fs::read_to_string(dir.path().join("run").join(HISTOGRAM_FILE)).unwrap();
        assert_eq!(hist.lines().count(), HISTOGRAM_BINS + 1);
        assert!(hist.starts_with("bin_lo,bin_hi,unmasked,masked\n-1.00,-0.96,"));
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        run_pipeline(&config(dir.path(), &pool, "w1", 1)).unwrap();
        run_pipeline(&config(dir.path(), &pool, "w8", 8)).unwrap();
        for f in [SCORES_FILE, RETENTION_FILE, REPORT_FILE, HISTOGRAM_FILE] {
            let a = std::fs::read(dir.path().join("w1").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("w8").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        let mut cfg = config(dir.path(), &pool, "run", 1);
        run_pipeline(&cfg).unwrap();
        assert!(matches!(run_pipeline(&cfg), Err(Error::Config(m)) if m.contains("--force")));
        cfg.force = true;
        run_pipeline(&cfg).unwrap();
    }

    #[test]
    fn missing_image_root_fails_before_scoring() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        let mut cfg = config(dir.path(), &pool, "run", 1);
        cfg.images = Some(dir.path().join("nope"));
        assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
        assert!(!cfg.out_dir.exists());
        cfg.images = Some(dir.path().to_path_buf());
        cfg.workers = 0;
        assert!(run_pipeline(&cfg).is_err());
    }

    #[test]
    fn sample_failure_aborts_without_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        let mut records = pool.records.clone();
        records[3].image_ref = "missing.png".into();
        records[7].boxes = None;
        write_manifest(&records, dir.path().join("broken.jsonl")).unwrap();
        let mut cfg = config(dir.path(), &pool, "run", 4);
        cfg.manifest = dir.path().join("broken.jsonl");
        match run_pipeline(&cfg) {
            Err(Error::Aggregate(failures)) => {
                let ids: Vec<&str> = failures.iter().map(|(id, _)| id.as_str()).collect();
                let mut want = vec![records[3].id.as_str(), records[7].id.as_str()];
                want.sort();
                assert_eq!(ids, want);
            }
            other => panic!("expected aggregate error, got {other:?}"),
        }
        assert!(!cfg.out_dir.join(SCORES_FILE).exists());
    }

    #[test]
    fn clip_run_has_single_histogram_column() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        let mut cfg = config(dir.path(), &pool, "clip", 1);
        cfg.scorer = ScorerSpec::Clip {
            provider: Arc::new(MockEmbedder::new(16).unwrap()),
        };
        cfg.strategy = FilterStrategy::TopFraction(0.5);
        let out = run_pipeline(&cfg).unwrap();
        assert!(out.unmasked.is_none());
        assert_eq!(out.report.provenance, "clip:top-frac=0.5");
        let hist = std::fs::read_to_string(cfg.out_dir.join(HISTOGRAM_FILE)).unwrap();
        let total: usize = hist
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 40);
    }

    #[test]
    fn histogram_edges() {
        let t = ScoreTable::from_entries(
            "m",
            [
                ("a".to_string(), -1.0),
                ("b".into(), 1.0),
                ("c".into(), 0.0),
                ("d".into(), 3.0),
            ],
        )
        .unwrap();
        let h = histogram(&t);
        assert_eq!(h[0], 1);
        assert_eq!(h[25], 1);
        assert_eq!(h[49], 2);
    }

    #[test]
    fn detect_and_mask_commands() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pilot_dir(dir.path());
        let images = DirImages::new(dir.path());
        let detected = detect_records(&pool.records, &images, &OracleDetector, 3).unwrap();
        assert_eq!(detected, pool.records);
        let written = mask_records(&pool.records, &images, &OracleDetector, &dir.path().join("masked"), 3).unwrap();
        assert_eq!(written.len(), pool.records.len());
        let by_id: BTreeMap<_, _> = pool.records.iter().map(|r| (r.id.clone(), r)).collect();
        let st = pool
            .categories
            .iter()
            .find(|(_, e)| e.category == Category::St)
            .unwrap()
            .0;
        let idx = pool.records.iter().position(|r| &r.id == st).unwrap();
        let masked = crate::manifest::load_image(&written[idx]).unwrap();
        assert!(crate::synth::decode_tag_strips(&masked).is_empty(), "{}", by_id[st].id);
    }
}
