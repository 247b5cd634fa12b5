mod providers;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tmars_core::filtering::{intersect, read_retention, retention_stats, write_retention};
use tmars_core::manifest::{read_score_table, write_manifest, write_score_table};
use tmars_core::masking::{DetectorProvider, NoTextDetector, OracleDetector};
use tmars_core::pipeline::{check_overwrite, detect_records, load_inputs, mask_records, run_pipeline, PipelineConfig};
use tmars_core::report::{pilot_report, read_scaling_csv, report_scaling};
use tmars_core::scoring::score_manifest;
use tmars_core::synth::{
    base_examples, build_pilot, build_pools, read_utility_csv, utility_slope, PilotSpec, PoolSpec,
};
use tmars_core::taxonomy::{read_categories, read_ocr, text_match_filter};
use tmars_core::{Category, FilterStrategy};

use providers::{scorer, ScorerArgs};

/// Text-masking and re-scoring curation for image-caption corpora.
#[derive(Parser)]
#[command(name = "tmars", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a manifest whose boxes are the detector's output.
    Detect {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = Detector::Oracle)]
        detector: Detector,
        #[command(flatten)]
        output: Output,
    },
    /// Write masked PNG copies of every image under --out.
    Mask {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = Detector::Oracle)]
        detector: Detector,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Score every sample and write a score table.
    Score {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        scorer: Scorer,
        #[command(flatten)]
        output: Output,
    },
    /// Turn a score table into a retention set.
    Filter {
        #[arg(long)]
        scores: PathBuf,
        /// median, threshold=<t> or top-frac=<p>
        #[arg(long)]
        strategy: FilterStrategy,
        #[command(flatten)]
        output: Output,
    },
    /// Keep samples whose OCR text shares no five-character run with the caption.
    TextMatch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ocr: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Intersect retention sets drawn from the same manifest.
    Intersect {
        #[arg(required = true, num_args = 1..)]
        sets: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Retained fraction per category, as JSON on stdout.
    Stats {
        #[arg(long)]
        retention: PathBuf,
        #[arg(long)]
        categories: PathBuf,
    },
    /// Synthetic fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Reports over external accuracy numbers or retention sets.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Score and filter in one step, writing all run outputs to a directory.
    Run {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        scorer: Scorer,
        #[arg(long, default_value = "median")]
        strategy: FilterStrategy,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Generate a pool (base/negative/positive split) or a single-variant pilot corpus.
    Build {
        #[arg(long, value_enum, default_value_t = Kind::Pilot)]
        kind: Kind,
        /// Number of source examples for pools.
        #[arg(long, default_value_t = 100)]
        sources: usize,
        /// Pilot category counts in the order S_r,S_i,S_irt,S_it,S_t.
        #[arg(long, value_delimiter = ',', default_values_t = [18, 234, 49, 96, 103])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Least-squares accuracy change per million added samples.
    Utility {
        /// CSV with header added_samples,accuracy.
        #[arg(long)]
        points: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Gains over a baseline and their fit against log2(pool size).
    Scaling {
        /// CSV with header pool_size,method,accuracy.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        baseline: String,
        /// Directory for gains.csv and fit.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Category retention table for several retention sets.
    Pilot {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        categories: PathBuf,
        /// name=path, repeatable.
        #[arg(long = "retention", required = true)]
        retention: Vec<String>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Input {
    /// JSONL manifest or .tar shard.
    #[arg(long)]
    manifest: PathBuf,
    /// Root directory for image_ref paths.
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Args)]
struct Scorer {
    #[arg(long, default_value = "clip")]
    method: String,
    /// mock, mock:<salt>, tag, file=<dir>, http=<url>, or http (URL from TMARS_EMBED_URL).
    #[arg(long, default_value = "mock")]
    embedder: String,
    /// Fine-tuning checkpoint embedders for cssft, in order.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    #[arg(long)]
    train_embedder: Option<String>,
    #[arg(long)]
    val_embedder: Option<String>,
    /// Tag vocabulary for the tag embedder.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct Output {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

impl Output {
    fn ready(&self) -> Result<&Path> {
        if !self.force {
            check_overwrite(std::slice::from_ref(&self.out))?;
        }
        Ok(&self.out)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Detector {
    /// The record's annotated boxes.
    Oracle,
    /// No text anywhere.
    None,
}

impl Detector {
    fn provider(self) -> &'static dyn DetectorProvider {
        match self {
            Detector::Oracle => &OracleDetector,
            Detector::None => &NoTextDetector,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Pools,
    Pilot,
}

fn scorer_spec(s: &Scorer) -> Result<tmars_core::ScorerSpec> {
    scorer(&ScorerArgs {
        method: &s.method,
        embedder: &s.embedder,
        checkpoints: &s.checkpoints,
        train: s.train_embedder.as_deref(),
        val: s.val_embedder.as_deref(),
        vocab: s.vocab.as_deref(),
    })
}

fn fresh_dir(dir: &Path, names: &[&str], force: bool) -> Result<()> {
    if !force {
        check_overwrite(&names.iter().map(|n| dir.join(n)).collect::<Vec<_>>())?;
    }
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect {
            input,
            detector,
            output,
        } => {
            let out = output.ready()?;
            let (records, images) = load_inputs(&input.manifest, input.images.as_deref())?;
            let detected = detect_records(&records, images.as_ref(), detector.provider(), 1)?;
            write_manifest(&detected, out)?;
            eprintln!("detected text in {} samples", detected.len());
        }
        Command::Mask {
            input,
            detector,
            out,
            workers,
        } => {
            let (records, images) = load_inputs(&input.manifest, input.images.as_deref())?;
            let written = mask_records(&records, images.as_ref(), detector.provider(), &out, workers)?;
            eprintln!("wrote {} masked images under {}", written.len(), out.display());
        }
        Command::Score { input, scorer, output } => {
            let out = output.ready()?;
            let spec = scorer_spec(&scorer)?;
            let (records, images) = load_inputs(&input.manifest, input.images.as_deref())?;
            let table = score_manifest(&records, images.as_ref(), &spec, scorer.workers)?;
            write_score_table(&table, out)?;
            eprintln!("scored {} samples with {}", table.len(), table.method());
        }
        Command::Filter {
            scores,
            strategy,
            output,
        } => {
            let out = output.ready()?;
            let table = read_score_table::<f64>(&scores)?;
            let set = strategy.apply(&table)?;
            write_retention(&set, out)?;
            eprintln!("{}: kept {} of {}", set.provenance(), set.len(), set.source_count());
        }
        Command::TextMatch { manifest, ocr, output } => {
            let out = output.ready()?;
            let (records, _) = load_inputs(&manifest, Some(Path::new(".")))?;
            let set = text_match_filter(&records, &read_ocr(&ocr)?)?;
            write_retention(&set, out)?;
            eprintln!("text_match: kept {} of {}", set.len(), set.source_count());
        }
        Command::Intersect { sets, output } => {
            let out = output.ready()?;
            let sets = sets
                .iter()
                .map(read_retention)
                .collect::<tmars_core::Result<Vec<_>>>()?;
            let joined = intersect(&sets)?;
            write_retention(&joined, out)?;
            eprintln!(
                "{}: kept {} of {}",
                joined.provenance(),
                joined.len(),
                joined.source_count()
            );
        }
        Command::Stats { retention, categories } => {
            let stats = retention_stats(&read_retention(&retention)?, &read_categories(&categories)?)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Synth(SynthCommand::Build {
            kind,
            sources,
            counts,
            seed,
            out,
            force,
        }) => {
            fresh_dir(
                &out,
                &["manifest.jsonl", "categories.jsonl", "ocr.jsonl", "vocab.json", "pool"],
                force,
            )?;
            let pool = match kind {
                Kind::Pools => build_pools(&base_examples(sources, seed), &PoolSpec::new(seed))?,
                Kind::Pilot => {
                    if counts.len() != Category::ALL.len() {
                        bail!("--counts needs {} values, got {}", Category::ALL.len(), counts.len());
                    }
                    let counts: BTreeMap<Category, usize> = Category::ALL.into_iter().zip(counts).collect();
                    build_pilot(&PilotSpec::new(counts, seed))?
                }
            };
            pool.write(&out)?;
            eprintln!("wrote {} samples to {}", pool.records.len(), out.display());
        }
        Command::Synth(SynthCommand::Utility { points }) => {
            let slope = utility_slope(&read_utility_csv(&points)?)?;
            println!("{slope}");
        }
        Command::Report(ReportCommand::Scaling {
            points,
            baseline,
            out,
            force,
        }) => {
            fresh_dir(&out, &["gains.csv", "fit.csv"], force)?;
            let report = report_scaling(&read_scaling_csv(&points)?, &baseline)?;
            std::fs::write(out.join("gains.csv"), report.gains_csv()).context("writing gains.csv")?;
            std::fs::write(out.join("fit.csv"), report.fits_csv()).context("writing fit.csv")?;
            print!("{}", report.fits_csv());
        }
        Command::Report(ReportCommand::Pilot {
            manifest,
            categories,
            retention,
            output,
        }) => {
            let out = output.ready()?;
            let (records, _) = load_inputs(&manifest, Some(Path::new(".")))?;
            let sets = retention
                .iter()
                .map(|arg| {
                    let (name, path) = arg
                        .split_once('=')
                        .with_context(|| format!("expected name=path, got {arg:?}"))?;
                    Ok((name.to_string(), read_retention(path)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = pilot_report(&records, &read_categories(&categories)?, &sets)?;
            let csv = table.to_csv();
            std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            print!("{csv}");
        }
        Command::Run {
            input,
            scorer,
            strategy,
            out,
            seed,
            force,
        } => {
            let config = PipelineConfig {
                manifest: input.manifest,
                images: input.images,
                scorer: scorer_spec(&scorer)?,
                strategy,
                out_dir: out,
                workers: scorer.workers,
                seed,
                force,
            };
            let output = run_pipeline(&config)?;
            eprintln!(
                "{}: kept {} of {} in {:.2?}",
                output.report.provenance, output.report.retained, output.report.samples, output.elapsed
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<tmars_core::Error>()
                .map_or(2, tmars_core::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
