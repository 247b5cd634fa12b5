//! Synthetic base records, per-category variants, and pool assembly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::strip::{paint_tag_strip, STRIP_HEIGHT, STRIP_WIDTH};
use crate::error::{Error, Result};
use crate::manifest::{save_png, write_manifest, ImageSource, SampleRecord, TextBox};
use crate::masking::{Image, Rgb};
use crate::scoring::{fnv1a64, TagVocab, SENTINEL_BUCKET, TAG_BUCKETS};
use crate::taxonomy::{text_match, write_categories, write_ocr, Category, CategoryEntry};

pub const IMAGE_WIDTH: u32 = 96;
pub const IMAGE_HEIGHT: u32 = 64;
/// Height of a text box: the strip plus two rows of glyph ink.
pub const BOX_HEIGHT: u32 = STRIP_HEIGHT + 2;
/// Text boxes start below this row so they never touch the visual strip.
pub const BOX_TOP_MIN: u32 = 8;

const CONSONANTS: &[u8; 16] = b"bdfghklmnprstvwz";
const VOWELS: &[u8; 4] = b"aeio";
const METADATA_WORDS: &[&str] = &[
    "photo", "stock", "outdoor", "indoor", "closeup", "vintage", "daylight", "studio", "sale", "free", "shop",
    "summer", "winter", "blue", "green", "large", "small", "new", "classic", "detail",
];

/// "Title: {title} | Metadata: {metadata}", verbatim.
pub fn render_caption(title: &str, metadata: &str) -> String {
    format!("Title: {title} | Metadata: {metadata}")
}

/// A pronounceable twelve-letter word, one per tag.
///
/// Six consonant-vowel syllables encode the 32 bits (high bits first), so
/// distinct tags always give distinct words.
pub fn title_for(tag: u32) -> String {
    let mut v = u64::from(tag);
    let mut syllables = [[0u8; 2]; 6];
    for s in syllables.iter_mut().rev() {
        s[0] = CONSONANTS[(v & 15) as usize];
        s[1] = VOWELS[((v >> 4) & 3) as usize];
        v >>= 6;
    }
    let mut word: String = syllables.iter().flatten().map(|&b| b as char).collect();
    word[..1].make_ascii_uppercase();
    word
}

fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(key.as_bytes()))
}

/// Uniform tag whose bucket avoids the sentinel and every bucket in `avoid`.
fn draw_tag(rng: &mut impl Rng, avoid: &[u32]) -> u32 {
    loop {
        let t: u32 = rng.random();
        let bucket = t as usize % TAG_BUCKETS;
        if bucket != SENTINEL_BUCKET && avoid.iter().all(|&a| a as usize % TAG_BUCKETS != bucket) {
            return t;
        }
    }
}

fn gradient(rng: &mut impl Rng) -> Image {
    let base: [i32; 3] = [
        rng.random_range(20..200),
        rng.random_range(20..200),
        rng.random_range(20..200),
    ];
    let dx: i32 = rng.random_range(-1..=1);
    let dy: i32 = rng.random_range(-1..=1);
    let mut img = Image::filled(IMAGE_WIDTH, IMAGE_HEIGHT, Rgb::MID_GRAY);
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let shift = dx * x as i32 / 2 + dy * y as i32;
            let c = base.map(|v| (v + shift).clamp(0, 255) as u8);
            img.set(x, y, Rgb(c));
        }
    }
    img
}

/// One synthetic source example with its ground truth. The visual strip in rows 0-1 carries the same tag as the caption title.
pub fn base_example(id: &str, seed: u64) -> (SampleRecord, Image) {
    let mut rng = rng_for(seed, id);
    let tag = draw_tag(&mut rng, &[]);
    let n_meta = rng.random_range(1..=3);
    let meta: Vec<&str> = (0..n_meta)
        .map(|_| METADATA_WORDS[rng.random_range(0..METADATA_WORDS.len())])
        .collect();
    let caption = render_caption(&title_for(tag), &meta.join(", "));
    let mut image = gradient(&mut rng);
    paint_tag_strip(&mut image, 0, 0, tag);
    let mut record = SampleRecord::new(id, format!("{id}.png"), caption);
    record.boxes = Some(Vec::new());
    record.tags_visual = Some(vec![tag]);
    record.tags_text = Some(Vec::new());
    (record, image)
}

/// One pool member with its OCR ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub record: SampleRecord,
    pub image: Image,
    pub ocr: Vec<String>,
}

fn place_text(image: &mut Image, tag: u32, rng: &mut impl Rng) -> TextBox {
    let x = rng.random_range(0..=image.width() - STRIP_WIDTH);
    let y = rng.random_range(BOX_TOP_MIN..=image.height() - BOX_HEIGHT);
    paint_tag_strip(image, x, y, tag);
    let ink = Rgb([24, 24, 32]);
    let gap = Rgb([96, 96, 104]);
    for dy in STRIP_HEIGHT..BOX_HEIGHT {
        for dx in 0..STRIP_WIDTH {
            image.set(x + dx, y + dy, if dx % 4 == 3 { gap } else { ink });
        }
    }
    TextBox::new(x as i32, y as i32, (x + STRIP_WIDTH) as i32, (y + BOX_HEIGHT) as i32)
}

/// Turns a source example into a member of `category`.
///
/// The source's caption tag is `record.tags_visual[0]`. Text overlays get a
/// box whose top two rows hold the strip. Distractor images are a solid color;
/// for S_r they carry an unrelated visual tag, for S_t only the caption text.
pub fn overlay_variant(record: &SampleRecord, image: &Image, category: Category, seed: u64) -> Result<Variant> {
    let caption_tag = record
        .tags_visual
        .as_ref()
        .and_then(|t| t.first().copied())
        .ok_or_else(|| Error::MissingAnnotation(format!("{} (no caption tag in tags_visual)", record.id)))?;
    if image.width() < STRIP_WIDTH || image.height() < BOX_TOP_MIN + BOX_HEIGHT {
        return Err(Error::Domain(format!(
            "{}: image {}x{} too small for overlays",
            record.id,
            image.width(),
            image.height()
        )));
    }
    let mut rng = rng_for(seed, &format!("{}/{category}", record.id));
    let mut out = record.clone();
    let mut img = image.clone();
    let mut ocr = Vec::new();
    let mut boxes = Vec::new();
    let mut visual = vec![caption_tag];
    let mut text = Vec::new();
    match category {
        Category::Si => {}
        Category::Sirt => {
            let tag = loop {
                let t = draw_tag(&mut rng, &[caption_tag]);
                if !text_match(&[title_for(t)], &record.caption) {
                    break t;
                }
            };
            boxes.push(place_text(&mut img, tag, &mut rng));
            ocr.push(title_for(tag));
            text.push(tag);
        }
        Category::Sit => {
            boxes.push(place_text(&mut img, caption_tag, &mut rng));
            ocr.push(title_for(caption_tag));
            text.push(caption_tag);
        }
        Category::Sr | Category::St => {
            let color = Rgb([
                rng.random_range(30..220),
                rng.random_range(30..220),
                rng.random_range(30..220),
            ]);
            img = Image::filled(image.width(), image.height(), color);
            visual.clear();
            if category == Category::Sr {
                let unrelated = draw_tag(&mut rng, &[caption_tag]);
                paint_tag_strip(&mut img, 0, 0, unrelated);
                visual.push(unrelated);
            } else {
                boxes.push(place_text(&mut img, caption_tag, &mut rng));
                ocr.push(title_for(caption_tag));
                text.push(caption_tag);
            }
        }
    }
    out.boxes = Some(boxes);
    out.tags_visual = Some(visual);
    out.tags_text = Some(text);
    Ok(Variant {
        record: out,
        image: img,
        ocr,
    })
}

/// A generated pool held in memory.
#[derive(Debug, Clone, Default)]
pub struct SynthPool {
    pub records: Vec<SampleRecord>,
    /// Keyed by `image_ref`.
    pub images: BTreeMap<String, Image>,
    pub categories: BTreeMap<String, CategoryEntry>,
    pub ocr: BTreeMap<String, Vec<String>>,
    pub vocab: TagVocab,
}

impl SynthPool {
    fn push(&mut self, source: &str, category: Category, v: Variant) {
        let id = v.record.id.clone();
        if let Some(tags) = &v.record.tags_visual {
            for &t in tags {
                self.vocab.insert(&title_for(t).to_lowercase(), t);
            }
        }
        if let Some(tags) = &v.record.tags_text {
            for &t in tags {
                self.vocab.insert(&title_for(t).to_lowercase(), t);
            }
        }
        self.images.insert(v.record.image_ref.clone(), v.image);
        self.categories.insert(
            id.clone(),
            CategoryEntry {
                category,
                source: Some(source.to_string()),
            },
        );
        self.ocr.insert(id, v.ocr);
        self.records.push(v.record);
    }

    pub fn category_of(&self, id: &str) -> Option<Category> {
        self.categories.get(id).map(|e| e.category)
    }

    pub fn category_map(&self) -> BTreeMap<String, Category> {
        self.categories.iter().map(|(id, e)| (id.clone(), e.category)).collect()
    }

    pub fn count(&self, category: Category) -> usize {
        self.categories.values().filter(|e| e.category == category).count()
    }

    /// Writes manifest.jsonl, categories.jsonl, ocr.jsonl, vocab.json and
    /// pool/<category>/<id>.png under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_manifest(&self.records, dir.join("manifest.jsonl"))?;
        write_categories(&self.categories, dir.join("categories.jsonl"))?;
        write_ocr(&self.ocr, dir.join("ocr.jsonl"))?;
        self.vocab.save(dir.join("vocab.json"))?;
        self.images
            .par_iter()
            .try_for_each(|(image_ref, img)| save_png(img, dir.join(image_ref)))
    }
}

impl ImageSource for SynthPool {
    fn load(&self, record: &SampleRecord) -> Result<Image> {
        self.images.get(&record.image_ref).cloned().ok_or_else(|| Error::Image {
            id: record.id.clone(),
            message: format!("no image {:?} in pool", record.image_ref),
        })
    }
}

fn make_variant(source: &SampleRecord, image: &Image, category: Category, seed: u64) -> Result<Variant> {
    let mut v = overlay_variant(source, image, category, seed)?;
    let id = format!("{}-{}", source.id, category.as_str().to_lowercase());
    v.record.image_ref = format!("pool/{category}/{id}.png");
    v.record.id = id;
    Ok(v)
}

/// Split fractions and copy counts for pool construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub base_fraction: f64,
    pub negative_fraction: f64,
    pub positive_fraction: f64,
    pub copies_negative: usize,
    pub copies_positive: usize,
    pub seed: u64,
}

impl PoolSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            base_fraction: 0.4,
            negative_fraction: 0.2,
            positive_fraction: 0.4,
            copies_negative: 2,
            copies_positive: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.base_fraction, self.negative_fraction, self.positive_fraction];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "pool fractions {fracs:?} must lie in [0,1] and sum to 1"
            )));
        }
        if self.copies_negative != 2 || self.copies_positive != 3 {
            return Err(Error::Config(format!(
                "copy counts must be 2 (negative) and 3 (positive), got {} and {}",
                self.copies_negative, self.copies_positive
            )));
        }
        Ok(())
    }

    /// Source counts (base, negative, positive) for `n` base records.
    pub fn split(&self, n: usize) -> (usize, usize, usize) {
        let base = (self.base_fraction * n as f64 + 1e-9).floor() as usize;
        let negative = (self.negative_fraction * n as f64 + 1e-9).floor() as usize;
        (base, negative, n - base - negative)
    }
}

pub const MIN_POOL_SOURCES: usize = 10;

/// Builds the base/negative/positive pool from source examples.
///
/// Sources are shuffled with `spec.seed` and split; base sources give one
/// S_i record, negative sources an S_r and an S_t record, positive sources an
/// S_i, an S_irt and an S_it record. Records are ordered by source, then
/// category.
pub fn build_pools(base: &[(SampleRecord, Image)], spec: &PoolSpec) -> Result<SynthPool> {
    spec.validate()?;
    if base.len() < MIN_POOL_SOURCES {
        return Err(Error::Config(format!(
            "need at least {MIN_POOL_SOURCES} base records, got {}",
            base.len()
        )));
    }
    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_base, n_neg, _) = spec.split(base.len());
    let plan: Vec<(usize, &[Category])> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let cats: &[Category] = if rank < n_base {
                &[Category::Si]
            } else if rank < n_base + n_neg {
                &[Category::Sr, Category::St]
            } else {
                &[Category::Si, Category::Sirt, Category::Sit]
            };
            (i, cats)
        })
        .collect();
    let mut built: Vec<(usize, Vec<(Category, Variant)>)> = plan
        .par_iter()
        .map(|&(i, cats)| {
            let (rec, img) = &base[i];
            let variants = cats
                .iter()
                .map(|&c| make_variant(rec, img, c, spec.seed).map(|v| (c, v)))
                .collect::<Result<Vec<_>>>()?;
            Ok((i, variants))
        })
        .collect::<Result<_>>()?;
    built.sort_by(|a, b| base[a.0].0.id.cmp(&base[b.0].0.id));
    let mut pool = SynthPool::default();
    for (i, variants) in built {
        for (c, v) in variants {
            pool.push(&base[i].0.id, c, v);
        }
    }
    Ok(pool)
}

/// `n` generated source examples with ids "b0000", "b0001", ...
pub fn base_examples(n: usize, seed: u64) -> Vec<(SampleRecord, Image)> {
    (0..n)
        .into_par_iter()
        .map(|i| base_example(&format!("b{i:04}"), seed))
        .collect()
}

/// Category counts for a single-variant pilot corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotSpec {
    pub counts: BTreeMap<Category, usize>,
    pub seed: u64,
}

impl PilotSpec {
    pub fn new(counts: BTreeMap<Category, usize>, seed: u64) -> Self {
        Self { counts, seed }
    }

    /// Largest-remainder apportionment of `total` samples to `percentages`.
    /// Ties go to the larger quota.
    pub fn from_proportions(total: usize, percentages: &BTreeMap<Category, f64>, seed: u64) -> Result<Self> {
        let sum: f64 = percentages.values().sum();
        if percentages.is_empty() || sum <= 0.0 || percentages.values().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("invalid category proportions {percentages:?}")));
        }
        let quotas: Vec<(Category, f64)> = percentages.iter().map(|(&c, &p)| (c, p / sum * total as f64)).collect();
        let mut counts: BTreeMap<Category, usize> = quotas.iter().map(|&(c, q)| (c, q.floor() as usize)).collect();
        let mut rest = total - counts.values().sum::<usize>();
        // Remainders are snapped so that 18.5 and 233.5 count as a tie.
        let remainder = |q: f64| ((q - q.floor()) * 1e9).round();
        let mut by_remainder = quotas.clone();
        by_remainder.sort_by(|a, b| {
            remainder(b.1)
                .total_cmp(&remainder(a.1))
                .then(b.1.total_cmp(&a.1))
                .then(a.0.cmp(&b.0))
        });
        for (c, _) in by_remainder {
            if rest == 0 {
                break;
            }
            *counts.get_mut(&c).expect("present") += 1;
            rest -= 1;
        }
        Ok(Self { counts, seed })
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// One variant per source, categories in the requested counts. Ids
/// "p0000".. are assigned to a seeded shuffle of the category list so that
/// id order carries no category signal.
pub fn build_pilot(spec: &PilotSpec) -> Result<SynthPool> {
    if spec.total() == 0 {
        return Err(Error::EmptyInput("pilot category counts"));
    }
    let mut cats: Vec<Category> = spec
        .counts
        .iter()
        .flat_map(|(&c, &n)| std::iter::repeat_n(c, n))
        .collect();
    cats.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let variants: Vec<Variant> = cats
        .par_iter()
        .enumerate()
        .map(|(i, &c)| {
            let id = format!("p{i:04}");
            let (rec, img) = base_example(&id, spec.seed);
            let mut v = overlay_variant(&rec, &img, c, spec.seed)?;
            v.record.image_ref = format!("pool/{c}/{id}.png");
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut pool = SynthPool::default();
    for (v, c) in variants.into_iter().zip(cats) {
        let id = v.record.id.clone();
        pool.push(&id, c, v);
    }
    Ok(pool)
}
