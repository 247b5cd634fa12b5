//! Turning score tables into retention sets, and set algebra over them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{jsonl, ScoreTable};
use crate::scalar::Scalar;
use crate::taxonomy::Category;

/// Joins member provenances of an intersection.
pub const INTERSECTION: &str = "∩";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterStrategy {
    /// Keep the top half (exactly `⌈n/2⌉`).
    Median,
    /// Keep every score `>= tau`.
    Threshold(f64),
    /// Keep exactly `⌈p·n⌉`, `0 < p <= 1`.
    TopFraction(f64),
}

/// Threshold applied by the original LAION curation and the DataComp runs.
pub const LAION_THRESHOLD: f64 = 0.281;
/// Retained-fraction grid searched for score-based filters.
pub const RETENTION_GRID: [f64; 4] = [0.9, 0.75, 0.6, 0.5];

impl FilterStrategy {
    pub fn apply<T: Scalar>(&self, table: &ScoreTable<T>) -> Result<RetentionSet> {
        match *self {
            FilterStrategy::Median => median_filter(table),
            FilterStrategy::Threshold(tau) => threshold_filter(table, T::from_f64_lossy(tau)),
            FilterStrategy::TopFraction(p) => top_fraction_filter(table, p),
        }
    }
}

impl fmt::Display for FilterStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterStrategy::Median => write!(f, "median"),
            FilterStrategy::Threshold(t) => write!(f, "threshold={t}"),
            FilterStrategy::TopFraction(p) => write!(f, "top-frac={p}"),
        }
    }
}

impl FromStr for FilterStrategy {
    type Err = Error;

    /// Parses `median`, `threshold=<t>` or `top-frac=<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown filter strategy {s:?}"));
        let number = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match s.split_once('=') {
            None if s == "median" => Ok(FilterStrategy::Median),
            Some(("threshold", v)) => {
                let t = number(v)?;
                if !t.is_finite() {
                    return Err(bad());
                }
                Ok(FilterStrategy::Threshold(t))
            }
            Some(("top-frac", v)) => {
                let p = number(v)?;
                check_fraction(p)?;
                Ok(FilterStrategy::TopFraction(p))
            }
            _ => Err(bad()),
        }
    }
}

/// Ids kept by a filter, with a description of how they were chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetentionSet {
    ids: BTreeSet<String>,
    provenance: String,
    source_count: usize,
}

impl RetentionSet {
    pub fn new(ids: BTreeSet<String>, provenance: impl Into<String>, source_count: usize) -> Result<Self> {
        if ids.len() > source_count {
            return Err(Error::Provenance(format!(
                "{} retained ids exceed source count {source_count}",
                ids.len()
            )));
        }
        Ok(Self {
            ids,
            provenance: provenance.into(),
            source_count,
        })
    }

    pub fn ids(&self) -> &BTreeSet<String> {
        &self.ids
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }
}

fn check_fraction(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("retention fraction {p} outside (0, 1]")))
    }
}

/// `⌈p·n⌉`, treating products within 1e-9 of an integer as that integer so
/// decimal fractions such as 0.7 behave as written.
pub fn retained_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k as usize).min(n)
}

/// Descending score, then ascending id.
fn rank<T: Scalar>(a: &(&str, T), b: &(&str, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

fn provenance_of(method: &str, strategy: &str) -> String {
    if method.is_empty() {
        strategy.to_string()
    } else {
        format!("{method}:{strategy}")
    }
}

/// Keeps the `⌈p·n⌉` best ids by (score desc, id asc).
pub fn top_fraction_filter<T: Scalar>(table: &ScoreTable<T>, p: f64) -> Result<RetentionSet> {
    check_fraction(p)?;
    top_k(table, retained_count(p, table.len()), &format!("top-frac={p}"))
}

fn top_k<T: Scalar>(table: &ScoreTable<T>, k: usize, strategy: &str) -> Result<RetentionSet> {
    if table.is_empty() {
        return Err(Error::EmptyInput("score table"));
    }
    let mut entries: Vec<(&str, T)> = table.iter().collect();
    if k < entries.len() {
        entries.select_nth_unstable_by(k, rank);
    }
    let ids = entries[..k].iter().map(|(id, _)| id.to_string()).collect();
    RetentionSet::new(ids, provenance_of(table.method(), strategy), table.len())
}

/// Keeps exactly `{id : score >= tau}`.
pub fn threshold_filter<T: Scalar>(table: &ScoreTable<T>, tau: T) -> Result<RetentionSet> {
    if !tau.is_finite() {
        return Err(Error::Config(format!("threshold {tau} is not finite")));
    }
    let ids = table
        .iter()
        .filter(|(_, s)| *s >= tau)
        .map(|(id, _)| id.to_string())
        .collect();
    RetentionSet::new(
        ids,
        provenance_of(table.method(), &format!("threshold={tau}")),
        table.len(),
    )
}

/// The top half, `⌈n/2⌉` ids. Ties at the median are resolved by ascending
/// id rather than keeping every tied sample.
pub fn median_filter<T: Scalar>(table: &ScoreTable<T>) -> Result<RetentionSet> {
    top_k(table, table.len().div_ceil(2), "median")
}

fn provenance_parts(p: &str) -> impl Iterator<Item = &str> {
    p.split(INTERSECTION).filter(|s| !s.is_empty())
}

/// Intersection of ids. Member provenances are flattened, sorted and
/// deduplicated, which makes the operation commutative, associative and
/// idempotent on whole values, provenance included.
pub fn intersect(sets: &[RetentionSet]) -> Result<RetentionSet> {
    let (first, rest) = sets.split_first().ok_or(Error::EmptyInput("retention set list"))?;
    if let Some(s) = rest.iter().find(|s| s.source_count != first.source_count) {
        return Err(Error::Provenance(format!(
            "sets come from different sources ({} vs {} samples)",
            first.source_count, s.source_count
        )));
    }
    let ids = first
        .ids
        .iter()
        .filter(|id| rest.iter().all(|s| s.ids.contains(*id)))
        .cloned()
        .collect();
    let parts: BTreeSet<&str> = sets.iter().flat_map(|s| provenance_parts(&s.provenance)).collect();
    let provenance = parts.into_iter().collect::<Vec<_>>().join(INTERSECTION);
    RetentionSet::new(ids, provenance, first.source_count)
}

/// Retained fraction per category, `None` for categories with no members.
pub type CategoryFractions = BTreeMap<Category, Option<f64>>;

pub fn retention_stats(set: &RetentionSet, categories: &BTreeMap<String, Category>) -> Result<CategoryFractions> {
    if let Some(id) = set.ids.iter().find(|id| !categories.contains_key(*id)) {
        return Err(Error::Coverage(format!("retained id {id:?} has no category")));
    }
    let mut totals: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for (id, cat) in categories {
        let e = totals.entry(*cat).or_default();
        e.0 += 1;
        if set.ids.contains(id) {
            e.1 += 1;
        }
    }
    Ok(Category::ALL
        .iter()
        .map(|c| {
            let frac = totals
                .get(c)
                .filter(|(n, _)| *n > 0)
                .map(|(n, kept)| *kept as f64 / *n as f64);
            (*c, frac)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct RetentionHeader {
    provenance: String,
    source_count: usize,
    retained: usize,
}

/// Header line, then one JSON string id per line in ascending order.
pub fn write_retention(set: &RetentionSet, path: impl AsRef<Path>) -> Result<()> {
    let header = serde_json::to_value(RetentionHeader {
        provenance: set.provenance.clone(),
        source_count: set.source_count,
        retained: set.len(),
    })
    .expect("header serializes");
    let lines = std::iter::once(header).chain(set.ids.iter().map(|id| serde_json::Value::from(id.as_str())));
    jsonl::write_values(path.as_ref(), lines)
}

pub fn read_retention(path: impl AsRef<Path>) -> Result<RetentionSet> {
    let path = path.as_ref();
    let lines = jsonl::read_lines(path)?;
    let Some((first_no, first)) = lines.first() else {
        return Err(Error::Format(format!("{}: missing retention header", path.display())));
    };
    let header: RetentionHeader = jsonl::parse_line(path, *first_no, first)?;
    let mut ids = BTreeSet::new();
    let mut previous: Option<String> = None;
    for (line_no, line) in &lines[1..] {
        let id: String = jsonl::parse_line(path, *line_no, line)?;
        if previous.as_ref().is_some_and(|p| *p >= id) {
            return Err(Error::Format(format!(
                "{}:{line_no}: ids must be strictly ascending",
                path.display()
            )));
        }
        previous = Some(id.clone());
        ids.insert(id);
    }
    if ids.len() != header.retained {
        return Err(Error::Format(format!(
            "{}: header announces {} ids, found {}",
            path.display(),
            header.retained,
            ids.len()
        )));
    }
    RetentionSet::new(ids, header.provenance, header.source_count)
}
