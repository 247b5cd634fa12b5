//! Scaling-gain and category-retention reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{retention_stats, RetentionSet};
use crate::fit::{least_squares, LinearFit};
use crate::manifest::SampleRecord;
use crate::taxonomy::Category;

/// Accuracy of one method at one pool size. Accuracies are external inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub pool_size: u64,
    pub method: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub method: String,
    pub pool_size: u64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub baseline: String,
    /// Sorted by method, then pool size.
    pub gains: Vec<GainRow>,
    /// Fit of gain against log2(pool_size); `None` with fewer than two sizes.
    pub fits: BTreeMap<String, Option<LinearFit<f64>>>,
}

/// Differences are snapped to 1e-6 so that inputs given to two decimals
/// produce the decimal gain exactly (20.25 - 16.63 gives 3.62, not 3.6199...).
fn quantized_gain(a: f64, b: f64) -> f64 {
    ((a - b) * 1e6).round() / 1e6
}

pub fn report_scaling(points: &[ScalingPoint], baseline: &str) -> Result<ScalingReport> {
    let mut table: BTreeMap<&str, BTreeMap<u64, f64>> = BTreeMap::new();
    for p in points {
        if p.pool_size == 0 {
            return Err(Error::Domain(format!("{}: pool size must be positive", p.method)));
        }
        if !p.accuracy.is_finite() {
            return Err(Error::Domain(format!(
                "{} at {}: accuracy is not finite",
                p.method, p.pool_size
            )));
        }
        if table
            .entry(&p.method)
            .or_default()
            .insert(p.pool_size, p.accuracy)
            .is_some()
        {
            return Err(Error::Config(format!(
                "duplicate point for {} at {}",
                p.method, p.pool_size
            )));
        }
    }
    let base = table
        .get(baseline)
        .ok_or_else(|| Error::Pairing(format!("baseline method {baseline:?} has no points")))?;
    let mut gains = Vec::new();
    let mut fits = BTreeMap::new();
    for (&method, accs) in &table {
        if method == baseline {
            continue;
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (&size, &acc) in accs {
            let b = base
                .get(&size)
                .ok_or_else(|| Error::Pairing(format!("no {baseline} point at pool size {size} for {method}")))?;
            let gain = quantized_gain(acc, *b);
            gains.push(GainRow {
                method: method.to_string(),
                pool_size: size,
                gain,
            });
            xs.push((size as f64).log2());
            ys.push(gain);
        }
        let fit = if xs.len() >= 2 {
            Some(least_squares(&xs, &ys)?)
        } else {
            None
        };
        fits.insert(method.to_string(), fit);
    }
    if fits.is_empty() {
        // A lone baseline is compared against itself.
        for &size in base.keys() {
            gains.push(GainRow {
                method: baseline.to_string(),
                pool_size: size,
                gain: 0.0,
            });
        }
        let xs: Vec<f64> = base.keys().map(|&s| (s as f64).log2()).collect();
        let fit = if xs.len() >= 2 {
            Some(least_squares(&xs, &vec![0.0; xs.len()])?)
        } else {
            None
        };
        fits.insert(baseline.to_string(), fit);
    }
    Ok(ScalingReport {
        baseline: baseline.to_string(),
        gains,
        fits,
    })
}

impl ScalingReport {
    /// `method,pool_size,gain`
    pub fn gains_csv(&self) -> String {
        let mut out = String::from("method,pool_size,gain\n");
        for g in &self.gains {
            out.push_str(&format!("{},{},{}\n", g.method, g.pool_size, g.gain));
        }
        out
    }

    /// `method,slope,intercept,r_squared`, empty fields when no fit exists.
    pub fn fits_csv(&self) -> String {
        let mut out = String::from("method,slope,intercept,r_squared\n");
        for (m, fit) in &self.fits {
            match fit {
                Some(f) => out.push_str(&format!("{m},{},{},{}\n", f.slope, f.intercept, f.r_squared)),
                None => out.push_str(&format!("{m},,,\n")),
            }
        }
        out
    }
}

/// Reads a CSV with header `pool_size,method,accuracy`.
pub fn read_scaling_csv(path: impl AsRef<Path>) -> Result<Vec<ScalingPoint>> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => parse_err(1, format!("{kind:?}")),
    })?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["pool_size", "method", "accuracy"] {
        return Err(parse_err(1, "expected header \"pool_size,method,accuracy\"".into()));
    }
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e: csv::Error| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })
        })
        .collect()
}

/// Methods × categories retention table.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotTable {
    pub category_sizes: BTreeMap<Category, usize>,
    pub rows: Vec<(String, BTreeMap<Category, Option<f64>>)>,
}

/// Retained fraction of each category for each named retention set.
pub fn pilot_report(
    records: &[SampleRecord],
    categories: &BTreeMap<String, Category>,
    sets: &[(String, RetentionSet)],
) -> Result<PilotTable> {
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if let Some(missing) = ids.iter().find(|id| !categories.contains_key(**id)) {
        return Err(Error::Coverage(format!("sample {missing:?} has no category")));
    }
    let scoped: BTreeMap<String, Category> = categories
        .iter()
        .filter(|(id, _)| ids.contains(id.as_str()))
        .map(|(id, c)| (id.clone(), *c))
        .collect();
    let mut rows = Vec::with_capacity(sets.len());
    for (name, set) in sets {
        if set.source_count() != records.len() {
            return Err(Error::Provenance(format!(
                "{name}: drawn from {} samples, manifest has {}",
                set.source_count(),
                records.len()
            )));
        }
        if let Some(stray) = set.ids().iter().find(|id| !ids.contains(id.as_str())) {
            return Err(Error::Provenance(format!(
                "{name}: retained id {stray:?} is not in the manifest"
            )));
        }
        rows.push((name.clone(), retention_stats(set, &scoped)?));
    }
    let mut category_sizes: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for c in scoped.values() {
        *category_sizes.get_mut(c).expect("all categories present") += 1;
    }
    Ok(PilotTable { category_sizes, rows })
}

impl PilotTable {
    /// Header `method,S_r,S_i,S_irt,S_it,S_t`, one row per method with
    /// fractions to four decimals (empty for empty categories), then a
    /// `count` row with category sizes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for c in Category::ALL {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (name, fracs) in &self.rows {
            out.push_str(name);
            for c in Category::ALL {
                match fracs.get(&c).copied().flatten() {
                    Some(f) => out.push_str(&format!(",{f:.4}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out.push_str("count");
        for c in Category::ALL {
            out.push_str(&format!(",{}", self.category_sizes[&c]));
        }
        out.push('\n');
        out
    }
}
