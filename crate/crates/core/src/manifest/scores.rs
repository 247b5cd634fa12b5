use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::jsonl;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-sample scores produced by one scoring method, keyed by sample id.
///
/// Iteration is in ascending id order, which is also the on-disk order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<T: Scalar = f64> {
    method: String,
    entries: BTreeMap<String, T>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    method: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    id: String,
    score: f64,
}

/// Rounds to 9 significant decimal digits, the persisted precision.
pub(crate) fn round_sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

impl<T: Scalar> ScoreTable<T> {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn from_entries(method: impl Into<String>, entries: impl IntoIterator<Item = (String, T)>) -> Result<Self> {
        let mut table = Self::new(method);
        for (id, score) in entries {
            table.insert(id, score)?;
        }
        Ok(table)
    }

    /// Inserts a finite score; an id may appear only once.
    pub fn insert(&mut self, id: impl Into<String>, score: T) -> Result<()> {
        let id = id.into();
        if !score.is_finite() {
            return Err(Error::InvalidRecord {
                id,
                reason: format!("non-finite {} score", self.method),
            });
        }
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.entries.insert(id, score);
        Ok(())
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<T> {
        self.entries.get(id).copied()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, T)> + '_ {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn scores(&self) -> impl ExactSizeIterator<Item = T> + '_ {
        self.entries.values().copied()
    }

    /// Copy with every score rounded to the persisted precision, so that
    /// filtering in memory agrees with filtering a table read back from disk.
    pub fn rounded(&self) -> Self {
        Self {
            method: self.method.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), T::from_f64_lossy(round_sig9(v.to_f64_lossy()))))
                .collect(),
        }
    }
}

/// Writes a header line then one `{"id","score"}` line per entry, ascending id.
pub fn write_score_table<T: Scalar>(table: &ScoreTable<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_value(Header {
        method: table.method.clone(),
        count: table.len(),
    })
    .expect("header serializes");
    let lines = std::iter::once(header).chain(table.iter().map(|(id, s)| {
        serde_json::to_value(Entry {
            id: id.to_string(),
            score: round_sig9(s.to_f64_lossy()),
        })
        .expect("entry serializes")
    }));
    jsonl::write_values(path, lines)
}

pub fn read_score_table<T: Scalar>(path: impl AsRef<Path>) -> Result<ScoreTable<T>> {
    let path = path.as_ref();
    let lines = jsonl::read_lines(path)?;
    let Some((first_no, first)) = lines.first() else {
        return Err(Error::Format(format!("{}: missing score table header", path.display())));
    };
    let header: Header = jsonl::parse_line(path, *first_no, first)?;
    let mut table = ScoreTable::new(header.method);
    for (line_no, line) in &lines[1..] {
        let entry: Entry = jsonl::parse_line(path, *line_no, line)?;
        table.insert(entry.id, T::from_f64_lossy(entry.score))?;
    }
    if table.len() != header.count {
        return Err(Error::Format(format!(
            "{}: header announces {} entries, found {}",
            path.display(),
            header.count,
            table.len()
        )));
    }
    Ok(table)
}
