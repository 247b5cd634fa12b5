//! Utility of a data type: accuracy change per million added samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityPoint {
    pub added_samples: u64,
    /// Percentage in [0, 100].
    pub accuracy: f64,
}

impl UtilityPoint {
    pub fn new(added_samples: u64, accuracy: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&accuracy) {
            return Err(Error::Domain(format!("accuracy {accuracy} outside [0, 100]")));
        }
        Ok(Self {
            added_samples,
            accuracy,
        })
    }
}

/// Least-squares slope of accuracy against millions of added samples.
pub fn utility_slope(points: &[UtilityPoint]) -> Result<f64> {
    for p in points {
        UtilityPoint::new(p.added_samples, p.accuracy)?;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.added_samples as f64 / 1e6).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    Ok(least_squares(&xs, &ys)?.slope)
}

/// Reads a CSV with header `added_samples,accuracy`.
pub fn read_utility_csv(path: impl AsRef<Path>) -> Result<Vec<UtilityPoint>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["added_samples", "accuracy"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header \"added_samples,accuracy\", got {:?}",
                headers.as_slice()
            ),
        });
    }
    let mut points = Vec::new();
    for row in reader.deserialize::<UtilityPoint>() {
        let p = row.map_err(|e| csv_error(path, e))?;
        points.push(UtilityPoint::new(p.added_samples, p.accuracy)?);
    }
    Ok(points)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(u64, f64)]) -> Vec<UtilityPoint> {
        v.iter().map(|&(x, y)| UtilityPoint::new(x, y).unwrap()).collect()
    }

    #[test]
    fn exact_line() {
        let s = utility_slope(&pts(&[(0, 50.0), (500_000, 50.2), (1_000_000, 50.4)])).unwrap();
        assert!((s - 0.4).abs() < 1e-9);
    }

    #[test]
    fn two_points_give_secant_slope() {
        let s = utility_slope(&pts(&[(0, 10.0), (1_000_000, 9.11)])).unwrap();
        assert!((s + 0.89).abs() < 1e-9);
    }

    #[test]
    fn three_point_least_squares() {
        // x = 0,1,2; y = 1,1.5,1.9: slope = sum((x-1)(y-ybar)) / sum((x-1)^2) = (0.9)/2
        let s = utility_slope(&pts(&[(0, 1.0), (1_000_000, 1.5), (2_000_000, 1.9)])).unwrap();
        assert!((s - 0.45).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            utility_slope(&pts(&[(5, 1.0), (5, 2.0)])),
            Err(Error::Degenerate(_))
        ));
        assert!(utility_slope(&pts(&[(5, 1.0)])).is_err());
        assert!(UtilityPoint::new(0, 100.5).is_err());
    }

    #[test]
    fn csv_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        std::fs::write(&p, "added_samples,accuracy\n0,10\n1000000,9.11\n").unwrap();
        let points = read_utility_csv(&p).unwrap();
        assert_eq!(points, pts(&[(0, 10.0), (1_000_000, 9.11)]));
        std::fs::write(&p, "x,y\n0,1\n").unwrap();
        assert!(matches!(read_utility_csv(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, "added_samples,accuracy\n-3,1\n").unwrap();
        assert!(matches!(read_utility_csv(&p), Err(Error::Parse { line: 2, .. })));
    }
}
