//! Ordinary least-squares line fitting.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Coefficient of determination. Defined as 1 when every `y` is equal,
    /// since the fitted line then reproduces the data exactly.
    pub r_squared: T,
}

/// Fits `y = slope·x + intercept`. Needs at least two distinct `x` values.
pub fn least_squares<T: Scalar>(xs: &[T], ys: &[T]) -> Result<LinearFit<T>> {
    if xs.len() != ys.len() {
        return Err(Error::Degenerate(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("need at least two points".into()));
    }
    let n = T::from_usize(xs.len()).expect("point count fits the scalar type");
    let mean_x = xs.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let mean_y = ys.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx = sxx + dx * dx;
        sxy = sxy + dx * dy;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .fold(T::zero(), |a, b| a + b);
    let r_squared = if syy == T::zero() {
        T::one()
    } else {
        T::one() - ss_res / syy
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0f64).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_precision() {
        let f = least_squares(&[0.0f32, 2.0], &[1.0, 2.0]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-6);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(least_squares(&[1.0, 1.0], &[0.0, 2.0]).is_err());
        assert!(least_squares(&[1.0], &[0.0]).is_err());
        assert!(least_squares(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn constant_y_has_zero_slope_and_unit_r2() {
        let f = least_squares(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r_squared, 1.0);
    }
}
