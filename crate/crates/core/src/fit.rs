//! Least-squares fits of exponential rates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFit {
    /// Slope of `ln y` against `t`.
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual in log space.
    pub max_residual: f64,
}

/// Fits `ln y = intercept + slope t` by ordinary least squares.
pub fn log_slope_fit(t: &[f64], y: &[f64]) -> Result<LogFit> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: t.len(),
            got: y.len(),
            context: "log fit samples",
        });
    }
    if t.len() < 2 {
        return Err(Error::invalid("log fit needs at least two samples"));
    }
    if let Some(v) = y.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("log fit needs positive finite values, got {v}")));
    }
    let n = t.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let tm = t.iter().sum::<f64>() / n;
    let ym = ly.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|x| (x - tm) * (x - tm)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("log fit needs distinct abscissae"));
    }
    let sxy: f64 = t.iter().zip(&ly).map(|(x, v)| (x - tm) * (v - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let max_residual = t
        .iter()
        .zip(&ly)
        .map(|(x, v)| (v - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(LogFit {
        slope,
        intercept,
        max_residual,
    })
}

/// `n` equispaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_exponential() {
        let t = linspace(1.0, 5.0, 9);
        let y: Vec<f64> = t.iter().map(|s| 3.0 * (-2.5 * s).exp()).collect();
        let fit = log_slope_fit(&t, &y).unwrap();
        assert!((fit.slope + 2.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.max_residual < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(log_slope_fit(&[1.0], &[1.0]).is_err());
        assert!(log_slope_fit(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(log_slope_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(log_slope_fit(&[1.0, 2.0], &[1.0]).is_err());
    }
}
