use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    /// Two-sided 95% interval for the slope.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl ExponentFit {
    pub fn contains(&self, slope: f64) -> bool {
        self.ci_low <= slope && slope <= self.ci_high
    }
}

/// Fits `y ≈ e^b x^slope` by OLS in log-log space.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 4 {
        return Err(Error::DegenerateFit(format!("{} points, need at least 4", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive point ({x}, {y})")));
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let std_err = (sse / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(ExponentFit {
        slope,
        intercept,
        std_err,
        ci_low: slope - t * std_err,
        ci_high: slope + t * std_err,
        n: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn powers(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (10..=16).map(|k| 2f64.powi(k)).map(|t| (t, f(t))).collect()
    }

    #[test]
    fn synthetic_power_laws() {
        let fit = fit_exponent(&powers(|t| 3.0 * t.sqrt())).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 3f64.ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(fit_exponent(&powers(|_| 7.0)).unwrap().slope, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit_exponent(&powers(|t| t)).unwrap().slope, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interval_matches_t_quantile() {
        // both ends lifted by the same factor, so the slope stays 1
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, x * if i % 3 == 0 { 1.1 } else { 1.0 }))
            .collect();
        let fit = fit_exponent(&pts).unwrap();
        assert!(fit.std_err > 0.0 && fit.contains(fit.slope));
        // 97.5% quantile of Student t with 2 degrees of freedom
        let half = (fit.ci_high - fit.ci_low) / 2.0;
        assert_abs_diff_eq!(half / fit.std_err, 4.302652729911275, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_exponent(&powers(|t| t)[..3]), Err(Error::DegenerateFit(_))));
        let mut pts = powers(|t| t);
        pts[2].1 = 0.0;
        assert!(matches!(fit_exponent(&pts), Err(Error::DegenerateFit(_))));
        pts[2].1 = -1.0;
        assert!(fit_exponent(&pts).is_err());
        assert!(fit_exponent(&[(2.0, 1.0); 5]).is_err());
    }
}
