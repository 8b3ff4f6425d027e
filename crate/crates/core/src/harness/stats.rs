//! Summary statistics for replicated experiments.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Sample mean and its standard error (`s / √n`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            count: 0,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    MeanSe { mean, se, count: n }
}

/// `√(a.se² + b.se²)`.
pub fn pooled_se(a: &MeanSe, b: &MeanSe) -> f64 {
    a.se.hypot(b.se)
}

/// Least-squares line `y = intercept + slope x` with a two-sided confidence
/// interval for the slope.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// OLS fit; the interval uses Student-t with `n - 2` degrees of freedom and
/// collapses to the point estimate when `n = 2`.
pub fn ols(x: &[f64], y: &[f64], level: f64) -> Option<SlopeFit> {
    let n = x.len();
    if n < 2 || y.len() != n || x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (ci_low, ci_high) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        (slope - t * se, slope + t * se)
    } else {
        (slope, slope)
    };
    Some(SlopeFit {
        slope,
        intercept,
        ci_low,
        ci_high,
        level,
    })
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Monotone-decrease verdict for per-`N` means.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DecreaseCheck {
    /// Every mean below the previous one.
    pub strictly_decreasing: bool,
    /// `mean_first - mean_last` over `√(se_first² + se_last²)`.
    pub endpoint_z: f64,
    /// `endpoint_z > 2`.
    pub significant: bool,
}

pub fn decrease_check(levels: &[MeanSe]) -> DecreaseCheck {
    let strictly_decreasing = levels.windows(2).all(|w| w[1].mean < w[0].mean);
    let (first, last) = (levels.first(), levels.last());
    let endpoint_z = match (first, last) {
        (Some(a), Some(b)) if levels.len() >= 2 => {
            let pooled = pooled_se(a, b);
            let drop = a.mean - b.mean;
            if pooled > 0.0 {
                drop / pooled
            } else if drop > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        }
        _ => f64::NAN,
    };
    DecreaseCheck {
        strictly_decreasing,
        endpoint_z,
        significant: endpoint_z > 2.0,
    }
}
