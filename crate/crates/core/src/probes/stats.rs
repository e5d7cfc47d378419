//! Confidence intervals, exponential fits and trend audits.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// A point estimate with its 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(deserialize_with = "nan_if_null")]
    pub value: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub half_width: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub lo: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub hi: f64,
}

// JSON writes non-finite numbers as null
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl Estimate {
    pub fn new(value: f64, half_width: f64) -> Self {
        Self {
            value,
            half_width,
            lo: value - half_width,
            hi: value + half_width,
        }
    }

    /// Deterministic quantity.
    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Sample mean with a 95% half-width from the sample standard deviation.
pub fn mean_ci(xs: &[f64]) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate::new(mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Estimate::new(mean, Z95 * (var / n as f64).sqrt())
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize) -> Estimate {
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Estimate {
        value: p,
        half_width: half,
        lo: if k == 0 { 0.0 } else { (centre - half).max(0.0) },
        hi: if k == n { 1.0 } else { (centre + half).min(1.0) },
    }
}

/// Least-squares fit y = a + b x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Fit y ~ C e^{-c t} on the positive points; returns (C, c).
pub fn exp_fit(ts: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let (t, l): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0 && y.is_finite())
        .map(|(&t, &y)| (t, y.ln()))
        .unzip();
    if t.len() < 2 {
        return None;
    }
    let (a, b) = linear_fit(&t, &l);
    Some((a.exp(), -b))
}

/// Decay rate of a mean series, with a half-width from refitting the
/// upper and lower 95% bands.
pub fn rate_estimate(ts: &[f64], means: &[Estimate]) -> Option<Estimate> {
    let mid: Vec<f64> = means.iter().map(|e| e.value).collect();
    let (_, c) = exp_fit(ts, &mid)?;
    let up: Vec<f64> = means.iter().map(|e| e.hi).collect();
    let lo: Vec<f64> = means.iter().map(|e| e.lo).collect();
    let spread = match (exp_fit(ts, &up), exp_fit(ts, &lo)) {
        (Some((_, a)), Some((_, b))) => 0.5 * (a - b).abs(),
        _ => f64::INFINITY,
    };
    Some(Estimate::new(c, spread))
}

/// Lag-k autocorrelation of a series.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum();
    cov / var
}

/// (max - min) / max of positive values.
pub fn relative_spread(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo) / hi
}

/// Strictly decreasing along the slice, allowing at most one inversion and
/// only between overlapping intervals.
pub fn decreasing_with_tolerance(es: &[Estimate]) -> bool {
    let mut inversions = 0;
    for w in es.windows(2) {
        if w[1].value >= w[0].value {
            if !w[0].overlaps(&w[1]) {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}
