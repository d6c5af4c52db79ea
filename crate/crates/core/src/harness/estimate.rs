//! Self-normalized ratio estimates with jackknife errors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// `Σ wᵢhᵢ / Σ wᵢ` with the delete-one jackknife standard error.
pub fn ratio_jackknife(weights: &[f64], values: &[f64]) -> Estimate {
    assert_eq!(weights.len(), values.len());
    let m = weights.len();
    let sw: f64 = weights.iter().sum();
    let swh: f64 = weights.iter().zip(values).map(|(w, h)| w * h).sum();
    let value = swh / sw;
    if m < 2 {
        return Estimate {
            value,
            se: f64::NAN,
        };
    }
    let loo = |i: usize| (swh - weights[i] * values[i]) / (sw - weights[i]);
    let mean: f64 = (0..m).map(loo).sum::<f64>() / m as f64;
    let ss: f64 = (0..m).map(|i| (loo(i) - mean).powi(2)).sum();
    Estimate {
        value,
        se: ((m - 1) as f64 / m as f64 * ss).sqrt(),
    }
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> Estimate {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Estimate {
        value: mean,
        se: (var / m).sqrt(),
    }
}

/// Sample covariance with a delta-method standard error.
pub fn covariance(x: &[f64], y: &[f64]) -> Estimate {
    assert_eq!(x.len(), y.len());
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let e = mean_se(&prods);
    Estimate {
        value: e.value * m / (m - 1.0),
        se: e.se,
    }
}

/// `(a − b) / √(σ_a² + σ_b²)`; zero when the difference vanishes.
pub fn z_score(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let diff = a - b;
    let denom = (se_a * se_a + se_b * se_b).sqrt();
    if diff.abs() <= 1e-14 * (1.0 + b.abs()) {
        0.0
    } else if denom > 0.0 {
        diff / denom
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    s * s / s2
}
