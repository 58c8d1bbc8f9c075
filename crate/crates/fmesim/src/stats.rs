use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("a confidence interval needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ci {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Student-t interval `mean ± t(n-1) * s / sqrt(n)`.
pub fn summarize_ci(samples: &[f64], level: f64) -> Result<Ci, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Level(level));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(Ci { mean, lo: mean, hi: mean });
    }
    let t = t_quantile(n - 1, level);
    let half = t * (var / n as f64).sqrt();
    Ok(Ci { mean, lo: mean - half, hi: mean + half })
}

/// Two-sided multiplier for `level` with `df` degrees of freedom.
pub fn t_quantile(df: usize, level: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1").inverse_cdf(0.5 + level / 2.0)
}
