//! Per-user attitude, polarity and the `μ ± kσ` bias rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: f64 = 3.0;

/// How post scores are folded into one attitude value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeMode {
    /// Plain sum of the user's scores.
    #[default]
    Sum,
    /// Sum divided by the number of posts.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    OverlyNegative,
    Normal,
    OverlyPositive,
}

impl Bias {
    pub fn is_biased(self) -> bool {
        self != Bias::Normal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bias::OverlyPositive => "overly_positive",
            Bias::OverlyNegative => "overly_negative",
            Bias::Normal => "normal",
        }
    }
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Bias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bias {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overly_positive" => Ok(Bias::OverlyPositive),
            "overly_negative" => Ok(Bias::OverlyNegative),
            "normal" => Ok(Bias::Normal),
            other => Err(Error::Config(format!("unknown bias label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeRecord {
    pub user_id: String,
    pub attitude: f64,
    pub polarity: Polarity,
    pub bias: Bias,
}

/// Population statistics of the attitude distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub mean: f64,
    /// Population standard deviation (divisor `N`).
    pub std_dev: f64,
    pub k: f64,
    pub n_users: usize,
}

impl DistributionStats {
    pub fn upper(&self) -> f64 {
        self.mean + self.k * self.std_dev
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.k * self.std_dev
    }
}

pub fn aggregate_attitude(scores: &[f64]) -> f64 {
    scores.iter().sum()
}

pub fn aggregate_with_mode(scores: &[f64], mode: AttitudeMode) -> f64 {
    match mode {
        AttitudeMode::Sum => aggregate_attitude(scores),
        AttitudeMode::Mean if scores.is_empty() => 0.0,
        AttitudeMode::Mean => aggregate_attitude(scores) / scores.len() as f64,
    }
}

pub fn classify_polarity(a: f64) -> Polarity {
    if a > 0.0 {
        Polarity::Positive
    } else if a < 0.0 {
        Polarity::Negative
    } else {
        Polarity::Neutral
    }
}

pub fn fit_stats(attitudes: &[f64], k: f64) -> Result<DistributionStats> {
    if attitudes.is_empty() {
        return Err(Error::NoUsers);
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidConfig(format!("k must be positive, got {k}")));
    }
    let n = attitudes.len() as f64;
    let mean = attitudes.iter().sum::<f64>() / n;
    let var = attitudes.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok(DistributionStats {
        mean,
        std_dev: var.sqrt(),
        k,
        n_users: attitudes.len(),
    })
}

/// Both boundaries are inclusive: `a ≥ μ+kσ` is overly positive, `a ≤ μ−kσ`
/// overly negative. With `σ = 0`, `a = μ` hits the upper test first.
pub fn label_bias(a: f64, stats: &DistributionStats) -> Bias {
    if a >= stats.upper() {
        Bias::OverlyPositive
    } else if a <= stats.lower() {
        Bias::OverlyNegative
    } else {
        Bias::Normal
    }
}

/// Fit the population and label every `(user_id, attitude)` pair.
pub fn label_population(
    attitudes: &[(String, f64)],
    k: f64,
) -> Result<(Vec<AttitudeRecord>, DistributionStats)> {
    let values: Vec<f64> = attitudes.iter().map(|(_, a)| *a).collect();
    let stats = fit_stats(&values, k)?;
    let records = attitudes
        .iter()
        .map(|(id, a)| AttitudeRecord {
            user_id: id.clone(),
            attitude: *a,
            polarity: classify_polarity(*a),
            bias: label_bias(*a, &stats),
        })
        .collect();
    Ok((records, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the maximum falls in the last bin.
/// A zero-width range falls back to bins of width 1 starting at the value.
pub fn histogram(attitudes: &[f64], n_bins: usize) -> Result<Vec<HistogramBin>> {
    if attitudes.is_empty() {
        return Err(Error::EmptyInput("histogram of no values"));
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let min = attitudes.iter().copied().fold(f64::INFINITY, f64::min);
    let max = attitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min {
        (max - min) / n_bins as f64
    } else {
        1.0
    };
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            low: min + i as f64 * width,
            high: if i + 1 == n_bins && max > min {
                max
            } else {
                min + (i + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &a in attitudes {
        let idx = (((a - min) / width).floor() as usize).min(n_bins - 1);
        bins[idx].count += 1;
    }
    Ok(bins)
}
