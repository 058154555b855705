//! Significance tests and summaries for comparing model conditions.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Outcome of a two-sided t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Named per-unit scores of one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResults {
    pub condition: String,
    pub units: Vec<String>,
    pub scores: Vec<f64>,
}

impl ConditionResults {
    pub fn new(condition: impl Into<String>, units: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let condition = condition.into();
        if units.len() != scores.len() {
            return Err(Error::Data(format!(
                "{condition}: {} unit names for {} scores",
                units.len(),
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!(
                "{condition}: score for {} is not finite",
                units[i]
            )));
        }
        Ok(Self {
            condition,
            units,
            scores,
        })
    }

    /// Scores of `self` and `other` aligned on shared unit names, in the
    /// order of `self`.
    pub fn align(&self, other: &Self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.units.len() != other.units.len() {
            return Err(Error::Data(format!(
                "{} has {} units, {} has {}",
                self.condition,
                self.units.len(),
                other.condition,
                other.units.len()
            )));
        }
        let mut b = Vec::with_capacity(self.units.len());
        for u in &self.units {
            let j = other.units.iter().position(|v| v == u).ok_or_else(|| {
                Error::Data(format!("unit {u} missing from {}", other.condition))
            })?;
            b.push(other.scores[j]);
        }
        Ok((self.scores.clone(), b))
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with `n − 1` in the denominator.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn summarize(scores: &[f64]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::param("cannot summarize an empty score list"));
    }
    let n = scores.len();
    let std_error = if n == 1 {
        0.0
    } else {
        (variance(scores) / n as f64).sqrt()
    };
    Ok(Summary {
        n,
        mean: mean(scores),
        std_error,
    })
}

/// Linear interpolation between order statistics (`p` in percent).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::param("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::param(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired two-sided t-test on `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Statistics(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Statistics(format!("paired test needs at least 2 pairs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let var = variance(&d);
    if var == 0.0 || !var.is_finite() {
        return Err(Error::Statistics(
            "paired differences have zero variance; t is undefined".into(),
        ));
    }
    let t = mean(&d) / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        p: t_two_sided_p(t, (n - 1) as f64),
        df: n - 1,
    })
}

/// Unpaired two-sided t-test with pooled variance.
pub fn unpaired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "unpaired test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = a.len() + b.len() - 2;
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / df as f64;
    if pooled == 0.0 || !pooled.is_finite() {
        return Err(Error::Statistics("both groups have zero variance; t is undefined".into()));
    }
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TTest {
        t,
        p: t_two_sided_p(t, df as f64),
        df,
    })
}
