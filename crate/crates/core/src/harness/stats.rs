//! Interval estimates and the two hypothesis tests the harness reports.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Wilson score interval for a binomial proportion.
pub fn wilson(successes: usize, trials: usize, z: f64) -> Proportion {
    if trials == 0 {
        return Proportion {
            successes,
            trials,
            estimate: f64::NAN,
            lower: 0.0,
            upper: 1.0,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Proportion {
        successes,
        trials,
        estimate: p,
        lower: (centre - half).max(0.0),
        upper: (centre + half).min(1.0),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn std_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (var / values.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "first sample tends to be larger".
    pub p_value: f64,
}

/// One-sided Wilcoxon rank-sum (Mann-Whitney) test with tie correction and
/// the normal approximation.
pub fn rank_sum_greater(first: &[f64], second: &[f64]) -> Result<RankSumTest> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::invalid("rank-sum test needs two non-empty samples"));
    }
    if first.iter().chain(second).any(|v| v.is_nan()) {
        return Err(Error::invalid("rank-sum test got NaN"));
    }
    let mut pooled: Vec<(f64, bool)> = first
        .iter()
        .map(|&v| (v, true))
        .chain(second.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = pooled.len() as f64;
    let mut rank_first = 0.0;
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < pooled.len() {
        let end = start + pooled[start..].iter().take_while(|p| p.0 == pooled[start].0).count();
        let ties = (end - start) as f64;
        // Ranks start + 1 ..= end share their average.
        let avg = (start + 1 + end) as f64 / 2.0;
        rank_first += avg * pooled[start..end].iter().filter(|p| p.1).count() as f64;
        tie_term += ties.powi(3) - ties;
        start = end;
    }
    let (n1, n2) = (first.len() as f64, second.len() as f64);
    let u = rank_first - n1 * (n1 + 1.0) / 2.0;
    let centre = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if var <= 0.0 {
        return Ok(RankSumTest { u, z: 0.0, p_value: 1.0 });
    }
    let z = (u - centre - 0.5) / var.sqrt();
    let normal = Normal::standard();
    Ok(RankSumTest {
        u,
        z,
        p_value: normal.sf(z),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `observed` counts against `probabilities`.
pub fn chi_square_gof(observed: &[u64], probabilities: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probabilities.len() || observed.len() < 2 {
        return Err(Error::invalid("need matching count and probability vectors of length >= 2"));
    }
    if probabilities.iter().any(|&p| p <= 0.0) {
        return Err(Error::invalid("every category needs positive probability"));
    }
    let total: u64 = observed.iter().sum();
    let statistic = observed
        .iter()
        .zip(probabilities)
        .map(|(&o, &p)| {
            let expected = p * total as f64;
            (o as f64 - expected).powi(2) / expected
        })
        .sum();
    let degrees_of_freedom = observed.len() - 1;
    let dist = ChiSquared::new(degrees_of_freedom as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        degrees_of_freedom,
        p_value: dist.sf(statistic),
    })
}
