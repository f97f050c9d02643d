//! Effect sizes and the decision rules built on them.
//!
//! All standard deviations are sample standard deviations (n − 1
//! denominator). The pooled standard deviation combines two samples as
//! `sqrt(((n1−1)s1² + (n2−1)s2²) / (n1+n2−2))`.

mod rules;
mod summary;
mod table;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use rules::{
    ci_overlap, confidence_interval, decide_ci, decide_es, decide_from_es, CiDecision, Decision,
    MamlVariant, Verdict, Z_95,
};
pub use summary::{summarize, summarize_by, BucketSummary, GroupSummary};
pub use table::{fmt_sig, read_decision_table, write_decision_table, DecisionRow};

/// Size, mean and sample standard deviation of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl SampleStats {
    pub fn from_sample(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "sample of size {} has no standard deviation",
                xs.len()
            )));
        }
        let n = xs.len() as f64;
        // shifted by the first value: exact for constant samples
        let x0 = xs[0];
        let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        Ok(Self {
            n: xs.len(),
            mean,
            sd: (ss / (n - 1.0)).sqrt(),
        })
    }

    /// Rebuild a sample summary from a printed `mean ± halfwidth` 95% interval.
    pub fn from_ci(mean: f64, halfwidth: f64, n: usize) -> Self {
        Self {
            n,
            mean,
            sd: halfwidth * (n as f64).sqrt() / Z_95,
        }
    }
}

pub fn pooled_std_from_stats(a: &SampleStats, b: &SampleStats) -> Result<f64> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::InvalidArgument(
            "pooled standard deviation needs n >= 2 in both samples".into(),
        ));
    }
    let num = (a.n - 1) as f64 * a.sd * a.sd + (b.n - 1) as f64 * b.sd * b.sd;
    Ok((num / (a.n + b.n - 2) as f64).sqrt())
}

pub fn pooled_std(a: &[f64], b: &[f64]) -> Result<f64> {
    pooled_std_from_stats(&SampleStats::from_sample(a)?, &SampleStats::from_sample(b)?)
}

fn nonzero_pooled(a: &SampleStats, b: &SampleStats) -> Result<f64> {
    let s = pooled_std_from_stats(a, b)?;
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::DegenerateSample(
            "pooled standard deviation is zero".into(),
        ))
    }
}

pub fn cohens_d_from_stats(a: &SampleStats, b: &SampleStats) -> Result<f64> {
    Ok((a.mean - b.mean) / nonzero_pooled(a, b)?)
}

/// Standardised mean difference `(mean(a) − mean(b)) / pooled_std(a, b)`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    cohens_d_from_stats(&SampleStats::from_sample(a)?, &SampleStats::from_sample(b)?)
}

/// The 1% threshold in effect-size units: `0.01 / pooled_std`.
pub fn delta_from_pooled(pooled: f64) -> Result<f64> {
    if pooled > 0.0 {
        Ok(0.01 / pooled)
    } else {
        Err(Error::DegenerateSample(
            "pooled standard deviation is zero".into(),
        ))
    }
}

pub fn delta_threshold_from_stats(a: &SampleStats, b: &SampleStats) -> Result<f64> {
    delta_from_pooled(nonzero_pooled(a, b)?)
}

pub fn delta_threshold(a: &[f64], b: &[f64]) -> Result<f64> {
    delta_threshold_from_stats(&SampleStats::from_sample(a)?, &SampleStats::from_sample(b)?)
}
