use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{cohens_d_from_stats, delta_threshold_from_stats, SampleStats};
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Outcome of comparing a pre-trained model (first sample) against a MAML
/// model (second sample).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "H0_no_diff")]
    H0NoDiff,
    #[serde(rename = "H1_pt")]
    H1Pt,
    #[serde(rename = "H1_maml")]
    H1Maml,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::H0NoDiff, Verdict::H1Pt, Verdict::H1Maml];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::H0NoDiff => "H0_no_diff",
            Verdict::H1Pt => "H1_pt",
            Verdict::H1Maml => "H1_maml",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The verdict with the roles of the two samples exchanged.
    pub fn swapped(self) -> Verdict {
        match self {
            Verdict::H0NoDiff => Verdict::H0NoDiff,
            Verdict::H1Pt => Verdict::H1Maml,
            Verdict::H1Maml => Verdict::H1Pt,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    /// Accepts the canonical tokens as well as the looser spellings used in
    /// published tables ("H0 (no diff.)", "H1 maml10", "H1 (pt)", ...).
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if norm.starts_with("h0") {
            Ok(Verdict::H0NoDiff)
        } else if norm.starts_with("h1pt") {
            Ok(Verdict::H1Pt)
        } else if norm.starts_with("h1maml") {
            Ok(Verdict::H1Maml)
        } else {
            Err(Error::Table(format!("unrecognised verdict {s:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MamlVariant {
    Maml5,
    Maml10,
    Other,
}

impl MamlVariant {
    pub fn from_steps(steps: usize) -> Self {
        match steps {
            5 => MamlVariant::Maml5,
            10 => MamlVariant::Maml10,
            _ => MamlVariant::Other,
        }
    }
}

/// Effect-size decision between a PT sample and a MAML sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub effect_size: f64,
    pub delta: f64,
    pub maml_variant: MamlVariant,
}

/// Three-way rule: H0 when `es ∈ [−δ, δ]` (closed), otherwise the sign
/// of `es` picks the winner.
pub fn decide_from_es(es: f64, delta: f64) -> Result<Verdict> {
    if delta.is_nan() || delta < 0.0 || !es.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite effect size and delta >= 0, got es={es}, delta={delta}"
        )));
    }
    Ok(if es > delta {
        Verdict::H1Pt
    } else if es < -delta {
        Verdict::H1Maml
    } else {
        Verdict::H0NoDiff
    })
}

/// Effect-size decision for raw accuracy samples.
pub fn decide_es(pt: &[f64], maml: &[f64], variant: MamlVariant) -> Result<Decision> {
    let a = SampleStats::from_sample(pt)?;
    let b = SampleStats::from_sample(maml)?;
    let effect_size = cohens_d_from_stats(&a, &b)?;
    let delta = delta_threshold_from_stats(&a, &b)?;
    Ok(Decision {
        verdict: decide_from_es(effect_size, delta)?,
        effect_size,
        delta,
        maml_variant: variant,
    })
}

/// Normal-approximation 95% interval `mean ± 1.96·sd/√n`.
pub fn confidence_interval(xs: &[f64]) -> Result<(f64, f64)> {
    let s = SampleStats::from_sample(xs)?;
    let hw = Z_95 * s.sd / (s.n as f64).sqrt();
    Ok((s.mean - hw, s.mean + hw))
}

/// Length of the intersection of two intervals, 0 when disjoint.
pub fn ci_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Confidence-interval decision between a PT sample and a MAML sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiDecision {
    pub verdict: Verdict,
    pub pt_ci: (f64, f64),
    pub maml_ci: (f64, f64),
    pub overlap: f64,
    pub overlap_threshold: f64,
    pub maml_variant: MamlVariant,
}

/// H0 when the two 95% intervals overlap by more than
/// `overlap_threshold` (accuracy units); otherwise the sign of the mean
/// difference decides. A threshold of 0 is the plain no-overlap rule.
pub fn decide_ci(
    pt: &[f64],
    maml: &[f64],
    overlap_threshold: f64,
    variant: MamlVariant,
) -> Result<CiDecision> {
    if overlap_threshold.is_nan() || overlap_threshold < 0.0 {
        return Err(Error::InvalidArgument(
            "overlap threshold must be >= 0".into(),
        ));
    }
    let pt_ci = confidence_interval(pt)?;
    let maml_ci = confidence_interval(maml)?;
    let overlap = ci_overlap(pt_ci, maml_ci);
    let diff = (pt_ci.0 + pt_ci.1) - (maml_ci.0 + maml_ci.1);
    let verdict = if overlap > overlap_threshold || diff == 0.0 {
        Verdict::H0NoDiff
    } else if diff > 0.0 {
        Verdict::H1Pt
    } else {
        Verdict::H1Maml
    };
    Ok(CiDecision {
        verdict,
        pt_ci,
        maml_ci,
        overlap,
        overlap_threshold,
        maml_variant: variant,
    })
}
