use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Verdict;

/// Verdict counts and the mean effect size inside each verdict bucket.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    /// Indexed by [`Verdict::index`].
    pub counts: [usize; 3],
    /// `None` when the bucket is empty ("no data").
    pub mean_effect: [Option<f64>; 3],
    /// Mean effect size over every H1 decision (either direction).
    pub h1_mean_effect: Option<f64>,
}

impl BucketSummary {
    pub fn count(&self, v: Verdict) -> usize {
        self.counts[v.index()]
    }

    pub fn mean(&self, v: Verdict) -> Option<f64> {
        self.mean_effect[v.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Summarise `(verdict, effect size)` pairs.
pub fn summarize<I>(decisions: I) -> BucketSummary
where
    I: IntoIterator<Item = (Verdict, f64)>,
{
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (v, es) in decisions {
        sums[v.index()] += es;
        counts[v.index()] += 1;
    }
    let mut mean_effect = [None; 3];
    for i in 0..3 {
        if counts[i] > 0 {
            mean_effect[i] = Some(sums[i] / counts[i] as f64);
        }
    }
    let h1 = counts[1] + counts[2];
    BucketSummary {
        counts,
        mean_effect,
        h1_mean_effect: (h1 > 0).then(|| (sums[1] + sums[2]) / h1 as f64),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary<K> {
    pub key: K,
    pub summary: BucketSummary,
}

/// Summarise per group key; groups come back in key order.
pub fn summarize_by<K, I>(decisions: I) -> Vec<GroupSummary<K>>
where
    K: Ord + Clone,
    I: IntoIterator<Item = (K, Verdict, f64)>,
{
    let mut groups: BTreeMap<K, Vec<(Verdict, f64)>> = BTreeMap::new();
    for (k, v, es) in decisions {
        groups.entry(k).or_default().push((v, es));
    }
    groups
        .into_iter()
        .map(|(key, rows)| GroupSummary {
            key,
            summary: summarize(rows),
        })
        .collect()
}
