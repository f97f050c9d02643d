use serde::{Deserialize, Serialize};

use super::{make_source, Benchmark, SplitFractions};
use crate::error::{ensure, Result};
use crate::rng::child_seed;

/// Serializable description of a synthetic benchmark.
///
/// Source `s` draws its class means from `child_seed(seed, s)` and is
/// then translated by `translation` along input axis `s`, so distinct
/// sources sit `translation·√2` apart. `sources = 1` is the low-diversity
/// preset; 2–5 sources give the high-diversity presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    #[serde(default = "defaults::sources")]
    pub sources: usize,
    #[serde(default = "defaults::classes_per_source")]
    pub classes_per_source: usize,
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    #[serde(default = "defaults::mean_scale")]
    pub mean_scale: f64,
    #[serde(default = "defaults::spread")]
    pub spread: f64,
    #[serde(default = "defaults::translation")]
    pub translation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub splits: SplitFractions,
}

mod defaults {
    pub fn sources() -> usize {
        1
    }
    pub fn classes_per_source() -> usize {
        25
    }
    pub fn input_dim() -> usize {
        16
    }
    pub fn mean_scale() -> f64 {
        1.0
    }
    pub fn spread() -> f64 {
        1.0
    }
    pub fn translation() -> f64 {
        6.0
    }
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            sources: defaults::sources(),
            classes_per_source: defaults::classes_per_source(),
            input_dim: defaults::input_dim(),
            mean_scale: defaults::mean_scale(),
            spread: defaults::spread(),
            translation: defaults::translation(),
            seed: 0,
            splits: SplitFractions::default(),
        }
    }
}

impl BenchmarkSpec {
    pub fn low_diversity(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn high_diversity(seed: u64, sources: usize) -> Self {
        Self {
            seed,
            sources,
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<Benchmark> {
        ensure(self.sources >= 1, || {
            "a benchmark needs at least one source".into()
        })?;
        ensure(self.sources <= self.input_dim, || {
            format!(
                "{} sources cannot be translated along distinct axes of a {}-dim input",
                self.sources, self.input_dim
            )
        })?;
        let mut parts = Vec::with_capacity(self.sources);
        for s in 0..self.sources {
            let mut shift = vec![0.0; self.input_dim];
            shift[s] = self.translation;
            let src = make_source(
                child_seed(self.seed, s as u64),
                self.classes_per_source,
                self.input_dim,
                self.mean_scale,
                self.spread,
            )?
            .translated(&shift)?
            .named(format!("src{s}"));
            parts.push(Benchmark::with_split(src, self.splits)?);
        }
        Benchmark::union_all(&parts, self.input_dim)
    }
}
