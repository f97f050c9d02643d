//! Synthetic few-shot benchmarks.
//!
//! A [`Source`] is a set of isotropic Gaussian class-conditionals. A
//! [`Benchmark`] is a list of sources under one contiguous global label
//! space, with every source's classes divided into train/val/test pools.
//! Episodes ([`FewShotTask`]) and flat supervised datasets are drawn from
//! a benchmark with explicit seeds.

mod spec;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::Batch;

pub use spec::BenchmarkSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub name: String,
    /// One row per class.
    pub class_means: Array2<f64>,
    pub class_spread: f64,
}

impl Source {
    pub fn num_classes(&self) -> usize {
        self.class_means.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.class_means.ncols()
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Shift every class mean by `t`.
    pub fn translated(&self, t: &[f64]) -> Result<Source> {
        ensure(t.len() == self.input_dim(), || {
            format!(
                "translation of length {} for dimension {}",
                t.len(),
                self.input_dim()
            )
        })?;
        let shift = ArrayView1::from(t);
        let mut out = self.clone();
        for mut row in out.class_means.rows_mut() {
            row += &shift;
        }
        Ok(out)
    }
}

/// Class means drawn as `mean_scale · N(0, I)` from a ChaCha20 stream
/// seeded with `seed`, row by row.
pub fn make_source(
    seed: u64,
    num_classes: usize,
    input_dim: usize,
    mean_scale: f64,
    class_spread: f64,
) -> Result<Source> {
    ensure(num_classes >= 2, || {
        format!("need at least 2 classes, got {num_classes}")
    })?;
    ensure(input_dim >= 1, || "input_dim must be positive".into())?;
    ensure(mean_scale >= 0.0 && mean_scale.is_finite(), || {
        format!("mean_scale must be finite and >= 0, got {mean_scale}")
    })?;
    ensure(class_spread >= 0.0 && class_spread.is_finite(), || {
        format!("class_spread must be finite and >= 0, got {class_spread}")
    })?;
    let mut rng = rng_from_seed(seed);
    let class_means = Array2::from_shape_simple_fn((num_classes, input_dim), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        mean_scale * z
    });
    Ok(Source {
        name: format!("source-{seed}"),
        class_means,
        class_spread,
    })
}

/// Mean Euclidean distance between all cross pairs of class means, in
/// units of the sources' root-mean-square spread.
pub fn ground_truth_divergence(a: &Source, b: &Source) -> Result<f64> {
    ensure(a.input_dim() == b.input_dim(), || {
        format!("input dims differ: {} vs {}", a.input_dim(), b.input_dim())
    })?;
    let spread = ((a.class_spread.powi(2) + b.class_spread.powi(2)) / 2.0).sqrt();
    ensure(spread > 0.0, || {
        "divergence needs a positive class spread".into()
    })?;
    let mut dists = Vec::with_capacity(a.num_classes() * b.num_classes());
    for ma in a.class_means.rows() {
        for mb in b.class_means.rows() {
            dists.push((&ma - &mb).mapv(|x| x * x).sum().sqrt());
        }
    }
    // summing in sorted order makes the result independent of argument order
    dists.sort_by(f64::total_cmp);
    Ok(dists.iter().sum::<f64>() / dists.len() as f64 / spread)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn index(self) -> usize {
        self as usize
    }
}

/// Fractions of each source's classes assigned to train and validation;
/// the rest go to test. Counts are rounded to the nearest integer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.64,
            val: 0.16,
        }
    }
}

impl SplitFractions {
    pub fn all_train() -> Self {
        Self {
            train: 1.0,
            val: 0.0,
        }
    }

    fn counts(&self, n: usize) -> Result<[usize; 3]> {
        ensure(
            self.train >= 0.0 && self.val >= 0.0 && self.train + self.val <= 1.0 + 1e-12,
            || format!("invalid split fractions {self:?}"),
        )?;
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        Ok([train, val, n - train - val])
    }
}

/// Where a global label comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalClass {
    pub source: usize,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    input_dim: usize,
    sources: Vec<Source>,
    /// Indexed by global label.
    labels: Vec<GlobalClass>,
    /// Global labels in the train, val and test pools.
    pools: [Vec<usize>; 3],
}

impl Benchmark {
    pub fn empty(input_dim: usize) -> Self {
        Self {
            input_dim,
            sources: Vec::new(),
            labels: Vec::new(),
            pools: Default::default(),
        }
    }

    /// One source with the default 64/16/20 class split.
    pub fn from_source(source: Source) -> Self {
        Self::with_split(source, SplitFractions::default()).expect("default split is valid")
    }

    /// One source; the first classes go to train, then val, then test.
    pub fn with_split(source: Source, fractions: SplitFractions) -> Result<Self> {
        let n = source.num_classes();
        let [train, val, _] = fractions.counts(n)?;
        let labels = (0..n)
            .map(|class| GlobalClass { source: 0, class })
            .collect();
        Ok(Self {
            input_dim: source.input_dim(),
            sources: vec![source],
            labels,
            pools: [
                (0..train).collect(),
                (train..train + val).collect(),
                (train + val..n).collect(),
            ],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn total_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_table(&self) -> &[GlobalClass] {
        &self.labels
    }

    pub fn pool(&self, split: Split) -> &[usize] {
        &self.pools[split.index()]
    }

    pub fn class_of(&self, global: usize) -> GlobalClass {
        self.labels[global]
    }

    pub fn global_label(&self, source: usize, class: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|g| g.source == source && g.class == class)
    }

    fn mean_of(&self, global: usize) -> (ArrayView1<'_, f64>, f64) {
        let g = self.labels[global];
        let src = &self.sources[g.source];
        (src.class_means.row(g.class), src.class_spread)
    }

    /// Concatenate sources; `other`'s global labels are offset by this
    /// benchmark's class count and pools are merged pool-wise.
    pub fn union(&self, other: &Benchmark) -> Result<Benchmark> {
        ensure(self.input_dim == other.input_dim, || {
            format!(
                "input dims differ: {} vs {}",
                self.input_dim, other.input_dim
            )
        })?;
        let offset = self.labels.len();
        let src_offset = self.sources.len();
        let mut out = self.clone();
        out.sources.extend(other.sources.iter().cloned());
        out.labels.extend(other.labels.iter().map(|g| GlobalClass {
            source: g.source + src_offset,
            class: g.class,
        }));
        for (dst, src) in out.pools.iter_mut().zip(&other.pools) {
            dst.extend(src.iter().map(|l| l + offset));
        }
        Ok(out)
    }

    pub fn union_all<'a>(
        parts: impl IntoIterator<Item = &'a Benchmark>,
        input_dim: usize,
    ) -> Result<Benchmark> {
        parts
            .into_iter()
            .try_fold(Benchmark::empty(input_dim), |acc, b| acc.union(b))
    }
}

/// Free-function form of [`Benchmark::union`].
pub fn union(a: &Benchmark, b: &Benchmark) -> Result<Benchmark> {
    a.union(b)
}

/// One n-way k-shot episode. Local label `c` in both sets stands for
/// global class `classes[c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    /// Seed the task was drawn with; identifies it within a benchmark.
    pub id: u64,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub support: Batch,
    pub query: Batch,
    pub classes: Vec<usize>,
    pub source_ids: Vec<usize>,
}

impl FewShotTask {
    /// Support and query stacked, the data a task embedding is computed on.
    pub fn all_examples(&self) -> Batch {
        self.support
            .concat(&self.query)
            .expect("support and query share a width")
    }

    /// The source every class comes from, if they agree.
    pub fn single_source(&self) -> Option<usize> {
        let first = *self.source_ids.first()?;
        self.source_ids.iter().all(|&s| s == first).then_some(first)
    }
}

fn draw_rows(
    rng: &mut Rng,
    mean: ArrayView1<'_, f64>,
    spread: f64,
    count: usize,
    out: &mut Vec<f64>,
) {
    for _ in 0..count {
        for &m in mean.iter() {
            let z: f64 = StandardNormal.sample(rng);
            out.push(m + spread * z);
        }
    }
}

fn sample_from_pool(
    benchmark: &Benchmark,
    pool: &[usize],
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
) -> Result<FewShotTask> {
    ensure(n_way >= 1 && k_shot >= 1, || {
        format!("need n_way >= 1 and k_shot >= 1, got {n_way}-way {k_shot}-shot")
    })?;
    ensure(pool.len() >= n_way, || {
        format!(
            "{n_way}-way task needs {n_way} classes but the pool has {}",
            pool.len()
        )
    })?;
    let mut rng = rng_from_seed(seed);
    let picks = index::sample(&mut rng, pool.len(), n_way);
    let classes: Vec<usize> = picks.iter().map(|i| pool[i]).collect();
    let d = benchmark.input_dim;
    let mut sup = Vec::with_capacity(n_way * k_shot * d);
    let mut qry = Vec::with_capacity(n_way * q_query * d);
    for &g in &classes {
        let (mean, spread) = benchmark.mean_of(g);
        draw_rows(&mut rng, mean, spread, k_shot, &mut sup);
        draw_rows(&mut rng, mean, spread, q_query, &mut qry);
    }
    let labels = |per: usize| {
        (0..n_way)
            .flat_map(|c| std::iter::repeat_n(c, per))
            .collect()
    };
    let support = Batch::new(
        Array2::from_shape_vec((n_way * k_shot, d), sup).expect("support shape"),
        labels(k_shot),
    )?;
    let query = Batch::new(
        Array2::from_shape_vec((n_way * q_query, d), qry).expect("query shape"),
        labels(q_query),
    )?;
    Ok(FewShotTask {
        id: seed,
        n_way,
        k_shot,
        q_query,
        support,
        query,
        source_ids: classes
            .iter()
            .map(|&g| benchmark.labels[g].source)
            .collect(),
        classes,
    })
}

/// Draw an episode: `n_way` classes without replacement from the split's
/// pool, then `k_shot` support and `q_query` query examples per class.
pub fn sample_task(
    benchmark: &Benchmark,
    split: Split,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
) -> Result<FewShotTask> {
    sample_from_pool(
        benchmark,
        benchmark.pool(split),
        n_way,
        k_shot,
        q_query,
        seed,
    )
}

/// Like [`sample_task`] but with every class taken from one source.
pub fn sample_task_from_source(
    benchmark: &Benchmark,
    split: Split,
    source: usize,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    seed: u64,
) -> Result<FewShotTask> {
    ensure(source < benchmark.sources.len(), || {
        format!("no source {source}")
    })?;
    let pool: Vec<usize> = benchmark
        .pool(split)
        .iter()
        .copied()
        .filter(|&g| benchmark.labels[g].source == source)
        .collect();
    sample_from_pool(benchmark, &pool, n_way, k_shot, q_query, seed)
}

/// Flat supervised data over every class of the split, labelled with
/// global labels, `examples_per_class` rows per class in pool order.
pub fn union_dataset(
    benchmark: &Benchmark,
    split: Split,
    examples_per_class: usize,
    seed: u64,
) -> Result<Batch> {
    ensure(examples_per_class >= 1, || {
        "examples_per_class must be >= 1".into()
    })?;
    let pool = benchmark.pool(split);
    ensure(!pool.is_empty(), || format!("the {split:?} pool is empty"))?;
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(pool.len() * examples_per_class * benchmark.input_dim);
    let mut labels = Vec::with_capacity(pool.len() * examples_per_class);
    for &g in pool {
        let (mean, spread) = benchmark.mean_of(g);
        draw_rows(&mut rng, mean, spread, examples_per_class, &mut rows);
        labels.extend(std::iter::repeat_n(g, examples_per_class));
    }
    Batch::new(
        Array2::from_shape_vec((labels.len(), benchmark.input_dim), rows)
            .map_err(|e| Error::Shape(e.to_string()))?,
        labels,
    )
}

/// Per-class empirical means of a labelled batch, for classes present.
pub fn empirical_class_means(batch: &Batch, num_classes: usize) -> Vec<Option<Array1<f64>>> {
    let mut sums = vec![Array1::<f64>::zeros(batch.input_dim()); num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in batch.inputs.rows().into_iter().zip(&batch.labels) {
        sums[y] += &row;
        counts[y] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect()
}
