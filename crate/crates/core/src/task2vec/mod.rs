//! Task2Vec embeddings and the diversity coefficient.
//!
//! A task is embedded by the diagonal of the Fisher information of a fixed
//! probe network after refitting the probe's head to the task. The
//! expectation over labels is taken exactly under the model posterior:
//!
//! `F_jj = (1/N) Σ_i Σ_y p(y|x_i) (∂ log p(y|x_i) / ∂w_j)²`
//!
//! Only body parameters enter the embedding; the head is task specific.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::learners::{fit_head_with, train_pt, HeadFitOptions, Method, Model, TrainConfig};
use crate::rng::{child_seed, named_seed};
use crate::stats::Z_95;
use crate::tasks::{
    sample_task, sample_task_from_source, Benchmark, BenchmarkSpec, FewShotTask, Split,
};
use crate::tensor::{layer_activations, softmax_rows, Batch, NetSpec};

/// A frozen network used only to embed tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub model: Model,
    pub provenance: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Union pre-training on a separate pretext benchmark.
    #[default]
    Pretrained,
    /// Untrained weights, for ablations.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub pretext: BenchmarkSpec,
    pub train: TrainConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Pretrained,
            pretext: BenchmarkSpec {
                seed: 1_000_003,
                ..BenchmarkSpec::default()
            },
            train: TrainConfig {
                max_epochs: 150,
                ..TrainConfig::default()
            },
        }
    }
}

/// Train a probe by union pre-training on `pretext`.
pub fn build_probe(pretext: &Benchmark, config: &TrainConfig) -> Result<Probe> {
    let config = TrainConfig {
        method: Method::Pt,
        ..config.clone()
    };
    let out = train_pt(pretext, &config)?;
    Ok(Probe {
        provenance: format!(
            "pt on pretext benchmark ({} sources, {} classes), seed {}, {} epochs{}",
            pretext.sources().len(),
            pretext.total_classes(),
            config.seed,
            out.epochs,
            if out.converged { ", converged" } else { "" }
        ),
        model: out.model,
    })
}

/// An untrained probe with the same initialisation scheme as training.
pub fn random_probe(spec: NetSpec, seed: u64) -> Result<Probe> {
    Ok(Probe {
        provenance: format!("random init, seed {seed}"),
        model: Model::init(spec, seed)?,
    })
}

/// Build the probe a config describes.
pub fn probe_from_config(config: &ProbeConfig) -> Result<Probe> {
    let pretext = config.pretext.build()?;
    match config.kind {
        ProbeKind::Pretrained => build_probe(&pretext, &config.train),
        ProbeKind::Random => {
            let spec = NetSpec::new(
                pretext.input_dim(),
                config.train.hidden_dims.clone(),
                pretext.total_classes(),
            )?;
            random_probe(spec, config.train.seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEmbedding {
    pub fim_diag: Vec<f64>,
    pub task_id: u64,
    pub source_ids: Vec<usize>,
}

/// Exact diagonal Fisher information of `model` on `batch`, over all
/// parameters in layout order.
///
/// For class `y` the score of example `i` is backpropagated from
/// `e_y − p_i`; the squared weight gradient factorises as
/// `a_ij² · δ_ik²`, so the posterior-weighted sum over `y` reduces to
/// `(A²)ᵀ S` with `S = Σ_y p_y ⊙ δ_y²`.
pub fn fim_diagonal(model: &Model, batch: &Batch) -> Result<Vec<f64>> {
    ensure(!batch.is_empty(), || {
        "Fisher information needs at least one example".into()
    })?;
    let spec = &model.spec;
    let trace = layer_activations(spec, &model.params, &batch.inputs)?;
    let probs = softmax_rows(trace.logits());
    let n = batch.len();
    let layers = spec.num_layers();
    let weights: Vec<Array2<f64>> = (0..layers)
        .map(|l| {
            model
                .params
                .segment(&format!("layer{l}.weight"))
                .expect("layout")
                .to_owned()
        })
        .collect();
    let masks: Vec<Array2<f64>> = trace.pre[..layers - 1]
        .iter()
        .map(|z| z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
        .collect();

    let mut acc: Vec<Array2<f64>> = trace
        .pre
        .iter()
        .map(|z| Array2::zeros(z.raw_dim()))
        .collect();
    for y in 0..spec.output_dim {
        let mut delta = -&probs;
        delta.column_mut(y).mapv_inplace(|v| v + 1.0);
        let weight = probs.column(y).insert_axis(Axis(1)).to_owned();
        for l in (0..layers).rev() {
            acc[l] += &(&delta.mapv(|v| v * v) * &weight);
            if l > 0 {
                delta = delta.dot(&weights[l].t()) * &masks[l - 1];
            }
        }
    }

    let mut out: Vec<f64> = Vec::with_capacity(model.params.len());
    for (inputs, a) in trace.inputs.iter().zip(&acc) {
        let a2 = inputs.mapv(|v| v * v);
        let fw = a2.t().dot(a) / n as f64;
        let fb = a.sum_axis(Axis(0)) / n as f64;
        out.extend(fw.iter());
        out.extend(fb.iter());
    }
    if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
        // locate the first example whose own contribution is non-finite
        let example = (0..n)
            .find(|&i| {
                fim_diagonal(model, &batch.select(&[i]))
                    .map(|f| f.iter().any(|v| !v.is_finite()))
                    .unwrap_or(true)
            })
            .unwrap_or(pos % n);
        return Err(Error::NonFinite {
            location: format!("Fisher information of example {example}"),
        });
    }
    Ok(out)
}

/// Refit the probe's head to the task (support and query together) and
/// return the body part of the Fisher diagonal.
pub fn embed_task(probe: &Probe, task: &FewShotTask) -> Result<TaskEmbedding> {
    ensure(task.n_way >= 2, || {
        "a task embedding needs at least two classes".into()
    })?;
    let data = task.all_examples();
    let (model, _) = fit_head_with(
        &probe.model,
        &data,
        task.n_way,
        None,
        &HeadFitOptions::default(),
    )?;
    let mut fim = fim_diagonal(&model, &data)?;
    fim.truncate(model.head_boundary);
    Ok(TaskEmbedding {
        fim_diag: fim,
        task_id: task.id,
        source_ids: task.source_ids.clone(),
    })
}

/// `1 − a·b / (‖a‖‖b‖)`, clamped to `[0, 1]`; exactly 0 for equal vectors.
pub fn cosine_distance_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure(a.len() == b.len(), || {
        format!("embedding lengths differ: {} vs {}", a.len(), b.len())
    })?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedDistance);
    }
    if a == b {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 1.0))
}

pub fn cosine_distance(a: &TaskEmbedding, b: &TaskEmbedding) -> Result<f64> {
    cosine_distance_raw(&a.fim_diag, &b.fim_diag)
}

/// Which tasks to draw when measuring diversity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSampling {
    pub split: Split,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

impl Default for TaskSampling {
    fn default() -> Self {
        Self {
            split: Split::Train,
            n_way: 5,
            k_shot: 5,
            q_query: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub coefficient: f64,
    pub ci95_halfwidth: f64,
    pub num_tasks: usize,
    pub num_pairs: usize,
    pub probe_provenance: String,
}

fn embed_all(probe: &Probe, tasks: &[FewShotTask]) -> Result<Vec<TaskEmbedding>> {
    tasks.par_iter().map(|t| embed_task(probe, t)).collect()
}

/// Distances of all unordered pairs `(i, j)`, `i < j`, in row-major order.
fn pair_distances(embs: &[TaskEmbedding]) -> Result<Vec<(usize, usize, f64)>> {
    let rows: Vec<Vec<(usize, usize, f64)>> = (0..embs.len())
        .into_par_iter()
        .map(|i| {
            (i + 1..embs.len())
                .map(|j| cosine_distance(&embs[i], &embs[j]).map(|d| (i, j, d)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn mean_and_halfwidth(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z_95 * var.sqrt() / n.sqrt())
}

/// Expected cosine distance between embeddings of two tasks drawn from
/// the benchmark, estimated over all pairs of `num_tasks` sampled tasks.
/// The interval treats the pair distances as independent.
pub fn diversity_coefficient(
    probe: &Probe,
    benchmark: &Benchmark,
    sampling: &TaskSampling,
    num_tasks: usize,
    seed: u64,
) -> Result<DiversityReport> {
    ensure(num_tasks >= 2, || {
        "diversity needs at least two tasks".into()
    })?;
    let base = named_seed(seed, "diversity");
    let tasks = (0..num_tasks)
        .map(|i| {
            sample_task(
                benchmark,
                sampling.split,
                sampling.n_way,
                sampling.k_shot,
                sampling.q_query,
                child_seed(base, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let embs = embed_all(probe, &tasks)?;
    let dists: Vec<f64> = pair_distances(&embs)?
        .into_iter()
        .map(|(_, _, d)| d)
        .collect();
    let (coefficient, ci95_halfwidth) = mean_and_halfwidth(&dists);
    Ok(DiversityReport {
        coefficient,
        ci95_halfwidth,
        num_tasks,
        num_pairs: dists.len(),
        probe_provenance: probe.provenance.clone(),
    })
}

/// Pair distances of one pair type, binned on the histogram's edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramPartition {
    /// `within:<source name>` or `cross`.
    pub name: String,
    pub counts: Vec<usize>,
    pub pairs: usize,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    /// `bins + 1` increasing edges shared by every partition.
    pub edges: Vec<f64>,
    pub partitions: Vec<HistogramPartition>,
}

impl DistanceHistogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn partition(&self, name: &str) -> Option<&HistogramPartition> {
        self.partitions.iter().find(|p| p.name == name)
    }

    pub fn total_pairs(&self) -> usize {
        self.partitions.iter().map(|p| p.pairs).sum()
    }

    /// `(bin_center, count)` rows of one partition.
    pub fn rows(&self, partition: &HistogramPartition) -> Vec<(f64, usize)> {
        self.bin_centers()
            .into_iter()
            .zip(partition.counts.iter().copied())
            .collect()
    }
}

fn bin_index(d: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((d - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// Pairwise task distances split by pair type. With several sources, task
/// `i` draws all its classes from source `i mod S`, and a pair is
/// `within:<name>` when both tasks come from the same source and `cross`
/// otherwise. A single-source benchmark gives one partition.
pub fn distance_histogram(
    probe: &Probe,
    benchmark: &Benchmark,
    sampling: &TaskSampling,
    num_tasks: usize,
    bins: usize,
    seed: u64,
) -> Result<DistanceHistogram> {
    ensure(num_tasks >= 2, || {
        "a histogram needs at least two tasks".into()
    })?;
    ensure(bins >= 1, || "need at least one bin".into())?;
    let sources = benchmark.sources().len();
    let base = named_seed(seed, "histogram");
    let tasks = (0..num_tasks)
        .map(|i| {
            let s = i % sources;
            sample_task_from_source(
                benchmark,
                sampling.split,
                s,
                sampling.n_way,
                sampling.k_shot,
                sampling.q_query,
                child_seed(base, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let embs = embed_all(probe, &tasks)?;
    let pairs = pair_distances(&embs)?;

    let mut names: Vec<String> = benchmark
        .sources()
        .iter()
        .map(|s| format!("within:{}", s.name))
        .collect();
    if sources > 1 {
        names.push("cross".into());
    }
    let source_of = |i: usize| i % sources;
    let part_of = |i: usize, j: usize| {
        if source_of(i) == source_of(j) {
            source_of(i)
        } else {
            sources
        }
    };

    let lo = pairs.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let edges: Vec<f64> = if hi > lo {
        (0..=bins)
            .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
            .collect()
    } else {
        (0..=bins).map(|k| lo + k as f64).collect()
    };
    let mut counts = vec![vec![0usize; bins]; names.len()];
    let mut sums = vec![0.0; names.len()];
    let mut totals = vec![0usize; names.len()];
    for &(i, j, d) in &pairs {
        let p = part_of(i, j);
        counts[p][bin_index(d, lo, hi, bins)] += 1;
        sums[p] += d;
        totals[p] += 1;
    }
    let partitions = names
        .into_iter()
        .zip(counts)
        .zip(sums.into_iter().zip(totals))
        .map(|((name, counts), (sum, pairs))| HistogramPartition {
            name,
            counts,
            pairs,
            mean: (pairs > 0).then(|| sum / pairs as f64),
        })
        .collect();
    Ok(DistanceHistogram { edges, partitions })
}
