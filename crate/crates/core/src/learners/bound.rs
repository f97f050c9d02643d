use std::collections::BTreeMap;

use ndarray::{concatenate, Axis};

use super::{solve_head, Head, HeadFitOptions, Model};
use crate::error::{ensure, Error, Result};
use crate::tasks::{Benchmark, FewShotTask};
use crate::tensor::cross_entropy;

/// Compare the episodic loss with the union loss for a fixed body.
///
/// The union loss is the mean cross-entropy of one head fitted, over the
/// global classes that occur, to the pooled query sets of all tasks. The
/// episodic loss is the query-size weighted mean of each task's own
/// cross-entropy under the better of two n-way heads: one refitted on the
/// task's query set by the same solver and start as the union head, and
/// the union head's columns for the task's classes (`W[Y]`). Fits are
/// unpenalised. Taking the better head means the per-task loss never
/// exceeds the loss of `W[Y]`, which never exceeds the task's share of the
/// union loss, even when the solver stops at its iteration cap.
pub fn episodic_vs_union_loss(
    model: &Model,
    benchmark: &Benchmark,
    tasks: &[FewShotTask],
) -> Result<(f64, f64)> {
    ensure(!tasks.is_empty(), || "need at least one task".into())?;
    let total = benchmark.total_classes();
    ensure(
        tasks.iter().flat_map(|t| &t.classes).all(|&g| g < total),
        || "task classes do not belong to the benchmark".into(),
    )?;

    let present: BTreeMap<usize, usize> = {
        let mut seen: Vec<usize> = tasks
            .iter()
            .flat_map(|t| t.classes.iter().copied())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.into_iter().enumerate().map(|(i, g)| (g, i)).collect()
    };

    let task_features = tasks
        .iter()
        .map(|t| model.features(&t.query.inputs))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = task_features.iter().map(|f| f.view()).collect();
    let pooled = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let pooled_labels: Vec<usize> = tasks
        .iter()
        .flat_map(|t| t.query.labels.iter().map(|&y| present[&t.classes[y]]))
        .collect();

    let opts = HeadFitOptions::unregularized();
    let union_fit = solve_head(&pooled, &pooled_labels, present.len(), None, &opts)?;

    let mut weighted = 0.0;
    for (task, feats) in tasks.iter().zip(&task_features) {
        let cols: Vec<usize> = task.classes.iter().map(|g| present[g]).collect();
        let start = Head {
            weight: union_fit.head.weight.select(Axis(1), &cols),
            bias: union_fit.head.bias.select(Axis(1), &cols),
        };
        let restricted = cross_entropy(&start.logits(feats), &task.query.labels)?;
        let fit = solve_head(feats, &task.query.labels, task.n_way, None, &opts)?;
        weighted += fit.loss.min(restricted) * task.query.len() as f64;
    }
    Ok((weighted / pooled_labels.len() as f64, union_fit.loss))
}
