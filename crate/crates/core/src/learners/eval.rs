use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adapt, fit_head_with, HeadFitOptions, Model};
use crate::error::{ensure, Result};
use crate::stats::Z_95;
use crate::tasks::FewShotTask;
use crate::tensor::accuracy;

/// How a trained model is specialised to a task before scoring its query set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EvalMethod {
    /// Freeze the body and refit an n-way head on the support set.
    PtHeadRefit,
    /// Gradient descent on all parameters for `steps` steps.
    MamlAdapt { steps: usize, lr: f64 },
}

/// Query accuracies over a meta-batch of tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_task_accuracy: Vec<f64>,
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub meta_batch: usize,
    pub task_ids: Vec<u64>,
}

impl EvalResult {
    pub fn from_accuracies(per_task_accuracy: Vec<f64>, task_ids: Vec<u64>) -> Self {
        let n = per_task_accuracy.len();
        let mean = per_task_accuracy.iter().sum::<f64>() / n as f64;
        let ci95_halfwidth = if n < 2 {
            0.0
        } else {
            let var = per_task_accuracy
                .iter()
                .map(|a| (a - mean).powi(2))
                .sum::<f64>()
                / (n - 1) as f64;
            Z_95 * var.sqrt() / (n as f64).sqrt()
        };
        Self {
            per_task_accuracy,
            mean,
            ci95_halfwidth,
            meta_batch: n,
            task_ids,
        }
    }
}

/// The model's outputs for this task: as is when the head is already
/// `n_way` wide, otherwise the head columns of the task's global classes.
fn task_view(model: &Model, task: &FewShotTask) -> Result<Model> {
    if model.spec.output_dim == task.n_way {
        Ok(model.clone())
    } else {
        model.restrict_outputs(&task.classes)
    }
}

fn score(model: &Model, method: EvalMethod, task: &FewShotTask) -> Result<f64> {
    let adapted = match method {
        EvalMethod::PtHeadRefit => {
            fit_head_with(
                model,
                &task.support,
                task.n_way,
                None,
                &HeadFitOptions::default(),
            )?
            .0
        }
        EvalMethod::MamlAdapt { steps, lr } => {
            adapt(&task_view(model, task)?, &task.support, steps, lr)?
        }
    };
    Ok(accuracy(
        &adapted.logits(&task.query.inputs)?,
        &task.query.labels,
    ))
}

/// Specialise the model to each task's support set and score its query
/// set. Tasks are evaluated in parallel; results keep the input order.
pub fn meta_test(model: &Model, method: EvalMethod, tasks: &[FewShotTask]) -> Result<EvalResult> {
    ensure(!tasks.is_empty(), || {
        "meta-test needs at least one task".into()
    })?;
    let accs = tasks
        .par_iter()
        .map(|t| score(model, method, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalResult::from_accuracies(
        accs,
        tasks.iter().map(|t| t.id).collect(),
    ))
}
