use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learners::{
    meta_test, model_l2_norm, train, EvalMethod, EvalResult, Method, TrainOutcome,
};
use crate::rng::{child_seed, named_seed};
use crate::stats::{
    decide_ci, decide_es, fmt_sig, write_decision_table, CiDecision, Decision, DecisionRow,
    MamlVariant,
};
use crate::task2vec::{
    distance_histogram, diversity_coefficient, probe_from_config, DistanceHistogram,
    DiversityReport,
};
use crate::tasks::{sample_task, FewShotTask};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, message: String },
}

/// Meta-test accuracies of one model under one evaluation method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// `None` for head refitting, otherwise the adaptation steps.
    pub steps: Option<usize>,
    pub result: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub loss_curve: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    pub l2_norm: f64,
    pub evals: Vec<EvalRecord>,
}

impl MethodRecord {
    fn from_outcome(method: Method, out: &TrainOutcome) -> Self {
        Self {
            method,
            loss_curve: out.loss_curve.clone(),
            epochs: out.epochs,
            converged: out.converged,
            l2_norm: model_l2_norm(&out.model),
            evals: Vec::new(),
        }
    }

    pub fn eval(&self, steps: Option<usize>) -> Option<&EvalResult> {
        self.evals
            .iter()
            .find(|e| e.steps == steps)
            .map(|e| &e.result)
    }
}

/// Decisions between PT (head refit) and one MAML order at one step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub order: Method,
    pub steps: usize,
    pub effect_size: Decision,
    pub ci: CiDecision,
    pub ci_1pct: CiDecision,
}

impl DecisionRecord {
    pub fn label(&self) -> String {
        format!("{}/maml{}", self.order.as_str(), self.steps)
    }
}

/// Wall-clock metadata; the only part of a record that varies between
/// identical runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub stage_seconds: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    /// Ids of the meta-test tasks every model was scored on.
    pub task_ids: Vec<u64>,
    pub pt: Option<MethodRecord>,
    pub maml: Vec<MethodRecord>,
    pub diversity: Option<DiversityReport>,
    pub histogram: Option<DistanceHistogram>,
    pub decisions: Vec<DecisionRecord>,
    pub timing: Timing,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn failed_stage(&self) -> Option<&str> {
        match &self.status {
            RunStatus::Failed { stage, .. } => Some(stage),
            RunStatus::Completed => None,
        }
    }

    /// The record with wall-clock fields cleared.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            timing: Timing::default(),
            ..self.clone()
        }
    }

    /// Regime label: the configured one, else the diversity coefficient
    /// against the configured threshold, else `unknown`.
    pub fn regime(&self) -> String {
        if let Some(r) = &self.config.regime {
            return r.clone();
        }
        match &self.diversity {
            Some(d) if d.coefficient > self.config.regime_threshold => "high".into(),
            Some(_) => "low".into(),
            None => "unknown".into(),
        }
    }

    pub fn decision_rows(&self) -> Vec<DecisionRow> {
        self.decisions
            .iter()
            .map(|d| DecisionRow {
                experiment_id: format!("{}/{}", self.name, d.label()),
                es: d.effect_size.effect_size,
                delta: d.effect_size.delta,
                verdict: d.effect_size.verdict,
            })
            .collect()
    }

    pub fn maml_record(&self, order: Method) -> Option<&MethodRecord> {
        self.maml.iter().find(|m| m.method == order)
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Seed of the `i`-th meta-test task.
pub fn meta_test_task_seed(tasks_seed: u64, i: usize) -> u64 {
    child_seed(named_seed(tasks_seed, "meta-test"), i as u64)
}

struct Stages<'a> {
    record: &'a mut RunRecord,
}

impl Stages<'_> {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        self.record
            .timing
            .stage_seconds
            .insert(stage.to_string(), t0.elapsed().as_secs_f64());
        out.map_err(|e| e.at_stage(stage))
    }
}

/// Run the whole comparison in memory. A failing stage does not abort the
/// call: the record comes back marked failed with that stage's name and
/// whatever earlier stages produced.
pub fn run_comparison(config: &ExperimentConfig) -> RunRecord {
    let mut record = RunRecord {
        name: config.name.clone(),
        config: config.clone(),
        status: RunStatus::Completed,
        task_ids: Vec::new(),
        pt: None,
        maml: Vec::new(),
        diversity: None,
        histogram: None,
        decisions: Vec::new(),
        timing: Timing {
            started_unix_ms: now_ms(),
            ..Timing::default()
        },
    };
    if let Err(e) = execute(config, &mut record) {
        let (stage, message) = match e {
            Error::Stage { stage, source } => (stage, source.to_string()),
            other => ("config".to_string(), other.to_string()),
        };
        record.status = RunStatus::Failed { stage, message };
    }
    record.timing.finished_unix_ms = now_ms();
    record
}

fn execute(config: &ExperimentConfig, record: &mut RunRecord) -> Result<()> {
    config.validate()?;
    let mut st = Stages { record };
    let bench = st.run("benchmark", || config.benchmark.build())?;

    let tasks: Vec<FewShotTask> = st.run("sample_tasks", || {
        (0..config.eval.meta_batch)
            .map(|i| {
                sample_task(
                    &bench,
                    config.eval.split,
                    config.eval.n_way,
                    config.eval.k_shot,
                    config.eval.q_query,
                    meta_test_task_seed(config.seeds.tasks, i),
                )
            })
            .collect()
    })?;
    st.record.task_ids = tasks.iter().map(|t| t.id).collect();

    let pt_out = st.run("train_pt", || train(&bench, &config.pt_config()))?;
    let mut pt_rec = MethodRecord::from_outcome(Method::Pt, &pt_out);
    let pt_eval = st.run("meta_test_pt", || {
        meta_test(&pt_out.model, EvalMethod::PtHeadRefit, &tasks)
    })?;
    pt_rec.evals.push(EvalRecord {
        steps: None,
        result: pt_eval,
    });
    st.record.pt = Some(pt_rec);

    for &order in &config.maml_orders {
        let stage = format!("train_{}", order.as_str());
        let out = st.run(&stage, || train(&bench, &config.maml_config(order)))?;
        let mut rec = MethodRecord::from_outcome(order, &out);
        for &steps in &config.eval.eval_steps {
            let stage = format!("meta_test_{}_{steps}", order.as_str());
            let method = EvalMethod::MamlAdapt {
                steps,
                lr: config.eval_lr(),
            };
            let result = st.run(&stage, || meta_test(&out.model, method, &tasks))?;
            rec.evals.push(EvalRecord {
                steps: Some(steps),
                result,
            });
        }
        st.record.maml.push(rec);
    }

    let t0 = Instant::now();
    let decisions = make_decisions(st.record).map_err(|e| e.at_stage("decisions"))?;
    st.record
        .timing
        .stage_seconds
        .insert("decisions".into(), t0.elapsed().as_secs_f64());
    st.record.decisions = decisions;

    if config.diversity.enabled {
        let probe = st.run("probe", || probe_from_config(&config.probe))?;
        let report = st.run("diversity", || {
            diversity_coefficient(
                &probe,
                &bench,
                &config.diversity.sampling,
                config.diversity.num_tasks,
                config.seeds.diversity,
            )
        })?;
        st.record.diversity = Some(report);
        if config.diversity.histogram {
            let hist = st.run("histogram", || {
                distance_histogram(
                    &probe,
                    &bench,
                    &config.diversity.sampling,
                    config.diversity.histogram_tasks,
                    config.diversity.bins,
                    config.seeds.diversity,
                )
            })?;
            st.record.histogram = Some(hist);
        }
    }
    Ok(())
}

/// ES, CI and CI-1% decisions of PT against every evaluated MAML variant.
pub fn make_decisions(record: &RunRecord) -> Result<Vec<DecisionRecord>> {
    let pt = record
        .pt
        .as_ref()
        .and_then(|p| p.eval(None))
        .ok_or_else(|| Error::InvalidArgument("record has no PT evaluation".into()))?;
    let mut out = Vec::new();
    for rec in &record.maml {
        for ev in &rec.evals {
            let Some(steps) = ev.steps else { continue };
            let maml = &ev.result.per_task_accuracy;
            let variant = MamlVariant::from_steps(steps);
            out.push(DecisionRecord {
                order: rec.method,
                steps,
                effect_size: decide_es(&pt.per_task_accuracy, maml, variant)?,
                ci: decide_ci(&pt.per_task_accuracy, maml, 0.0, variant)?,
                ci_1pct: decide_ci(&pt.per_task_accuracy, maml, 0.01, variant)?,
            });
        }
    }
    Ok(out)
}

/// Write a record into `dir` as `config.toml`, `record.json`,
/// `decisions.csv`, `curves.csv` and `accuracies.csv`. Refuses to touch a
/// directory that already holds a record.
pub fn persist_record(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    let record_path = dir.join("record.json");
    if record_path.exists() {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; records are never overwritten",
            record_path.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write("config.toml", record.config.to_toml_string()?.as_bytes())?;

    let mut buf = Vec::new();
    write_decision_table(&mut buf, &record.decision_rows())?;
    write("decisions.csv", &buf)?;

    let mut curves = csv::Writer::from_writer(Vec::new());
    curves.write_record(["method", "epoch", "loss"])?;
    for m in record.pt.iter().chain(&record.maml) {
        for (epoch, loss) in m.loss_curve.iter().enumerate() {
            curves.write_record([m.method.as_str(), &epoch.to_string(), &fmt_sig(*loss, 6)])?;
        }
    }
    write(
        "curves.csv",
        &curves
            .into_inner()
            .map_err(|e| Error::Table(e.to_string()))?,
    )?;

    let mut accs = csv::Writer::from_writer(Vec::new());
    let mut columns: Vec<(String, &EvalResult)> = Vec::new();
    if let Some(r) = record.pt.as_ref().and_then(|p| p.eval(None)) {
        columns.push(("pt".into(), r));
    }
    for m in &record.maml {
        for ev in &m.evals {
            let steps = ev
                .steps
                .map_or_else(|| "refit".to_string(), |s| s.to_string());
            columns.push((format!("{}_{steps}", m.method.as_str()), &ev.result));
        }
    }
    let mut header = vec!["task_id".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    accs.write_record(&header)?;
    for (i, id) in record.task_ids.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(columns.iter().map(|(_, r)| {
            r.per_task_accuracy
                .get(i)
                .map_or_else(String::new, |a| fmt_sig(*a, 6))
        }));
        accs.write_record(&row)?;
    }
    write(
        "accuracies.csv",
        &accs.into_inner().map_err(|e| Error::Table(e.to_string()))?,
    )?;

    // the record goes last so its presence marks a complete directory
    write(
        "record.json",
        serde_json::to_string_pretty(record)?.as_bytes(),
    )?;
    Ok(record_path)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
