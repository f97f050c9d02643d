use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::learners::{Method, TrainConfig};
use crate::task2vec::{ProbeConfig, TaskSampling};
use crate::tasks::{BenchmarkSpec, Split};

/// Meta-test protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: Split,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub meta_batch: usize,
    /// MAML adaptation steps evaluated; each gives one decision.
    pub eval_steps: Vec<usize>,
    /// Adaptation rate at meta-test; defaults to the MAML inner rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_lr: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            n_way: 5,
            k_shot: 5,
            q_query: 15,
            meta_batch: 300,
            eval_steps: vec![5, 10],
            eval_lr: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversityConfig {
    pub enabled: bool,
    pub num_tasks: usize,
    pub sampling: TaskSampling,
    pub histogram: bool,
    pub histogram_tasks: usize,
    pub bins: usize,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            num_tasks: 100,
            sampling: TaskSampling::default(),
            histogram: false,
            histogram_tasks: 500,
            bins: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Model initialisation, shared by PT and every MAML variant.
    pub init: u64,
    /// Meta-test task draws.
    pub tasks: u64,
    /// Diversity and histogram task draws.
    pub diversity: u64,
}

/// One PT-versus-MAML comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Grouping label for reports. When absent the regime is read off the
    /// diversity coefficient with `regime_threshold`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    pub regime_threshold: f64,
    pub out_dir: PathBuf,
    pub benchmark: BenchmarkSpec,
    pub pt: TrainConfig,
    /// Template for the MAML runs; `method` is set per entry of `maml_orders`.
    pub maml: TrainConfig,
    pub maml_orders: Vec<Method>,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
    pub diversity: DiversityConfig,
    pub seeds: SeedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            regime: None,
            regime_threshold: 0.146,
            out_dir: PathBuf::from("runs"),
            benchmark: BenchmarkSpec {
                classes_per_source: 40,
                ..BenchmarkSpec::default()
            },
            pt: TrainConfig::default(),
            maml: TrainConfig {
                method: Method::FoMaml,
                outer_lr: 0.005,
                inner_lr: 0.05,
                ..TrainConfig::default()
            },
            maml_orders: vec![Method::FoMaml],
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
            diversity: DiversityConfig::default(),
            seeds: SeedConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Single source cloud.
    pub fn low_diversity(seed: u64) -> Self {
        Self {
            name: format!("low-seed{seed}"),
            regime: Some("low".into()),
            ..Self::default()
        }
        .with_seed(seed)
    }

    /// Union of four translated source clouds.
    pub fn high_diversity(seed: u64) -> Self {
        let mut c = Self {
            name: format!("high-seed{seed}"),
            regime: Some("high".into()),
            ..Self::default()
        };
        c.benchmark.sources = 4;
        c.with_seed(seed)
    }

    /// Point every seed (benchmark, init, tasks, diversity) at `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.benchmark.seed = seed;
        self.seeds = SeedConfig {
            init: seed,
            tasks: seed,
            diversity: seed,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.name.is_empty(), || {
            "experiment name must not be empty".into()
        })?;
        ensure(!self.eval.eval_steps.is_empty(), || {
            "eval_steps must not be empty".into()
        })?;
        ensure(self.eval.meta_batch >= 2, || {
            "meta_batch must be >= 2".into()
        })?;
        ensure(!self.maml_orders.is_empty(), || {
            "maml_orders must not be empty".into()
        })?;
        ensure(self.maml_orders.iter().all(|m| m.is_maml()), || {
            "maml_orders may only contain fo_maml and ho_maml".into()
        })?;
        ensure(self.maml.n_way == self.eval.n_way, || {
            format!(
                "MAML trains {}-way heads but evaluation is {}-way",
                self.maml.n_way, self.eval.n_way
            )
        })?;
        if self.diversity.enabled {
            ensure(self.diversity.num_tasks >= 2, || {
                "diversity num_tasks must be >= 2".into()
            })?;
        }
        Ok(())
    }

    pub fn pt_config(&self) -> TrainConfig {
        TrainConfig {
            method: Method::Pt,
            seed: self.seeds.init,
            ..self.pt.clone()
        }
    }

    pub fn maml_config(&self, order: Method) -> TrainConfig {
        TrainConfig {
            method: order,
            seed: self.seeds.init,
            ..self.maml.clone()
        }
    }

    pub fn eval_lr(&self) -> f64 {
        self.eval.eval_lr.unwrap_or(self.maml.inner_lr)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.name)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
