//! Union pre-training, first- and higher-order MAML, and meta-test
//! evaluation.

mod bound;
mod eval;
mod head;

pub use bound::episodic_vs_union_loss;
pub use eval::{meta_test, EvalMethod, EvalResult};
pub use head::{solve_head, Head, HeadFit, HeadFitOptions};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{child_seed, named_seed, rng_from_seed};
use crate::tasks::{sample_task, union_dataset, Benchmark, Split};
use crate::tensor::{
    forward, forward_on_tape, grad, grad_through_updates, layer_activations, tape_cross_entropy,
    Batch, Matrix, NetSpec, ParamVector, Tape, Var,
};

/// A network split into a body (the feature map) and a head (last layer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: NetSpec,
    pub params: ParamVector,
    /// Flat index of the first head parameter.
    pub head_boundary: usize,
}

impl Model {
    pub fn new(spec: NetSpec, params: ParamVector) -> Result<Self> {
        spec.check_params(&params)?;
        Ok(Self {
            head_boundary: spec.head_offset(),
            spec,
            params,
        })
    }

    /// He-normal weights and zero biases. The body is drawn from its own
    /// stream so that models differing only in head width share their
    /// body initialisation.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut values = Vec::with_capacity(spec.num_params());
        let mut body_rng = rng_from_seed(named_seed(seed, "body"));
        let mut head_rng = rng_from_seed(named_seed(seed, "head"));
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let rng = if l + 1 < dims.len() {
                &mut body_rng
            } else {
                &mut head_rng
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
            values.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        let params = ParamVector::new(values, spec.layout())?;
        Self::new(spec, params)
    }

    pub fn body(&self) -> &[f64] {
        &self.params.values()[..self.head_boundary]
    }

    pub fn head(&self) -> Head {
        let l = self.spec.num_layers() - 1;
        Head {
            weight: self
                .params
                .segment(&format!("layer{l}.weight"))
                .expect("head")
                .to_owned(),
            bias: self
                .params
                .segment(&format!("layer{l}.bias"))
                .expect("head")
                .to_owned(),
        }
    }

    /// The same body with a different head.
    pub fn with_head(&self, head: &Head) -> Result<Model> {
        ensure(head.weight.nrows() == self.spec.feature_dim(), || {
            format!(
                "head expects {} features, body produces {}",
                head.weight.nrows(),
                self.spec.feature_dim()
            )
        })?;
        let mut spec = self.spec.clone();
        spec.output_dim = head.weight.ncols();
        let mut values = self.body().to_vec();
        values.extend(head.weight.iter());
        values.extend(head.bias.iter());
        Model::new(spec.clone(), ParamVector::new(values, spec.layout())?)
    }

    /// Keep only the given output columns of the head, in that order.
    pub fn restrict_outputs(&self, columns: &[usize]) -> Result<Model> {
        ensure(columns.iter().all(|&c| c < self.spec.output_dim), || {
            format!("output columns must lie below {}", self.spec.output_dim)
        })?;
        let head = self.head();
        self.with_head(&Head {
            weight: head.weight.select(ndarray::Axis(1), columns),
            bias: head.bias.select(ndarray::Axis(1), columns),
        })
    }

    /// Representation fed into the head.
    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(layer_activations(&self.spec, &self.params, inputs)?
            .inputs
            .pop()
            .expect("at least one layer"))
    }

    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        forward(&self.spec, &self.params, inputs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pt,
    FoMaml,
    HoMaml,
}

impl Method {
    pub fn is_maml(self) -> bool {
        !matches!(self, Method::Pt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pt => "pt",
            Method::FoMaml => "fo_maml",
            Method::HoMaml => "ho_maml",
        }
    }
}

/// Training hyper-parameters. `outer_lr` is the learning rate of union
/// pre-training and the meta learning rate of MAML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub hidden_dims: Vec<usize>,
    pub outer_lr: f64,
    pub inner_lr: f64,
    pub inner_steps_train: usize,
    /// Tasks per outer step (MAML only).
    pub meta_batch: usize,
    /// Outer steps whose losses are averaged into one epoch (MAML only).
    pub outer_steps_per_epoch: usize,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub seed: u64,
    /// Minibatch size for pre-training.
    pub batch_size: usize,
    /// Rows per class in the pre-training set.
    pub examples_per_class: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Pt,
            hidden_dims: vec![32, 32],
            outer_lr: 0.05,
            inner_lr: 0.1,
            inner_steps_train: 5,
            meta_batch: 8,
            outer_steps_per_epoch: 10,
            max_epochs: 400,
            convergence_tol: 1e-4,
            convergence_window: 20,
            seed: 0,
            batch_size: 64,
            examples_per_class: 20,
            n_way: 5,
            k_shot: 5,
            q_query: 15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.outer_lr > 0.0 && self.outer_lr.is_finite(), || {
            "outer_lr must be positive".into()
        })?;
        ensure(self.inner_lr > 0.0 && self.inner_lr.is_finite(), || {
            "inner_lr must be positive".into()
        })?;
        ensure(self.convergence_window >= 1, || {
            "convergence_window must be >= 1".into()
        })?;
        ensure(self.convergence_tol >= 0.0, || {
            "convergence_tol must be >= 0".into()
        })?;
        if self.method.is_maml() {
            ensure(self.meta_batch >= 1, || "meta_batch must be >= 1".into())?;
            ensure(self.outer_steps_per_epoch >= 1, || {
                "outer_steps_per_epoch must be >= 1".into()
            })?;
            ensure(
                self.n_way >= 1 && self.k_shot >= 1 && self.q_query >= 1,
                || "episodes need n_way, k_shot and q_query >= 1".into(),
            )?;
        } else {
            ensure(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        }
        Ok(())
    }
}

/// A trained model with its per-epoch training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: Model,
    pub loss_curve: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

/// True once the mean of the last `window` losses improves on the mean of
/// the `window` before it by less than `tol`, relatively.
pub fn plateaued(curve: &[f64], window: usize, tol: f64) -> bool {
    if curve.len() < 2 * window {
        return false;
    }
    let n = curve.len();
    let recent = curve[n - window..].iter().sum::<f64>() / window as f64;
    let before = curve[n - 2 * window..n - window].iter().sum::<f64>() / window as f64;
    (before - recent) / before.abs().max(f64::MIN_POSITIVE) < tol
}

fn ce_closure<'a>(
    spec: &'a NetSpec,
    batch: &'a Batch,
) -> impl Fn(&mut Tape, Var) -> Result<Var> + 'a {
    move |t: &mut Tape, p: Var| {
        let x = t.constant(batch.inputs.clone());
        let logits = forward_on_tape(t, spec, p, x)?;
        tape_cross_entropy(t, logits, &batch.labels)
    }
}

fn diverged(epoch: usize, loss: f64) -> Error {
    Error::Diverged { epoch, loss }
}

/// Shape of the network trained on `benchmark` by `config`.
pub fn net_spec_for(benchmark: &Benchmark, config: &TrainConfig) -> Result<NetSpec> {
    let out = if config.method.is_maml() {
        config.n_way
    } else {
        benchmark.total_classes()
    };
    NetSpec::new(benchmark.input_dim(), config.hidden_dims.clone(), out)
}

/// Dispatch on `config.method`.
pub fn train(benchmark: &Benchmark, config: &TrainConfig) -> Result<TrainOutcome> {
    match config.method {
        Method::Pt => train_pt(benchmark, config),
        Method::FoMaml | Method::HoMaml => train_maml(benchmark, config),
    }
}

/// Supervised minibatch gradient descent on the union of all training
/// classes under global labels.
pub fn train_pt(benchmark: &Benchmark, config: &TrainConfig) -> Result<TrainOutcome> {
    ensure(config.method == Method::Pt, || {
        "train_pt needs method = pt".into()
    })?;
    config.validate()?;
    let spec = net_spec_for(benchmark, config)?;
    let mut model = Model::init(spec.clone(), config.seed)?;
    let data = union_dataset(
        benchmark,
        Split::Train,
        config.examples_per_class,
        named_seed(config.seed, "union-data"),
    )?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng_from_seed(named_seed(config.seed, "shuffle"));
    let mut curve = Vec::new();
    let mut converged = false;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            let loss_fn = ce_closure(&spec, &batch);
            let mut tape = Tape::new();
            let p = tape.leaf(model.params.as_row());
            let l = loss_fn(&mut tape, p).map_err(|_| diverged(epoch, f64::NAN))?;
            let loss = tape.scalar(l);
            if !loss.is_finite() {
                return Err(diverged(epoch, loss));
            }
            total += loss * chunk.len() as f64;
            let g = grad(&loss_fn, &model.params).map_err(|_| diverged(epoch, loss))?;
            model.params = model
                .params
                .add_scaled(-config.outer_lr, &g)
                .map_err(|_| diverged(epoch, loss))?;
        }
        curve.push(total / data.len() as f64);
        if plateaued(&curve, config.convergence_window, config.convergence_tol) {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        epochs: curve.len(),
        loss_curve: curve,
        converged,
    })
}

/// Seed of the `index`-th training episode of outer step `step`, counted
/// from the start of training.
pub fn maml_episode_seed(seed: u64, step: usize, index: usize) -> u64 {
    child_seed(
        child_seed(named_seed(seed, "episodes"), step as u64),
        index as u64,
    )
}

/// Meta-gradient of `outer_loss` after `steps` inner descent steps on
/// `inner_loss`. The first-order variant differentiates the outer loss at
/// the adapted point and treats the adapted parameters as constants; the
/// higher-order variant differentiates through every inner update.
pub fn outer_gradient<I, O>(
    method: Method,
    inner_loss: I,
    outer_loss: O,
    params: &ParamVector,
    steps: usize,
    inner_lr: f64,
) -> Result<ParamVector>
where
    I: Fn(&mut Tape, Var) -> Result<Var>,
    O: Fn(&mut Tape, Var) -> Result<Var>,
{
    match method {
        Method::HoMaml => grad_through_updates(inner_loss, outer_loss, params, steps, inner_lr),
        Method::FoMaml => {
            let mut p = params.clone();
            for _ in 0..steps {
                let g = grad(&inner_loss, &p)?;
                p = p.add_scaled(-inner_lr, &g)?;
            }
            grad(&outer_loss, &p)
        }
        Method::Pt => Err(Error::InvalidArgument(
            "pre-training has no outer gradient".into(),
        )),
    }
}

/// Episodic training. Each outer step averages the meta-gradient over
/// `meta_batch` freshly sampled training tasks; an epoch is
/// `outer_steps_per_epoch` outer steps and records their mean query loss
/// after inner adaptation.
pub fn train_maml(benchmark: &Benchmark, config: &TrainConfig) -> Result<TrainOutcome> {
    ensure(config.method.is_maml(), || {
        "train_maml needs fo_maml or ho_maml".into()
    })?;
    config.validate()?;
    let spec = net_spec_for(benchmark, config)?;
    let mut model = Model::init(spec.clone(), config.seed)?;
    let mut curve = Vec::new();
    let mut converged = false;
    for epoch in 0..config.max_epochs {
        let mut epoch_total = 0.0;
        for sub in 0..config.outer_steps_per_epoch {
            let step = epoch * config.outer_steps_per_epoch + sub;
            let mut sum = ParamVector::zeros(spec.layout());
            let mut total = 0.0;
            for i in 0..config.meta_batch {
                let task = sample_task(
                    benchmark,
                    Split::Train,
                    config.n_way,
                    config.k_shot,
                    config.q_query,
                    maml_episode_seed(config.seed, step, i),
                )?;
                let outer = ce_closure(&spec, &task.query);
                let adapted = adapt(
                    &model,
                    &task.support,
                    config.inner_steps_train,
                    config.inner_lr,
                )
                .map_err(|_| diverged(epoch, f64::NAN))?;
                let logits = adapted
                    .logits(&task.query.inputs)
                    .map_err(|_| diverged(epoch, f64::NAN))?;
                let loss = crate::tensor::cross_entropy(&logits, &task.query.labels)?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, loss));
                }
                total += loss;
                let g = match config.method {
                    Method::FoMaml => grad(&outer, &adapted.params),
                    _ => {
                        let inner = ce_closure(&spec, &task.support);
                        grad_through_updates(
                            &inner,
                            &outer,
                            &model.params,
                            config.inner_steps_train,
                            config.inner_lr,
                        )
                    }
                }
                .map_err(|_| diverged(epoch, loss))?;
                sum = sum.add_scaled(1.0, &g)?;
            }
            let scale = config.outer_lr / config.meta_batch as f64;
            model.params = model
                .params
                .add_scaled(-scale, &sum)
                .map_err(|_| diverged(epoch, f64::NAN))?;
            epoch_total += total / config.meta_batch as f64;
        }
        curve.push(epoch_total / config.outer_steps_per_epoch as f64);
        if plateaued(&curve, config.convergence_window, config.convergence_tol) {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        epochs: curve.len(),
        loss_curve: curve,
        converged,
    })
}

/// `steps` steps of full-parameter gradient descent on the support loss.
pub fn adapt(model: &Model, support: &Batch, steps: usize, lr: f64) -> Result<Model> {
    ensure(lr.is_finite(), || "adaptation rate must be finite".into())?;
    let mut out = model.clone();
    let loss_fn = ce_closure(&model.spec, support);
    for step in 0..steps {
        let g = grad(&loss_fn, &out.params).map_err(|e| match e {
            Error::NonFinite { location } => Error::NonFinite {
                location: format!("adaptation step {step}: {location}"),
            },
            other => other,
        })?;
        out.params = out.params.add_scaled(-lr, &g)?;
    }
    Ok(out)
}

/// Refit the head on frozen features of `support`, with one output per
/// class label present (`max label + 1`).
pub fn fit_head(model: &Model, support: &Batch) -> Result<Model> {
    let classes = support.labels.iter().max().map_or(0, |&m| m + 1);
    fit_head_with(model, support, classes, None, &HeadFitOptions::default()).map(|(m, _)| m)
}

/// [`fit_head`] with an explicit class count, optional warm start and
/// solver options.
pub fn fit_head_with(
    model: &Model,
    support: &Batch,
    classes: usize,
    init: Option<&Head>,
    opts: &HeadFitOptions,
) -> Result<(Model, HeadFit)> {
    ensure(!support.is_empty(), || {
        "cannot fit a head on an empty support set".into()
    })?;
    let feats = model.features(&support.inputs)?;
    let fit = solve_head(&feats, &support.labels, classes, init, opts)?;
    Ok((model.with_head(&fit.head)?, fit))
}

/// Euclidean norm of all parameters.
pub fn model_l2_norm(model: &Model) -> f64 {
    model.params.norm()
}
