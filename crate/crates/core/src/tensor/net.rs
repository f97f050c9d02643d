use ndarray::{Array2, Axis};

use super::tape::{log_softmax_rows, Matrix, Tape, Var};
use super::{segment_offsets, NetSpec, ParamVector};
use crate::error::{Error, Result};

fn check_input(spec: &NetSpec, inputs: &Matrix) -> Result<()> {
    if inputs.ncols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "input width {} but network expects {}",
            inputs.ncols(),
            spec.input_dim
        )));
    }
    Ok(())
}

fn check_finite(m: &Matrix, layer: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            location: format!("layer{layer}"),
        })
    }
}

/// Pre- and post-activation values of every layer for one batch.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the batch.
    pub inputs: Vec<Matrix>,
    /// Pre-activation output of each layer; the last entry is the logits.
    pub pre: Vec<Matrix>,
}

impl LayerTrace {
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("at least one layer")
    }

    /// Representation fed into the head.
    pub fn features(&self) -> &Matrix {
        self.inputs.last().expect("at least one layer")
    }
}

/// Forward pass recording every layer's input and pre-activation.
pub fn layer_activations(
    spec: &NetSpec,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<LayerTrace> {
    spec.check_params(params)?;
    check_input(spec, inputs)?;
    let dims = spec.layer_dims();
    let mut trace = LayerTrace {
        inputs: Vec::with_capacity(dims.len()),
        pre: Vec::with_capacity(dims.len()),
    };
    let mut h = inputs.clone();
    for (l, _) in dims.iter().enumerate() {
        let w = params
            .segment(&format!("layer{l}.weight"))
            .expect("layout checked");
        let b = params
            .segment(&format!("layer{l}.bias"))
            .expect("layout checked");
        let z = h.dot(&w) + b;
        check_finite(&z, l)?;
        trace.inputs.push(h);
        h = if l + 1 < dims.len() {
            z.mapv(|x| if x > 0.0 { x } else { 0.0 })
        } else {
            z.clone()
        };
        trace.pre.push(z);
    }
    Ok(trace)
}

/// Logits, one row per input row.
pub fn forward(spec: &NetSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    let mut trace = layer_activations(spec, params, inputs)?;
    Ok(trace.pre.pop().expect("at least one layer"))
}

/// Record the forward pass on a tape. `params` must be a 1×P row laid
/// out as `spec.layout()`.
pub fn forward_on_tape(tape: &mut Tape, spec: &NetSpec, params: Var, inputs: Var) -> Result<Var> {
    let p_len = tape.value(params).ncols();
    if tape.value(params).nrows() != 1 || p_len != spec.num_params() {
        return Err(Error::Shape(format!(
            "parameter row of width {p_len} does not fit a network with {} parameters",
            spec.num_params()
        )));
    }
    check_input(spec, tape.value(inputs))?;
    let rows = tape.value(inputs).nrows();
    let layout = spec.layout();
    let offsets = segment_offsets(&layout);
    let dims = spec.layer_dims();
    let mut h = inputs;
    for (l, (fan_in, fan_out)) in dims.iter().copied().enumerate() {
        let w = tape.slice(params, offsets[2 * l], fan_in, fan_out);
        let b = tape.slice(params, offsets[2 * l + 1], 1, fan_out);
        let hw = tape.matmul(h, w);
        let bb = tape.repeat_rows(b, rows);
        let z = tape.add(hw, bb);
        check_finite(tape.value(z), l)?;
        h = if l + 1 < dims.len() { tape.relu(z) } else { z };
    }
    Ok(h)
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside {} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Mean negative log-softmax of the true class.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let ls = log_softmax_rows(logits);
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| ls[[i, y]]).sum();
    Ok(-total / labels.len() as f64)
}

/// [`cross_entropy`] recorded on a tape.
pub fn tape_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    check_labels(tape.value(logits), labels)?;
    let (n, c) = tape.value(logits).dim();
    let mut onehot = Array2::zeros((n, c));
    for (i, &y) in labels.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let ls = tape.log_softmax(logits);
    let picked = tape.mask(ls, onehot);
    let s = tape.sum_all(picked);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// Fraction of rows whose arg-max logit equals the label. Ties go to the
/// lowest index.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn gradient_to_params(tape: &Tape, g: Option<Var>, params: &ParamVector) -> Result<ParamVector> {
    let values: Vec<f64> = match g {
        Some(g) => tape.value(g).iter().copied().collect(),
        None => vec![0.0; params.len()],
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: params.segment_name_at(i).to_string(),
        });
    }
    ParamVector::new(values, params.layout().to_vec())
}

fn checked_scalar(tape: &Tape, v: Var) -> Result<f64> {
    if tape.value(v).dim() != (1, 1) {
        return Err(Error::Shape("loss must be a 1×1 value".into()));
    }
    let s = tape.scalar(v);
    if !s.is_finite() {
        return Err(Error::NonFinite {
            location: "loss".into(),
        });
    }
    Ok(s)
}

/// Exact gradient of a scalar function of the parameters.
///
/// `loss_fn` receives the tape and the parameter row (1×P) and returns a
/// 1×1 variable.
pub fn grad<F>(loss_fn: F, params: &ParamVector) -> Result<ParamVector>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = tape.leaf(params.as_row());
    let loss = loss_fn(&mut tape, p)?;
    checked_scalar(&tape, loss)?;
    let g = tape.gradient(loss, &[p])[0];
    gradient_to_params(&tape, g, params)
}

/// Gradient of `outer_loss` evaluated after `inner_steps` steps of
/// gradient descent on `inner_loss`, differentiated through every update
/// (the full second-order path).
pub fn grad_through_updates<I, O>(
    inner_loss: I,
    outer_loss: O,
    params: &ParamVector,
    inner_steps: usize,
    inner_lr: f64,
) -> Result<ParamVector>
where
    I: Fn(&mut Tape, Var) -> Result<Var>,
    O: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p0 = tape.leaf(params.as_row());
    let mut p = p0;
    for step in 0..inner_steps {
        let l = inner_loss(&mut tape, p)?;
        checked_scalar(&tape, l).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                location: format!("inner step {step} loss"),
            },
            other => other,
        })?;
        if let Some(g) = tape.gradient(l, &[p])[0] {
            let delta = tape.scale(g, inner_lr);
            p = tape.sub(p, delta);
        }
    }
    let loss = outer_loss(&mut tape, p)?;
    checked_scalar(&tape, loss)?;
    let g = tape.gradient(loss, &[p0])[0];
    gradient_to_params(&tape, g, params)
}

/// Central finite differences, one coordinate at a time.
pub fn finite_diff_grad<F>(loss_fn: F, params: &ParamVector, step: f64) -> Result<ParamVector>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let eval = |row: Array2<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.leaf(row);
        let l = loss_fn(&mut tape, p)?;
        checked_scalar(&tape, l)
    };
    let base = params.as_row();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut plus = base.clone();
        plus[[0, i]] += step;
        let mut minus = base.clone();
        minus[[0, i]] -= step;
        out.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    ParamVector::new(out, params.layout().to_vec())
}
