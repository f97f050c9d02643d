//! Dense numerical core: flat parameter vectors, small feed-forward
//! classifiers and exact reverse-mode gradients, including gradients
//! taken through unrolled gradient-descent updates.

mod net;
pub mod tape;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use net::{
    accuracy, cross_entropy, finite_diff_grad, forward, forward_on_tape, grad,
    grad_through_updates, layer_activations, tape_cross_entropy, LayerTrace,
};
pub use tape::{log_softmax_rows, softmax_rows, Matrix, Tape, Var};

/// One named block of a [`ParamVector`], stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
        }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }
}

/// Flat parameter storage with a named segment layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self> {
        let total: usize = layout.iter().map(Segment::size).sum();
        if total != values.len() {
            return Err(Error::Shape(format!(
                "layout covers {total} values but {} were given",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (seg, _) = locate(&layout, i);
            return Err(Error::NonFinite {
                location: seg.name.clone(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Vec<Segment>) -> Self {
        let total = layout.iter().map(Segment::size).sum();
        Self {
            values: vec![0.0; total],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    /// Start offset of every segment, in layout order.
    pub fn offsets(&self) -> Vec<usize> {
        segment_offsets(&self.layout)
    }

    pub fn segment(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let mut offset = 0;
        for seg in &self.layout {
            if seg.name == name {
                let window = &self.values[offset..offset + seg.size()];
                return ArrayView2::from_shape((seg.rows, seg.cols), window).ok();
            }
            offset += seg.size();
        }
        None
    }

    /// The values as a 1×len matrix, the form used on a [`Tape`].
    pub fn as_row(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, self.values.len()), self.values.clone()).expect("row shape")
    }

    pub fn from_row(row: &Array2<f64>, layout: Vec<Segment>) -> Result<Self> {
        Self::new(row.iter().copied().collect(), layout)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + alpha * other`, checking the layouts agree and the result is finite.
    pub fn add_scaled(&self, alpha: f64, other: &ParamVector) -> Result<Self> {
        ensure(self.layout == other.layout, || {
            "parameter layouts differ".to_string()
        })?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Self::new(values, self.layout.clone())
    }

    /// Name of the segment holding flat index `i`.
    pub fn segment_name_at(&self, i: usize) -> &str {
        &locate(&self.layout, i).0.name
    }
}

fn locate(layout: &[Segment], i: usize) -> (&Segment, usize) {
    let mut offset = 0;
    for seg in layout {
        if i < offset + seg.size() {
            return (seg, offset);
        }
        offset += seg.size();
    }
    panic!("index {i} outside layout")
}

pub(crate) fn segment_offsets(layout: &[Segment]) -> Vec<usize> {
    let mut out = Vec::with_capacity(layout.len());
    let mut offset = 0;
    for seg in layout {
        out.push(offset);
        offset += seg.size();
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of a fully connected classifier.
///
/// Layer `i` computes `h @ W_i + b_i` with `W_i` of shape `(in, out)`;
/// every layer except the last is followed by the activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.input_dim > 0, || "input_dim must be positive".into())?;
        ensure(self.output_dim > 0, || "output_dim must be positive".into())?;
        ensure(self.hidden_dims.iter().all(|&h| h > 0), || {
            "hidden dims must be positive".into()
        })
    }

    /// `(fan_in, fan_out)` of each layer, head last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Width of the representation fed to the head.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn layout(&self) -> Vec<Segment> {
        self.layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(i, (fan_in, fan_out))| {
                [
                    Segment::new(format!("layer{i}.weight"), fan_in, fan_out),
                    Segment::new(format!("layer{i}.bias"), 1, fan_out),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(Segment::size).sum()
    }

    /// Flat index where the head (last layer) parameters begin.
    pub fn head_offset(&self) -> usize {
        self.layer_dims()[..self.hidden_dims.len()]
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.layout() != self.layout().as_slice() {
            return Err(Error::Shape(format!(
                "parameters with {} entries do not match network {}-{:?}-{}",
                params.len(),
                self.input_dim,
                self.hidden_dims,
                self.output_dim
            )));
        }
        Ok(())
    }
}

/// Rows of features with one class label per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Stack two batches row-wise.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        let inputs =
            ndarray::concatenate(ndarray::Axis(0), &[self.inputs.view(), other.inputs.view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        Batch::new(inputs, labels)
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Batch {
        let inputs = self.inputs.select(ndarray::Axis(0), rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Batch { inputs, labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_sizes_add_up() {
        let spec = NetSpec::new(2, vec![8], 3).unwrap();
        assert_eq!(spec.num_params(), 2 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(spec.head_offset(), 24);
        let p = ParamVector::zeros(spec.layout());
        assert_eq!(p.offsets(), vec![0, 16, 24, 48]);
        assert_eq!(p.segment("layer1.bias").unwrap().dim(), (1, 3));
    }

    #[test]
    fn rejects_mismatched_and_non_finite_values() {
        let layout = vec![Segment::new("w", 2, 2)];
        assert!(matches!(
            ParamVector::new(vec![0.0; 3], layout.clone()),
            Err(Error::Shape(_))
        ));
        let err = ParamVector::new(vec![0.0, f64::NAN, 0.0, 0.0], layout).unwrap_err();
        assert!(matches!(err, Error::NonFinite { location } if location == "w"));
    }

    #[test]
    fn batch_requires_matching_labels() {
        assert!(Batch::new(Array2::zeros((3, 2)), vec![0, 1]).is_err());
    }
}

#[cfg(test)]
#[path = "tests.rs"]
mod net_tests;
