//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records matrix operations as they are evaluated. Calling
//! [`Tape::gradient`] walks the record backwards and *appends* the
//! gradient computation to the same tape, using the same differentiable
//! operations. The returned gradient variables can therefore be fed into
//! further computation and differentiated again, which is what unrolled
//! higher-order meta-gradients need.
//!
//! The rectifier's derivative is a constant 0/1 mask (0 at the kink), so
//! its second derivative is zero.

use ndarray::{Array2, Axis};

pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Relu(Var),
    /// Elementwise product with a constant matrix.
    Mask(Var, Matrix),
    Exp(Var),
    LogSoftmax(Var),
    SumAll(Var),
    /// Sum over rows, m×n → 1×n.
    SumRows(Var),
    /// Sum over columns, m×n → m×1.
    SumCols(Var),
    /// 1×n → m×n.
    RepeatRows(Var),
    /// m×1 → m×n.
    RepeatCols(Var),
    /// 1×1 → m×n.
    Fill(Var),
    /// Contiguous window of a 1×len row vector reshaped to rows×cols.
    Slice {
        src: Var,
        offset: usize,
    },
    /// Inverse of `Slice`: place a rows×cols block into a zero 1×len row.
    Scatter {
        src: Var,
        offset: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let tracked = match &op {
            Op::Leaf => true,
            Op::Const => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.tracked(*a) || self.tracked(*b)
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Mask(a, _)
            | Op::Exp(a)
            | Op::LogSoftmax(a)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::RepeatRows(a)
            | Op::RepeatCols(a)
            | Op::Fill(a) => self.tracked(*a),
            Op::Slice { src, .. } | Op::Scatter { src, .. } => self.tracked(*src),
        };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn mask(&mut self, a: Var, mask: Matrix) -> Var {
        let value = self.value(a) * &mask;
        self.push(value, Op::Mask(a, mask))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a);
        debug_assert_eq!(v.nrows(), 1);
        let value = v
            .broadcast((rows, v.ncols()))
            .expect("row vector broadcast")
            .to_owned();
        self.push(value, Op::RepeatRows(a))
    }

    pub fn repeat_cols(&mut self, a: Var, cols: usize) -> Var {
        let v = self.value(a);
        debug_assert_eq!(v.ncols(), 1);
        let value = v
            .broadcast((v.nrows(), cols))
            .expect("column vector broadcast")
            .to_owned();
        self.push(value, Op::RepeatCols(a))
    }

    pub fn fill(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let s = self.scalar(a);
        self.push(Array2::from_elem((rows, cols), s), Op::Fill(a))
    }

    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let v = self.value(src);
        debug_assert_eq!(v.nrows(), 1);
        let flat = v.row(0);
        let window = flat.slice(ndarray::s![offset..offset + rows * cols]);
        let value = Array2::from_shape_vec((rows, cols), window.to_vec())
            .expect("slice window matches shape");
        self.push(value, Op::Slice { src, offset })
    }

    pub fn scatter(&mut self, src: Var, offset: usize, len: usize) -> Var {
        let v = self.value(src);
        let mut value = Array2::zeros((1, len));
        for (i, x) in v.iter().enumerate() {
            value[[0, offset + i]] = *x;
        }
        self.push(value, Op::Scatter { src, offset })
    }

    fn accumulate(&mut self, grads: &mut [Option<Var>], target: Var, g: Var) {
        if !self.tracked(target) {
            return;
        }
        grads[target.0] = Some(match grads[target.0] {
            None => g,
            Some(prev) => self.add(prev, g),
        });
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The gradient graph is appended to this tape, so the returned
    /// variables are themselves differentiable. `None` means the output
    /// does not depend on that variable.
    pub fn gradient(&mut self, output: Var, wrt: &[Var]) -> Vec<Option<Var>> {
        assert_eq!(self.value(output).dim(), (1, 1), "gradient of non-scalar");
        let lowest = wrt.iter().map(|v| v.0).min().unwrap_or(0);
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        let seed = self.constant(Array2::ones((1, 1)));
        grads[output.0] = Some(seed);

        for idx in (lowest..=output.0).rev() {
            let Some(g) = grads[idx] else { continue };
            if !self.nodes[idx].tracked {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let this = Var(idx);
            match op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    if self.tracked(a) {
                        let bt = self.transpose(b);
                        let ga = self.matmul(g, bt);
                        self.accumulate(&mut grads, a, ga);
                    }
                    if self.tracked(b) {
                        let at = self.transpose(a);
                        let gb = self.matmul(at, g);
                        self.accumulate(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, g);
                    self.accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, a, g);
                    if self.tracked(b) {
                        let gb = self.scale(g, -1.0);
                        self.accumulate(&mut grads, b, gb);
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(a) {
                        let ga = self.mul(g, b);
                        self.accumulate(&mut grads, a, ga);
                    }
                    if self.tracked(b) {
                        let gb = self.mul(g, a);
                        self.accumulate(&mut grads, b, gb);
                    }
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let m = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let ga = self.mask(g, m);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Mask(a, m) => {
                    let ga = self.mask(g, m);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, this);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::LogSoftmax(a) => {
                    // d/da = g - softmax(a) * rowsum(g)
                    let cols = self.value(a).ncols();
                    let p = self.exp(this);
                    let s = self.sum_cols(g);
                    let s = self.repeat_cols(s, cols);
                    let ps = self.mul(p, s);
                    let ga = self.sub(g, ps);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(a).dim();
                    let ga = self.fill(g, r, c);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::SumRows(a) => {
                    let r = self.value(a).nrows();
                    let ga = self.repeat_rows(g, r);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::SumCols(a) => {
                    let c = self.value(a).ncols();
                    let ga = self.repeat_cols(g, c);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::RepeatRows(a) => {
                    let ga = self.sum_rows(g);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::RepeatCols(a) => {
                    let ga = self.sum_cols(g);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Fill(a) => {
                    let ga = self.sum_all(g);
                    self.accumulate(&mut grads, a, ga);
                }
                Op::Slice { src, offset } => {
                    let len = self.value(src).ncols();
                    let ga = self.scatter(g, offset, len);
                    self.accumulate(&mut grads, src, ga);
                }
                Op::Scatter { src, offset } => {
                    let (r, c) = self.value(src).dim();
                    let ga = self.slice(g, offset, r, c);
                    self.accumulate(&mut grads, src, ga);
                }
            }
        }
        wrt.iter()
            .map(|v| grads.get(v.0).copied().flatten())
            .collect()
    }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    log_softmax_rows(m).mapv(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.leaf(array![[3.0]]);
        let y = t.mul(x, x);
        let g = t.gradient(y, &[x])[0].unwrap();
        assert_eq!(t.scalar(g), 6.0);
        // second derivative through the recorded gradient
        let gg = t.gradient(g, &[x])[0].unwrap();
        assert_eq!(t.scalar(gg), 2.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(array![[1.0, 2.0]]);
        let x = t.leaf(array![[0.5, -1.0]]);
        let p = t.mul(c, x);
        let s = t.sum_all(p);
        let g = t.gradient(s, &[c, x]);
        assert!(g[0].is_none());
        assert_eq!(t.value(g[1].unwrap()), &array![[1.0, 2.0]]);
    }

    #[test]
    fn matmul_gradient_matches_hand_result() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.leaf(array![[0.5], [-1.0]]);
        let ab = t.matmul(a, b);
        let s = t.sum_all(ab);
        let g = t.gradient(s, &[a, b]);
        assert_eq!(t.value(g[0].unwrap()), &array![[0.5, -1.0], [0.5, -1.0]]);
        assert_eq!(t.value(g[1].unwrap()), &array![[4.0], [6.0]]);
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let m = array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]];
        let p = softmax_rows(&m);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_and_scatter_are_adjoint() {
        let mut t = Tape::new();
        let flat = t.leaf(array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let w = t.slice(flat, 2, 2, 2);
        assert_eq!(t.value(w), &array![[3.0, 4.0], [5.0, 6.0]]);
        let sq = t.mul(w, w);
        let s = t.sum_all(sq);
        let g = t.gradient(s, &[flat])[0].unwrap();
        assert_eq!(t.value(g), &array![[0.0, 0.0, 6.0, 8.0, 10.0, 12.0]]);
    }
}
