//! Multinomial logistic regression on frozen features.

use nalgebra::{Cholesky, DMatrix, Dyn};
use ndarray::{s, Array2, Axis};

use crate::error::{ensure, Error, Result};
use crate::tensor::{log_softmax_rows, softmax_rows, Matrix};

/// Options for [`solve_head`].
#[derive(Clone, Debug, PartialEq)]
pub struct HeadFitOptions {
    /// Penalty `λ/2·‖W‖²` added to the mean cross-entropy (bias not
    /// penalised). `None` uses `1/n`, the mean-loss form of a unit
    /// inverse-regularisation strength.
    pub l2: Option<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for HeadFitOptions {
    fn default() -> Self {
        Self {
            l2: None,
            max_iter: 5000,
            grad_tol: 1e-8,
        }
    }
}

impl HeadFitOptions {
    pub fn unregularized() -> Self {
        Self {
            l2: Some(0.0),
            ..Self::default()
        }
    }
}

/// Weights `(h, c)` and bias `(1, c)` of a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Head {
    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            weight: Array2::zeros((features, classes)),
            bias: Array2::zeros((1, classes)),
        }
    }

    pub fn logits(&self, features: &Matrix) -> Matrix {
        features.dot(&self.weight) + &self.bias
    }

    fn stacked(&self) -> Matrix {
        ndarray::concatenate(Axis(0), &[self.weight.view(), self.bias.view()]).expect("same width")
    }

    fn from_stacked(theta: &Matrix) -> Self {
        let h = theta.nrows() - 1;
        Self {
            weight: theta.slice(s![..h, ..]).to_owned(),
            bias: theta.slice(s![h.., ..]).to_owned(),
        }
    }
}

/// Outcome of a head fit.
#[derive(Clone, Debug)]
pub struct HeadFit {
    pub head: Head,
    /// Regularised objective at the returned head.
    pub objective: f64,
    /// Plain mean cross-entropy at the returned head.
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    aug: Matrix,
    labels: &'a [usize],
    l2: f64,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.labels.len() as f64
    }

    fn penalty(&self, theta: &Matrix) -> f64 {
        let h = theta.nrows() - 1;
        0.5 * self.l2 * theta.slice(s![..h, ..]).iter().map(|w| w * w).sum::<f64>()
    }

    fn loss(&self, theta: &Matrix) -> f64 {
        let ls = log_softmax_rows(&self.aug.dot(theta));
        -self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| ls[[i, y]])
            .sum::<f64>()
            / self.n()
    }

    fn value_and_grad(&self, theta: &Matrix) -> (f64, Matrix) {
        let z = self.aug.dot(theta);
        let ls = log_softmax_rows(&z);
        let mut g = softmax_rows(&z);
        let mut ce = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            ce -= ls[[i, y]];
            g[[i, y]] -= 1.0;
        }
        g /= self.n();
        let mut grad = self.aug.t().dot(&g);
        let h = theta.nrows() - 1;
        grad.slice_mut(s![..h, ..])
            .scaled_add(self.l2, &theta.slice(s![..h, ..]));
        (ce / self.n() + self.penalty(theta), grad)
    }

    /// Factorised `M = AᵀA/n + λ·I_W`. The
    /// softmax cross-entropy Hessian in the logits is at most 1/2, so the
    /// full Hessian is bounded by `M` applied per class and a unit step in
    /// the `M` metric never overshoots.
    fn preconditioner(&self) -> SpdSolver {
        let mut m = self.aug.t().dot(&self.aug) / self.n();
        let d = m.nrows();
        for i in 0..d - 1 {
            m[[i, i]] += self.l2;
        }
        SpdSolver::new(&m)
    }
}

/// Cholesky factorisation of a symmetric positive semi-definite matrix.
/// The diagonal is lifted by a small relative jitter, raised until the
/// factorisation succeeds.
struct SpdSolver(Cholesky<f64, Dyn>);

impl SpdSolver {
    fn new(m: &Matrix) -> Self {
        let d = m.nrows();
        let scale = (m.diag().sum() / d as f64).max(1e-300);
        let mut jitter = 1e-10 * scale;
        loop {
            let mut a = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
            for i in 0..d {
                a[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(a) {
                return SpdSolver(c);
            }
            jitter *= 100.0;
        }
    }

    /// `M⁻¹ B` for a `d × k` right-hand side.
    fn solve(&self, b: &Matrix) -> Matrix {
        let (d, k) = b.dim();
        let rhs = DMatrix::from_fn(d, k, |i, j| b[[i, j]]);
        let x = self.0.solve(&rhs);
        Array2::from_shape_fn((d, k), |(i, j)| x[(i, j)])
    }
}

/// Largest `(features + 1) * classes` for which the explicit Hessian is used.
const NEWTON_MAX_DIM: usize = 1200;

impl Problem<'_> {
    fn probabilities(&self, theta: &Matrix) -> Matrix {
        softmax_rows(&self.aug.dot(theta))
    }

    /// Newton direction `H⁻¹ g`, with a relative jitter covering the
    /// class-shift directions that leave the softmax unchanged.
    fn newton_direction(&self, theta: &Matrix, grad: &Matrix) -> Matrix {
        let (d, c) = theta.dim();
        let dim = d * c;
        let p = self.probabilities(theta);
        let mut h = Array2::<f64>::zeros((dim, dim));
        let inv_n = 1.0 / self.n();
        for (a, pi) in self.aug.outer_iter().zip(p.outer_iter()) {
            for j in 0..d {
                let aj = a[j] * inv_n;
                if aj == 0.0 {
                    continue;
                }
                for jp in 0..=j {
                    let ajj = aj * a[jp];
                    if ajj == 0.0 {
                        continue;
                    }
                    for k in 0..c {
                        let row = j * c + k;
                        for kp in 0..c {
                            let s = if k == kp {
                                pi[k] - pi[k] * pi[k]
                            } else {
                                -pi[k] * pi[kp]
                            };
                            h[[row, jp * c + kp]] += ajj * s;
                        }
                    }
                }
            }
        }
        for r in 0..dim {
            for col in r + 1..dim {
                h[[r, col]] = h[[col, r]];
            }
        }
        for j in 0..d - 1 {
            for k in 0..c {
                h[[j * c + k, j * c + k]] += self.l2;
            }
        }
        let flat = grad
            .to_shape((dim, 1))
            .expect("contiguous gradient")
            .to_owned();
        SpdSolver::new(&h)
            .solve(&flat)
            .into_shape_with_order((d, c))
            .expect("newton direction shape")
    }
}

fn frobenius(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fit a `classes`-way linear head on fixed features by accelerated
/// full-batch descent, preconditioned by the feature Gram matrix, with
/// momentum restarted whenever the objective goes up. Stops once the gradient norm is at most
/// `grad_tol` or after `max_iter` iterations, and returns the best iterate
/// seen. `init` warm-starts the search; the default start is all zeros.
pub fn solve_head(
    features: &Matrix,
    labels: &[usize],
    classes: usize,
    init: Option<&Head>,
    opts: &HeadFitOptions,
) -> Result<HeadFit> {
    ensure(!labels.is_empty(), || {
        "head fit needs at least one example".into()
    })?;
    ensure(features.nrows() == labels.len(), || {
        format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )
    })?;
    ensure(labels.iter().all(|&y| y < classes), || {
        format!("labels must lie below {classes}")
    })?;
    let n = labels.len();
    let l2 = opts.l2.unwrap_or(1.0 / n as f64);
    ensure(l2 >= 0.0 && l2.is_finite(), || {
        format!("bad l2 penalty {l2}")
    })?;
    let ones = Array2::from_elem((n, 1), 1.0);
    let aug = ndarray::concatenate(Axis(1), &[features.view(), ones.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    let problem = Problem { aug, labels, l2 };

    let start = match init {
        Some(h) => {
            ensure(
                h.weight.dim() == (features.ncols(), classes) && h.bias.dim() == (1, classes),
                || "warm-start head has the wrong shape".into(),
            )?;
            h.stacked()
        }
        None => Array2::zeros((features.ncols() + 1, classes)),
    };
    let (d, c) = start.dim();
    let (best, iterations) = if d * c <= NEWTON_MAX_DIM {
        newton(&problem, start, opts)?
    } else {
        accelerated(&problem, start, opts)?
    };
    let (objective, grad_norm, theta) = best;
    Ok(HeadFit {
        loss: problem.loss(&theta),
        head: Head::from_stacked(&theta),
        objective,
        grad_norm,
        iterations,
    })
}

type Best = (f64, f64, Matrix);

fn check_finite(f: f64) -> Result<()> {
    ensure(f.is_finite(), || "head fit objective".into()).map_err(|_| Error::NonFinite {
        location: "head fit objective".into(),
    })
}

fn keep_best(best: &mut Best, f: f64, g: f64, x: &Matrix) {
    if f < best.0 || (f == best.0 && g < best.1) {
        *best = (f, g, x.clone());
    }
}

/// Damped Newton with Armijo backtracking.
fn newton(problem: &Problem<'_>, start: Matrix, opts: &HeadFitOptions) -> Result<(Best, usize)> {
    let (mut fx, mut gx) = problem.value_and_grad(&start);
    check_finite(fx)?;
    let mut x = start;
    let mut best = (fx, frobenius(&gx), x.clone());
    let mut iterations = 0;
    while iterations < opts.max_iter && best.1 > opts.grad_tol {
        iterations += 1;
        let dir = problem.newton_direction(&x, &gx);
        let slope = (&gx * &dir).sum();
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let cand = &x - &(&dir * step);
            let (fc, gc) = problem.value_and_grad(&cand);
            if fc.is_finite() && fc <= fx - 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else {
            // no further decrease is representable
            break;
        };
        x = cand;
        fx = fc;
        gx = gc;
        keep_best(&mut best, fx, frobenius(&gx), &x);
    }
    Ok((best, iterations))
}

/// Accelerated descent in the metric of the feature Gram matrix.
fn accelerated(
    problem: &Problem<'_>,
    start: Matrix,
    opts: &HeadFitOptions,
) -> Result<(Best, usize)> {
    let chol = problem.preconditioner();
    let direction = |g: &Matrix| chol.solve(g);

    let (mut fx, mut gx) = problem.value_and_grad(&start);
    let mut x = start;
    let mut best = (fx, frobenius(&gx), x.clone());
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    while iterations < opts.max_iter && best.1 > opts.grad_tol {
        iterations += 1;
        let (_, gy) = problem.value_and_grad(&y);
        let x_next = &y - &direction(&gy);
        let (f_next, g_next) = problem.value_and_grad(&x_next);
        check_finite(f_next)?;
        if f_next > fx {
            // restart from the last point with a plain gradient step
            t = 1.0;
            let x_plain = &x - &direction(&gx);
            let (fp, gp) = problem.value_and_grad(&x_plain);
            x = x_plain;
            fx = fp;
            gx = gp;
            y = x.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_next + &((&x_next - &x) * ((t - 1.0) / t_next));
            t = t_next;
            x = x_next;
            fx = f_next;
            gx = g_next;
        }
        keep_best(&mut best, fx, frobenius(&gx), &x);
    }
    Ok((best, iterations))
}
