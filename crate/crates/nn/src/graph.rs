//! Reverse-mode automatic differentiation over whole matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and how it was produced. [`Graph::backward`] walks the tape in reverse
//! from a scalar loss and returns gradients for every node, from which
//! parameter gradients are collected.

use thiserror::Error;

use crate::matrix::Matrix;
use crate::spline::SplineSpec;
use crate::store::{ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("loss must be a 1x1 matrix, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// Adds a `1 x n` row to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize),
    PermuteCols(Var, Vec<usize>),
    RqSpline(Var, Var, SplineSpec),
    AffineAr(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a node; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    /// Per-parameter gradients aligned with `store`, summing repeated uses.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = store
            .values()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                out[pid].add_assign(g);
            }
        }
        out
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!(b.rows(), 1, "add_row needs a row vector");
        assert_eq!(x.cols(), b.cols(), "add_row width mismatch");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Elementwise product with a constant (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let v = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(v, Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `n x 1` column of row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::from_vec(
            x.rows(),
            1,
            (0..x.rows()).map(|i| x.row(i).iter().sum()).collect(),
        );
        self.push(v, Op::RowSum(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::scalar(x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start))
    }

    /// Output column `j` is input column `perm[j]`.
    pub fn permute_cols(&mut self, a: Var, perm: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(perm.len(), x.cols(), "permutation length mismatch");
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for (j, &p) in perm.iter().enumerate() {
                out[(i, j)] = x[(i, p)];
            }
        }
        self.push(out, Op::PermuteCols(a, perm))
    }

    /// Elementwise rational-quadratic spline of `x` (`n x d`) with raw
    /// parameters `params` (`n x d·P`, one block of `P` per dimension).
    /// Returns `n x (d+1)`: transformed values, then the row's summed log-det.
    pub fn rq_spline(&mut self, x: Var, params: Var, spec: SplineSpec) -> Var {
        let (xv, pv) = (self.value(x), self.value(params));
        let (n, d) = xv.shape();
        let p = spec.params_per_dim();
        assert_eq!(pv.shape(), (n, d * p), "spline parameter shape mismatch");
        let mut out = Matrix::zeros(n, d + 1);
        for i in 0..n {
            let mut ld = 0.0;
            for j in 0..d {
                let (y, l) = spec.forward(&pv.row(i)[j * p..(j + 1) * p], xv[(i, j)]);
                out[(i, j)] = y;
                ld += l;
            }
            out[(i, d)] = ld;
        }
        self.push(out, Op::RqSpline(x, params, spec))
    }

    /// Autoregressive affine map `z_j = (x_j - m_j) exp(-a_j)` with
    /// `params` laid out as `[m_j, a_j]` pairs per dimension. Returns
    /// `n x (d+1)`: `z`, then the row's log-det `-sum_j a_j`.
    pub fn affine_ar(&mut self, x: Var, params: Var) -> Var {
        let (xv, pv) = (self.value(x), self.value(params));
        let (n, d) = xv.shape();
        assert_eq!(pv.shape(), (n, 2 * d), "affine parameter shape mismatch");
        let mut out = Matrix::zeros(n, d + 1);
        for i in 0..n {
            let mut ld = 0.0;
            for j in 0..d {
                let (m, a) = (pv[(i, 2 * j)], pv[(i, 2 * j + 1)]);
                out[(i, j)] = (xv[(i, j)] - m) * (-a).exp();
                ld -= a;
            }
            out[(i, d)] = ld;
        }
        self.push(out, Op::AffineAr(x, params))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(GraphError::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => params.push((*pid, idx)),
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_t(self.value(*b)));
                    acc(*b, self.value(*a).t_matmul(&g));
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                    acc(*a, g.clone());
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y)),
                Op::Relu(a) => acc(
                    *a,
                    g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                ),
                Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)),
                Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))),
                Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x)),
                Op::RowSum(a) => {
                    let (n, m) = self.shape(*a);
                    let mut ga = Matrix::zeros(n, m);
                    for i in 0..n {
                        ga.row_mut(i).fill(g[(i, 0)]);
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => {
                    let (n, m) = self.shape(*a);
                    acc(*a, Matrix::filled(n, m, g.item()));
                }
                Op::Mean(a) => {
                    let (n, m) = self.shape(*a);
                    acc(*a, Matrix::filled(n, m, g.item() / (n * m) as f64));
                }
                Op::SliceCols(a, start) => {
                    let (n, m) = self.shape(*a);
                    let mut ga = Matrix::zeros(n, m);
                    for i in 0..n {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*a, ga);
                }
                Op::PermuteCols(a, perm) => {
                    let (n, m) = self.shape(*a);
                    let mut ga = Matrix::zeros(n, m);
                    for i in 0..n {
                        for (j, &p) in perm.iter().enumerate() {
                            ga[(i, p)] += g[(i, j)];
                        }
                    }
                    acc(*a, ga);
                }
                Op::RqSpline(x, params, spec) => {
                    let (xv, pv) = (self.value(*x), self.value(*params));
                    let (n, d) = xv.shape();
                    let p = spec.params_per_dim();
                    let mut gx = Matrix::zeros(n, d);
                    let mut gp = Matrix::zeros(n, d * p);
                    for i in 0..n {
                        let gl = g[(i, d)];
                        for j in 0..d {
                            let raw = &pv.row(i)[j * p..(j + 1) * p];
                            let graw = &mut gp.row_mut(i)[j * p..(j + 1) * p];
                            gx[(i, j)] =
                                spec.forward_backward(raw, xv[(i, j)], g[(i, j)], gl, graw);
                        }
                    }
                    acc(*x, gx);
                    acc(*params, gp);
                }
                Op::AffineAr(x, params) => {
                    let (xv, pv) = (self.value(*x), self.value(*params));
                    let (n, d) = xv.shape();
                    let mut gx = Matrix::zeros(n, d);
                    let mut gp = Matrix::zeros(n, 2 * d);
                    for i in 0..n {
                        let gl = g[(i, d)];
                        for j in 0..d {
                            let (m, a) = (pv[(i, 2 * j)], pv[(i, 2 * j + 1)]);
                            let s = (-a).exp();
                            let gz = g[(i, j)];
                            gx[(i, j)] = gz * s;
                            gp[(i, 2 * j)] = -gz * s;
                            gp[(i, 2 * j + 1)] = -gz * (xv[(i, j)] - m) * s - gl;
                        }
                    }
                    acc(*x, gx);
                    acc(*params, gp);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let mut g = Graph::new();
        let xm = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        let x = g.input(xm.clone());
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x, (2, 2)), xm.scale(2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Matrix::zeros(2, 1));
        assert_eq!(
            g.backward(x).unwrap_err(),
            GraphError::NonScalarLoss { rows: 2, cols: 1 }
        );
    }

    #[test]
    fn repeated_parameter_use_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(3.0));
        let mut g = Graph::new();
        let a = g.param(&store, w);
        let b = g.param(&store, w);
        let p = g.mul(a, b);
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.for_store(&store)[w].item(), 6.0);
    }

    #[test]
    fn unused_nodes_get_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(Matrix::scalar(1.0));
        let y = g.input(Matrix::scalar(2.0));
        let loss = g.scale(x, 4.0);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(y, (1, 1)).item(), 0.0);
        assert_eq!(grads.wrt(x, (1, 1)).item(), 4.0);
    }
}
