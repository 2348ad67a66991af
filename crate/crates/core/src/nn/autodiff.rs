//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every value is a 2-D [`Matrix`]; scalars are `1 x 1`. Operations are
//! recorded on a [`Tape`] as they are evaluated, and [`Tape::backward`]
//! walks the tape in reverse accumulating gradients. Shape mismatches are
//! reported when an operation is recorded, not during the backward pass.
//!
//! The flow node is a custom primitive: its forward pass is the closed-form
//! aggregated flow and its derivative rule is the adjoint solve in
//! [`crate::flow::FlowEvaluator::gradient_adjoint`].

use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::flow::{DemandLaplacian, FlowEvaluator, FlowGraph};
use crate::graph::EdgeList;
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Exp(Var),
    LogEps(Var, f64),
    Relu(Var),
    Gelu(Var),
    Silu(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Dropout(Var, Matrix),
    MinMaxNorm {
        x: Var,
        argmin: usize,
        argmax: usize,
        range: f64,
    },
    ScatterSymmetric {
        edges: Var,
        fill: Var,
        pairs: Vec<(usize, usize)>,
    },
    Flow {
        capacities: Var,
        evaluator: Box<FlowEvaluator>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by parameter id.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Option<Matrix>>,
}

impl ParamGrads {
    pub fn get(&self, param: usize) -> Option<&Matrix> {
        self.grads.get(param).and_then(Option::as_ref)
    }

    pub fn into_vec(self) -> Vec<Option<Matrix>> {
        self.grads
    }
}

fn shape_str(m: &Matrix) -> String {
    format!("{}x{}", m.rows(), m.cols())
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: usize, value: Matrix) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `a + row`, broadcasting a `1 x c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::dim(format!("1x{}", am.cols()), shape_str(rm)));
        }
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(rm.row(0)) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    fn check_scalar(&self, s: Var) -> Result<f64> {
        let m = self.value(s);
        if m.shape() != (1, 1) {
            return Err(Error::dim("1x1", shape_str(m)));
        }
        Ok(m[(0, 0)])
    }

    /// `a + s` for a `1 x 1` node `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar(s)?;
        let v = self.value(a).map(|x| x + k);
        Ok(self.push(v, Op::AddScalar(a, s)))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar(s)?;
        let v = self.value(a).map(|x| x * k);
        Ok(self.push(v, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
            let mut total = 0.0;
            for z in row.iter_mut() {
                *z = (*z - max).exp();
                total += *z;
            }
            row.iter_mut().for_each(|z| *z /= total);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// `log(a + eps)`.
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| (x + eps).ln());
        self.push(v, Op::LogEps(a, eps))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.log_eps(a, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Row-wise layer normalisation with `1 x c` scale and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xm = self.value(x);
        let c = xm.cols();
        for p in [gamma, beta] {
            let pm = self.value(p);
            if pm.shape() != (1, c) {
                return Err(Error::dim(format!("1x{c}"), shape_str(pm)));
            }
        }
        let (g, b) = (self.value(gamma).row(0), self.value(beta).row(0));
        let mut xhat = Matrix::zeros(xm.rows(), c);
        let mut out = Matrix::zeros(xm.rows(), c);
        let mut inv_std = Vec::with_capacity(xm.rows());
        for i in 0..xm.rows() {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[(i, k)] = h;
                out[(i, k)] = g[k] * h + b[k];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::filled(1, 1, m.sum() / (m.rows() * m.cols()) as f64);
        self.push(v, Op::Mean(a))
    }

    /// Mean over rows, giving a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = Matrix::zeros(1, m.cols());
        for i in 0..m.rows() {
            for (o, x) in v.row_mut(0).iter_mut().zip(m.row(i)) {
                *o += x;
            }
        }
        let v = v.scale(1.0 / m.rows() as f64);
        self.push(v, Op::MeanRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let m = self.value(a);
        if start >= end || end > m.cols() {
            return Err(Error::dim(
                format!("column range within {}", m.cols()),
                format!("{start}..{end}"),
            ));
        }
        let v = Matrix::from_fn(m.rows(), end - start, |i, j| m[(i, start + j)]);
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::InvalidInput("concat of zero parts".into()))?;
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::dim(format!("{rows} rows"), shape_str(m)));
            }
            cols += m.cols();
        }
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            for i in 0..rows {
                v.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::InvalidInput(format!(
                "row index {bad} out of range for {} rows",
                m.rows()
            )));
        }
        let v = Matrix::from_fn(index.len(), m.cols(), |i, j| m[(index[i], j)]);
        Ok(self.push(v, Op::GatherRows(a, index.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).clone().reshaped(rows, cols)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Inverted dropout; a no-op when `rng` is `None` or `rate` is zero.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: Option<&mut Rng>) -> Var {
        let Some(rng) = rng.filter(|_| rate > 0.0) else {
            return a;
        };
        use rand::Rng as _;
        let m = self.value(a);
        let keep = 1.0 - rate;
        let mask = Matrix::from_fn(m.rows(), m.cols(), |_, _| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let v = m.zip_map(&mask, |x, k| x * k).expect("same shape");
        self.push(v, Op::Dropout(a, mask))
    }

    /// Min-max normalisation of a column vector onto `[0, 1]`; `0.5` everywhere
    /// when all entries coincide.
    pub fn min_max_norm(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        if m.cols() != 1 || m.rows() == 0 {
            return Err(Error::dim("nonempty column vector", shape_str(m)));
        }
        let vals = m.as_slice();
        let (mut argmin, mut argmax) = (0, 0);
        for (k, &z) in vals.iter().enumerate() {
            if z < vals[argmin] {
                argmin = k;
            }
            if z > vals[argmax] {
                argmax = k;
            }
        }
        let (lo, hi) = (vals[argmin], vals[argmax]);
        let range = hi - lo;
        let degenerate = !(range > 1e-12 * hi.abs().max(lo.abs()).max(1.0));
        let v = if degenerate {
            Matrix::filled(vals.len(), 1, 0.5)
        } else {
            m.map(|z| (z - lo) / range)
        };
        let range = if degenerate { 0.0 } else { range };
        Ok(self.push(
            v,
            Op::MinMaxNorm {
                x,
                argmin,
                argmax,
                range,
            },
        ))
    }

    /// Symmetric `n x n` matrix with `edges[m]` at `(i, j)` and `(j, i)` for
    /// `pairs[m] = (i, j)`, `fill` at every other off-diagonal entry and 1 on
    /// the diagonal.
    pub fn scatter_symmetric(
        &mut self,
        edges: Var,
        fill: Var,
        pairs: &[(usize, usize)],
        n: usize,
    ) -> Result<Var> {
        let f = self.check_scalar(fill)?;
        let e = self.value(edges);
        if e.shape() != (pairs.len(), 1) {
            return Err(Error::dim(format!("{}x1", pairs.len()), shape_str(e)));
        }
        let mut v = Matrix::filled(n, n, f);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidInput(format!("invalid pair ({i}, {j})")));
            }
            v[(i, j)] = e[(k, 0)];
            v[(j, i)] = e[(k, 0)];
        }
        for i in 0..n {
            v[(i, i)] = 1.0;
        }
        Ok(self.push(
            v,
            Op::ScatterSymmetric {
                edges,
                fill,
                pairs: pairs.to_vec(),
            },
        ))
    }

    /// Closed-form aggregated flow for capacities `capacities` (an `M x 1` node).
    pub fn flow(
        &mut self,
        capacities: Var,
        edges: &EdgeList,
        demand: &DemandLaplacian,
        delta: f64,
    ) -> Result<Var> {
        let c = self.value(capacities);
        if c.shape() != (edges.len(), 1) {
            return Err(Error::dim(format!("{}x1", edges.len()), shape_str(c)));
        }
        let graph = FlowGraph::new(edges.clone(), c.as_slice().to_vec(), delta)?;
        let mut evaluator = Box::new(FlowEvaluator::new(graph, demand.clone())?);
        let phi = Matrix::column(&evaluator.forward()?.phi);
        Ok(self.push(
            phi,
            Op::Flow {
                capacities,
                evaluator,
            },
        ))
    }

    /// Softmax cross-entropy for a `1 x C` row of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.value(logits);
        if l.rows() != 1 || label >= l.cols() {
            return Err(Error::InvalidInput(format!(
                "label {label} for logits {}",
                shape_str(l)
            )));
        }
        let row = l.row(0);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - row[label];
        let probs = softmax(row);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Backpropagates from scalar `root`, returning gradients of every parameter leaf.
    pub fn backward(&self, root: Var) -> Result<ParamGrads> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Usage("backward requires a scalar root".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut params: Vec<Option<Matrix>> = Vec::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if params.len() <= *id {
                        params.resize(*id + 1, None);
                    }
                    accumulate(&mut params[*id], g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.t_matmul(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::AddScalar(a, s) => {
                    acc(&mut grads, *s, Matrix::filled(1, 1, g.sum()));
                    acc(&mut grads, *a, g);
                }
                Op::MulScalar(a, s) => {
                    let k = self.scalar(*s);
                    let gs = g.zip_map(self.value(*a), |x, y| x * y)?.sum();
                    acc(&mut grads, *s, Matrix::filled(1, 1, gs));
                    acc(&mut grads, *a, g.scale(k));
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.scale(*k)),
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::SoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let y = out.row(i);
                        let s: f64 = g.row(i).iter().zip(y).map(|(a, b)| a * b).sum();
                        for (z, &yy) in ga.row_mut(i).iter_mut().zip(y) {
                            *z = yy * (*z - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y))?),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(out, |x, y| x * y)?),
                Op::LogEps(a, eps) => {
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(self.value(*a), |x, z| x / (z + eps))?,
                    );
                }
                Op::Relu(a) => {
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(self.value(*a), |x, z| if z > 0.0 { x } else { 0.0 })?,
                    );
                }
                Op::Gelu(a) => acc(
                    &mut grads,
                    *a,
                    g.zip_map(self.value(*a), |x, z| x * gelu_grad(z))?,
                ),
                Op::Silu(a) => {
                    let f = |x: f64, z: f64| {
                        let s = sigmoid(z);
                        x * s * (1.0 + z * (1.0 - s))
                    };
                    acc(&mut grads, *a, g.zip_map(self.value(*a), f)?);
                }
                Op::Clamp(a, lo, hi) => {
                    let f = |x: f64, z: f64| if z < *lo || z > *hi { 0.0 } else { x };
                    acc(&mut grads, *a, g.zip_map(self.value(*a), f)?);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gm = self.value(*gamma).row(0);
                    let c = g.cols();
                    let mut gx = Matrix::zeros(g.rows(), c);
                    let mut gg = Matrix::zeros(1, c);
                    let mut gb = Matrix::zeros(1, c);
                    for i in 0..g.rows() {
                        let (gi, hi) = (g.row(i), xhat.row(i));
                        let dxhat: Vec<f64> = gi.iter().zip(gm).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hi).map(|(a, b)| a * b).sum();
                        let k = inv_std[i] / c as f64;
                        for j in 0..c {
                            gx[(i, j)] = k * (c as f64 * dxhat[j] - s1 - hi[j] * s2);
                            gg[(0, j)] += gi[j] * hi[j];
                            gb[(0, j)] += gi[j];
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                }
                Op::Sum(a) => {
                    let m = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        Matrix::filled(m.rows(), m.cols(), g[(0, 0)]),
                    );
                }
                Op::Mean(a) => {
                    let m = self.value(*a);
                    let k = g[(0, 0)] / (m.rows() * m.cols()) as f64;
                    acc(&mut grads, *a, Matrix::filled(m.rows(), m.cols(), k));
                }
                Op::MeanRows(a) => {
                    let m = self.value(*a);
                    let k = 1.0 / m.rows() as f64;
                    acc(
                        &mut grads,
                        *a,
                        Matrix::from_fn(m.rows(), m.cols(), |_, j| g[(0, j)] * k),
                    );
                }
                Op::SliceCols(a, start) => {
                    let m = self.value(*a);
                    let mut ga = Matrix::zeros(m.rows(), m.cols());
                    for i in 0..m.rows() {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc(
                            &mut grads,
                            p,
                            Matrix::from_fn(g.rows(), w, |i, j| g[(i, off + j)]),
                        );
                        off += w;
                    }
                }
                Op::GatherRows(a, index) => {
                    let m = self.value(*a);
                    let mut ga = Matrix::zeros(m.rows(), m.cols());
                    for (k, &r) in index.iter().enumerate() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, g.reshaped(r, c)?);
                }
                Op::Dropout(a, mask) => acc(&mut grads, *a, g.zip_map(mask, |x, k| x * k)?),
                Op::MinMaxNorm {
                    x,
                    argmin,
                    argmax,
                    range,
                } => {
                    let len = g.rows();
                    let mut gx = Matrix::zeros(len, 1);
                    if *range > 0.0 {
                        let (mut to_min, mut to_max) = (0.0, 0.0);
                        for k in 0..len {
                            let (gk, nk) = (g[(k, 0)], out[(k, 0)]);
                            gx[(k, 0)] += gk / range;
                            to_min += gk * (nk - 1.0) / range;
                            to_max -= gk * nk / range;
                        }
                        gx[(*argmin, 0)] += to_min;
                        gx[(*argmax, 0)] += to_max;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ScatterSymmetric { edges, fill, pairs } => {
                    let n = g.rows();
                    let mut ge = Matrix::zeros(pairs.len(), 1);
                    let mut total_off = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            if i != j {
                                total_off += g[(i, j)];
                            }
                        }
                    }
                    let mut edge_part = 0.0;
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let v = g[(i, j)] + g[(j, i)];
                        ge[(k, 0)] = v;
                        edge_part += v;
                    }
                    acc(&mut grads, *edges, ge);
                    acc(
                        &mut grads,
                        *fill,
                        Matrix::filled(1, 1, total_off - edge_part),
                    );
                }
                Op::Flow {
                    capacities,
                    evaluator,
                } => {
                    let fg = evaluator.gradient_adjoint(g.as_slice())?;
                    acc(&mut grads, *capacities, Matrix::column(&fg.capacities));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let k = g[(0, 0)];
                    let gl = Matrix::from_fn(1, probs.len(), |_, j| {
                        k * (probs[j] - if j == *label { 1.0 } else { 0.0 })
                    });
                    acc(&mut grads, *logits, gl);
                }
            }
        }
        Ok(ParamGrads { grads: params })
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape is fixed by the forward pass"),
        None => *slot = Some(g),
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    accumulate(&mut grads[v.0], g);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|z| z / total).collect()
}
