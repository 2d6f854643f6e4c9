//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! tape in reverse and returns gradients for every node, including the
//! parameters borrowed from a [`ParamStore`].

use std::f64::consts::PI;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    SoftClamp(Var, f64),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNormRows { input: Var, rstd: Vec<f64> },
    MeanRows(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherCols(Var, Vec<usize>),
    RepeatRows(Var),
    /// Row-wise external scalar function; stores `d out_r / d input[r, :]`.
    RowFn(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
}

/// Gradients for every node of a tape.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to the leaf `v` (zeros if `v` does not influence the loss).
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.nodes[v.0].clone().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    /// Adds `scale` times the parameter gradients into `into`.
    pub fn accumulate(&self, into: &mut ParamGrads, scale: f64) {
        for (pid, node) in &self.params {
            if let Some(g) = &self.nodes[*node] {
                into.add_scaled(*pid, g, scale);
            }
        }
    }
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Graph<'s> {
    pub fn new() -> Self {
        Self { store: None, nodes: Vec::new() }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Self { store: Some(store), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(pid) => self.store.expect("param node without store").value(pid),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, pid: ParamId) -> Var {
        assert!(self.store.is_some(), "graph has no parameter store");
        self.push(Tensor::zeros(0, 0), Op::Param(pid))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = Tensor::matmul_t(self.value(a), false, self.value(b), false);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = Tensor::matmul_t(self.value(a), false, self.value(b), true);
        self.push(v, Op::MatMulNT(a, b))
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

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((rv.rows(), rv.cols()), (1, av.cols()), "add_row shape");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!((rv.rows(), rv.cols()), (1, av.cols()), "mul_row shape");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *x *= b;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `c · (2/π) · atan(x / c)`: smooth, bijective squashing into `(-c, c)`.
    pub fn soft_clamp(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * (2.0 / PI) * (x / c).atan());
        self.push(v, Op::SoftClamp(a, c))
    }

    /// Hard clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        let n = v.cols() as f64;
        let mut rstd = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let rs = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * rs;
            }
            rstd.push(rs);
        }
        self.push(v, Op::LayerNormRows { input: a, rstd })
    }

    /// Column means: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, x) in v.data_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let m = av.rows() as f64;
        v.scale_assign(1.0 / m);
        self.push(v, Op::MeanRows(a))
    }

    /// Column sums: `m x n -> 1 x n`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, x) in v.data_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        self.push(v, Op::SumRows(a))
    }

    /// Row sums: `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Tensor::from_vec(av.rows(), 1, (0..av.rows()).map(|r| av.row(r).iter().sum()).collect());
        self.push(v, Op::SumCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let v = Tensor::from_vec(len, av.cols(), av.data()[start * av.cols()..(start + len) * av.cols()].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    /// Column `j` of the result is column `idx[j]` of `a`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(av.rows(), idx.len());
        for r in 0..av.rows() {
            let src = av.row(r);
            for (o, &j) in v.row_mut(r).iter_mut().zip(idx) {
                *o = src[j];
            }
        }
        self.push(v, Op::GatherCols(a, idx.to_vec()))
    }

    /// Tiles a `1 x n` row into `m x n`.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows(), 1, "repeat_rows expects a row vector");
        let mut data = Vec::with_capacity(m * av.cols());
        for _ in 0..m {
            data.extend_from_slice(av.data());
        }
        let v = Tensor::from_vec(m, av.cols(), data);
        self.push(v, Op::RepeatRows(a))
    }

    /// Applies an externally differentiated scalar function to each row of
    /// `a`: `values[r] = f(a[r, :])`, `grads[r, :] = ∇f(a[r, :])`.
    pub fn row_fn(&mut self, a: Var, values: Vec<f64>, grads: Tensor) -> Var {
        let av = self.value(a);
        assert_eq!(values.len(), av.rows());
        assert_eq!(grads.shape(), av.shape());
        let v = Tensor::from_vec(values.len(), 1, values);
        self.push(v, Op::RowFn(a, grads))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => continue,
                Op::Param(pid) => {
                    if grads[idx].is_some() {
                        params.push((*pid, idx));
                    }
                    continue;
                }
                _ => {}
            }
            // Interior gradients are consumed; only leaves keep theirs.
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate_gemm(&mut grads, *a, &g, false, bv, true);
                    accumulate_gemm_left(&mut grads, *b, av, true, &g, false);
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // c = a bᵀ: da = g b, db = gᵀ a
                    accumulate_gemm(&mut grads, *a, &g, false, bv, false);
                    accumulate_gemm_left(&mut grads, *b, &g, true, av, false);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.zip_map(bv, |x, y| x * y));
                    acc(&mut grads, *b, g.zip_map(av, |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, col_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (self.value(*a), self.value(*row));
                    let mut gr = Tensor::zeros(1, rv.cols());
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr.data_mut()[c] += g.get(r, c) * av.get(r, c);
                            ga.set(r, c, g.get(r, c) * rv.data()[c]);
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Relu(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(av, |x, y| if y > 0.0 { x } else { 0.0 }));
                }
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(out, |x, t| x * (1.0 - t * t))),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
                Op::Exp(a) => acc(&mut grads, *a, g.zip_map(out, |x, e| x * e)),
                Op::Square(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(av, |x, y| 2.0 * x * y));
                }
                Op::SoftClamp(a, c) => {
                    let av = self.value(*a);
                    let c = *c;
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(av, |x, y| x * (2.0 / PI) / (1.0 + (y / c) * (y / c))),
                    );
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a);
                    let (lo, hi) = (*lo, *hi);
                    acc(&mut grads, *a, g.zip_map(av, |x, y| if y >= lo && y <= hi { x } else { 0.0 }));
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let (gr, sr) = (g.row(r), out.row(r));
                        let dot: f64 = gr.iter().zip(sr).map(|(x, s)| x * s).sum();
                        for (o, (x, s)) in ga.row_mut(r).iter_mut().zip(gr.iter().zip(sr)) {
                            *o = s * (x - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNormRows { input, rstd } => {
                    let n = g.cols() as f64;
                    let mut ga = g.clone();
                    for r in 0..g.rows() {
                        let (gr, yr) = (g.row(r), out.row(r));
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(x, y)| x * y).sum::<f64>() / n;
                        for (o, (x, y)) in ga.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = rstd[r] * (x - mean_g - y * mean_gy);
                        }
                    }
                    acc(&mut grads, *input, ga);
                }
                Op::MeanRows(a) => {
                    let (m, _) = self.shape(*a);
                    let row = g.map(|x| x / m as f64);
                    acc(&mut grads, *a, tile(&row, m));
                }
                Op::SumRows(a) => {
                    let (m, _) = self.shape(*a);
                    acc(&mut grads, *a, tile(&g, m));
                }
                Op::RepeatRows(a) => acc(&mut grads, *a, col_sums(&g)),
                Op::SumCols(a) => {
                    let (m, n) = self.shape(*a);
                    let mut ga = Tensor::zeros(m, n);
                    for r in 0..m {
                        let gv = g.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x = gv);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (m, n) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(m, n, g.item()));
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (m, n) = self.shape(*p);
                        let piece = Tensor::from_vec(m, n, g.data()[off * n..(off + m) * n].to_vec());
                        acc(&mut grads, *p, piece);
                        off += m;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (m, n) = self.shape(*p);
                        let mut piece = Tensor::zeros(m, n);
                        for r in 0..m {
                            piece.row_mut(r).copy_from_slice(&g.row(r)[off..off + n]);
                        }
                        acc(&mut grads, *p, piece);
                        off += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (m, n) = self.shape(*a);
                    let mut ga = Tensor::zeros(m, n);
                    ga.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.shape(*a);
                    let mut ga = Tensor::zeros(m, n);
                    for r in 0..m {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherCols(a, idx) => {
                    let (m, n) = self.shape(*a);
                    let mut ga = Tensor::zeros(m, n);
                    for r in 0..m {
                        for (c, &j) in idx.iter().enumerate() {
                            ga.data_mut()[r * n + j] += g.get(r, c);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowFn(a, jac) => {
                    let mut ga = jac.clone();
                    for r in 0..ga.rows() {
                        let gv = g.data()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x *= gv);
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// grads[v] += op(x)·op(y)
fn accumulate_gemm(grads: &mut [Option<Tensor>], v: Var, x: &Tensor, tx: bool, y: &Tensor, ty: bool) {
    match &mut grads[v.0] {
        Some(existing) => gemm_into(x, tx, y, ty, existing, 1.0),
        slot @ None => *slot = Some(Tensor::matmul_t(x, tx, y, ty)),
    }
}

fn accumulate_gemm_left(grads: &mut [Option<Tensor>], v: Var, x: &Tensor, tx: bool, y: &Tensor, ty: bool) {
    accumulate_gemm(grads, v, x, tx, y, ty)
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

fn tile(row: &Tensor, m: usize) -> Tensor {
    let mut data = Vec::with_capacity(m * row.cols());
    for _ in 0..m {
        data.extend_from_slice(row.data());
    }
    Tensor::from_vec(m, row.cols(), data)
}
