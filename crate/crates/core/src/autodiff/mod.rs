//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! and [`Graph::backward`] walks the tape in reverse accumulating
//! vector-Jacobian products. Everything is two-dimensional; row vectors are
//! `1×n` matrices and scalars are `1×1`.
//!
//! Operations that are awkward to express as a chain of primitives (skinning,
//! axis-angle rotations, the quotient-weighted losses) plug in through
//! [`CustomOp`].

mod params;

pub use params::{ParamId, ParamStore};

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation with a hand-written backward pass.
///
/// The forward value is computed by the caller and handed to
/// [`Graph::custom`]; only the vector-Jacobian product lives here.
pub trait CustomOp {
    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Mat], output: &Mat, grad: &Mat) -> Vec<Mat>;
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    SumSq(Var),
    MeanRows(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const LN_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free input that receives a gradient (used by gradient checks).
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn row_constant(&mut self, values: &[f64]) -> Var {
        let m = Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(m)
    }

    /// Registers a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id.index()) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id.index(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `a + row` with `row` (`1×n`) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row: row shape");
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    /// `a - row` with broadcasting.
    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        let neg = self.scale(row, -1.0);
        self.add_row(a, neg)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row: row shape");
        let v = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::MulRow(a, row), rg)
    }

    /// `a * col` with `col` (`m×1`) broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(col), (m, 1), "mul_col: column shape");
        let v = self.value(a) * self.value(col);
        let rg = self.rg(a) || self.rg(col);
        self.push(v, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        let rg = self.rg(a);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    /// Row-wise softmax. `mask[[r, c]] == false` excludes an entry, which then
    /// gets exactly zero weight. Every row must keep at least one entry.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<ArrayView2<'_, bool>>) -> Var {
        let x = self.value(a);
        let mut out = Mat::zeros(x.dim());
        for (r, row) in x.outer_iter().enumerate() {
            let keep = |c: usize| mask.as_ref().is_none_or(|m| m[[r, c]]);
            let mut max = f64::NEG_INFINITY;
            let mut kept = 0;
            for (c, &val) in row.iter().enumerate() {
                if keep(c) {
                    kept += 1;
                    max = max.max(val);
                }
            }
            assert!(kept > 0, "softmax row {r} fully masked");
            let mut total = 0.0;
            for (c, &val) in row.iter().enumerate() {
                if keep(c) {
                    let e = (val - max).exp();
                    out[[r, c]] = e;
                    total += e;
                }
            }
            out.row_mut(r).mapv_inplace(|e| e / total);
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.dim();
        let mut out = Mat::zeros((m, n));
        let mut inv_std = Vec::with_capacity(m);
        for (r, row) in x.outer_iter().enumerate() {
            let mean = row.sum() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (c, v) in row.iter().enumerate() {
                out[[r, c]] = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm(a, inv_std), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, r + 1)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape: element count");
        let v = Mat::from_shape_vec((rows, cols), x.iter().copied().collect()).expect("reshape");
        let rg = self.rg(a);
        self.push(v, Op::Reshape(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    /// Sum of squared entries.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        let rg = self.rg(a);
        self.push(v, Op::SumSq(a), rg)
    }

    /// Column means, `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.nrows() as f64;
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / m;
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn custom(&mut self, inputs: &[Var], value: Mat, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|p| self.rg(*p));
        self.push(value, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Runs reverse accumulation from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(val(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.t().dot(val(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * val(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * val(*a));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*r) {
                    self.accumulate(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, r) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * val(*r));
                }
                if self.rg(*r) {
                    let d = (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *r, d);
                }
            }
            Op::MulCol(a, c) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * val(*c));
                }
                if self.rg(*c) {
                    let d = (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *c, d);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::Gelu(a) => {
                let mut d = val(*a).mapv(gelu_grad);
                d *= g;
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = node.value.mapv(|y| y * (1.0 - y)) * g;
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = val(*a).mapv(sigmoid) * g;
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Mat::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                    for c in 0..y.ncols() {
                        d[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm(a, inv_std) => {
                let y = &node.value;
                let n = y.ncols() as f64;
                let mut d = Mat::zeros(y.dim());
                for r in 0..y.nrows() {
                    let gm = g.row(r).sum() / n;
                    let gy: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum::<f64>() / n;
                    for c in 0..y.ncols() {
                        d[[r, c]] = inv_std[r] * (g[[r, c]] - gm - y[[r, c]] * gy);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).ncols();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = val(*p).nrows();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Mat::zeros(val(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => {
                let dim = val(*a).dim();
                let d = Mat::from_shape_vec(dim, g.iter().copied().collect()).expect("reshape grad");
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let d = Mat::from_elem(val(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::SumSq(a) => {
                let d = val(*a) * (2.0 * g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let (m, n) = val(*a).dim();
                let mut d = Mat::zeros((m, n));
                for mut row in d.outer_iter_mut() {
                    row.assign(&(g.row(0).to_owned() / m as f64));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Mat> = inputs.iter().map(|v| val(*v)).collect();
                let ds = op.backward(&ins, &node.value, g);
                debug_assert_eq!(ds.len(), inputs.len());
                for (v, d) in inputs.iter().zip(ds) {
                    self.accumulate(grads, *v, d);
                }
            }
        }
    }

    /// Gradients of every parameter in `store`, zero for unused ones.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Mat> {
        (0..store.len())
            .map(|i| {
                self.params
                    .get(&i)
                    .and_then(|v| grads.get(*v).cloned())
                    .unwrap_or_else(|| Mat::zeros(store.get(ParamId::from_index(i)).dim()))
            })
            .collect()
    }
}

/// Numerical gradient of `f` with respect to every entry of `x` by central
/// differences.
pub fn central_difference(x: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut probe = x.clone();
    let mut out = Mat::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn check<F>(inputs: &[Mat], build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        for (k, x) in inputs.iter().enumerate() {
            let numeric = central_difference(x, 1e-6, |probe| {
                let mut g2 = Graph::new();
                let vars2: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, m)| g2.input(if j == k { probe.clone() } else { m.clone() }))
                    .collect();
                let out2 = build(&mut g2, &vars2);
                g2.scalar(out2)
            });
            let analytic = grads.get(vars[k]).expect("input gradient");
            for (a, n) in analytic.iter().zip(numeric.iter()) {
                assert!(relative_error(*a, *n, 1e-6) < 1e-6, "input {k}: analytic {a} numeric {n}");
            }
        }
    }

    fn weights(m: usize, n: usize, seed: f64) -> Mat {
        Mat::from_shape_fn((m, n), |(i, j)| ((i * n + j) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn matmul_and_transposes() {
        check(&[weights(3, 4, 0.1), weights(4, 2, 0.7)], |g, v| {
            let p = g.matmul(v[0], v[1]);
            let t = g.transpose(p);
            let q = g.matmul_t(t, t);
            g.sum(q)
        });
    }

    #[test]
    fn broadcasting_ops() {
        check(&[weights(3, 4, 0.2), weights(1, 4, 1.1), weights(3, 1, 2.3)], |g, v| {
            let a = g.add_row(v[0], v[1]);
            let b = g.mul_row(a, v[1]);
            let c = g.mul_col(b, v[2]);
            let d = g.sub_row(c, v[1]);
            g.sum_sq(d)
        });
    }

    #[test]
    fn nonlinearities() {
        check(&[weights(2, 5, 0.3)], |g, v| {
            let a = g.gelu(v[0]);
            let b = g.sigmoid(a);
            let c = g.softplus(v[0]);
            let d = g.mul(b, c);
            g.sum(d)
        });
    }

    #[test]
    fn softmax_and_layer_norm() {
        let mask = array![[true, false, true, true], [true, true, true, false]];
        check(&[weights(2, 4, 0.9), weights(2, 4, 1.9)], move |g, v| {
            let p = g.softmax_rows(v[0], Some(mask.view()));
            let n = g.layer_norm_rows(v[1]);
            let m = g.mul(p, n);
            let s = g.sum_sq(m);
            let q = g.softmax_rows(v[1], None);
            let t = g.sum_sq(q);
            g.add(s, t)
        });
    }

    #[test]
    fn masked_softmax_entries_are_exactly_zero() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, 2.0, 3.0]]);
        let mask = array![[true, false, true]];
        let p = g.softmax_rows(x, Some(mask.view()));
        assert_eq!(g.value(p)[[0, 1]], 0.0);
        assert!((g.value(p).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn structural_ops() {
        check(&[weights(3, 4, 0.4), weights(3, 2, 0.8)], |g, v| {
            let c = g.concat_cols(&[v[0], v[1]]);
            let r = g.concat_rows(&[c, c]);
            let s = g.slice_rows(r, 1, 5);
            let t = g.slice_cols(s, 2, 6);
            let u = g.reshape(t, 2, 8);
            let m = g.mean_rows(u);
            let w = g.scale(m, 3.0);
            let k = g.sub(w, w);
            let z = g.add(w, k);
            g.sum_sq(z)
        });
    }

    #[test]
    fn shared_param_accumulates_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[2.0]]);
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let p = g.mul(a, b);
        let grads = g.backward(p);
        let pg = g.param_grads(&grads, &store);
        assert_eq!(pg[0][[0, 0]], 4.0);
    }
}
