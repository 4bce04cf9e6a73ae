//! Tape-based reverse-mode differentiation.
//!
//! Every forward op appends a node holding its value and enough context to
//! run the backward rule. `backward` walks the tape in reverse from a scalar
//! loss and adds parameter gradients into the owning [`ParamStore`].

use std::sync::Arc;

use crate::error::{NumError, Result};
use crate::ops;
use crate::param::{ParamId, ParamStore};
use crate::tensor::{kernels, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Neighbor lists shared by message-passing ops.
pub type Adjacency = Arc<Vec<Vec<usize>>>;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Tensor),
    Square(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    NeighborMean(Var, Adjacency),
    NeighborSum(Var, Adjacency),
    SumAll(Var),
    MeanAll(Var),
    BceWithLogits(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, for leaves and parameters.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Epsilon used by [`Tape::layer_norm_rows`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf whose gradient is reported in [`Grads`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).shared_value(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(NumError::shape("matmul_nt", av.shape(), bv.shape()));
        }
        let mut out = Tensor::zeros(&[av.rows(), bv.rows()]);
        kernels::mm_nt(av, bv, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn check_row(&self, op: &'static str, x: Var, r: Var) -> Result<()> {
        let (xv, rv) = (self.value(x), self.value(r));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(NumError::shape(op, xv.shape(), rv.shape()));
        }
        Ok(())
    }

    /// Adds a `[1, c]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.check_row("add_row", x, r)?;
        let mut out = self.value(x).clone();
        let rv = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(r);
        Ok(self.push(out, Op::AddRow(x, r), rg))
    }

    /// Multiplies every row of `x` elementwise by a `[1, c]` row.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.check_row("mul_row", x, r)?;
        let mut out = self.value(x).clone();
        let rv = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            for (o, g) in out.row_mut(i).iter_mut().zip(&rv) {
                *o *= g;
            }
        }
        let rg = self.rg(x) || self.rg(r);
        Ok(self.push(out, Op::MulRow(x, r), rg))
    }

    fn scalar_of(&self, op: &'static str, s: Var) -> Result<f64> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(NumError::shape(op, sv.shape(), &[1, 1]));
        }
        Ok(sv.data()[0])
    }

    /// `x + s` for a one-element `s`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let k = self.scalar_of("add_scalar", s)?;
        let out = self.value(x).map(|v| v + k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::AddScalar(x, s), rg))
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let k = self.scalar_of("mul_scalar", s)?;
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::MulScalar(x, s), rg))
    }

    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let k = self.scalar_of("div_scalar", s)?;
        let out = self.value(x).map(|v| v / k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::DivScalar(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, k), rg)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v + k);
        let rg = self.rg(x);
        self.push(out, Op::AddConst(x), rg)
    }

    /// Elementwise product with a fixed tensor (masks, dropout).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(&c, |a, b| a * b)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    /// Inverted dropout; the mask is drawn from `rng`. Identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl rand::Rng) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(NumError::Invalid(format!("dropout rate {p} must be < 1")));
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(x, Tensor::new(shape, mask)?)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Natural log; callers keep inputs positive.
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, ops::gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, ops::sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, ops::softplus, Op::Softplus(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = ops::softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine.
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let (out, inv_std) = ops::normalize_rows(self.value(x), LAYER_NORM_EPS);
        let rg = self.rg(x);
        self.push(out, Op::LayerNormRows(x, inv_std), rg)
    }

    /// Layer norm with per-column gain and shift (each `[1, c]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let n = self.layer_norm_rows(x);
        let g = self.mul_row(n, gain)?;
        self.add_row(g, shift)
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let c = tv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= tv.rows() {
                return Err(NumError::OutOfRange {
                    what: "gather_rows",
                    index: i,
                    size: tv.rows(),
                });
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, data);
        let rg = self.rg(table);
        Ok(self.push(out, Op::GatherRows(table, idx.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| NumError::Invalid("concat_cols of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(NumError::shape("concat_cols", &[rows], v.shape()));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `lo..hi` of `x`.
    pub fn slice_cols(&mut self, x: Var, lo: usize, hi: usize) -> Result<Var> {
        let xv = self.value(x);
        if lo >= hi || hi > xv.cols() {
            return Err(NumError::OutOfRange {
                what: "slice_cols",
                index: hi,
                size: xv.cols(),
            });
        }
        let mut data = Vec::with_capacity(xv.rows() * (hi - lo));
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[lo..hi]);
        }
        let out = Tensor::matrix(xv.rows(), hi - lo, data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, lo), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| NumError::Invalid("concat_rows of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(NumError::shape("concat_rows", &[cols], v.shape()));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    fn check_adj(&self, op: &'static str, x: Var, adj: &Adjacency) -> Result<()> {
        let n = self.value(x).rows();
        if adj.len() != n {
            return Err(NumError::shape(op, self.shape(x), &[adj.len()]));
        }
        for list in adj.iter() {
            if let Some(&j) = list.iter().find(|&&j| j >= n) {
                return Err(NumError::OutOfRange {
                    what: op,
                    index: j,
                    size: n,
                });
            }
        }
        Ok(())
    }

    /// Row `i` of the result is the mean of rows `adj[i]` of `x` (zero when empty).
    pub fn neighbor_mean(&mut self, x: Var, adj: &Adjacency) -> Result<Var> {
        self.check_adj("neighbor_mean", x, adj)?;
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        for (i, list) in adj.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let inv = 1.0 / list.len() as f64;
            let orow = out.row_mut(i);
            for &j in list {
                for (o, &v) in orow.iter_mut().zip(xv.row(j)) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::NeighborMean(x, Arc::clone(adj)), rg))
    }

    /// Row `i` of the result is the sum of rows `adj[i]` of `x`.
    pub fn neighbor_sum(&mut self, x: Var, adj: &Adjacency) -> Result<Var> {
        self.check_adj("neighbor_sum", x, adj)?;
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        for (i, list) in adj.iter().enumerate() {
            let orow = out.row_mut(i);
            for &j in list {
                for (o, &v) in orow.iter_mut().zip(xv.row(j)) {
                    *o += v;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::NeighborSum(x, Arc::clone(adj)), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Logistic cross-entropy of a single logit against a 0/1 target.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var> {
        let z = self.scalar_of("bce_with_logits", logit)?;
        let loss = ops::softplus(z) - z * target;
        let rg = self.rg(logit);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(logit, target), rg))
    }

    /// Reverse-mode pass from a scalar `loss`. Parameter gradients are added
    /// into `store` (they accumulate across calls until `zero_grad`).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    if let Some(g) = &grads[i] {
                        store.accumulate_grad(*id, g)?;
                    }
                    continue;
                }
                _ => {}
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(&node.op, &node.value, g, &mut grads)?;
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn backprop(
        &self,
        op: &Op,
        out: &Tensor,
        g: Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    kernels::mm_nt(&g, bv, &mut ga);
                    self.acc(grads, *a, ga)?;
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    kernels::mm_tn(av, &g, &mut gb);
                    self.acc(grads, *b, gb)?;
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    kernels::mm(&g, bv, &mut ga);
                    self.acc(grads, *a, ga)?;
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    kernels::mm_tn(&g, av, &mut gb);
                    self.acc(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                if self.rg(*b) {
                    self.acc(grads, *b, g.clone())?;
                }
                self.acc(grads, *a, g)?;
            }
            Op::Sub(a, b) => {
                if self.rg(*b) {
                    self.acc(grads, *b, g.map(|v| -v))?;
                }
                self.acc(grads, *a, g)?;
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                    self.acc(grads, *a, ga)?;
                }
                if self.rg(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                    self.acc(grads, *b, gb)?;
                }
            }
            Op::AddRow(x, r) => {
                if self.rg(*r) {
                    self.acc(grads, *r, ops::column_sums(&g))?;
                }
                self.acc(grads, *x, g)?;
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (self.value(*x), self.value(*r));
                if self.rg(*r) {
                    let prod = g.zip_map(xv, |a, b| a * b)?;
                    self.acc(grads, *r, ops::column_sums(&prod))?;
                }
                if self.rg(*x) {
                    let mut gx = g;
                    for i in 0..gx.rows() {
                        for (o, s) in gx.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= s;
                        }
                    }
                    self.acc(grads, *x, gx)?;
                }
            }
            Op::AddScalar(x, s) => {
                if self.rg(*s) {
                    self.acc(grads, *s, Tensor::full(self.shape(*s), g.sum()))?;
                }
                self.acc(grads, *x, g)?;
            }
            Op::MulScalar(x, s) => {
                let k = self.value(*s).data()[0];
                if self.rg(*s) {
                    let d: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    self.acc(grads, *s, Tensor::full(self.shape(*s), d))?;
                }
                self.acc(grads, *x, g.map(|v| v * k))?;
            }
            Op::DivScalar(x, s) => {
                let k = self.value(*s).data()[0];
                if self.rg(*s) {
                    let d: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    self.acc(grads, *s, Tensor::full(self.shape(*s), -d / (k * k)))?;
                }
                self.acc(grads, *x, g.map(|v| v / k))?;
            }
            Op::Scale(x, k) => self.acc(grads, *x, g.map(|v| v * k))?,
            Op::AddConst(x) => self.acc(grads, *x, g)?,
            Op::MulConst(x, c) => self.acc(grads, *x, g.zip_map(c, |a, b| a * b)?)?,
            Op::Square(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| 2.0 * v * a)?;
                self.acc(grads, *x, gx)?;
            }
            Op::Exp(x) => self.acc(grads, *x, g.zip_map(out, |a, y| a * y)?)?,
            Op::Ln(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| a / v)?;
                self.acc(grads, *x, gx)?;
            }
            Op::Abs(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| {
                    if v > 0.0 {
                        a
                    } else if v < 0.0 {
                        -a
                    } else {
                        0.0
                    }
                })?;
                self.acc(grads, *x, gx)?;
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| a * ops::gelu_grad(v))?;
                self.acc(grads, *x, gx)?;
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| if v > 0.0 { a } else { 0.0 })?;
                self.acc(grads, *x, gx)?;
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(out, |a, y| a * y * (1.0 - y))?;
                self.acc(grads, *x, gx)?;
            }
            Op::Softplus(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| a * ops::sigmoid(v))?;
                self.acc(grads, *x, gx)?;
            }
            Op::SoftmaxRows(x) => {
                let mut gx = g;
                for i in 0..gx.rows() {
                    let y = out.row(i);
                    let row = gx.row_mut(i);
                    let dot: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
                    for (r, &yv) in row.iter_mut().zip(y) {
                        *r = yv * (*r - dot);
                    }
                }
                self.acc(grads, *x, gx)?;
            }
            Op::LayerNormRows(x, inv_std) => {
                let mut gx = g;
                let c = gx.cols() as f64;
                for (i, &s) in inv_std.iter().enumerate() {
                    let y = out.row(i);
                    let row = gx.row_mut(i);
                    let mean_g = row.iter().sum::<f64>() / c;
                    let mean_gy = row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c;
                    for (r, &yv) in row.iter_mut().zip(y) {
                        *r = s * (*r - mean_g - yv * mean_gy);
                    }
                }
                self.acc(grads, *x, gx)?;
            }
            Op::GatherRows(t, idx) => {
                let mut gt = Tensor::zeros(self.shape(*t));
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.acc(grads, *t, gt)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.rg(p) {
                        let mut gp = Tensor::zeros(self.shape(p));
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        self.acc(grads, p, gp)?;
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(x, lo) => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let w = g.cols();
                for r in 0..g.rows() {
                    gx.row_mut(r)[*lo..*lo + w].copy_from_slice(g.row(r));
                }
                self.acc(grads, *x, gx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        let gp =
                            Tensor::new(self.shape(p).to_vec(), g.data()[offset..offset + n].to_vec())?;
                        self.acc(grads, p, gp)?;
                    }
                    offset += n;
                }
            }
            Op::NeighborMean(x, adj) => {
                let mut gx = Tensor::zeros(self.shape(*x));
                for (i, list) in adj.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / list.len() as f64;
                    for &j in list {
                        for (o, &v) in gx.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += v * inv;
                        }
                    }
                }
                self.acc(grads, *x, gx)?;
            }
            Op::NeighborSum(x, adj) => {
                let mut gx = Tensor::zeros(self.shape(*x));
                for (i, list) in adj.iter().enumerate() {
                    for &j in list {
                        for (o, &v) in gx.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                self.acc(grads, *x, gx)?;
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                self.acc(grads, *x, Tensor::full(self.shape(*x), gv))?;
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len() as f64;
                let gv = g.data()[0] / n;
                self.acc(grads, *x, Tensor::full(self.shape(*x), gv))?;
            }
            Op::BceWithLogits(z, y) => {
                let zv = self.value(*z).data()[0];
                let gv = g.data()[0] * (ops::sigmoid(zv) - y);
                self.acc(grads, *z, Tensor::full(self.shape(*z), gv))?;
            }
        }
        Ok(())
    }
}
