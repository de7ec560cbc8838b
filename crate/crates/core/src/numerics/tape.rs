use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::ops::{self, NO_SOURCE};
use super::{Scalar, Segments, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifier of a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Maximum(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Arc<[T]>),
    MulRows(Var, Var),
    DivRows(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Neg(Var),
    Cos(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    LeakyRelu(Var, T),
    Exp(Var),
    Clamp(Var, T, T),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    ScatterMax(Var, Vec<usize>),
    SegCumsum(Var, Arc<Segments>),
    SegCummax(Var, Vec<usize>),
    Dropout(Var, Vec<T>),
    RowDot(Var, Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode recording of primitive tensor operations.
///
/// Every method evaluates its primitive eagerly and appends a node. Nodes
/// that do not depend on any parameter are skipped during [`Tape::backward`].
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Registers a trainable parameter. Each id may be registered once.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        debug_assert!(self.params.iter().all(|(p, _)| *p != id));
        self.nodes.push(Node { value, op: Op::Param, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise max; the gradient of a tie goes to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::maximum(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Maximum(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Multiplies each row by a constant (non-trainable) factor.
    pub fn scale_rows(&mut self, x: Var, factors: Arc<[T]>) -> Result<Var> {
        let out = ops::scale_rows(self.value(x), &factors)?;
        Ok(self.push(out, Op::ScaleRows(x, factors), &[x]))
    }

    pub fn mul_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = ops::mul_rows(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::MulRows(x, w), &[x, w]))
    }

    pub fn div_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = ops::div_rows(self.value(x), self.value(w))?;
        Ok(self.push(out, Op::DivRows(x, w), &[x, w]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_cols(&values)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_rows(&values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| -v);
        self.push(out, Op::Neg(x), &[x])
    }

    pub fn cos(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::cos);
        self.push(out, Op::Cos(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::sigmoid_scalar);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::log_sigmoid_scalar);
        self.push(out, Op::LogSigmoid(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| ops::leaky_relu_scalar(v, slope));
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp(x, lo, hi), &[x])
    }

    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let out = ops::gather_rows(self.value(x), &index)?;
        Ok(self.push(out, Op::Gather(x, index), &[x]))
    }

    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, out_rows: usize) -> Result<Var> {
        let out = ops::scatter_add_rows(self.value(x), &index, out_rows)?;
        Ok(self.push(out, Op::ScatterAdd(x, index), &[x]))
    }

    pub fn scatter_max_rows(&mut self, x: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let (out, arg) = ops::scatter_max_rows(self.value(x), index, out_rows)?;
        Ok(self.push(out, Op::ScatterMax(x, arg), &[x]))
    }

    pub fn segmented_cumsum(&mut self, x: Var, segs: Arc<Segments>) -> Result<Var> {
        let out = ops::segmented_cumsum(self.value(x), &segs)?;
        Ok(self.push(out, Op::SegCumsum(x, segs), &[x]))
    }

    pub fn segmented_cummax(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        let (out, arg) = ops::segmented_cummax(self.value(x), segs)?;
        Ok(self.push(out, Op::SegCummax(x, arg), &[x]))
    }

    /// Multiplies by a precomputed inverted-dropout mask (entries are 0 or
    /// `1 / (1 - p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::shape("dropout", xv.shape(), &[mask.len()]));
        }
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout(x, mask), &[x]))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::row_dot(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::RowDot(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = ops::sum(self.value(x));
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Accumulates gradients of `loss` into every registered parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut by_param = HashMap::with_capacity(self.params.len());
        for &(id, v) in &self.params {
            let g = grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            by_param.insert(id, g);
        }
        Ok(Gradients { by_param })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    ops::gemm_into(m, n, k, g.data(), (n, 1), bv.data(), (1, n), &mut da);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    ops::gemm_into(k, m, n, av.data(), (1, k), g.data(), (n, 1), &mut db);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, ops::mul(g, self.value(*b))?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, ops::mul(g, self.value(*a))?);
                }
            }
            Op::Maximum(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut ga = g.clone();
                let mut gb = g.clone();
                for i in 0..g.numel() {
                    if bv.data()[i] > av.data()[i] {
                        ga.data_mut()[i] = T::zero();
                    } else {
                        gb.data_mut()[i] = T::zero();
                    }
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*bias) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for i in 0..g.rows() {
                        for (d, &v) in db.iter_mut().zip(g.row(i)) {
                            *d = *d + v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, db)?);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * *s)),
            Op::ScaleRows(x, f) => self.accumulate(grads, *x, ops::scale_rows(g, f)?),
            Op::MulRows(x, w) => {
                let wv = self.value(*w);
                if self.needs(*x) {
                    self.accumulate(grads, *x, ops::scale_rows(g, wv.data())?);
                }
                if self.needs(*w) {
                    let dw = ops::row_dot(g, self.value(*x))?;
                    let dw = Tensor::new(wv.shape().to_vec(), dw.into_data())?;
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::DivRows(x, w) => {
                let wv = self.value(*w);
                if self.needs(*x) {
                    self.accumulate(grads, *x, ops::div_rows(g, wv)?);
                }
                if self.needs(*w) {
                    // d/dw (x / w) = -y / w
                    let gy = ops::row_dot(g, y)?;
                    let dw: Vec<T> = gy.data().iter().zip(wv.data()).map(|(&s, &wi)| -s / wi).collect();
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
            }
            Op::ConcatCols(parts) => {
                let r = g.rows();
                let mut col = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            d.extend_from_slice(&g.row(i)[col..col + pc]);
                        }
                        self.accumulate(grads, p, Tensor::matrix(r, pc, d)?);
                    }
                    col += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut row = 0;
                for &p in parts {
                    let pr = self.value(p).rows();
                    if self.needs(p) {
                        let d = g.data()[row * c..(row + pr) * c].to_vec();
                        self.accumulate(grads, p, Tensor::matrix(pr, c, d)?);
                    }
                    row += pr;
                }
            }
            Op::Neg(x) => self.accumulate(grads, *x, g.map(|v| -v)),
            Op::Cos(x) => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(g.data()).map(|(&a, &b)| -a.sin() * b).collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::Sigmoid(x) => {
                let d = y.data().iter().zip(g.data()).map(|(&s, &b)| s * (T::one() - s) * b).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(g.data()).map(|(&a, &b)| ops::sigmoid_scalar(-a) * b).collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                let d =
                    xv.data().iter().zip(g.data()).map(|(&a, &b)| if a > T::zero() { b } else { b * *slope }).collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::Exp(x) => self.accumulate(grads, *x, ops::mul(g, y)?),
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&a, &b)| if a > *lo && a < *hi { b } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::Gather(x, index) => {
                let rows = self.value(*x).rows();
                self.accumulate(grads, *x, ops::scatter_add_rows(g, index, rows)?);
            }
            Op::ScatterAdd(x, index) => {
                self.accumulate(grads, *x, ops::gather_rows(g, index)?);
            }
            Op::ScatterMax(x, arg) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = Tensor::zeros(xv.shape());
                for (slot, &src) in arg.iter().enumerate() {
                    if src != NO_SOURCE {
                        let j = slot % c;
                        d.data_mut()[src * c + j] = d.data()[src * c + j] + g.data()[slot];
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SegCumsum(x, segs) => {
                // Reverse inclusive scan within each segment.
                let mut d = g.clone();
                let c = d.cols();
                let data = d.data_mut();
                for range in segs.ranges() {
                    for i in (range.start..range.end.saturating_sub(1)).rev() {
                        for j in 0..c {
                            data[i * c + j] = data[i * c + j] + data[(i + 1) * c + j];
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SegCummax(x, arg) => {
                let c = y.cols();
                let mut d = Tensor::zeros(y.shape());
                for (slot, &src) in arg.iter().enumerate() {
                    let j = slot % c;
                    d.data_mut()[src * c + j] = d.data()[src * c + j] + g.data()[slot];
                }
                self.accumulate(grads, *x, d);
            }
            Op::Dropout(x, mask) => {
                let d = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::RowDot(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, ops::scale_rows(self.value(*b), g.data())?);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, ops::scale_rows(self.value(*a), g.data())?);
                }
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.item()));
            }
        }
        Ok(())
    }
}

/// Gradients keyed by parameter; parameters the loss does not depend on map
/// to zero tensors.
#[derive(Debug)]
pub struct Gradients<T = f64> {
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}
