//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value. [`Tape::backward`] walks the nodes in reverse and accumulates the
//! adjoint of each one. Only nodes that depend on a trainable leaf receive
//! gradients.

use std::sync::Arc;

use super::matrix::Matrix;
use super::ops::softmax_in_place;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MaskedSoftmax(Var),
    PairwiseSqDist(Var, Var),
    CrossEntropy(Var, Vec<usize>, Matrix),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
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

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Matrix) -> Var {
        let v = self.push_unchecked(value, Op::Leaf, true);
        self.params.push((name.into(), v));
        v
    }

    /// Trainable leaves in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).as_scalar()
    }

    fn push_unchecked(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var], what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        self.push(v, Op::MatMulT(a, b), &[a, b], "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        self.push(v, Op::Hadamard(a, b), &[a, b], "hadamard")
    }

    /// Adds the `1×n` row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let b = self.value(bias);
        if b.rows() != 1 {
            return Err(shape_err!("bias must be a single row, got {} rows", b.rows()));
        }
        let v = self.value(a).add_row_broadcast(b.row(0))?;
        self.push(v, Op::AddRowBias(a, bias), &[a, bias], "add_row_bias")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s), &[a], "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a], "relu")
    }

    /// Row softmax restricted to entries where `mask` (row-major, same shape) is true.
    /// Masked-out entries are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &Arc<Vec<bool>>) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        if mask.len() != rows * cols {
            return Err(shape_err!("mask of {} entries for {rows}x{cols}", mask.len()));
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut buf = Vec::with_capacity(cols);
        for r in 0..rows {
            let m = &mask[r * cols..(r + 1) * cols];
            buf.clear();
            buf.extend(x.row(r).iter().zip(m).filter(|(_, &keep)| keep).map(|(v, _)| *v));
            if buf.is_empty() {
                return Err(Error::InvalidArgument(format!("row {r} is fully masked")));
            }
            softmax_in_place(&mut buf);
            let mut it = buf.iter();
            for (o, &keep) in out.row_mut(r).iter_mut().zip(m) {
                if keep {
                    *o = *it.next().expect("one value per kept entry");
                }
            }
        }
        self.push(out, Op::MaskedSoftmax(a), &[a], "masked_softmax")
    }

    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = super::ops::pairwise_sq_euclidean(self.value(a), self.value(b))?;
        self.push(v, Op::PairwiseSqDist(a, b), &[a, b], "pairwise_sq_dist")
    }

    /// Mean over rows of `−log softmax(logits_r)[targets_r]`, as a 1×1 value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.rows() || x.rows() == 0 {
            return Err(shape_err!("{} targets for {} logit rows", targets.len(), x.rows()));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= x.cols()) {
            return Err(shape_err!("target {t} out of {} classes", x.cols()));
        }
        let mut probs = x.clone();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let v = Matrix::scalar(total / targets.len() as f64);
        self.push(v, Op::CrossEntropy(logits, targets.to_vec(), probs), &[logits], "cross_entropy")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a).slice_rows(start, end)?;
        self.push(v, Op::SliceRows(a, start), &[a], "slice_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vstack(&mats)?;
        self.push(v, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hstack(&mats)?;
        self.push(v, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a], "sum")
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).data().iter().map(|x| x * x).sum());
        self.push(v, Op::SumSquares(a), &[a], "sum_squares")
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(shape_err!("backward needs a scalar loss, got {}x{}", loss_value.rows(), loss_value.cols()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape()).collect() })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        // Shapes were validated in the forward pass, so the products below cannot fail.
        const SHAPE: &str = "shapes fixed by forward pass";
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.matmul_t(self.value(*b)).expect(SHAPE));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).t_matmul(g).expect(SHAPE));
                }
            }
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)).expect(SHAPE));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.t_matmul(self.value(*a)).expect(SHAPE));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Hadamard(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b)).expect(SHAPE));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a)).expect(SHAPE));
                }
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*bias) {
                    let sums = g.col_sums();
                    self.accumulate(grads, *bias, Matrix::from_raw(1, sums.len(), sums));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                self.accumulate(grads, *a, Matrix::from_raw(x.rows(), x.cols(), data));
            }
            Op::MaskedSoftmax(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let inner: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::PairwiseSqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let gb = g.matmul(bv).expect(SHAPE);
                    let rs = g.row_sums();
                    let mut ga = av.clone();
                    for r in 0..ga.rows() {
                        for (o, &q) in ga.row_mut(r).iter_mut().zip(gb.row(r)) {
                            *o = 2.0 * (rs[r] * *o - q);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let ga = g.t_matmul(av).expect(SHAPE);
                    let cs = g.col_sums();
                    let mut gb = bv.clone();
                    for r in 0..gb.rows() {
                        for (o, &q) in gb.row_mut(r).iter_mut().zip(ga.row(r)) {
                            *o = 2.0 * (cs[r] * *o - q);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let scale = g.data()[0] / targets.len() as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = gl.row_mut(r);
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                let cols = src.cols();
                ga.data_mut()[start * cols..start * cols + g.data().len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice_rows(offset, offset + rows).expect(SHAPE));
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice_cols(offset, offset + cols).expect(SHAPE));
                    }
                    offset += cols;
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.data()[0]));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.data()[0];
                self.accumulate(grads, *a, self.value(*a).scale(s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_on_scalars() {
        let mut t = Tape::new();
        let x = t.param("x", Matrix::scalar(3.0));
        let y = t.hadamard(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(t.scalar(y).unwrap(), 9.0);
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let x = t.param("x", Matrix::scalar(1.0));
        let y = t.hadamard(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get_or_zeros(c).data(), &[0.0]);
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param("x", Matrix::zeros(2, 2));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut t = Tape::new();
        let x = t.param("x", Matrix::scalar(1e200));
        assert!(matches!(t.hadamard(x, x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut t = Tape::new();
        let x = t.param("x", Matrix::zeros(1, 2));
        assert!(t.masked_softmax(x, &Arc::new(vec![false, false])).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let mut t = Tape::new();
        let x = t.param("x", Matrix::from_rows(&[[0.2, -0.4], [1.1, 0.3]]).unwrap());
        let y = t.matmul_t(x, x).unwrap();
        let s = t.masked_softmax(y, &Arc::new(vec![true, true, false, true])).unwrap();
        let l = t.sum_squares(s).unwrap();
        let a = t.backward(l).unwrap().get_or_zeros(x);
        let b = t.backward(l).unwrap().get_or_zeros(x);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
