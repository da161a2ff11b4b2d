//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive in execution order. [`Tape::backward`]
//! walks the recording in exact reverse order and accumulates gradients for
//! every node that depends on a parameter leaf. A tape is single-use: one
//! forward pass, one backward pass.

use std::cell::{Cell, Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

/// Reduction axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce everything to `[1, 1]`.
    All,
    /// Reduce over rows (the batch axis), giving `[1, cols]`.
    Batch,
    /// Reduce over columns (the feature axis), giving `[rows, 1]`.
    Features,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Minimum(usize, usize),
    Maximum(usize, usize),
    Sum(usize),
    Mean(usize, Axis),
    Concat(Vec<usize>),
    SliceCols(usize, usize),
    LogSoftmax(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.idx).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`], with zeros of `like`'s shape for unreachable
    /// nodes.
    pub fn get_or_zeros(&self, var: Var, shape: [usize; 2]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

/// Recording of primitive operations for one forward/backward pass.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, out: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let [ar, ac] = a.shape();
    let [br, bc] = b.shape();
    if a.shape() == out && b.shape() == out {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out[0], out[1], data).expect("shape");
    }
    let mut data = Vec::with_capacity(out[0] * out[1]);
    for i in 0..out[0] {
        let ia = if ar == 1 { 0 } else { i };
        let ib = if br == 1 { 0 } else { i };
        for j in 0..out[1] {
            let ja = if ac == 1 { 0 } else { j };
            let jb = if bc == 1 { 0 } else { j };
            data.push(f(a.get(ia, ja), b.get(ib, jb)));
        }
    }
    Tensor::new(out[0], out[1], data).expect("shape")
}

/// Sums `g` down to `shape` by collapsing broadcast dimensions.
fn reduce_to(g: Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let [gr, gc] = g.shape();
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..gr {
        let oi = if shape[0] == 1 { 0 } else { i };
        for j in 0..gc {
            let oj = if shape[1] == 1 { 0 } else { j };
            let v = out.get(oi, oj) + g.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

fn reduce(t: &Tensor, axis: Axis) -> Tensor {
    let [r, c] = t.shape();
    match axis {
        Axis::All => Tensor::scalar(t.data().iter().sum()),
        Axis::Batch => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                    *o += v;
                }
            }
            Tensor::new(1, c, out).expect("shape")
        }
        Axis::Features => {
            let out = (0..r).map(|i| t.row_slice(i).iter().sum()).collect();
            Tensor::new(r, 1, out).expect("shape")
        }
    }
}

fn reduced_count(shape: [usize; 2], axis: Axis) -> usize {
    match axis {
        Axis::All => shape[0] * shape[1],
        Axis::Batch => shape[0],
        Axis::Features => shape[1],
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id {
            return Err(Error::Backward("variable belongs to a different tape".into()));
        }
        Ok(())
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].requires_grad
    }

    fn val(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.idx].value)
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.val(v).clone()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.val(v).shape()
    }

    /// Value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.val(v).data()[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = {
            let (av, bv) = (self.val(a), self.val(b));
            if av.cols() != bv.rows() {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: av.shape(),
                    rhs: bv.shape(),
                });
            }
            matmul(&av, &bv)
        };
        let rg = self.rg(a.idx) || self.rg(b.idx);
        Ok(self.push(out, Op::MatMul(a.idx, b.idx), rg))
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = {
            let (av, bv) = (self.val(a), self.val(b));
            let shape = broadcast_shape(name, av.shape(), bv.shape())?;
            broadcast_zip(&av, &bv, shape, f)
        };
        let rg = self.rg(a.idx) || self.rg(b.idx);
        Ok(self.push(out, op, rg))
    }

    /// Elementwise `a + b`, broadcasting size-1 dimensions.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a.idx, b.idx), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a.idx, b.idx), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a.idx, b.idx), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, Op::Minimum(a.idx, b.idx), f64::min)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, Op::Maximum(a.idx, b.idx), f64::max)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.val(a).map(f);
        let rg = self.rg(a.idx);
        self.push(out, op, rg)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a.idx), |x| -x)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a.idx, c), |x| c * x)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a.idx), |x| x + c)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.idx), f64::tanh)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.idx), f64::exp)
    }

    /// Natural log; every input element must be strictly positive.
    pub fn log(&self, a: Var) -> Result<Var> {
        self.check(a)?;
        if let Some(bad) = self.val(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, Op::Log(a.idx), f64::ln))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a.idx), |x| x * x)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a.idx, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self, a: Var, axis: Axis) -> Var {
        let out = reduce(&self.val(a), axis);
        let rg = self.rg(a.idx);
        self.push(out, Op::Sum(a.idx), rg)
    }

    pub fn mean(&self, a: Var, axis: Axis) -> Var {
        let out = {
            let av = self.val(a);
            let n = reduced_count(av.shape(), axis) as f64;
            reduce(&av, axis).map(|x| x / n)
        };
        let rg = self.rg(a.idx);
        self.push(out, Op::Mean(a.idx, axis), rg)
    }

    /// Concatenates along the feature axis; all parts need the same row count.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        for p in parts {
            self.check(*p)?;
        }
        let out = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].idx].value.rows();
            let mut cols = 0;
            for p in parts {
                let s = nodes[p.idx].value.shape();
                if s[0] != rows {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: nodes[parts[0].idx].value.shape(),
                        rhs: s,
                    });
                }
                cols += s[1];
            }
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.idx].value.row_slice(i));
                }
            }
            Tensor::new(rows, cols, data)?
        };
        let rg = parts.iter().any(|p| self.rg(p.idx));
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.idx).collect()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check(a)?;
        let out = {
            let av = self.val(a);
            if start >= end || end > av.cols() {
                return Err(Error::Shape {
                    op: "slice_cols",
                    lhs: av.shape(),
                    rhs: [start, end],
                });
            }
            let w = end - start;
            let mut data = Vec::with_capacity(av.rows() * w);
            for i in 0..av.rows() {
                data.extend_from_slice(&av.row_slice(i)[start..end]);
            }
            Tensor::new(av.rows(), w, data)?
        };
        let rg = self.rg(a.idx);
        Ok(self.push(out, Op::SliceCols(a.idx, start), rg))
    }

    /// Row-wise `log(softmax(a))`, computed with the max-shift for stability.
    pub fn log_softmax(&self, a: Var) -> Var {
        let out = {
            let av = self.val(a);
            let mut data = Vec::with_capacity(av.len());
            for i in 0..av.rows() {
                let row = av.row_slice(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                data.extend(row.iter().map(|x| x - lse));
            }
            Tensor::new(av.rows(), av.cols(), data).expect("shape")
        };
        let rg = self.rg(a.idx);
        self.push(out, Op::LogSoftmax(a.idx), rg)
    }

    /// Runs the backward pass from a scalar `loss`. A tape can be
    /// differentiated once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.consumed.get() {
            return Err(Error::Backward("backward already ran on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.idx].value.shape() != [1, 1] {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                nodes[loss.idx].value.shape()
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(Tensor::scalar(1.0));

        let accumulate = |grads: &mut Vec<Option<Tensor>>, idx: usize, g: Tensor| {
            if !nodes[idx].requires_grad {
                return;
            }
            match &mut grads[idx] {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e += v;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };

        for idx in (0..=loss.idx).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            let value = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        accumulate(&mut grads, *a, matmul_nt(&g, value(*b)));
                    }
                    if nodes[*b].requires_grad {
                        accumulate(&mut grads, *b, matmul_tn(value(*a), &g));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(g.clone(), value(*a).shape()));
                    accumulate(&mut grads, *b, reduce_to(g, value(*b).shape()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(g.clone(), value(*a).shape()));
                    accumulate(&mut grads, *b, reduce_to(g.map(|x| -x), value(*b).shape()));
                }
                Op::Mul(a, b) => {
                    let shape = g.shape();
                    if nodes[*a].requires_grad {
                        let ga = broadcast_zip(&g, value(*b), shape, |x, y| x * y);
                        accumulate(&mut grads, *a, reduce_to(ga, value(*a).shape()));
                    }
                    if nodes[*b].requires_grad {
                        let gb = broadcast_zip(&g, value(*a), shape, |x, y| x * y);
                        accumulate(&mut grads, *b, reduce_to(gb, value(*b).shape()));
                    }
                }
                Op::Minimum(a, b) | Op::Maximum(a, b) => {
                    let is_min = matches!(node.op, Op::Minimum(..));
                    let shape = g.shape();
                    let (av, bv) = (value(*a), value(*b));
                    // 1 where `a` was selected.
                    let pick_a = broadcast_zip(av, bv, shape, |x, y| {
                        let a_wins = if is_min { x <= y } else { x >= y };
                        if a_wins {
                            1.0
                        } else {
                            0.0
                        }
                    });
                    let ga = broadcast_zip(&g, &pick_a, shape, |x, m| x * m);
                    let gb = broadcast_zip(&g, &pick_a, shape, |x, m| x * (1.0 - m));
                    accumulate(&mut grads, *a, reduce_to(ga, av.shape()));
                    accumulate(&mut grads, *b, reduce_to(gb, bv.shape()));
                }
                Op::Neg(a) => accumulate(&mut grads, *a, g.map(|x| -x)),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| c * x)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = broadcast_zip(&g, y, g.shape(), |x, t| x * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = broadcast_zip(&g, &node.value, g.shape(), |x, e| x * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = broadcast_zip(&g, value(*a), g.shape(), |x, v| x / v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = broadcast_zip(&g, value(*a), g.shape(), |x, v| 2.0 * x * v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = broadcast_zip(&g, value(*a), g.shape(), |x, v| {
                        if v >= lo && v <= hi {
                            x
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) | Op::Mean(a, _) => {
                    let shape = value(*a).shape();
                    let scale = match node.op {
                        Op::Mean(_, axis) => 1.0 / reduced_count(shape, axis) as f64,
                        _ => 1.0,
                    };
                    let ones = Tensor::filled(shape[0], shape[1], scale);
                    let ga = broadcast_zip(&ones, &g, shape, |s, x| s * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [r, c] = value(p).shape();
                        if nodes[p].requires_grad {
                            let mut data = Vec::with_capacity(r * c);
                            for i in 0..r {
                                data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                            }
                            accumulate(&mut grads, p, Tensor::new(r, c, data)?);
                        }
                        offset += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let [r, c] = value(*a).shape();
                    let w = g.cols();
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..w {
                            ga.set(i, start + j, g.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let [r, c] = y.shape();
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        let gs: f64 = g.row_slice(i).iter().sum();
                        for j in 0..c {
                            ga.set(i, j, g.get(i, j) - y.get(i, j).exp() * gs);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero_has_unit_slope() {
        let t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.tanh(x);
        assert_eq!(t.scalar(y), 0.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn square_backward() {
        let t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn concat_routes_gradients_to_slices() {
        let t = Tape::new();
        let a = t.param(Tensor::row(&[1.0, 2.0]));
        let b = t.param(Tensor::row(&[3.0]));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let w = t.constant(Tensor::row(&[10.0, 20.0, 30.0]));
        let loss = t.sum(t.mul(c, w).unwrap(), Axis::All);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(g.get(b).unwrap().data(), &[30.0]);
    }

    #[test]
    fn linear_least_squares_gradient() {
        // mean((Wx - y)^2) with W=2, x=1, y=0 -> dW = 2 * Wx * x = 4
        let t = Tape::new();
        let w = t.param(Tensor::scalar(2.0));
        let x = t.constant(Tensor::scalar(1.0));
        let y = t.constant(Tensor::scalar(0.0));
        let r = t.sub(t.matmul(x, w).unwrap(), y).unwrap();
        let loss = t.mean(t.square(r), Axis::All);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 4.0);
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let t = Tape::new();
        let used = t.param(Tensor::scalar(1.5));
        let unused = t.param(Tensor::row(&[1.0, 2.0]));
        let loss = t.square(used);
        let g = t.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, [1, 2]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let t = Tape::new();
        let a = t.param(Tensor::zeros(2, 3));
        let b = t.param(Tensor::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        let c = t.param(Tensor::zeros(3, 2));
        assert!(matches!(t.add(a, c), Err(Error::Shape { .. })));
        assert!(t.concat(&[a, c]).is_err());
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let t = Tape::new();
        let a = t.param(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(t.log(a), Err(Error::Domain { .. })));
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        let a = t.param(Tensor::row(&[1.0, 2.0]));
        assert!(t.backward(a).is_err(), "non-scalar");

        let other = Tape::new();
        let foreign = other.param(Tensor::scalar(1.0));
        assert!(t.backward(foreign).is_err(), "foreign var");

        let s = t.sum(a, Axis::All);
        assert!(t.backward(s).is_ok());
        assert!(t.backward(s).is_err(), "second backward");
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let t = Tape::new();
        let x = t.constant(Tensor::zeros(3, 2));
        let b = t.param(Tensor::row(&[1.0, -1.0]));
        let y = t.add(x, b).unwrap();
        let loss = t.sum(y, Axis::All);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn clamp_blocks_gradient_outside_bounds() {
        let t = Tape::new();
        let x = t.param(Tensor::row(&[-2.0, 0.5, 2.0]));
        let y = t.clamp(x, -1.0, 1.0);
        assert_eq!(t.value(y).data(), &[-1.0, 0.5, 1.0]);
        let g = t.backward(t.sum(y, Axis::All)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
