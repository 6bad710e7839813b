//! Reverse-mode differentiation by operation recording.
//!
//! A [`Tape`] is an append-only arena of nodes. Each node holds its forward
//! value and the operation that produced it. Parents always have smaller ids
//! than their children, so the tape order is a topological order.
//!
//! Backward rules are themselves expressed as tape operations. The gradient
//! returned by [`Tape::grad_graph`] is therefore an ordinary differentiable
//! value, which is what lets an outer loss be differentiated through an inner
//! gradient step.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    /// Tensor times a scalar-shaped node.
    ScaleBy(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    /// `[m, n] + [n]`, the row vector added to every row.
    AddRow(usize, usize),
    /// `[m, n] -> [n]`
    SumRows(usize),
    /// `[n] -> [m, n]`
    BroadcastRows(usize),
    /// `[m, n] -> [m]`
    SumCols(usize),
    /// `[m] -> [m, n]`
    BroadcastCols(usize),
    Sum(usize),
    /// Scalar to any shape.
    Expand(usize),
    Reshape(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    MaskMul(usize, Rc<Tensor>),
    Min(usize, usize),
    Clamp(usize, f64, f64),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Recording arena for one differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients are computed with respect to.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let va = self.value_of(a);
        let out = f(&va);
        let tracked = self.tracked(a);
        self.push(out, op, tracked)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
    ) -> Var<'_> {
        let (va, vb) = (self.value_of(a), self.value_of(b));
        let out = f(&va, &vb);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(out, op, tracked)
    }

    /// Gradients of a scalar `loss` with respect to `wrt`, as plain values.
    ///
    /// Leaves that `loss` does not depend on get a zero gradient.
    pub fn grad(&self, loss: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Tensor>> {
        let grads = self.grad_graph(loss, wrt)?;
        Ok(grads.iter().map(|g| g.value().as_ref().clone()).collect())
    }

    /// Gradients of a scalar `loss` with respect to `wrt`, recorded on the
    /// tape so they can be differentiated again.
    pub fn grad_graph<'t>(&'t self, loss: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let loss_shape = loss.shape();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        let end = loss.id + 1;
        let mut grads: Vec<Option<Var<'t>>> = vec![None; end];
        grads[loss.id] = Some(self.constant(Tensor::ones(&loss_shape)));

        for id in (0..end).rev() {
            let Some(g) = grads[id] else { continue };
            let (op, tracked) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].tracked)
            };
            if !tracked {
                continue;
            }
            let this = Var { tape: self, id };
            for (parent, contribution) in self.backward_rule(&op, this, g) {
                if !self.tracked(parent) {
                    continue;
                }
                grads[parent] = Some(match grads[parent] {
                    Some(acc) => acc + contribution,
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&w.shape())),
            })
            .collect())
    }

    /// Vector-Jacobian products for one node, as new tape operations.
    fn backward_rule<'t>(&'t self, op: &Op, y: Var<'t>, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
        let v = |id| Var { tape: self, id };
        let need = |id| self.tracked(id);
        match *op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, -g)],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    out.push((a, g * v(b)));
                }
                if need(b) {
                    out.push((b, g * v(a)));
                }
                out
            }
            Op::Div(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    out.push((a, g / v(b)));
                }
                if need(b) {
                    out.push((b, -((g * y) / v(b))));
                }
                out
            }
            Op::Neg(a) => vec![(a, -g)],
            Op::Scale(a, c) => vec![(a, g.scale(c))],
            Op::Offset(a) => vec![(a, g)],
            Op::ScaleBy(a, s) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    out.push((a, g.scale_by(v(s))));
                }
                if need(s) {
                    out.push((s, (g * v(a)).sum()));
                }
                out
            }
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if need(a) {
                    out.push((a, g.matmul(v(b).t())));
                }
                if need(b) {
                    out.push((b, v(a).t().matmul(g)));
                }
                out
            }
            Op::Transpose(a) => vec![(a, g.t())],
            Op::AddRow(a, b) => vec![(a, g), (b, g.sum_rows())],
            Op::SumRows(a) => {
                let m = v(a).shape()[0];
                vec![(a, g.broadcast_rows(m))]
            }
            Op::BroadcastRows(a) => vec![(a, g.sum_rows())],
            Op::SumCols(a) => {
                let n = v(a).shape()[1];
                vec![(a, g.broadcast_cols(n))]
            }
            Op::BroadcastCols(a) => vec![(a, g.sum_cols())],
            Op::Sum(a) => {
                let shape = v(a).shape();
                vec![(a, g.expand(&shape))]
            }
            Op::Expand(a) => {
                let shape = v(a).shape();
                vec![(a, g.sum().reshape(&shape))]
            }
            Op::Reshape(a) => {
                let shape = v(a).shape();
                vec![(a, g.reshape(&shape))]
            }
            Op::Tanh(a) => vec![(a, g * (y * y).neg().offset(1.0))],
            Op::Exp(a) => vec![(a, g * y)],
            Op::Log(a) => vec![(a, g / v(a))],
            Op::MaskMul(a, ref mask) => vec![(a, g.mask_mul(Rc::clone(mask)))],
            Op::Min(a, b) => {
                let (va, vb) = (self.value_of(a), self.value_of(b));
                let take_a = va.zip_map(&vb, |x, y| if x <= y { 1.0 } else { 0.0 });
                let take_b = take_a.map(|m| 1.0 - m);
                vec![
                    (a, g.mask_mul(Rc::new(take_a))),
                    (b, g.mask_mul(Rc::new(take_b))),
                ]
            }
            Op::Clamp(a, lo, hi) => {
                let inside = self
                    .value_of(a)
                    .map(|x| if x > lo && x < hi { 1.0 } else { 0.0 });
                vec![(a, g.mask_mul(Rc::new(inside)))]
            }
        }
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Whether gradients can flow into this node from a tracked leaf.
    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// A constant copy of this value; gradients stop here.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value().as_ref().clone())
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Scale(self.id, c), |a| a.map(|x| x * c))
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Offset(self.id), |a| a.map(|x| x + c))
    }

    /// Multiply every element by the scalar node `s`.
    pub fn scale_by(self, s: Var<'t>) -> Var<'t> {
        assert!(s.shape().is_empty(), "scale_by expects a scalar, got {:?}", s.shape());
        self.tape.binary(self.id, s.id, Op::ScaleBy(self.id, s.id), |a, s| {
            let c = s.item();
            a.map(|x| x * c)
        })
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.id, other.id, Op::MatMul(self.id, other.id), |a, b| {
                a.matmul(b)
            })
    }

    pub fn t(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Transpose(self.id), |a| a.transpose())
    }

    /// Adds the vector `row` (shape `[n]`) to every row of `self` (`[m, n]`).
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.id, row.id, Op::AddRow(self.id, row.id), |a, b| {
                let n = a.cols();
                assert_eq!(b.shape(), [n], "add_row: row shape {:?} vs cols {n}", b.shape());
                let mut out = a.clone();
                for (i, x) in out.data_mut().iter_mut().enumerate() {
                    *x += b.data()[i % n];
                }
                out
            })
    }

    pub fn sum_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumRows(self.id), |a| {
            let (m, n) = (a.rows(), a.cols());
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (o, x) in out.iter_mut().zip(a.row(i)) {
                    *o += x;
                }
            }
            Tensor::vector(out)
        })
    }

    pub fn broadcast_rows(self, m: usize) -> Var<'t> {
        self.tape
            .unary(self.id, Op::BroadcastRows(self.id), |a| {
                assert_eq!(a.rank(), 1, "broadcast_rows expects a vector");
                let n = a.len();
                let data = (0..m).flat_map(|_| a.data().iter().copied()).collect();
                Tensor::new(vec![m, n], data).expect("consistent shape")
            })
    }

    pub fn sum_cols(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumCols(self.id), |a| {
            let m = a.rows();
            Tensor::vector((0..m).map(|i| a.row(i).iter().sum()).collect())
        })
    }

    pub fn broadcast_cols(self, n: usize) -> Var<'t> {
        self.tape
            .unary(self.id, Op::BroadcastCols(self.id), |a| {
                assert_eq!(a.rank(), 1, "broadcast_cols expects a vector");
                let m = a.len();
                let data = a
                    .data()
                    .iter()
                    .flat_map(|&x| std::iter::repeat_n(x, n))
                    .collect();
                Tensor::new(vec![m, n], data).expect("consistent shape")
            })
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Sum(self.id), |a| Tensor::scalar(a.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcast a single-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Var<'t> {
        self.tape.unary(self.id, Op::Expand(self.id), |a| {
            Tensor::full(shape, a.item())
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Reshape(self.id), |a| a.reshaped(shape))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Log(self.id), |a| a.map(f64::ln))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mask_mul(self, mask: Rc<Tensor>) -> Var<'t> {
        let m = Rc::clone(&mask);
        self.tape
            .unary(self.id, Op::MaskMul(self.id, mask), move |a| {
                a.zip_map(&m, |x, w| x * w)
            })
    }

    pub fn min(self, other: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self.id, other.id, Op::Min(self.id, other.id), |a, b| {
                a.zip_map(b, f64::min)
            })
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape
            .unary(self.id, Op::Clamp(self.id, lo, hi), |a| {
                a.map(|x| x.clamp(lo, hi))
            })
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

macro_rules! elementwise {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                assert!(
                    std::ptr::eq(self.tape, rhs.tape),
                    "operands live on different tapes"
                );
                self.tape
                    .binary(self.id, rhs.id, Op::$variant(self.id, rhs.id), |a, b| {
                        a.zip_map(b, $f)
                    })
            }
        }
    };
}

elementwise!(Add, add, Add, |x, y| x + y);
elementwise!(Sub, sub, Sub, |x, y| x - y);
elementwise!(Mul, mul, Mul, |x, y| x * y);
elementwise!(Div, div, Div, |x, y| x / y);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Neg(self.id), |a| a.map(|x| -x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_param<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
        tape.param(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = vec_param(&tape, &[0.3, -1.0, 2.5]);
        let g = tape.grad(w.sum(), &[w]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dot_gradient_is_twice_w() {
        let tape = Tape::new();
        let w = vec_param(&tape, &[0.3, -1.0, 2.5]);
        let g = tape.grad((w * w).sum(), &[w]).unwrap();
        assert_eq!(g[0].data(), &[0.6, -2.0, 5.0]);
    }

    #[test]
    fn untouched_leaf_gets_zero() {
        let tape = Tape::new();
        let w = vec_param(&tape, &[1.0, 2.0]);
        let u = tape.param(Tensor::zeros(&[2, 3]));
        let g = tape.grad(w.sum(), &[w, u]).unwrap();
        assert_eq!(g[1], Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let w = vec_param(&tape, &[1.0, 2.0]);
        assert!(matches!(
            tape.grad(w * w, &[w]),
            Err(AutodiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn second_derivative_of_cube() {
        // f = x^3, f' = 3x^2, f'' = 6x
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.5));
        let f = x * x * x;
        let d1 = tape.grad_graph(f, &[x]).unwrap()[0];
        assert!((d1.item() - 3.0 * 2.25).abs() < 1e-12);
        let d2 = tape.grad(d1, &[x]).unwrap();
        assert!((d2[0].item() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn second_derivative_of_tanh() {
        // tanh'' = -2 tanh (1 - tanh^2)
        let tape = Tape::new();
        let x0: f64 = 0.7;
        let x = tape.param(Tensor::scalar(x0));
        let d1 = tape.grad_graph(x.tanh(), &[x]).unwrap()[0];
        let d2 = tape.grad(d1, &[x]).unwrap()[0].item();
        let t = x0.tanh();
        assert!((d2 + 2.0 * t * (1.0 - t * t)).abs() < 1e-12);
    }

    #[test]
    fn constants_are_not_tracked() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.param(Tensor::scalar(3.0));
        assert!(!(c * c).is_tracked());
        assert!((c * x).is_tracked());
        assert!(!x.detach().is_tracked());
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let tape = Tape::new();
        let x = vec_param(&tape, &[0.5, 1.0, 1.5]);
        let g = tape.grad(x.clamp(0.8, 1.2).sum(), &[x]).unwrap();
        assert_eq!(g[0].data(), &[0.0, 1.0, 0.0]);
    }
}
