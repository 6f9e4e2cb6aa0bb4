//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`backward`] replays the nodes in reverse creation order, which
//! is a valid reverse topological order because a node can only reference
//! nodes created before it.
//!
//! ```
//! use hnmvts::numcore::{backward, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = x.mul(x).unwrap().sum().scale(0.5);
//! let grads = backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[1.0, -2.0, 0.5]);
//! ```

use std::cell::RefCell;

use super::tensor::{self, Tensor};
use crate::error::{contract, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sqrt(usize),
    Relu(usize),
    Sum(usize),
    SumAxis(usize),
    /// `a · b`, or `a · bᵀ` when the flag is set.
    Matmul(usize, usize, bool),
    Bmm(usize, usize, bool),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    MovingAverage(usize, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Concat(Vec<usize>, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of the primitive operations of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn check_same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(
        &self,
        other: Var<'t>,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var<'t>> {
        self.check_same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::add, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::sub, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::mul, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::div, Op::Div(self.id, other.id))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, tensor::matmul, Op::Matmul(self.id, other.id, false))
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        let f = |a: &Tensor, b: &Tensor| tensor::matmul_t(a, false, b, true);
        self.binary(other, f, Op::Matmul(self.id, other.id, true))
    }

    pub fn bmm(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, tensor::bmm, Op::Bmm(self.id, other.id, false))
    }

    /// Batched `self · otherᵀ` (last two axes of `other` swapped).
    pub fn bmm_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        let f = |a: &Tensor, b: &Tensor| tensor::bmm_t(a, false, b, true);
        self.binary(other, f, Op::Bmm(self.id, other.id, true))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("square: shapes always agree")
    }

    pub fn sqrt(&self) -> Var<'t> {
        let v = self.value().map(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let v = self.value().sum_axis(axis)?;
        Ok(self.unary(v, Op::SumAxis(self.id)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| contract(format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let v = self.value().permute(perm)?;
        Ok(self.unary(v, Op::Permute(self.id, perm.to_vec())))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(contract("transpose needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn moving_average(&self, kernel: usize) -> Result<Var<'t>> {
        let v = tensor::moving_average(&self.value(), kernel)?;
        Ok(self.unary(v, Op::MovingAverage(self.id, kernel)))
    }

    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_axis(axis, start, end)?;
        Ok(self.unary(
            v,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
        ))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| contract("concat of zero vars"))?;
        for p in parts {
            first.check_same_tape(p);
        }
        let values: Vec<Tensor> = parts.iter().map(Var::value).collect();
        let v = Tensor::concat(&values, axis)?;
        let rg = parts.iter().any(Var::requires_grad);
        Ok(first.tape.push(
            v,
            Op::Concat(parts.iter().map(|p| p.id).collect(), axis),
            rg,
        ))
    }
}

/// Gradients of one scalar with respect to the leaves of its tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` did not influence the loss.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.grads[var.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse pass from a one-element `loss`.
pub fn backward(loss: Var<'_>) -> Result<Gradients> {
    let nodes = loss.tape.nodes.borrow();
    if nodes[loss.id].value.numel() != 1 {
        return Err(contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            nodes[loss.id].value.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
    grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape().to_vec()));

    for id in (0..=loss.id).rev() {
        let node = &nodes[id];
        if !node.requires_grad {
            continue;
        }
        if matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let val = |i: usize| &nodes[i].value;
        let wants = |i: usize| nodes[i].requires_grad;
        let mut send = |i: usize, t: Result<Tensor>| -> Result<()> {
            if wants(i) {
                accumulate(&mut grads[i], t?)?;
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                send(*a, g.sum_to_shape(val(*a).shape()))?;
                send(*b, g.sum_to_shape(val(*b).shape()))?;
            }
            Op::Sub(a, b) => {
                send(*a, g.sum_to_shape(val(*a).shape()))?;
                send(*b, g.scale(-1.0).sum_to_shape(val(*b).shape()))?;
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(
                        *a,
                        g.mul(val(*b)).and_then(|t| t.sum_to_shape(val(*a).shape())),
                    )?;
                }
                if wants(*b) {
                    send(
                        *b,
                        g.mul(val(*a)).and_then(|t| t.sum_to_shape(val(*b).shape())),
                    )?;
                }
            }
            Op::Div(a, b) => {
                if wants(*a) {
                    send(
                        *a,
                        g.div(val(*b)).and_then(|t| t.sum_to_shape(val(*a).shape())),
                    )?;
                }
                if wants(*b) {
                    // d(a/b)/db = -out/b
                    let gb = g
                        .mul(&node.value)
                        .and_then(|t| t.div(val(*b)))
                        .map(|t| t.scale(-1.0))
                        .and_then(|t| t.sum_to_shape(val(*b).shape()));
                    send(*b, gb)?;
                }
            }
            Op::Scale(a, c) => send(*a, Ok(g.scale(*c)))?,
            Op::AddScalar(a) => send(*a, Ok(g))?,
            Op::Sqrt(a) => {
                // Subgradient 0 at sqrt(0).
                let d = node.value.map(|s| if s > 0.0 { 0.5 / s } else { 0.0 });
                send(*a, g.mul(&d))?;
            }
            Op::Relu(a) => {
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                send(*a, g.mul(&mask))?;
            }
            Op::Sum(a) => {
                let v = g.item()?;
                send(*a, Ok(Tensor::full(val(*a).shape().to_vec(), v)))?;
            }
            Op::SumAxis(a) => {
                let zeros = Tensor::zeros(val(*a).shape().to_vec());
                send(*a, zeros.add(&g))?;
            }
            // C = A·B:  dA = G·Bᵀ, dB = Aᵀ·G.  C = A·Bᵀ:  dA = G·B, dB = Gᵀ·A.
            Op::Matmul(a, b, nt) => {
                if wants(*a) {
                    send(*a, tensor::matmul_t(&g, false, val(*b), !nt))?;
                }
                if wants(*b) {
                    let gb = if *nt {
                        tensor::matmul_t(&g, true, val(*a), false)
                    } else {
                        tensor::matmul_t(val(*a), true, &g, false)
                    };
                    send(*b, gb)?;
                }
            }
            Op::Bmm(a, b, nt) => {
                if wants(*a) {
                    send(*a, tensor::bmm_t(&g, false, val(*b), !nt))?;
                }
                if wants(*b) {
                    let gb = if *nt {
                        tensor::bmm_t(&g, true, val(*a), false)
                    } else {
                        tensor::bmm_t(val(*a), true, &g, false)
                    };
                    send(*b, gb)?;
                }
            }
            Op::Reshape(a) => send(*a, g.reshape(val(*a).shape().to_vec()))?,
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                send(*a, g.permute(&inverse))?;
            }
            Op::MovingAverage(a, kernel) => {
                send(*a, tensor::moving_average_adjoint(&g, *kernel))?;
            }
            Op::Slice { input, axis, start } => {
                let full = val(*input).shape().to_vec();
                let end = start + g.shape()[*axis];
                let mut parts = Vec::with_capacity(3);
                if *start > 0 {
                    let mut s = full.clone();
                    s[*axis] = *start;
                    parts.push(Tensor::zeros(s));
                }
                parts.push(g.clone());
                if end < full[*axis] {
                    let mut s = full.clone();
                    s[*axis] = full[*axis] - end;
                    parts.push(Tensor::zeros(s));
                }
                send(*input, Tensor::concat(&parts, *axis))?;
            }
            Op::Concat(inputs, axis) => {
                let mut offset = 0;
                for &i in inputs {
                    let len = val(i).shape()[*axis];
                    send(i, g.slice_axis(*axis, offset, offset + len))?;
                    offset += len;
                }
            }
        }
    }
    Ok(Gradients { grads, shapes })
}
