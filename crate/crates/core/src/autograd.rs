//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Node
//! ids are assigned in creation order, so the node list is already a
//! topological order and [`Var::backward`] is a single reverse sweep.
//!
//! ```
//! use cit_core::autograd::Tape;
//! use cit_core::Tensor64;
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor64::from_f64([2], &[1.0, 2.0]).unwrap());
//! let loss = x.square().unwrap().sum_all().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nt_acc, gemm_tn_acc, MatmulPlan, Tensor};

/// What a backward rule gets to see.
pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [Rc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    /// Which inputs actually need a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    verify: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("grad_enabled", &self.grad_enabled)
            .field("verify", &self.verify)
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: true, verify: false }
    }

    /// A tape that records values only; `backward` on it fails with
    /// [`Error::NoTape`].
    pub fn no_grad() -> Self {
        Tape { grad_enabled: false, ..Self::new() }
    }

    /// Turns on the non-finite check after every forward op.
    pub fn verifying(mut self) -> Self {
        self.verify = true;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A leaf that gradients flow into.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    /// Appends an op node. `backward` is dropped when no parent needs a
    /// gradient.
    pub(crate) fn record(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<'_, T>> {
        if self.verify && !value.is_finite() {
            return Err(Error::NonFiniteActivation(op.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = self.grad_enabled && parents.iter().any(|p| nodes[p.id].requires_grad);
        let (parents, backward) =
            if requires_grad { (parents.iter().map(|p| p.id).collect(), Some(backward)) } else { (Vec::new(), None) };
        nodes.push(Node { op, value: Rc::new(value), parents, backward, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Concatenates along `axis`.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?.value();
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let mut extents = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            if s.len() != rank || (0..rank).any(|d| d != axis && s[d] != first.shape()[d]) {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, first.shape())));
            }
            extents.push(s[axis]);
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total: usize = extents.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let ext = extents.clone();
        self.record(
            "concat",
            out,
            parts,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads: Vec<Vec<T>> = ext.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gi, &e) in grads.iter_mut().zip(&ext) {
                        gi.extend_from_slice(&g[off..off + e * inner]);
                        off += e * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(ctx.inputs)
                    .map(|(d, inp)| Tensor::new(inp.shape().to_vec(), d).map(Some))
                    .collect()
            }),
        )
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

/// Leaf gradients produced by [`Var::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    by_node: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(&v.id)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

// df(input, output) -> local derivative
fn unary<'t, T: Scalar>(
    x: Var<'t, T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Result<Var<'t, T>> {
    let v = x.value().map(f);
    x.tape.record(
        op,
        v,
        &[x],
        Box::new(move |ctx| {
            let inp = ctx.inputs[0].data();
            let out = ctx.output.data();
            let g = ctx.grad.data();
            let d = (0..g.len()).map(|i| g[i] * df(inp[i], out[i])).collect();
            Ok(vec![Some(Tensor::new(ctx.output.shape().to_vec(), d)?)])
        }),
    )
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        back: impl Fn(&BackwardCtx<'_, T>) -> Result<(Tensor<T>, Tensor<T>)> + 'static,
    ) -> Result<Var<'t, T>> {
        let out = self.value().zip_with(&other.value(), f)?;
        self.tape.record(
            op,
            out,
            &[self, other],
            Box::new(move |ctx| {
                let (ga, gb) = back(ctx)?;
                Ok(vec![Some(ga.sum_to_shape(ctx.inputs[0].shape())?), Some(gb.sum_to_shape(ctx.inputs[1].shape())?)])
            }),
        )
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, |ctx| Ok((ctx.grad.clone(), ctx.grad.clone())))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, |ctx| Ok((ctx.grad.clone(), ctx.grad.scale(-T::one()))))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(
            other,
            "mul",
            |a, b| a * b,
            |ctx| {
                let ga = ctx.grad.mul(&ctx.inputs[1])?;
                let gb = ctx.grad.mul(&ctx.inputs[0])?;
                Ok((ga, gb))
            },
        )
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        if other.value().data().iter().any(|v| *v == T::zero()) {
            return Err(Error::DivisionByZero("div"));
        }
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |ctx| {
                let ga = ctx.grad.zip_with(&ctx.inputs[1], |g, b| g / b)?;
                // d(a/b)/db = -a/b² = -out/b
                let ob = ctx.output.zip_with(&ctx.inputs[1], |o, b| -o / b)?;
                let gb = ctx.grad.mul(&ob)?;
                Ok((ga, gb))
            },
        )
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.scale(-T::one())
    }

    pub fn scale(self, k: T) -> Result<Var<'t, T>> {
        unary(self, "scale", |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(self, k: T) -> Result<Var<'t, T>> {
        unary(self, "add_scalar", |v| v + k, |_, _| T::one())
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        unary(self, "square", |v| v * v, |x, _| x + x)
    }

    pub fn sqrt(self) -> Result<Var<'t, T>> {
        unary(self, "sqrt", |v| v.sqrt(), |_, y| T::c(0.5) / y)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        unary(self, "exp", |v| v.exp(), |_, y| y)
    }

    pub fn abs(self) -> Result<Var<'t, T>> {
        unary(
            self,
            "abs",
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        unary(self, "relu", |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(self, slope: T) -> Result<Var<'t, T>> {
        unary(
            self,
            "leaky_relu",
            move |v| if v >= T::zero() { v } else { v * slope },
            move |x, _| if x >= T::zero() { T::one() } else { slope },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        unary(self, "sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        unary(self, "tanh", |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        unary(self, "gelu", gelu, gelu_grad)
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(self, lo: T, hi: T) -> Result<Var<'t, T>> {
        unary(
            self,
            "clamp",
            move |v| v.max(lo).min(hi),
            move |x, _| if x > lo && x < hi { T::one() } else { T::zero() },
        )
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let out = a.matmul(&b)?;
        self.tape.record(
            "matmul",
            out,
            &[self, other],
            Box::new(|ctx| {
                let a = &ctx.inputs[0];
                let b = &ctx.inputs[1];
                let plan = MatmulPlan::new(a.shape(), b.shape())?;
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let g = ctx.grad.data();
                let mut ga = vec![T::zero(); a.numel()];
                let mut gb = vec![T::zero(); b.numel()];
                for (bi, (&ia, &ib)) in plan.a_batch.iter().zip(&plan.b_batch).enumerate() {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    if ctx.needs[0] {
                        // dA = G · Bᵀ
                        gemm_nt_acc(
                            m,
                            n,
                            k,
                            gs,
                            &b.data()[ib * k * n..(ib + 1) * k * n],
                            &mut ga[ia * m * k..(ia + 1) * m * k],
                        );
                    }
                    if ctx.needs[1] {
                        // dB = Aᵀ · G
                        gemm_tn_acc(
                            k,
                            m,
                            n,
                            &a.data()[ia * m * k..(ia + 1) * m * k],
                            gs,
                            &mut gb[ib * k * n..(ib + 1) * k * n],
                        );
                    }
                }
                Ok(vec![
                    ctx.needs[0].then(|| Tensor::new(a.shape().to_vec(), ga)).transpose()?,
                    ctx.needs[1].then(|| Tensor::new(b.shape().to_vec(), gb)).transpose()?,
                ])
            }),
        )
    }

    pub fn sum_axes(self, axes: &[usize], keepdims: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = x.sum_axes(axes, keepdims)?;
        let axes = axes.to_vec();
        self.tape.record(
            "sum",
            out,
            &[self],
            Box::new(move |ctx| {
                let inp = &ctx.inputs[0];
                let (_, slots) = inp.reduce_slots(&axes);
                let g = ctx.grad.data();
                let d = slots.iter().map(|&s| g[s]).collect();
                Ok(vec![Some(Tensor::new(inp.shape().to_vec(), d)?)])
            }),
        )
    }

    pub fn mean_axes(self, axes: &[usize], keepdims: bool) -> Result<Var<'t, T>> {
        let s = self.sum_axes(axes, keepdims)?;
        let count = self.value().numel() / s.value().numel();
        s.scale(T::one() / T::c(count as f64))
    }

    /// Max over `axes`; the gradient goes to the first arg-max of each slot.
    pub fn max_axes(self, axes: &[usize], keepdims: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        x.check_axes(axes)?;
        let (kept, slots) = x.reduce_slots(axes);
        let n_out: usize = kept.iter().product();
        let mut best = vec![T::neg_infinity(); n_out];
        let mut arg = vec![usize::MAX; n_out];
        for (i, (&s, &v)) in slots.iter().zip(x.data()).enumerate() {
            if arg[s] == usize::MAX || v > best[s] {
                best[s] = v;
                arg[s] = i;
            }
        }
        let out = Tensor::new(x.reduced_shape(axes, keepdims), best)?;
        self.tape.record(
            "max",
            out,
            &[self],
            Box::new(move |ctx| {
                let inp = &ctx.inputs[0];
                let mut d = vec![T::zero(); inp.numel()];
                for (&i, &g) in arg.iter().zip(ctx.grad.data()) {
                    d[i] += g;
                }
                Ok(vec![Some(Tensor::new(inp.shape().to_vec(), d)?)])
            }),
        )
    }

    pub fn sum_all(self) -> Result<Var<'t, T>> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.sum_axes(&axes, false)
    }

    pub fn mean_all(self) -> Result<Var<'t, T>> {
        let n = self.value().numel();
        self.sum_all()?.scale(T::one() / T::c(n as f64))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        self.tape.record(
            "reshape",
            out,
            &[self],
            Box::new(|ctx| Ok(vec![Some(ctx.grad.reshape(ctx.inputs[0].shape().to_vec())?)])),
        )
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape.record("permute", out, &[self], Box::new(move |ctx| Ok(vec![Some(ctx.grad.permute(&inverse)?)])))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.value().rank();
        if r < 2 {
            return Err(Error::InvalidAxis { axis: 1, rank: r });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// `out[i] = self[indices[i]]` with output `shape`; backward scatters.
    pub fn gather(self, shape: Vec<usize>, indices: Rc<[usize]>) -> Result<Var<'t, T>> {
        let out = self.value().gather(shape, &indices)?;
        self.tape.record(
            "gather",
            out,
            &[self],
            Box::new(move |ctx| Ok(vec![Some(ctx.grad.scatter_add(ctx.inputs[0].shape(), &indices))])),
        )
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis { axis, rank: shape.len() });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) on extent {}", start + len, shape[axis])));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut idx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            idx.extend(base..base + len * inner);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(out_shape, idx.into())
    }

    /// Cyclic shift: element at position `p` along `axes[i]` moves to
    /// `p + shifts[i]` (mod extent).
    pub fn roll(self, axes: &[usize], shifts: &[isize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let idx = roll_indices(&shape, axes, shifts)?;
        self.gather(shape, idx.into())
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = *x.shape().last().expect("rank >= 1");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_row(row);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape.record(
            "softmax",
            out,
            &[self],
            Box::new(move |ctx| {
                let y = ctx.output.data();
                let g = ctx.grad.data();
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                Ok(vec![Some(Tensor::new(ctx.output.shape().to_vec(), d)?)])
            }),
        )
    }

    /// Reverse sweep from this scalar.
    pub fn backward(self) -> Result<Gradients<T>> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.id];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if !self.tape.grad_enabled || !root.requires_grad {
            return Err(Error::NoTape);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=self.id).map(|_| None).collect();
        grads[self.id] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                if node.requires_grad {
                    leaves.insert(id, g);
                }
                continue;
            };
            let inputs: Vec<Rc<Tensor<T>>> = node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let ctx = BackwardCtx { grad: &g, inputs: &inputs, output: &node.value, needs: &needs };
            let parent_grads = backward(&ctx)?;
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, need) else { continue };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape for {}", nodes[p].op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { by_node: leaves })
    }
}

pub(crate) fn roll_indices(shape: &[usize], axes: &[usize], shifts: &[isize]) -> Result<Vec<usize>> {
    if axes.len() != shifts.len() {
        return Err(Error::shape("roll", "axes and shifts differ in length"));
    }
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::InvalidAxis { axis: a, rank: shape.len() });
        }
    }
    let st = crate::tensor::strides(shape);
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut pos = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut src = 0;
        for d in 0..shape.len() {
            let mut p = pos[d] as isize;
            if let Some(k) = axes.iter().position(|&a| a == d) {
                p = (p - shifts[k]).rem_euclid(shape[d] as isize);
            }
            src += p as usize * st[d];
        }
        out.push(src);
        for d in (0..shape.len()).rev() {
            pos[d] += 1;
            if pos[d] < shape[d] {
                break;
            }
            pos[d] = 0;
        }
    }
    Ok(out)
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T, _y: T) -> T {
    let inner = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::c(GELU_C) * (T::one() + T::c(3.0 * GELU_A) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * dinner
}

pub(crate) fn softmax_row<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
