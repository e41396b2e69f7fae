use std::cell::{Ref, RefCell};

use super::kernels::{self, axis_split, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar,
    MatMul,
    BatchMatMul,
    Conv1d(ConvDims),
    AvgPool2,
    Upsample2,
    TransposeLast,
    Reshape,
    Concat(usize),
    Slice { axis: usize, start: usize },
    RepeatLeading,
    RepeatTrailing,
    Relu,
    LeakyRelu(T),
    Exp,
    Log,
    Abs,
    Softmax(usize),
    Sum(usize),
    Mean(usize),
    SumAll,
    L2Normalize { axis: usize, eps: T },
    Mse,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul => "matmul",
            Op::BatchMatMul => "bmm",
            Op::Conv1d(_) => "conv1d",
            Op::AvgPool2 => "avg_pool",
            Op::Upsample2 => "upsample",
            Op::TransposeLast => "transpose",
            Op::Reshape => "reshape",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::RepeatLeading => "repeat_leading",
            Op::RepeatTrailing => "repeat_trailing",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Abs => "abs",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAll => "sum_all",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Mse => "mse",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    fault: Option<&'static str>,
    consumed: bool,
}

/// Define-by-run record of tensor operations.
///
/// Nodes are appended in execution order, so recording order is a valid
/// topological order and [`Tape::backward`] simply walks it in reverse,
/// summing gradient contributions from every consumer of a node.
pub struct Tape<T: Scalar> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Result of a backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`, `None` if the node does not require grad
    /// or the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient or zeros of the right shape.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape()),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                fault: None,
                consumed: false,
            }),
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        if !value.is_finite() {
            self.note_fault("leaf");
        }
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First non-finite operation recorded so far.
    pub fn check(&self) -> Result<()> {
        match self.inner.borrow().fault {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// Clears the tape so it can record a fresh computation.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.fault = None;
        inner.consumed = false;
    }

    fn note_fault(&self, op: &'static str) {
        let mut inner = self.inner.borrow_mut();
        if inner.fault.is_none() {
            inner.fault = Some(op);
        }
    }

    fn push(&self, op: Op<T>, inputs: &[usize], value: Tensor<T>) -> Var<'_, T> {
        if !value.is_finite() {
            self.note_fault(op.name());
        }
        let mut inner = self.inner.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| inner.nodes[i].requires_grad);
        inner.nodes.push(Node {
            value,
            op,
            inputs: inputs.to_vec(),
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.inner.borrow(), |inner| &inner.nodes[id].value)
    }

    /// Reverse-mode sweep from a one-element `loss`.
    ///
    /// A tape can be differentiated once; call [`Tape::reset`] before reuse.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::Contract(
                    "backward called twice on the same tape without reset".into(),
                ));
            }
            if inner.nodes.is_empty() {
                return Err(Error::Contract("backward on an empty tape".into()));
            }
            inner.consumed = true;
        }
        self.check()?;
        let inner = self.inner.borrow();
        let loss_node = &inner.nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; inner.nodes.len()];
        grads[loss.id] = Some(Tensor::ones(loss_node.value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &inner.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| inner.nodes[i].requires_grad)
                .collect();
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &inner.nodes[i].value).collect();
            let input_grads = backward_rule(&node.op, &ins, &node.value, &g, &need);
            for ((&input, gi), needed) in node.inputs.iter().zip(input_grads).zip(need) {
                if !needed {
                    continue;
                }
                let Some(gi) = gi else { continue };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Constant copy of this node's value; gradients do not flow through it.
    pub fn detach(&self) -> Var<'t, T> {
        let v = self.value().clone();
        self.tape.constant(v)
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Tensor<T>) -> Self {
        let out = f(&self.value());
        self.tape.push(op, &[self.id], out)
    }

    fn binary(self, other: Self, op: Op<T>, f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Tensor<T>) -> Self {
        let out = {
            let a = self.value();
            let b = other.value();
            f(&a, &b)
        };
        self.tape.push(op, &[self.id, other.id], out)
    }

    pub fn add(self, other: Self) -> Self {
        self.binary(other, Op::Add, |a, b| a.zip_map(b, |x, y| x + y))
    }

    pub fn sub(self, other: Self) -> Self {
        self.binary(other, Op::Sub, |a, b| a.zip_map(b, |x, y| x - y))
    }

    pub fn mul(self, other: Self) -> Self {
        self.binary(other, Op::Mul, |a, b| a.zip_map(b, |x, y| x * y))
    }

    pub fn scale(self, s: T) -> Self {
        self.unary(Op::Scale(s), |a| a.map(|x| x * s))
    }

    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    pub fn add_scalar(self, s: T) -> Self {
        self.unary(Op::AddScalar, |a| a.map(|x| x + s))
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(self, other: Self) -> Self {
        self.binary(other, Op::MatMul, |a, b| {
            assert!(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 inputs");
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            assert_eq!(k, b.shape()[0], "matmul inner extent mismatch {:?} x {:?}", a.shape(), b.shape());
            Tensor::new(&[m, n], kernels::matmul(a.data(), b.data(), m, k, n))
        })
    }

    /// `[B,m,k] · [B,k,n]`.
    pub fn bmm(self, other: Self) -> Self {
        self.binary(other, Op::BatchMatMul, |a, b| {
            assert!(a.rank() == 3 && b.rank() == 3, "bmm needs rank-3 inputs");
            let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            assert_eq!(bs, b.shape()[0], "bmm batch mismatch");
            assert_eq!(k, b.shape()[1], "bmm inner extent mismatch");
            let mut out = Vec::with_capacity(bs * m * n);
            for i in 0..bs {
                out.extend(kernels::matmul(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                ));
            }
            Tensor::new(&[bs, m, n], out)
        })
    }

    /// Stride-1 convolution with zero "same" padding.
    /// `self: [B,C_in,L]`, `weight: [C_out,C_in,K]` (K odd), `bias: [C_out]`.
    pub fn conv1d(self, weight: Self, bias: Self) -> Self {
        let dims = {
            let x = self.value();
            let w = weight.value();
            let b = bias.value();
            assert!(x.rank() == 3 && w.rank() == 3, "conv1d expects [B,C,L] and [O,C,K]");
            assert_eq!(x.shape()[1], w.shape()[1], "conv1d channel mismatch");
            assert!(w.shape()[2] % 2 == 1, "conv1d kernel must be odd for same padding");
            assert_eq!(b.shape(), &[w.shape()[0]], "conv1d bias shape");
            ConvDims {
                batch: x.shape()[0],
                c_in: x.shape()[1],
                c_out: w.shape()[0],
                len: x.shape()[2],
                kernel: w.shape()[2],
            }
        };
        let out = {
            let x = self.value();
            let w = weight.value();
            let b = bias.value();
            kernels::conv1d(x.data(), w.data(), b.data(), dims)
        };
        let out = Tensor::new(&[dims.batch, dims.c_out, dims.len], out);
        self.tape.push(Op::Conv1d(dims), &[self.id, weight.id, bias.id], out)
    }

    /// Averages adjacent pairs along the last axis.
    pub fn avg_pool2(self) -> Self {
        self.unary(Op::AvgPool2, |a| {
            let shape = a.shape();
            let len = *shape.last().expect("avg_pool2 on scalar");
            assert!(len % 2 == 0, "avg_pool2 needs an even last extent");
            let half = T::c(0.5);
            let data: Vec<T> = a.data().chunks_exact(2).map(|p| (p[0] + p[1]) * half).collect();
            let mut s = shape.to_vec();
            *s.last_mut().unwrap() = len / 2;
            Tensor::new(&s, data)
        })
    }

    /// Nearest-neighbour x2 upsampling along the last axis.
    pub fn upsample2(self) -> Self {
        self.unary(Op::Upsample2, |a| {
            let data: Vec<T> = a.data().iter().flat_map(|&v| [v, v]).collect();
            let mut s = a.shape().to_vec();
            *s.last_mut().expect("upsample2 on scalar") *= 2;
            Tensor::new(&s, data)
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Self {
        self.unary(Op::TransposeLast, transpose_last)
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        self.unary(Op::Reshape, |a| a.clone().reshaped(shape))
    }

    pub fn concat(parts: &[Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let out = {
            let vals: Vec<Ref<'_, Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
            let refs: Vec<&Tensor<T>> = vals.iter().map(|v| &**v).collect();
            concat_values(&refs, axis)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push(Op::Concat(axis), &ids, out)
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Self {
        self.unary(Op::Slice { axis, start }, |a| {
            let (outer, extent, inner) = axis_split(a.shape(), axis);
            assert!(start + len <= extent && len > 0, "slice out of range");
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&a.data()[base..base + len * inner]);
            }
            let mut s = a.shape().to_vec();
            s[axis] = len;
            Tensor::new(&s, data)
        })
    }

    /// `[s..] -> [n, s..]` by copying.
    pub fn repeat_leading(self, n: usize) -> Self {
        self.unary(Op::RepeatLeading, |a| {
            let mut s = vec![n];
            s.extend_from_slice(a.shape());
            let mut data = Vec::with_capacity(n * a.len());
            for _ in 0..n {
                data.extend_from_slice(a.data());
            }
            Tensor::new(&s, data)
        })
    }

    /// `[s..] -> [s.., n]` by copying each element `n` times.
    pub fn repeat_trailing(self, n: usize) -> Self {
        self.unary(Op::RepeatTrailing, |a| {
            let mut s = a.shape().to_vec();
            s.push(n);
            let data = a.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
            Tensor::new(&s, data)
        })
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu, |a| a.map(|x| x.max(T::zero())))
    }

    pub fn leaky_relu(self, slope: T) -> Self {
        self.unary(Op::LeakyRelu(slope), |a| a.map(|x| if x > T::zero() { x } else { x * slope }))
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp, |a| a.map(T::exp))
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Log, |a| a.map(T::ln))
    }

    pub fn abs(self) -> Self {
        self.unary(Op::Abs, |a| a.map(T::abs))
    }

    pub fn softmax(self, axis: usize) -> Self {
        self.unary(Op::Softmax(axis), |a| softmax_values(a, axis))
    }

    pub fn sum_axis(self, axis: usize) -> Self {
        self.unary(Op::Sum(axis), |a| reduce_axis(a, axis, T::one()))
    }

    pub fn mean_axis(self, axis: usize) -> Self {
        self.unary(Op::Mean(axis), |a| {
            let n = a.shape()[axis];
            reduce_axis(a, axis, T::one() / T::c(n as f64))
        })
    }

    pub fn sum(self) -> Self {
        self.unary(Op::SumAll, |a| Tensor::scalar(a.sum()))
    }

    /// `v / max(‖v‖₂, eps)` along `axis`.
    pub fn l2_normalize(self, axis: usize, eps: T) -> Self {
        self.unary(Op::L2Normalize { axis, eps }, |a| {
            let (outer, extent, inner) = axis_split(a.shape(), axis);
            let mut out = a.clone();
            let d = out.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * extent + k) * inner + i;
                    let norm = (0..extent).map(|k| d[idx(k)] * d[idx(k)]).sum::<T>().sqrt();
                    let denom = norm.max(eps);
                    for k in 0..extent {
                        d[idx(k)] = d[idx(k)] / denom;
                    }
                }
            }
            out
        })
    }

    /// Mean squared difference, reduced to a scalar.
    pub fn mse(self, target: Self) -> Self {
        self.binary(target, Op::Mse, |a, b| {
            let n = T::c(a.len() as f64);
            let s: T = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
            assert_eq!(a.shape(), b.shape(), "mse shape mismatch");
            Tensor::scalar(s / n)
        })
    }
}

impl<'t, T: Scalar> std::ops::Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self {
        Var::add(self, rhs)
    }
}

impl<'t, T: Scalar> std::ops::Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self {
        Var::sub(self, rhs)
    }
}

impl<'t, T: Scalar> std::ops::Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self {
        Var::mul(self, rhs)
    }
}

impl<'t, T: Scalar> std::ops::Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self {
        Var::neg(self)
    }
}

fn transpose_last<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let r = a.rank();
    assert!(r >= 2, "transpose needs rank >= 2");
    let (rows, cols) = (a.shape()[r - 2], a.shape()[r - 1]);
    let batch = a.len() / (rows * cols);
    let mut data = vec![T::zero(); a.len()];
    for b in 0..batch {
        let src = &a.data()[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut data[b * rows * cols..(b + 1) * rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    let mut s = a.shape().to_vec();
    s.swap(r - 2, r - 1);
    Tensor::new(&s, data)
}

fn concat_values<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    let first = parts[0].shape();
    for p in parts {
        assert_eq!(p.rank(), first.len(), "concat rank mismatch");
        for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
            assert!(d == axis || a == b, "concat extent mismatch on axis {d}");
        }
    }
    let (outer, _, inner) = axis_split(first, axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let ext = p.shape()[axis];
            data.extend_from_slice(&p.data()[o * ext * inner..(o + 1) * ext * inner]);
        }
    }
    let mut s = first.to_vec();
    s[axis] = total;
    Tensor::new(&s, data)
}

fn softmax_values<T: Scalar>(a: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = axis_split(a.shape(), axis);
    let mut out = a.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * extent + k) * inner + i;
            let max = (0..extent).map(|k| d[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..extent {
                let e = (d[idx(k)] - max).exp();
                d[idx(k)] = e;
                z = z + e;
            }
            for k in 0..extent {
                d[idx(k)] = d[idx(k)] / z;
            }
        }
    }
    out
}

fn reduce_axis<T: Scalar>(a: &Tensor<T>, axis: usize, factor: T) -> Tensor<T> {
    let (outer, extent, inner) = axis_split(a.shape(), axis);
    let mut data = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..extent {
            let src = &a.data()[(o * extent + k) * inner..(o * extent + k + 1) * inner];
            for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d = *d + v;
            }
        }
    }
    data.iter_mut().for_each(|v| *v = *v * factor);
    let mut s = a.shape().to_vec();
    s.remove(axis);
    if s.is_empty() {
        Tensor::scalar(data[0])
    } else {
        Tensor::new(&s, data)
    }
}

/// Gradients of one recorded op w.r.t. each of its inputs.
fn backward_rule<T: Scalar>(
    op: &Op<T>,
    ins: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    need: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let one = |t: Tensor<T>| vec![Some(t)];
    match op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Op::Mul => vec![
            need[0].then(|| g.zip_map(ins[1], |a, b| a * b)),
            need[1].then(|| g.zip_map(ins[0], |a, b| a * b)),
        ],
        Op::Scale(s) => one(g.map(|v| v * *s)),
        Op::AddScalar | Op::Reshape => one(g.clone().reshaped(ins[0].shape())),
        Op::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            vec![
                need[0].then(|| Tensor::new(&[m, k], kernels::matmul_nt(g.data(), b.data(), m, k, n))),
                need[1].then(|| Tensor::new(&[k, n], kernels::matmul_tn(a.data(), g.data(), m, k, n))),
            ]
        }
        Op::BatchMatMul => {
            let (a, b) = (ins[0], ins[1]);
            let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            let ga = need[0].then(|| {
                let mut v = Vec::with_capacity(bs * m * k);
                for i in 0..bs {
                    v.extend(kernels::matmul_nt(
                        &g.data()[i * m * n..(i + 1) * m * n],
                        &b.data()[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    ));
                }
                Tensor::new(a.shape(), v)
            });
            let gb = need[1].then(|| {
                let mut v = Vec::with_capacity(bs * k * n);
                for i in 0..bs {
                    v.extend(kernels::matmul_tn(
                        &a.data()[i * m * k..(i + 1) * m * k],
                        &g.data()[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    ));
                }
                Tensor::new(b.shape(), v)
            });
            vec![ga, gb]
        }
        Op::Conv1d(d) => {
            let gx = need[0].then(|| Tensor::new(ins[0].shape(), kernels::conv1d_grad_input(g.data(), ins[1].data(), *d)));
            let (gw, gb) = if need[1] || need[2] {
                let (gw, gb) = kernels::conv1d_grad_weight(g.data(), ins[0].data(), *d);
                (Some(Tensor::new(ins[1].shape(), gw)), Some(Tensor::new(ins[2].shape(), gb)))
            } else {
                (None, None)
            };
            vec![gx, gw, gb]
        }
        Op::AvgPool2 => {
            let half = T::c(0.5);
            let data = g.data().iter().flat_map(|&v| [v * half, v * half]).collect();
            one(Tensor::new(ins[0].shape(), data))
        }
        Op::Upsample2 => {
            let data = g.data().chunks_exact(2).map(|p| p[0] + p[1]).collect();
            one(Tensor::new(ins[0].shape(), data))
        }
        Op::TransposeLast => one(transpose_last(g)),
        Op::Concat(axis) => {
            let (outer, total, inner) = axis_split(g.shape(), *axis);
            let mut offset = 0;
            ins.iter()
                .map(|p| {
                    let ext = p.shape()[*axis];
                    let mut data = Vec::with_capacity(p.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + ext * inner]);
                    }
                    offset += ext;
                    Some(Tensor::new(p.shape(), data))
                })
                .collect()
        }
        Op::Slice { axis, start } => {
            let (outer, extent, inner) = axis_split(ins[0].shape(), *axis);
            let len = g.shape()[*axis];
            let mut gx = Tensor::zeros(ins[0].shape());
            let d = gx.data_mut();
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            one(gx)
        }
        Op::RepeatLeading => {
            let n = ins[0].len();
            let mut acc = vec![T::zero(); n];
            for chunk in g.data().chunks_exact(n) {
                for (a, &v) in acc.iter_mut().zip(chunk) {
                    *a = *a + v;
                }
            }
            one(Tensor::new(ins[0].shape(), acc))
        }
        Op::RepeatTrailing => {
            let n = *g.shape().last().unwrap();
            let data = g.data().chunks_exact(n).map(|c| c.iter().copied().sum()).collect();
            one(Tensor::new(ins[0].shape(), data))
        }
        Op::Relu => one(g.zip_map(ins[0], |gv, x| if x > T::zero() { gv } else { T::zero() })),
        Op::LeakyRelu(slope) => one(g.zip_map(ins[0], |gv, x| if x > T::zero() { gv } else { gv * *slope })),
        Op::Exp => one(g.zip_map(out, |gv, y| gv * y)),
        Op::Log => one(g.zip_map(ins[0], |gv, x| gv / x)),
        Op::Abs => one(g.zip_map(ins[0], |gv, x| {
            if x > T::zero() {
                gv
            } else if x < T::zero() {
                -gv
            } else {
                T::zero()
            }
        })),
        Op::Softmax(axis) => {
            let (outer, extent, inner) = axis_split(out.shape(), *axis);
            let mut gx = Tensor::zeros(out.shape());
            let (y, gd) = (out.data(), g.data());
            let d = gx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * extent + k) * inner + i;
                    let s: T = (0..extent).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                    for k in 0..extent {
                        d[idx(k)] = y[idx(k)] * (gd[idx(k)] - s);
                    }
                }
            }
            one(gx)
        }
        Op::Sum(axis) | Op::Mean(axis) => {
            let (outer, extent, inner) = axis_split(ins[0].shape(), *axis);
            let factor = match op {
                Op::Mean(_) => T::one() / T::c(extent as f64),
                _ => T::one(),
            };
            let mut gx = Tensor::zeros(ins[0].shape());
            let d = gx.data_mut();
            for o in 0..outer {
                for k in 0..extent {
                    for i in 0..inner {
                        d[(o * extent + k) * inner + i] = g.data()[o * inner + i] * factor;
                    }
                }
            }
            one(gx)
        }
        Op::SumAll => one(Tensor::full(ins[0].shape(), g.item())),
        Op::L2Normalize { axis, eps } => {
            let x = ins[0];
            let (outer, extent, inner) = axis_split(x.shape(), *axis);
            let mut gx = Tensor::zeros(x.shape());
            let (xd, yd, gd) = (x.data(), out.data(), g.data());
            let d = gx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * extent + k) * inner + i;
                    let norm = (0..extent).map(|k| xd[idx(k)] * xd[idx(k)]).sum::<T>().sqrt();
                    if norm > *eps {
                        let gy: T = (0..extent).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                        for k in 0..extent {
                            d[idx(k)] = (gd[idx(k)] - yd[idx(k)] * gy) / norm;
                        }
                    } else {
                        for k in 0..extent {
                            d[idx(k)] = gd[idx(k)] / *eps;
                        }
                    }
                }
            }
            one(gx)
        }
        Op::Mse => {
            let (a, b) = (ins[0], ins[1]);
            let scale = T::c(2.0) * g.item() / T::c(a.len() as f64);
            let ga = a.zip_map(b, |x, y| (x - y) * scale);
            let gb = ga.map(|v| -v);
            vec![Some(ga), Some(gb)]
        }
    }
}
