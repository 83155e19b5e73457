use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::tensor::{self, Tensor};
use super::{AutodiffError, Result};

/// Index of a node on its tape. Inputs always have smaller ids than the
/// nodes that consume them, so ids are a topological order.
pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
        batched: bool,
    },
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    PowConst(NodeId, f64),
    Square(NodeId),
    Wavelet {
        z: NodeId,
        w1: NodeId,
        w2: NodeId,
    },
    Sum(NodeId),
    Mean(NodeId),
    SumTo(NodeId),
    BroadcastTo(NodeId),
    SumLast(NodeId),
    ExpandLast(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Pad {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    Softmax(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            MatMul { a, b, .. } => vec![*a, *b],
            Wavelet { z, w1, w2 } => vec![*z, *w1, *w2],
            Concat { parts, .. } => parts.clone(),
            Neg(x) | Scale(x, _) | Shift(x) | Sin(x) | Cos(x) | Exp(x) | PowConst(x, _) | Square(x) | Sum(x)
            | Mean(x) | SumTo(x) | BroadcastTo(x) | SumLast(x) | ExpandLast(x) | Transpose(x) | Reshape(x)
            | Softmax(x) => vec![*x],
            Slice { x, .. } | Pad { x, .. } => vec![*x],
        }
    }
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Records a computation graph. A tape is confined to one thread; build a
/// fresh tape per evaluation and drop it to free the graph.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    /// `(sin x, cos x)` per node, shared by every sine, cosine and wavelet of `x`.
    trig: RefCell<HashMap<NodeId, (Rc<Tensor>, Rc<Tensor>)>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that gradients can be taken with respect to.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, Rc::new(value), true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, Rc::new(value), false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, op: Op, value: Rc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn sin_cos(&self, id: NodeId) -> (Rc<Tensor>, Rc<Tensor>) {
        if let Some((s, c)) = self.trig.borrow().get(&id) {
            return (Rc::clone(s), Rc::clone(c));
        }
        let x = self.value(id);
        let (mut s, mut c) = (Tensor::zeros(x.shape()), Tensor::zeros(x.shape()));
        for ((v, s), c) in x.data().iter().zip(s.data_mut()).zip(c.data_mut()) {
            (*s, *c) = v.sin_cos();
        }
        let pair = (Rc::new(s), Rc::new(c));
        self.trig.borrow_mut().insert(id, (Rc::clone(&pair.0), Rc::clone(&pair.1)));
        pair
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn record(&self, op: Op, value: Tensor) -> Var<'_> {
        self.record_shared(op, Rc::new(value))
    }

    fn record_shared(&self, op: Op, value: Rc<Tensor>) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(op, value, requires_grad)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(AutodiffError::Empty { op: "concat" })?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let shape0 = values[0].shape().to_vec();
        if axis >= shape0.len() {
            return Err(AutodiffError::InvalidAxis {
                op: "concat",
                axis,
                shape: shape0,
            });
        }
        for v in &values[1..] {
            let s = v.shape();
            let compatible = s.len() == shape0.len()
                && s.iter().zip(&shape0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: shape0,
                    rhs: s.to_vec(),
                });
            }
        }
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let value = tensor::concat_axis(&refs, axis);
        Ok(first.tape.record(
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            value,
        ))
    }

    /// Gradients of a one-element `output` with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are recorded on the tape and
    /// can be differentiated again; otherwise they are detached constants.
    /// Leaves that `output` does not depend on get zero gradients.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Gradients<'t>> {
        let out_value = output.value();
        if out_value.numel() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: out_value.shape().to_vec(),
            });
        }
        for w in wrt {
            if !self.requires_grad(w.id) {
                return Err(AutodiffError::NotDifferentiable(w.id));
            }
        }
        let end = output.id + 1;
        // nodes on some path from a requested leaf to the output
        let mut relevant = vec![false; end];
        for w in wrt {
            if w.id < end {
                relevant[w.id] = true;
            }
        }
        let start = wrt.iter().map(|w| w.id).min().unwrap_or(end);
        let ops: Vec<Op> = {
            let nodes = self.nodes.borrow();
            nodes[..end].iter().map(|n| n.op.clone()).collect()
        };
        for i in start..end {
            if !relevant[i] && ops[i].inputs().iter().any(|&j| relevant[j]) {
                relevant[i] = true;
            }
        }

        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; end];
        if relevant[output.id] {
            adjoint[output.id] = Some(self.constant(Tensor::ones(out_value.shape())));
        }
        for i in (start..end).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            if matches!(ops[i], Op::Leaf) {
                continue;
            }
            let node = Var { tape: self, id: i };
            for (input, contribution) in self.vjp(&ops[i], node, g, &relevant)? {
                adjoint[input] = Some(match adjoint[input] {
                    None => contribution,
                    Some(acc) => acc.add(&contribution)?,
                });
            }
        }

        let mut grads = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = match adjoint.get(w.id).copied().flatten() {
                Some(g) if create_graph => g,
                Some(g) => self.push(Op::Leaf, g.value(), false),
                None => self.constant(Tensor::zeros(w.value().shape())),
            };
            grads.push(g);
        }
        Ok(Gradients {
            leaves: wrt.iter().map(|w| w.id).collect(),
            grads,
        })
    }

    /// Row `r` holds the gradient of `outputs[r]` with respect to each of
    /// `params`, in the order given.
    pub fn jacobian_rows<'t>(&'t self, outputs: Var<'t>, params: &[Var<'t>]) -> Result<Vec<Vec<Tensor>>> {
        let n = outputs.value().numel();
        let flat = outputs.reshape(&[n])?;
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            let entry = flat.slice(0, r, r + 1)?.sum()?;
            let grads = self.grad(entry, params, false)?;
            rows.push(grads.grads.iter().map(|g| g.value().as_ref().clone()).collect());
        }
        Ok(rows)
    }

    fn vjp<'t>(&'t self, op: &Op, node: Var<'t>, g: Var<'t>, relevant: &[bool]) -> Result<Vec<(NodeId, Var<'t>)>> {
        let var = |id: NodeId| Var { tape: self, id };
        let mut out = Vec::new();
        let mut emit = |id: NodeId, f: &mut dyn FnMut() -> Result<Var<'t>>| -> Result<()> {
            if relevant[id] {
                out.push((id, f()?));
            }
            Ok(())
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(a, &mut || g.sum_to_shape_of(var(a)))?;
                emit(b, &mut || g.sum_to_shape_of(var(b)))?;
            }
            Op::Sub(a, b) => {
                emit(a, &mut || g.sum_to_shape_of(var(a)))?;
                emit(b, &mut || g.neg().sum_to_shape_of(var(b)))?;
            }
            Op::Mul(a, b) => {
                emit(a, &mut || g.mul(&var(b))?.sum_to_shape_of(var(a)))?;
                emit(b, &mut || g.mul(&var(a))?.sum_to_shape_of(var(b)))?;
            }
            Op::Div(a, b) => {
                emit(a, &mut || g.div(&var(b))?.sum_to_shape_of(var(a)))?;
                emit(b, &mut || g.mul(&node)?.div(&var(b))?.neg().sum_to_shape_of(var(b)))?;
            }
            Op::Neg(x) => emit(x, &mut || Ok(g.neg()))?,
            Op::Scale(x, c) => emit(x, &mut || Ok(g.scale(c)))?,
            Op::Shift(x) => emit(x, &mut || Ok(g))?,
            Op::MatMul { a, b, ta, tb, batched } => {
                let (va, vb) = (var(a), var(b));
                let mm = |l: Var<'t>, r: Var<'t>, tl: bool, tr: bool| l.matmul_general(&r, tl, tr, batched);
                emit(a, &mut || {
                    let d = match (ta, tb) {
                        (false, false) => mm(g, vb, false, true)?,
                        (true, false) => mm(vb, g, false, true)?,
                        (false, true) => mm(g, vb, false, false)?,
                        (true, true) => mm(vb, g, true, true)?,
                    };
                    d.reshape_like(va)
                })?;
                emit(b, &mut || {
                    let d = match (ta, tb) {
                        (false, false) => mm(va, g, true, false)?,
                        (true, false) => mm(va, g, false, false)?,
                        (false, true) => mm(g, va, true, false)?,
                        (true, true) => mm(g, va, true, true)?,
                    };
                    d.reshape_like(vb)
                })?;
            }
            Op::Sin(x) => emit(x, &mut || g.mul(&var(x).cos()))?,
            Op::Cos(x) => emit(x, &mut || Ok(g.mul(&var(x).sin())?.neg()))?,
            Op::Exp(x) => emit(x, &mut || g.mul(&node))?,
            Op::PowConst(x, p) => emit(x, &mut || g.mul(&var(x).powf(p - 1.0).scale(p)))?,
            Op::Square(x) => emit(x, &mut || Ok(g.mul(&var(x))?.scale(2.0)))?,
            Op::Wavelet { z, w1, w2 } => {
                let (vz, v1, v2) = (var(z), var(w1), var(w2));
                emit(z, &mut || g.mul(&vz.wavelet(&v2.neg(), &v1)?))?;
                emit(w1, &mut || g.mul(&vz.sin())?.sum_to_shape_of(v1))?;
                emit(w2, &mut || g.mul(&vz.cos())?.sum_to_shape_of(v2))?;
            }
            Op::Sum(x) => emit(x, &mut || g.broadcast_to(var(x).shape().as_slice()))?,
            Op::Mean(x) => emit(x, &mut || {
                let vx = var(x);
                let n = vx.value().numel() as f64;
                g.scale(1.0 / n).broadcast_to(vx.shape().as_slice())
            })?,
            Op::SumTo(x) => emit(x, &mut || g.broadcast_to(var(x).shape().as_slice()))?,
            Op::BroadcastTo(x) => emit(x, &mut || g.sum_to_shape_of(var(x)))?,
            Op::SumLast(x) => emit(x, &mut || {
                let n = *var(x).shape().last().unwrap_or(&1);
                g.expand_last(n)
            })?,
            Op::ExpandLast(x) => emit(x, &mut || g.sum_last())?,
            Op::Concat { ref parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let len = var(p).shape()[axis];
                    emit(p, &mut || g.slice(axis, offset, offset + len))?;
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => emit(x, &mut || {
                let total = var(x).shape()[axis];
                g.pad(axis, start, total)
            })?,
            Op::Pad { x, axis, start } => emit(x, &mut || {
                let len = var(x).shape()[axis];
                g.slice(axis, start, start + len)
            })?,
            Op::Transpose(x) => emit(x, &mut || g.transpose())?,
            Op::Reshape(x) => emit(x, &mut || g.reshape_like(var(x)))?,
            Op::Softmax(x) => {
                // s * (g - sum(s * g))
                emit(x, &mut || {
                    let sg = node.mul(&g)?;
                    let n = *node.shape().last().unwrap_or(&1);
                    let centered = g.sub(&sg.sum_last()?.expand_last(n)?)?;
                    node.mul(&centered)
                })?;
            }
        }
        Ok(out)
    }
}

/// Gradients returned by [`Tape::grad`], aligned with the requested leaves.
#[derive(Debug)]
pub struct Gradients<'t> {
    leaves: Vec<NodeId>,
    grads: Vec<Var<'t>>,
}

impl<'t> Gradients<'t> {
    /// Gradient for `leaf`, if it was among the requested leaves.
    pub fn get(&self, leaf: Var<'t>) -> Option<Var<'t>> {
        self.leaves.iter().position(|&l| l == leaf.id).map(|i| self.grads[i])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Var<'t>> {
        self.grads.iter()
    }

    pub fn into_vec(self) -> Vec<Var<'t>> {
        self.grads
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        Err(AutodiffError::InvalidAxis {
            op,
            axis,
            shape: shape.to_vec(),
        })
    } else {
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn binary(&self, other: &Var<'t>, op: &'static str, make: fn(NodeId, NodeId) -> Op, f: fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = tensor::broadcast_shape(a.shape(), b.shape()).ok_or_else(|| AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let value = tensor::zip_broadcast(&a, &b, shape, f);
        Ok(self.tape.record(make(self.id, other.id), value))
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value().map(f);
        self.tape.record(op, value)
    }

    /// Elementwise sum; a shape that is a trailing suffix of the other broadcasts.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    /// Elementwise quotient. Fails if any divisor is exactly zero.
    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        if other.value().data().iter().any(|&v| v == 0.0) {
            return Err(AutodiffError::DivisionByZero);
        }
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |v| -v)
    }

    /// Multiplies by a constant.
    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    /// Adds a constant.
    pub fn shift(&self, c: f64) -> Var<'t> {
        self.unary(Op::Shift(self.id), |v| v + c)
    }

    pub fn sin(&self) -> Var<'t> {
        let (s, _) = self.tape.sin_cos(self.id);
        self.tape.record_shared(Op::Sin(self.id), s)
    }

    pub fn cos(&self) -> Var<'t> {
        let (_, c) = self.tape.sin_cos(self.id);
        self.tape.record_shared(Op::Cos(self.id), c)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    /// `x^p` for a constant exponent.
    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary(Op::PowConst(self.id, p), |v| v.powf(p))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    /// `w1 * sin(x) + w2 * cos(x)` with one-element weights.
    pub fn wavelet(&self, w1: &Var<'t>, w2: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (w1.value().item()?, w2.value().item()?);
        let (s, c) = self.tape.sin_cos(self.id);
        let data = s.data().iter().zip(c.data()).map(|(s, c)| a * s + b * c).collect();
        let value = Tensor::with_shape(s.shape().to_vec(), data);
        Ok(self.tape.record(
            Op::Wavelet {
                z: self.id,
                w1: w1.id,
                w2: w2.id,
            },
            value,
        ))
    }

    /// Matrix product over the last two axes; leading axes of `self` are
    /// flattened into rows, so `[.., n, d] x [d, m] -> [.., n, m]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.matmul_general(other, false, false, false)
    }

    /// Per-batch matrix product `[.., n, d] x [.., d, m] -> [.., n, m]` with
    /// optional transposition of either operand's last two axes.
    pub fn bmm(&self, other: &Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        self.matmul_general(other, ta, tb, true)
    }

    pub(crate) fn matmul_general(&self, other: &Var<'t>, ta: bool, tb: bool, batched: bool) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        if a.ndim() < 2 || b.ndim() < 2 {
            return Err(mismatch());
        }
        let value = if batched {
            let nd = a.ndim();
            if b.ndim() != nd || a.shape()[..nd - 2] != b.shape()[..nd - 2] {
                return Err(mismatch());
            }
            let (ar, ac) = (a.shape()[nd - 2], a.shape()[nd - 1]);
            let (br, bc) = (b.shape()[nd - 2], b.shape()[nd - 1]);
            let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
            let (k2, n) = if tb { (bc, br) } else { (br, bc) };
            if k != k2 {
                return Err(mismatch());
            }
            let batch: usize = a.shape()[..nd - 2].iter().product();
            let mut data = vec![0.0; batch * m * n];
            for i in 0..batch {
                tensor::gemm(
                    &a.data()[i * ar * ac..(i + 1) * ar * ac],
                    ar,
                    ac,
                    ta,
                    &b.data()[i * br * bc..(i + 1) * br * bc],
                    br,
                    bc,
                    tb,
                    &mut data[i * m * n..(i + 1) * m * n],
                );
            }
            let mut shape = a.shape()[..nd - 2].to_vec();
            shape.extend([m, n]);
            Tensor::with_shape(shape, data)
        } else {
            let ac = *a.shape().last().unwrap_or(&0);
            let ar = a.numel() / ac.max(1);
            let bc = *b.shape().last().unwrap_or(&0);
            let br = b.numel() / bc.max(1);
            let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
            let (k2, n) = if tb { (bc, br) } else { (br, bc) };
            if k != k2 {
                return Err(mismatch());
            }
            let mut data = vec![0.0; m * n];
            tensor::gemm(a.data(), ar, ac, ta, b.data(), br, bc, tb, &mut data);
            let shape = if ta {
                vec![m, n]
            } else {
                let mut s = a.shape()[..a.ndim() - 1].to_vec();
                s.push(n);
                s
            };
            Tensor::with_shape(shape, data)
        };
        Ok(self.tape.record(
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
                batched,
            },
            value,
        ))
    }

    /// Sum of all entries, as a zero-dimensional tensor.
    pub fn sum(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.numel() == 0 {
            return Err(AutodiffError::Empty { op: "sum" });
        }
        let value = Tensor::scalar(v.data().iter().sum());
        Ok(self.tape.record(Op::Sum(self.id), value))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.numel() == 0 {
            return Err(AutodiffError::Empty { op: "mean" });
        }
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64);
        Ok(self.tape.record(Op::Mean(self.id), value))
    }

    /// Sums leading axes away so the result has shape `target`, a trailing
    /// suffix of this shape or any one-element shape.
    pub fn sum_to(&self, target: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape() == target {
            return Ok(*self);
        }
        let n: usize = target.iter().product();
        if !(v.shape().ends_with(target) || n == 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "sum_to",
                lhs: v.shape().to_vec(),
                rhs: target.to_vec(),
            });
        }
        let value = tensor::sum_leading(&v, target);
        Ok(self.tape.record(Op::SumTo(self.id), value))
    }

    fn sum_to_shape_of(&self, like: Var<'t>) -> Result<Var<'t>> {
        self.sum_to(like.value().shape())
    }

    fn reshape_like(&self, like: Var<'t>) -> Result<Var<'t>> {
        let target = like.shape();
        if self.value().shape() == target.as_slice() {
            Ok(*self)
        } else {
            self.reshape(&target)
        }
    }

    /// Repeats this tensor over new leading axes to reach `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape() == shape {
            return Ok(*self);
        }
        if tensor::broadcast_shape(shape, v.shape()).as_deref() != Some(shape) {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_to",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = tensor::broadcast_leading(&v, shape);
        Ok(self.tape.record(Op::BroadcastTo(self.id), value))
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.ndim() == 0 {
            return Err(AutodiffError::InvalidAxis {
                op: "sum_last",
                axis: 0,
                shape: Vec::new(),
            });
        }
        let value = tensor::sum_last(&v);
        Ok(self.tape.record(Op::SumLast(self.id), value))
    }

    /// Repeats a last axis of extent 1 `n` times.
    pub fn expand_last(&self, n: usize) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().last() != Some(&1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "expand_last",
                lhs: v.shape().to_vec(),
                rhs: vec![n],
            });
        }
        let value = tensor::expand_last(&v, n);
        Ok(self.tape.record(Op::ExpandLast(self.id), value))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value();
        check_axis("slice", v.shape(), axis)?;
        let len = v.shape()[axis];
        if start > end || end > len {
            return Err(AutodiffError::InvalidRange {
                op: "slice",
                start,
                end,
                len,
            });
        }
        let value = tensor::slice_axis(&v, axis, start, end);
        Ok(self.tape.record(Op::Slice { x: self.id, axis, start }, value))
    }

    /// Places this tensor at offset `start` of a zero tensor whose `axis` has extent `total`.
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Var<'t>> {
        let v = self.value();
        check_axis("pad", v.shape(), axis)?;
        let len = v.shape()[axis];
        if start + len > total {
            return Err(AutodiffError::InvalidRange {
                op: "pad",
                start,
                end: start + len,
                len: total,
            });
        }
        let value = tensor::pad_axis(&v, axis, start, total);
        Ok(self.tape.record(Op::Pad { x: self.id, axis, start }, value))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.ndim() < 2 {
            return Err(AutodiffError::InvalidAxis {
                op: "transpose",
                axis: 1,
                shape: v.shape().to_vec(),
            });
        }
        let value = tensor::transpose_last(&v);
        Ok(self.tape.record(Op::Transpose(self.id), value))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if shape.iter().product::<usize>() != v.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::with_shape(shape.to_vec(), v.data().to_vec());
        Ok(self.tape.record(Op::Reshape(self.id), value))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.ndim() == 0 || v.numel() == 0 {
            return Err(AutodiffError::Empty { op: "softmax" });
        }
        let value = tensor::softmax_last(&v);
        Ok(self.tape.record(Op::Softmax(self.id), value))
    }
}
