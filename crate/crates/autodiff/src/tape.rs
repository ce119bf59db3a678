//! Reverse-mode tape. Every operation appends a node holding its value and
//! the indices of its parents; `backward` walks the nodes in reverse
//! creation order, which is a reverse topological order by construction.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Tensor times a 1×1 tensor.
    MulScalar(usize, usize),
    MatMul(usize, usize),
    Concat(Vec<usize>),
    /// (input, first column)
    Slice(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    /// (input, flat index)
    Select(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows {
        let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

fn log_softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows {
        let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub mod scalar {
    //! Scalar forms of the nonlinearities, shared with f64 model code.
    pub fn sigmoid(x: f64) -> f64 {
        super::sigmoid(x)
    }

    pub fn softplus(x: f64) -> f64 {
        super::softplus(x)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf bound to a stored parameter; its adjoint is reported by
    /// `backward`.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Column-wise concatenation of row-compatible tensors.
    pub fn concat(&self, parts: &[Var<'_>]) -> Result<Var<'_>> {
        let nodes = self.nodes.borrow();
        let first = parts.first().ok_or(Error::Shape { op: "concat", lhs: (0, 0), rhs: (0, 0) })?;
        let rows = nodes[first.id].value.rows;
        let mut cols = 0;
        for p in parts {
            let v = &nodes[p.id].value;
            if v.rows != rows {
                return Err(Error::Shape { op: "concat", lhs: nodes[first.id].value.shape(), rhs: v.shape() });
            }
            cols += v.cols;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let v = &nodes[p.id].value;
                data.extend_from_slice(&v.data[r * v.cols..(r + 1) * v.cols]);
            }
        }
        drop(nodes);
        Ok(self.push(Tensor { rows, cols, data }, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    /// Adjoints of every parameter leaf, aligned with `store`. Parameters
    /// that do not influence the loss get zeros.
    pub fn backward(&self, loss: Var<'_>, store: &ParamStore) -> Result<Grads> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::ForeignTape);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads = Grads::zeros(store);
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(Tensor::scalar(1.0));
        let acc = |adj: &mut Vec<Option<Tensor>>, i: usize, g: Tensor| match &mut adj[i] {
            Some(a) => a.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        for i in (0..=loss.id).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            let val = |j: usize| &nodes[j].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => grads.0[pid.0].add_assign(&g),
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, g.map(|v| -v));
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = Tensor { data: g.data.iter().zip(&val(*b).data).map(|(x, y)| x * y).collect(), ..g };
                    let gb = Tensor { data: g.data.iter().zip(&val(*a).data).map(|(x, y)| x * y).collect(), ..g };
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MulScalar(a, s) => {
                    let sv = val(*s).data[0];
                    let gs: f64 = g.data.iter().zip(&val(*a).data).map(|(x, y)| x * y).sum();
                    acc(&mut adj, *s, Tensor::scalar(gs));
                    acc(&mut adj, *a, g.map(|v| v * sv));
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(val(*b));
                    let gb = val(*a).t_matmul(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = val(p).cols;
                        let mut data = Vec::with_capacity(g.rows * pc);
                        for r in 0..g.rows {
                            data.extend_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + pc]);
                        }
                        acc(&mut adj, p, Tensor { rows: g.rows, cols: pc, data });
                        offset += pc;
                    }
                }
                Op::Slice(a, start) => {
                    let src = val(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            ga.data[r * src.cols + start + c] = g.data[r * g.cols + c];
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = Tensor { data: g.data.iter().zip(&y.data).map(|(g, y)| g * y * (1.0 - y)).collect(), ..g };
                    acc(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = Tensor { data: g.data.iter().zip(&y.data).map(|(g, y)| g * (1.0 - y * y)).collect(), ..g };
                    acc(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let ga = Tensor {
                        data: g.data.iter().zip(&x.data).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                        ..g
                    };
                    acc(&mut adj, *a, ga);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga = Tensor { data: g.data.iter().zip(&y.data).map(|(g, y)| g * y).collect(), ..g };
                    acc(&mut adj, *a, ga);
                }
                Op::Log(a) => {
                    let x = val(*a);
                    let ga = Tensor { data: g.data.iter().zip(&x.data).map(|(g, x)| g / x).collect(), ..g };
                    acc(&mut adj, *a, ga);
                }
                Op::Softplus(a) => {
                    let x = val(*a);
                    let ga = Tensor { data: g.data.iter().zip(&x.data).map(|(g, x)| g * sigmoid(*x)).collect(), ..g };
                    acc(&mut adj, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows {
                        let row = r * y.cols..(r + 1) * y.cols;
                        let dot: f64 = g.data[row.clone()].iter().zip(&y.data[row.clone()]).map(|(g, y)| g * y).sum();
                        for k in row {
                            ga.data[k] = y.data[k] * (g.data[k] - dot);
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows {
                        let row = r * y.cols..(r + 1) * y.cols;
                        let gs: f64 = g.data[row.clone()].iter().sum();
                        for k in row {
                            ga.data[k] = g.data[k] - y.data[k].exp() * gs;
                        }
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let x = val(*a);
                    acc(&mut adj, *a, Tensor { rows: x.rows, cols: x.cols, data: vec![g.data[0]; x.len()] });
                }
                Op::Select(a, k) => {
                    let x = val(*a);
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    ga.data[*k] = g.data[0];
                    acc(&mut adj, *a, ga);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g.map(|v| v * k)),
                Op::AddConst(a) => acc(&mut adj, *a, g),
            }
        }
        Ok(grads)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// First element; the value of a 1×1 variable.
    pub fn scalar(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Same value, no gradient flow.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value();
        self.tape.constant(v)
    }

    fn check_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::ForeignTape)
        }
    }

    fn elementwise(&self, other: &Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_tape(other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(Error::Shape { op, lhs: a.shape(), rhs: b.shape() });
        }
        Ok(Tensor { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect() })
    }

    fn unary(&self, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.map(f);
        self.tape.push(v, op(self.id))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(&other, "add", |a, b| a + b)?;
        Ok(self.tape.push(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(&other, "sub", |a, b| a - b)?;
        Ok(self.tape.push(v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.elementwise(&other, "mul", |a, b| a * b)?;
        Ok(self.tape.push(v, Op::Mul(self.id, other.id)))
    }

    /// Every element times the 1×1 variable `s`.
    pub fn mul_scalar(&self, s: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&s)?;
        let nodes = self.tape.nodes.borrow();
        let sv = &nodes[s.id].value;
        if sv.shape() != (1, 1) {
            return Err(Error::Shape { op: "mul_scalar", lhs: nodes[self.id].value.shape(), rhs: sv.shape() });
        }
        let k = sv.data[0];
        let v = nodes[self.id].value.map(|x| x * k);
        drop(nodes);
        Ok(self.tape.push(v, Op::MulScalar(self.id, s.id)))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&other)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.cols != b.rows {
            return Err(Error::Shape { op: "matmul", lhs: a.shape(), rhs: b.shape() });
        }
        let v = a.matmul(b);
        drop(nodes);
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        if start + len > a.cols {
            return Err(Error::Shape { op: "slice_cols", lhs: a.shape(), rhs: (start, start + len) });
        }
        let mut data = Vec::with_capacity(a.rows * len);
        for r in 0..a.rows {
            data.extend_from_slice(&a.data[r * a.cols + start..r * a.cols + start + len]);
        }
        let rows = a.rows;
        drop(nodes);
        Ok(self.tape.push(Tensor { rows, cols: len, data }, Op::Slice(self.id, start)))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(f64::ln, Op::Log)
    }

    /// log(1 + eˣ)
    pub fn softplus(&self) -> Var<'t> {
        self.unary(softplus, Op::Softplus)
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Var<'t> {
        let v = softmax_rows(&self.tape.nodes.borrow()[self.id].value);
        self.tape.push(v, Op::Softmax(self.id))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> Var<'t> {
        let v = log_softmax_rows(&self.tape.nodes.borrow()[self.id].value);
        self.tape.push(v, Op::LogSoftmax(self.id))
    }

    /// Sum of all elements, 1×1.
    pub fn sum(&self) -> Var<'t> {
        let s = self.tape.nodes.borrow()[self.id].value.data.iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Element (r, c) as a 1×1 variable.
    pub fn select(&self, r: usize, c: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        if r >= a.rows || c >= a.cols {
            return Err(Error::Index(r, c, a.shape()));
        }
        let k = r * a.cols + c;
        let v = a.data[k];
        drop(nodes);
        Ok(self.tape.push(Tensor::scalar(v), Op::Select(self.id, k)))
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        self.unary(move |x| x * k, move |a| Op::Scale(a, k))
    }

    pub fn add_const(&self, k: f64) -> Var<'t> {
        self.unary(move |x| x + k, Op::AddConst)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }
}
