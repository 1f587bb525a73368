//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records elementary operations during the forward pass; a
//! reverse sweep then accumulates adjoints in one pass over the recording.
//! Nodes may hold a scalar or a short vector, so dense-layer work (`affine`,
//! `dot`) is recorded as a single node instead of thousands of scalar ones.
//!
//! Handles ([`Var`] for scalars, [`VecVar`] for vectors) borrow the tape,
//! so clearing the tape requires `&mut` and the borrow checker rules out
//! stale handles.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::diffcore::special::digamma;
use crate::error::{LpsError, Result};

const LEAKY_SLOPE: f64 = 0.01;

/// Elementary operation kinds accepted by [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Pow,
    Sigmoid,
    Relu,
    LeakyRelu,
    Dot,
    Affine,
}

#[derive(Debug, Clone, Copy)]
enum UnKind {
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sigmoid,
    Relu,
    LeakyRelu,
    Lgamma,
}

#[derive(Debug, Clone, Copy)]
enum UnCKind {
    /// x + c
    AddC,
    /// x * c
    MulC,
    /// c - x
    RsubC,
    /// c / x
    RdivC,
    /// x^c
    PowC,
}

#[derive(Debug, Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Un { k: UnKind, a: u32 },
    UnC { k: UnCKind, a: u32, c: f64 },
    Bin { k: BinKind, a: u32, b: u32 },
    Dot { a: u32, b: u32 },
    Affine { w: u32, x: u32, b: u32, rows: u32, cols: u32 },
    Slice { a: u32, from: u32 },
    Sum { a: u32 },
    /// Gathers scalar nodes into a vector; operand ids live in the
    /// side arena `TapeInner::gather_args` at `[from, from+len)`.
    Stack { from: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Span {
    off: u32,
    len: u32,
}

#[derive(Default)]
struct TapeInner {
    ops: Vec<Op>,
    spans: Vec<Span>,
    vals: Vec<f64>,
    gather_args: Vec<u32>,
}

impl TapeInner {
    fn push(&mut self, op: Op, vals: &[f64]) -> u32 {
        let id = self.ops.len() as u32;
        let off = self.vals.len() as u32;
        self.vals.extend_from_slice(vals);
        self.spans.push(Span {
            off,
            len: vals.len() as u32,
        });
        self.ops.push(op);
        id
    }

    fn span(&self, id: u32) -> (usize, usize) {
        let s = self.spans[id as usize];
        (s.off as usize, s.len as usize)
    }
}

/// Recording tape for reverse-mode differentiation.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Scalar handle into a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.id, self.value())
    }
}

/// Vector handle into a [`Tape`].
#[derive(Clone, Copy)]
pub struct VecVar<'t> {
    tape: &'t Tape,
    id: u32,
    len: u32,
}

impl std::fmt::Debug for VecVar<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VecVar(#{}, len {})", self.id, self.len)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner::default()),
        }
    }

    /// Drops all recorded nodes but keeps allocated capacity.
    ///
    /// Takes `&mut self` so no live handle can survive the reset.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.ops.clear();
        inner.spans.clear();
        inner.vals.clear();
        inner.gather_args.clear();
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates a scalar leaf.
    pub fn scalar(&self, v: f64) -> Var<'_> {
        let id = self.inner.borrow_mut().push(Op::Leaf, &[v]);
        Var { tape: self, id }
    }

    /// Creates a vector leaf.
    pub fn vector(&self, vs: &[f64]) -> VecVar<'_> {
        let id = self.inner.borrow_mut().push(Op::Leaf, vs);
        VecVar {
            tape: self,
            id,
            len: vs.len() as u32,
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        std::ptr::eq(self, other)
    }

    /// Applies a scalar elementary operation with full precondition checks.
    ///
    /// `Pow` takes (base, exponent) with positive base and is recorded as the
    /// `exp(e·ln b)` composition. `Dot` and `Affine` operate on vectors; use
    /// [`Tape::dot`] and [`Tape::affine`].
    pub fn apply<'t>(&'t self, kind: OpKind, operands: &[Var<'t>]) -> Result<Var<'t>> {
        for v in operands {
            if !self.same_tape(v.tape) {
                return Err(LpsError::Usage(
                    "operands must live on the same tape".into(),
                ));
            }
        }
        let need = match kind {
            OpKind::Neg
            | OpKind::Exp
            | OpKind::Log
            | OpKind::Sin
            | OpKind::Cos
            | OpKind::Sigmoid
            | OpKind::Relu
            | OpKind::LeakyRelu => 1,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Pow => 2,
            OpKind::Dot | OpKind::Affine => {
                return Err(LpsError::Usage(format!(
                    "{kind:?} operates on vectors; use the dedicated tape method"
                )))
            }
        };
        if operands.len() != need {
            return Err(LpsError::Usage(format!(
                "{kind:?} expects {need} operand(s), got {}",
                operands.len()
            )));
        }
        let a = operands[0];
        match kind {
            OpKind::Add => Ok(a + operands[1]),
            OpKind::Sub => Ok(a - operands[1]),
            OpKind::Mul => Ok(a * operands[1]),
            OpKind::Div => {
                let b = operands[1];
                if b.value() == 0.0 {
                    return Err(LpsError::domain("div", "division by zero"));
                }
                Ok(a / b)
            }
            OpKind::Neg => Ok(-a),
            OpKind::Exp => Ok(a.exp()),
            OpKind::Log => {
                if a.value() <= 0.0 {
                    return Err(LpsError::domain(
                        "log",
                        format!("log of non-positive value {}", a.value()),
                    ));
                }
                Ok(a.ln())
            }
            OpKind::Sin => Ok(a.sin()),
            OpKind::Cos => Ok(a.cos()),
            OpKind::Pow => {
                if a.value() <= 0.0 {
                    return Err(LpsError::domain(
                        "pow",
                        format!("pow of non-positive base {}", a.value()),
                    ));
                }
                Ok(a.powv(operands[1]))
            }
            OpKind::Sigmoid => Ok(a.sigmoid()),
            OpKind::Relu => Ok(a.relu()),
            OpKind::LeakyRelu => Ok(a.leaky_relu()),
            OpKind::Dot | OpKind::Affine => unreachable!(),
        }
    }

    /// Gathers scalar handles into one vector node.
    pub fn stack<'t>(&'t self, vars: &[Var<'t>]) -> Result<VecVar<'t>> {
        if vars.is_empty() {
            return Err(LpsError::Usage("stack of zero scalars".into()));
        }
        for v in vars {
            if !self.same_tape(v.tape) {
                return Err(LpsError::Usage(
                    "operands must live on the same tape".into(),
                ));
            }
        }
        let mut inner = self.inner.borrow_mut();
        let from = inner.gather_args.len() as u32;
        let mut vals = Vec::with_capacity(vars.len());
        for v in vars {
            let (off, len) = inner.span(v.id);
            debug_assert_eq!(len, 1, "stack expects scalar operands");
            vals.push(inner.vals[off]);
        }
        inner.gather_args.extend(vars.iter().map(|v| v.id));
        let id = inner.push(Op::Stack { from }, &vals);
        Ok(VecVar {
            tape: self,
            id,
            len: vars.len() as u32,
        })
    }

    /// Inner product of two equal-length vectors.
    pub fn dot<'t>(&'t self, a: VecVar<'t>, b: VecVar<'t>) -> Result<Var<'t>> {
        if !self.same_tape(a.tape) || !self.same_tape(b.tape) {
            return Err(LpsError::Usage(
                "operands must live on the same tape".into(),
            ));
        }
        if a.len != b.len {
            return Err(LpsError::Usage(format!(
                "dot length mismatch: {} vs {}",
                a.len, b.len
            )));
        }
        let mut inner = self.inner.borrow_mut();
        let (ao, al) = inner.span(a.id);
        let (bo, _) = inner.span(b.id);
        let mut acc = 0.0;
        for i in 0..al {
            acc += inner.vals[ao + i] * inner.vals[bo + i];
        }
        let id = inner.push(Op::Dot { a: a.id, b: b.id }, &[acc]);
        Ok(Var { tape: self, id })
    }

    /// Dense layer `y = W x + b` with `W` row-major `(rows, cols)`.
    pub fn affine<'t>(
        &'t self,
        w: VecVar<'t>,
        x: VecVar<'t>,
        b: VecVar<'t>,
        rows: usize,
        cols: usize,
    ) -> Result<VecVar<'t>> {
        if !self.same_tape(w.tape) || !self.same_tape(x.tape) || !self.same_tape(b.tape) {
            return Err(LpsError::Usage(
                "operands must live on the same tape".into(),
            ));
        }
        if w.len as usize != rows * cols || x.len as usize != cols || b.len as usize != rows {
            return Err(LpsError::Usage(format!(
                "affine shape mismatch: w={} x={} b={} for {rows}x{cols}",
                w.len, x.len, b.len
            )));
        }
        let mut inner = self.inner.borrow_mut();
        let (wo, _) = inner.span(w.id);
        let (xo, _) = inner.span(x.id);
        let (bo, _) = inner.span(b.id);
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut acc = inner.vals[bo + i];
            let row = wo + i * cols;
            for j in 0..cols {
                acc += inner.vals[row + j] * inner.vals[xo + j];
            }
            out.push(acc);
        }
        let id = inner.push(
            Op::Affine {
                w: w.id,
                x: x.id,
                b: b.id,
                rows: rows as u32,
                cols: cols as u32,
            },
            &out,
        );
        Ok(VecVar {
            tape: self,
            id,
            len: rows as u32,
        })
    }

    fn un<'t>(&'t self, k: UnKind, a: u32) -> Var<'t> {
        let id = self.un_node(k, a);
        Var { tape: self, id }
    }

    fn un_node(&self, k: UnKind, a: u32) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let (off, len) = inner.span(a);
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let x = inner.vals[off + i];
            out.push(match k {
                UnKind::Neg => -x,
                UnKind::Exp => x.exp(),
                UnKind::Ln => x.ln(),
                UnKind::Sin => x.sin(),
                UnKind::Cos => x.cos(),
                UnKind::Sigmoid => sigmoid(x),
                UnKind::Relu => {
                    if x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                }
                UnKind::LeakyRelu => {
                    if x > 0.0 {
                        x
                    } else {
                        LEAKY_SLOPE * x
                    }
                }
                UnKind::Lgamma => crate::diffcore::special::lgamma(x),
            });
        }
        inner.push(Op::Un { k, a }, &out)
    }

    fn unc<'t>(&'t self, k: UnCKind, a: u32, c: f64) -> Var<'t> {
        let id = self.unc_node(k, a, c);
        Var { tape: self, id }
    }

    fn unc_node(&self, k: UnCKind, a: u32, c: f64) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let (off, len) = inner.span(a);
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let x = inner.vals[off + i];
            out.push(match k {
                UnCKind::AddC => x + c,
                UnCKind::MulC => x * c,
                UnCKind::RsubC => c - x,
                UnCKind::RdivC => c / x,
                UnCKind::PowC => x.powf(c),
            });
        }
        inner.push(Op::UnC { k, a, c }, &out)
    }

    fn bin_node(&self, k: BinKind, a: u32, b: u32) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let (ao, len) = inner.span(a);
        let (bo, blen) = inner.span(b);
        assert_eq!(len, blen, "elementwise op on mismatched lengths");
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let x = inner.vals[ao + i];
            let y = inner.vals[bo + i];
            out.push(match k {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
            });
        }
        inner.push(Op::Bin { k, a, b }, &out)
    }

    /// Reverse sweep from `out` (a scalar). The tape itself is unchanged
    /// and stays usable for value inspection or further recording.
    pub fn backward<'t>(&'t self, out: Var<'t>) -> Result<Gradients> {
        if !self.same_tape(out.tape) {
            return Err(LpsError::Usage("output is not on this tape".into()));
        }
        let inner = self.inner.borrow();
        let (oo, ol) = inner.span(out.id);
        if ol != 1 {
            return Err(LpsError::Usage("backward needs a scalar output".into()));
        }
        let mut adj = vec![0.0; inner.vals.len()];
        adj[oo] = 1.0;
        let mut visited = 0usize;
        for id in (0..=out.id).rev() {
            visited += 1;
            let (yo, ylen) = inner.span(id);
            match inner.ops[id as usize] {
                Op::Leaf => {}
                Op::Un { k, a } => {
                    let (ao, _) = inner.span(a);
                    for i in 0..ylen {
                        let dy = adj[yo + i];
                        if dy == 0.0 {
                            continue;
                        }
                        let x = inner.vals[ao + i];
                        let y = inner.vals[yo + i];
                        adj[ao + i] += dy
                            * match k {
                                UnKind::Neg => -1.0,
                                UnKind::Exp => y,
                                UnKind::Ln => 1.0 / x,
                                UnKind::Sin => x.cos(),
                                UnKind::Cos => -x.sin(),
                                UnKind::Sigmoid => y * (1.0 - y),
                                UnKind::Relu => {
                                    if x > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnKind::LeakyRelu => {
                                    if x > 0.0 {
                                        1.0
                                    } else {
                                        LEAKY_SLOPE
                                    }
                                }
                                UnKind::Lgamma => digamma(x),
                            };
                    }
                }
                Op::UnC { k, a, c } => {
                    let (ao, _) = inner.span(a);
                    for i in 0..ylen {
                        let dy = adj[yo + i];
                        if dy == 0.0 {
                            continue;
                        }
                        let x = inner.vals[ao + i];
                        adj[ao + i] += dy
                            * match k {
                                UnCKind::AddC => 1.0,
                                UnCKind::MulC => c,
                                UnCKind::RsubC => -1.0,
                                UnCKind::RdivC => -c / (x * x),
                                UnCKind::PowC => c * x.powf(c - 1.0),
                            };
                    }
                }
                Op::Bin { k, a, b } => {
                    let (ao, _) = inner.span(a);
                    let (bo, _) = inner.span(b);
                    for i in 0..ylen {
                        let dy = adj[yo + i];
                        if dy == 0.0 {
                            continue;
                        }
                        let x = inner.vals[ao + i];
                        let y = inner.vals[bo + i];
                        match k {
                            BinKind::Add => {
                                adj[ao + i] += dy;
                                adj[bo + i] += dy;
                            }
                            BinKind::Sub => {
                                adj[ao + i] += dy;
                                adj[bo + i] -= dy;
                            }
                            BinKind::Mul => {
                                adj[ao + i] += dy * y;
                                adj[bo + i] += dy * x;
                            }
                            BinKind::Div => {
                                adj[ao + i] += dy / y;
                                adj[bo + i] -= dy * x / (y * y);
                            }
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let dy = adj[yo];
                    if dy != 0.0 {
                        let (ao, al) = inner.span(a);
                        let (bo, _) = inner.span(b);
                        for i in 0..al {
                            adj[ao + i] += dy * inner.vals[bo + i];
                            adj[bo + i] += dy * inner.vals[ao + i];
                        }
                    }
                }
                Op::Affine { w, x, b, rows, cols } => {
                    let (wo, _) = inner.span(w);
                    let (xo, _) = inner.span(x);
                    let (bo, _) = inner.span(b);
                    let (rows, cols) = (rows as usize, cols as usize);
                    for i in 0..rows {
                        let dy = adj[yo + i];
                        if dy == 0.0 {
                            continue;
                        }
                        adj[bo + i] += dy;
                        let row = wo + i * cols;
                        for j in 0..cols {
                            adj[row + j] += dy * inner.vals[xo + j];
                            adj[xo + j] += dy * inner.vals[row + j];
                        }
                    }
                }
                Op::Slice { a, from } => {
                    let (ao, _) = inner.span(a);
                    let base = ao + from as usize;
                    for i in 0..ylen {
                        adj[base + i] += adj[yo + i];
                    }
                }
                Op::Sum { a } => {
                    let dy = adj[yo];
                    if dy != 0.0 {
                        let (ao, al) = inner.span(a);
                        for v in &mut adj[ao..ao + al] {
                            *v += dy;
                        }
                    }
                }
                Op::Stack { from } => {
                    for i in 0..ylen {
                        let src = inner.gather_args[from as usize + i];
                        let (so, _) = inner.span(src);
                        adj[so] += adj[yo + i];
                    }
                }
            }
        }
        Ok(Gradients {
            adj,
            tape: self as *const Tape as usize,
            visited,
        })
    }
}

/// Adjoints produced by a reverse sweep, queryable by handle.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<f64>,
    tape: usize,
    visited: usize,
}

impl Gradients {
    /// `d(output)/d(v)` for a scalar handle.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        assert_eq!(
            self.tape, v.tape as *const Tape as usize,
            "gradient query on a different tape"
        );
        let inner = v.tape.inner.borrow();
        let (off, len) = inner.span(v.id);
        assert_eq!(len, 1);
        self.adj[off]
    }

    /// Adjoint slice for a vector handle.
    pub fn wrt_slice(&self, v: VecVar<'_>) -> Vec<f64> {
        assert_eq!(
            self.tape, v.tape as *const Tape as usize,
            "gradient query on a different tape"
        );
        let inner = v.tape.inner.borrow();
        let (off, len) = inner.span(v.id);
        self.adj[off..off + len].to_vec()
    }

    /// Nodes touched by the reverse sweep.
    pub fn visited_nodes(&self) -> usize {
        self.visited
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        let inner = self.tape.inner.borrow();
        let (off, len) = inner.span(self.id);
        assert_eq!(len, 1, "value() on a vector node");
        inner.vals[off]
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.un(UnKind::Exp, self.id)
    }

    /// Natural log. The caller guarantees a positive operand; use
    /// [`Tape::apply`] with [`OpKind::Log`] for a checked variant.
    pub fn ln(self) -> Var<'t> {
        debug_assert!(self.value() > 0.0, "ln of non-positive value");
        self.tape.un(UnKind::Ln, self.id)
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.un(UnKind::Sin, self.id)
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.un(UnKind::Cos, self.id)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.un(UnKind::Sigmoid, self.id)
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.un(UnKind::Relu, self.id)
    }

    pub fn leaky_relu(self) -> Var<'t> {
        self.tape.un(UnKind::LeakyRelu, self.id)
    }

    pub fn lgamma(self) -> Var<'t> {
        self.tape.un(UnKind::Lgamma, self.id)
    }

    pub fn tanh(self) -> Var<'t> {
        (self * 2.0).sigmoid() * 2.0 - 1.0
    }

    pub fn powf(self, c: f64) -> Var<'t> {
        self.tape.unc(UnCKind::PowC, self.id, c)
    }

    /// `self^e` for positive `self`, recorded as `exp(e·ln self)`.
    pub fn powv(self, e: Var<'t>) -> Var<'t> {
        (self.ln() * e).exp()
    }

    pub fn sqrt(self) -> Var<'t> {
        self.powf(0.5)
    }

    pub fn recip(self) -> Var<'t> {
        self.tape.unc(UnCKind::RdivC, self.id, 1.0)
    }
}

impl<'t> VecVar<'t> {
    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn values(self) -> Vec<f64> {
        let inner = self.tape.inner.borrow();
        let (off, len) = inner.span(self.id);
        inner.vals[off..off + len].to_vec()
    }

    /// Scalar view of element `i`.
    pub fn get(self, i: usize) -> Var<'t> {
        assert!(i < self.len as usize, "index {i} out of range");
        let id = {
            let mut inner = self.tape.inner.borrow_mut();
            let (off, _) = inner.span(self.id);
            let v = inner.vals[off + i];
            inner.push(
                Op::Slice {
                    a: self.id,
                    from: i as u32,
                },
                &[v],
            )
        };
        Var {
            tape: self.tape,
            id,
        }
    }

    /// Contiguous sub-vector view.
    pub fn slice(self, from: usize, len: usize) -> VecVar<'t> {
        assert!(from + len <= self.len as usize, "slice out of range");
        let id = {
            let mut inner = self.tape.inner.borrow_mut();
            let (off, _) = inner.span(self.id);
            let vals: Vec<f64> = inner.vals[off + from..off + from + len].to_vec();
            inner.push(
                Op::Slice {
                    a: self.id,
                    from: from as u32,
                },
                &vals,
            )
        };
        VecVar {
            tape: self.tape,
            id,
            len: len as u32,
        }
    }

    pub fn sum(self) -> Var<'t> {
        let id = {
            let mut inner = self.tape.inner.borrow_mut();
            let (off, len) = inner.span(self.id);
            let s: f64 = inner.vals[off..off + len].iter().sum();
            inner.push(Op::Sum { a: self.id }, &[s])
        };
        Var {
            tape: self.tape,
            id,
        }
    }

    pub fn map_exp(self) -> VecVar<'t> {
        self.map(UnKind::Exp)
    }

    pub fn map_relu(self) -> VecVar<'t> {
        self.map(UnKind::Relu)
    }

    pub fn map_leaky_relu(self) -> VecVar<'t> {
        self.map(UnKind::LeakyRelu)
    }

    pub fn map_sigmoid(self) -> VecVar<'t> {
        self.map(UnKind::Sigmoid)
    }

    /// Elementwise tanh via the sigmoid identity.
    pub fn map_tanh(self) -> VecVar<'t> {
        let two = self.scale(2.0).map(UnKind::Sigmoid).scale(2.0);
        VecVar {
            tape: self.tape,
            id: self.tape.unc_node(UnCKind::AddC, two.id, -1.0),
            len: self.len,
        }
    }

    pub fn scale(self, c: f64) -> VecVar<'t> {
        VecVar {
            tape: self.tape,
            id: self.tape.unc_node(UnCKind::MulC, self.id, c),
            len: self.len,
        }
    }

    fn map(self, k: UnKind) -> VecVar<'t> {
        VecVar {
            tape: self.tape,
            id: self.tape.un_node(k, self.id),
            len: self.len,
        }
    }

    pub fn add(self, o: VecVar<'t>) -> VecVar<'t> {
        self.bin(BinKind::Add, o)
    }

    pub fn sub(self, o: VecVar<'t>) -> VecVar<'t> {
        self.bin(BinKind::Sub, o)
    }

    pub fn mul(self, o: VecVar<'t>) -> VecVar<'t> {
        self.bin(BinKind::Mul, o)
    }

    fn bin(self, k: BinKind, o: VecVar<'t>) -> VecVar<'t> {
        assert_eq!(self.len, o.len, "elementwise op on mismatched lengths");
        VecVar {
            tape: self.tape,
            id: self.tape.bin_node(k, self.id, o.id),
            len: self.len,
        }
    }
}

macro_rules! impl_bin_op {
    ($trait:ident, $method:ident, $kind:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                assert!(
                    self.tape.same_tape(rhs.tape),
                    "operands must live on the same tape"
                );
                Var {
                    tape: self.tape,
                    id: self.tape.bin_node($kind, self.id, rhs.id),
                }
            }
        }
    };
}

impl_bin_op!(Add, add, BinKind::Add);
impl_bin_op!(Sub, sub, BinKind::Sub);
impl_bin_op!(Mul, mul, BinKind::Mul);
impl_bin_op!(Div, div, BinKind::Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.un(UnKind::Neg, self.id)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.tape.unc(UnCKind::AddC, self.id, c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.tape.unc(UnCKind::AddC, self.id, -c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.tape.unc(UnCKind::MulC, self.id, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.tape.unc(UnCKind::MulC, self.id, 1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.tape.unc(UnCKind::RsubC, v.id, self)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        v.tape.unc(UnCKind::RdivC, v.id, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_values() {
        let t = Tape::new();
        let a = t.scalar(2.0);
        let b = t.scalar(3.0);
        assert_eq!((a + b).value(), 5.0);
        assert_eq!(t.scalar(0.0).sigmoid().value(), 0.5);
        let x = t.scalar(1.7);
        assert!((x.exp().ln().value() - 1.7).abs() < 1e-12);
    }

    #[test]
    fn product_plus_sin_gradients() {
        // f(a,b) = a*b + sin(a) at (2,3)
        let t = Tape::new();
        let a = t.scalar(2.0);
        let b = t.scalar(3.0);
        let f = a * b + a.sin();
        let g = t.backward(f).unwrap();
        assert!((g.wrt(a) - (3.0 + 2.0f64.cos())).abs() < 1e-12);
        assert!((g.wrt(b) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_exp_identity_gradient() {
        for &x in &[-3.0, 0.4, 7.9] {
            let t = Tape::new();
            let v = t.scalar(x);
            let f = v.exp().ln();
            let g = t.backward(f).unwrap();
            assert!((g.wrt(v) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn reverse_sweep_visits_every_node_once() {
        let t = Tape::new();
        let a = t.scalar(1.5);
        let b = t.scalar(-0.5);
        let f = (a * b + a.exp()).sigmoid();
        let g = t.backward(f).unwrap();
        assert_eq!(g.visited_nodes(), t.len());
    }

    #[test]
    fn backward_rejects_other_tape() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.scalar(1.0);
        let err = t2.backward(a).unwrap_err();
        assert!(matches!(err, LpsError::Usage(_)));
    }

    #[test]
    fn apply_checks_domains() {
        let t = Tape::new();
        let neg = t.scalar(-1.5);
        let err = t.apply(OpKind::Log, &[neg]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("log") && msg.contains("-1.5"), "{msg}");

        let a = t.scalar(1.0);
        let zero = t.scalar(0.0);
        assert!(t.apply(OpKind::Div, &[a, zero]).is_err());

        let other = Tape::new();
        let b = other.scalar(2.0);
        assert!(matches!(
            t.apply(OpKind::Add, &[a, b]),
            Err(LpsError::Usage(_))
        ));
    }

    #[test]
    fn tape_reusable_after_backward() {
        let t = Tape::new();
        let a = t.scalar(2.0);
        let f = a * a;
        let g1 = t.backward(f).unwrap();
        let g2 = t.backward(f).unwrap();
        assert_eq!(g1.wrt(a), 4.0);
        assert_eq!(g2.wrt(a), 4.0);
        assert_eq!(f.value(), 4.0);
    }

    #[test]
    fn affine_matches_manual() {
        let t = Tape::new();
        let w = t.vector(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]); // 2x3
        let x = t.vector(&[1.0, 0.5, -1.0]);
        let b = t.vector(&[0.1, -0.2]);
        let y = t.affine(w, x, b, 2, 3).unwrap();
        let v = y.values();
        assert!((v[0] - (1.0 + 1.0 - 3.0 + 0.1)).abs() < 1e-12);
        assert!((v[1] - (4.0 + 2.5 - 6.0 - 0.2)).abs() < 1e-12);

        // d(sum y)/dW = [x; x], d/dx = column sums of W, d/db = 1.
        let s = y.sum();
        let g = t.backward(s).unwrap();
        let gw = g.wrt_slice(w);
        assert_eq!(&gw[0..3], &[1.0, 0.5, -1.0]);
        let gx = g.wrt_slice(x);
        assert!((gx[0] - 5.0).abs() < 1e-12);
        assert!((gx[1] - 7.0).abs() < 1e-12);
        assert!((gx[2] - 9.0).abs() < 1e-12);
        assert_eq!(g.wrt_slice(b), vec![1.0, 1.0]);
    }

    #[test]
    fn dot_and_slice_gradients() {
        let t = Tape::new();
        let a = t.vector(&[1.0, 2.0, 3.0]);
        let b = t.vector(&[4.0, 5.0, 6.0]);
        let d = t.dot(a, b).unwrap();
        assert_eq!(d.value(), 32.0);
        let g = t.backward(d).unwrap();
        assert_eq!(g.wrt_slice(a), vec![4.0, 5.0, 6.0]);

        let s = a.slice(1, 2).sum();
        let g2 = t.backward(s).unwrap();
        assert_eq!(g2.wrt_slice(a), vec![0.0, 1.0, 1.0]);
        assert_eq!(a.get(2).value(), 3.0);
    }
}
