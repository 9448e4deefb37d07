//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as it is evaluated. Values are stored
//! in an arena and referred to through copyable [`Var`] handles; calling
//! [`Tape::backward`] walks the records once in reverse and returns the
//! gradient of a scalar loss with respect to every trainable leaf.
//!
//! Binary elementwise operations broadcast with numpy semantics (trailing
//! axes aligned, extents of 1 stretched). Their backward pass sums the
//! upstream gradient back down to each operand's shape.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on a trace with no recorded operations")]
    EmptyTrace,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "tensor",
                msg: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A 1-D tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AutodiffError::InvalidArgument {
                op: "from_rows",
                msg: "ragged rows".into(),
            });
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Neg,
    Sin,
    Cos,
    Exp,
    Relu,
    Sigmoid,
    Softplus,
    Square,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Sum(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    CumsumExclusive(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
    requires_grad: bool,
}

/// Operation trace. One tape per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_ops: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a trainable leaf. Leaves that did not
    /// influence the loss get a zero tensor; constants get `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast `out` shape, 0 on
/// stretched axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let mut strides = vec![0; n];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + n - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of the
/// broadcast output.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let last = nd - 1;
    let inner = out[last];
    let (ia, ib) = (sa[last], sb[last]);
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    loop {
        for k in 0..inner {
            f(o + k, oa + k * ia, ob + k * ib);
        }
        o += inner;
        if o >= total {
            break;
        }
        // carry into the outer axes
        let mut d = last;
        loop {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the caller passes slices sized for the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    /// Number of recorded (non-leaf) operations.
    pub fn op_count(&self) -> usize {
        self.n_ops
    }

    /// Trainable leaf: receives a gradient in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Constant input; never accumulates gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            requires_grad,
        });
        self.n_ops += 1;
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |v| -v,
            Unary::Sin => f64::sin,
            Unary::Cos => f64::cos,
            Unary::Exp => f64::exp,
            Unary::Relu => |v| v.max(0.0),
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Square => |v| v * v,
            Unary::Sqrt => f64::sqrt,
        };
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(value, Op::Unary(kind, x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Unary::Neg, x)
    }
    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(Unary::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(Unary::Cos, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Unary::Sqrt, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| v * factor).collect(),
        };
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| v + c).collect(),
        };
        self.push(value, Op::AddScalar(x), &[x])
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let op_name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = if ta.shape == tb.shape {
            let it = ta.data.iter().zip(&tb.data);
            match kind {
                Binary::Add => it.map(|(x, y)| x + y).collect(),
                Binary::Sub => it.map(|(x, y)| x - y).collect(),
                Binary::Mul => it.map(|(x, y)| x * y).collect(),
                Binary::Div => it.map(|(x, y)| x / y).collect(),
            }
        } else {
            let out = broadcast_shape(op_name, &ta.shape, &tb.shape)?;
            let sa = broadcast_strides(&ta.shape, &out);
            let sb = broadcast_strides(&tb.shape, &out);
            let mut data = vec![0.0; out.iter().product()];
            let (da, db) = (&ta.data, &tb.data);
            for_each_broadcast(&out, &sa, &sb, |o, i, j| {
                data[o] = match kind {
                    Binary::Add => da[i] + db[j],
                    Binary::Sub => da[i] - db[j],
                    Binary::Mul => da[i] * db[j],
                    Binary::Div => da[i] / db[j],
                }
            });
            let value = Tensor { shape: out, data };
            return Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]));
        };
        let value = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// 2-D matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut data = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &ta.data,
            (k as isize, 1),
            &tb.data,
            (n as isize, 1),
            &mut data,
            0.0,
        );
        let value = Tensor {
            shape: vec![m, n],
            data,
        };
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if axis >= src.shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for shape {:?}", src.shape),
            });
        }
        let (outer, n, inner) = split_axis(&src.shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src.data[base + i];
                }
            }
        }
        let mut shape = src.shape.clone();
        shape[axis] = 1;
        Ok(self.push(Tensor { shape, data }, Op::SumAxis(x, axis), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or(AutodiffError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.nodes[first.0].value.shape.clone();
        if axis >= base.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for v in xs {
            let s = &self.nodes[v.0].value.shape;
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (p, q))| i == axis || p == q);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.clone(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = &self.nodes[v.0].value;
                let w = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * w..(o + 1) * w]);
            }
        }
        Ok(self.push(Tensor { shape, data }, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if axis >= src.shape.len() || start > end || end > src.shape[axis] {
            return Err(AutodiffError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} on axis {axis} of shape {:?}", src.shape),
            });
        }
        let (outer, n, inner) = split_axis(&src.shape, axis);
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&src.data[from..from + len * inner]);
        }
        let mut shape = src.shape.clone();
        shape[axis] = len;
        Ok(self.push(Tensor { shape, data }, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Rows `idx` of a 2-D table, shape `[idx.len(), cols]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.shape.len() != 2 {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                msg: format!("table must be 2-D, got {:?}", t.shape),
            });
        }
        let (rows, cols) = (t.shape[0], t.shape[1]);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx {
            if r >= rows {
                return Err(AutodiffError::InvalidArgument {
                    op: "gather_rows",
                    msg: format!("row {r} out of range for {rows} rows"),
                });
            }
            data.extend_from_slice(&t.data[r * cols..(r + 1) * cols]);
        }
        let value = Tensor {
            shape: vec![idx.len(), cols],
            data,
        };
        Ok(self.push(value, Op::GatherRows(table, idx.to_vec()), &[table]))
    }

    /// Exclusive prefix sum along `axis`: `out[i] = sum_{j<i} x[j]`.
    pub fn cumsum_exclusive(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if axis >= src.shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "cumsum_exclusive",
                msg: format!("axis {axis} out of range for shape {:?}", src.shape),
            });
        }
        let (outer, n, inner) = split_axis(&src.shape, axis);
        let mut data = vec![0.0; src.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0;
                for a in 0..n {
                    let k = (o * n + a) * inner + i;
                    data[k] = acc;
                    acc += src.data[k];
                }
            }
        }
        let value = Tensor {
            shape: src.shape.clone(),
            data,
        };
        Ok(self.push(value, Op::CumsumExclusive(x, axis), &[x]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.n_ops == 0 {
            return Err(AutodiffError::EmptyTrace);
        }
        let loss_shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.trainable.then(|| Tensor {
                    shape: node.value.shape.clone(),
                    data: g.unwrap_or_else(|| vec![0.0; node.value.numel()]),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                if !self.needs(*x) {
                    return;
                }
                let xv = &self.nodes[x.0].value.data;
                let yv = &out.data;
                let acc = grad_slot(grads, *x, xv.len());
                for i in 0..g.len() {
                    let d = match kind {
                        Unary::Neg => -1.0,
                        Unary::Sin => xv[i].cos(),
                        Unary::Cos => -xv[i].sin(),
                        Unary::Exp => yv[i],
                        Unary::Relu => {
                            if xv[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => yv[i] * (1.0 - yv[i]),
                        Unary::Softplus => sigmoid(xv[i]),
                        Unary::Square => 2.0 * xv[i],
                        Unary::Sqrt => 0.5 / yv[i],
                    };
                    acc[i] += g[i] * d;
                }
            }
            Op::Scale(x, f) => {
                if self.needs(*x) {
                    let acc = grad_slot(grads, *x, g.len());
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi * f;
                    }
                }
            }
            Op::AddScalar(x) => {
                if self.needs(*x) {
                    let acc = grad_slot(grads, *x, g.len());
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }
            Op::Binary(kind, a, b) => self.backprop_binary(*kind, *a, *b, out, g, grads),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.needs(*a) {
                    // dA = G * B^T
                    let acc = grad_slot(grads, *a, m * k);
                    gemm(m, n, k, g, (n as isize, 1), &tb.data, (1, n as isize), acc, 1.0);
                }
                if self.needs(*b) {
                    // dB = A^T * G
                    let acc = grad_slot(grads, *b, k * n);
                    gemm(k, m, n, &ta.data, (1, k as isize), g, (n as isize, 1), acc, 1.0);
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let n = self.nodes[x.0].value.numel();
                    let acc = grad_slot(grads, *x, n);
                    for a in acc.iter_mut() {
                        *a += g[0];
                    }
                }
            }
            Op::SumAxis(x, axis) => {
                if self.needs(*x) {
                    let shape = &self.nodes[x.0].value.shape;
                    let (outer, n, inner) = split_axis(shape, *axis);
                    let acc = grad_slot(grads, *x, outer * n * inner);
                    for o in 0..outer {
                        for a in 0..n {
                            let base = (o * n + a) * inner;
                            for i in 0..inner {
                                acc[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(&out.shape, *axis);
                let mut offset = 0;
                for x in xs {
                    let shape = &self.nodes[x.0].value.shape;
                    let w = shape[*axis] * inner;
                    if self.needs(*x) {
                        let acc = grad_slot(grads, *x, outer * w);
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset..][..w];
                            for (a, s) in acc[o * w..(o + 1) * w].iter_mut().zip(src) {
                                *a += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, axis, start } => {
                if self.needs(*x) {
                    let shape = &self.nodes[x.0].value.shape;
                    let (outer, n, inner) = split_axis(shape, *axis);
                    let len = out.shape[*axis];
                    let acc = grad_slot(grads, *x, outer * n * inner);
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        for i in 0..len * inner {
                            acc[to + i] += g[from + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let acc = grad_slot(grads, *x, g.len());
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }
            Op::GatherRows(table, idx) => {
                if self.needs(*table) {
                    let t = &self.nodes[table.0].value;
                    let cols = t.shape[1];
                    let acc = grad_slot(grads, *table, t.numel());
                    for (row, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            acc[r * cols + c] += g[row * cols + c];
                        }
                    }
                }
            }
            Op::CumsumExclusive(x, axis) => {
                if self.needs(*x) {
                    let (outer, n, inner) = split_axis(&out.shape, *axis);
                    let acc = grad_slot(grads, *x, out.numel());
                    for o in 0..outer {
                        for i in 0..inner {
                            // d x[a] = sum_{b>a} g[b]
                            let mut tail = 0.0;
                            for a in (0..n).rev() {
                                let k = (o * n + a) * inner + i;
                                acc[k] += tail;
                                tail += g[k];
                            }
                        }
                    }
                }
            }
        }
    }

    fn backprop_binary(&self, kind: Binary, a: Var, b: Var, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (need_a, need_b) = (self.needs(a), self.needs(b));
        let sa = broadcast_strides(&ta.shape, &out.shape);
        let sb = broadcast_strides(&tb.shape, &out.shape);
        let (da, db) = (&ta.data, &tb.data);
        // d out / d a and d out / d b at one element
        let partials = |i: usize, j: usize| -> (f64, f64) {
            match kind {
                Binary::Add => (1.0, 1.0),
                Binary::Sub => (1.0, -1.0),
                Binary::Mul => (db[j], da[i]),
                Binary::Div => (1.0 / db[j], -da[i] / (db[j] * db[j])),
            }
        };
        // `a` and `b` may be the same node, so accumulate separately and merge.
        let mut ga = need_a.then(|| vec![0.0; da.len()]);
        let mut gb = need_b.then(|| vec![0.0; db.len()]);
        if ta.shape == tb.shape {
            for o in 0..g.len() {
                let (pa, pb) = partials(o, o);
                if let Some(ga) = ga.as_mut() {
                    ga[o] += g[o] * pa;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[o] += g[o] * pb;
                }
            }
        } else {
            for_each_broadcast(&out.shape, &sa, &sb, |o, i, j| {
                let (pa, pb) = partials(i, j);
                if let Some(ga) = ga.as_mut() {
                    ga[i] += g[o] * pa;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += g[o] * pb;
                }
            });
        }
        if let Some(ga) = ga {
            let acc = grad_slot(grads, a, ga.len());
            for (x, y) in acc.iter_mut().zip(ga) {
                *x += y;
            }
        }
        if let Some(gb) = gb {
            let acc = grad_slot(grads, b, gb.len());
            for (x, y) in acc.iter_mut().zip(gb) {
                *x += y;
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
