//! The operation tape: forward graph construction and reverse accumulation.

use super::tensor::Tensor;
use super::{AdError, AdResult};

pub type NodeId = usize;

/// Reduction target. `Rows` collapses the row axis (result `1xC`),
/// `Cols` collapses the column axis (result `Rx1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum UnKind {
    Neg,
    Log1p,
    Exp,
    Relu,
    Tanh,
    Sigmoid,
    Sqrt,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug, Clone, Copy)]
enum RedKind {
    Sum,
    Mean,
    Min,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Bin(BinKind, NodeId, NodeId),
    Un(UnKind, NodeId),
    Reduce(RedKind, Option<Axis>, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols { input: NodeId, start: usize, len: usize },
    /// Identity adjoint; the forward value is supplied by the caller
    /// (stochastic or deterministic binarization).
    StraightThrough(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, materializing zeros if the node never received
    /// an adjoint (a parameter that the loss does not depend on).
    pub fn get_or_zeros(&self, id: NodeId, shape: [usize; 2]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape[0], shape[1]),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Inserts a constant (inputs, channel realizations). No gradient is
    /// accumulated for it or through paths that only touch constants.
    pub fn leaf(&mut self, value: &Tensor) -> NodeId {
        self.push(Op::Leaf, value.clone(), false)
    }

    /// Inserts a trainable parameter; its gradient is available after
    /// [`Tape::backward`].
    pub fn param(&mut self, value: &Tensor) -> NodeId {
        self.push(Op::Leaf, value.clone(), true)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        self.nodes.len() - 1
    }

    fn checked(&mut self, op_name: &'static str, op: Op, value: Tensor, needs_grad: bool) -> AdResult<NodeId> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: op_name });
        }
        Ok(self.push(op, value, needs_grad))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.cols() != vb.rows() {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let value = matmul_nn(va, vb);
        let ng = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        self.checked("matmul", Op::Matmul(a, b), value, ng)
    }

    // ── elementwise binary (with broadcasting) ──────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary("add", BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary("sub", BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary("mul", BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        self.binary("div", BinKind::Div, a, b)
    }

    fn binary(&mut self, name: &'static str, kind: BinKind, a: NodeId, b: NodeId) -> AdResult<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let (rows, cols) = broadcast_shape(va, vb).ok_or_else(|| AdError::ShapeMismatch {
            op: name,
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        })?;
        let mut out = Tensor::zeros(rows, cols);
        let f = bin_fn(kind);
        for r in 0..rows {
            for c in 0..cols {
                let x = va.get(bidx(r, va.rows()), bidx(c, va.cols()));
                let y = vb.get(bidx(r, vb.rows()), bidx(c, vb.cols()));
                out.set(r, c, f(x, y));
            }
        }
        let ng = self.nodes[a].needs_grad || self.nodes[b].needs_grad;
        self.checked(name, Op::Bin(kind, a, b), out, ng)
    }

    // ── elementwise unary ───────────────────────────────────────────────

    pub fn neg(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("neg", UnKind::Neg, x)
    }

    pub fn log1p(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("log1p", UnKind::Log1p, x)
    }

    pub fn exp(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("exp", UnKind::Exp, x)
    }

    /// `max(x, 0)` elementwise.
    pub fn relu(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("relu", UnKind::Relu, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("tanh", UnKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("sigmoid", UnKind::Sigmoid, x)
    }

    pub fn sqrt(&mut self, x: NodeId) -> AdResult<NodeId> {
        self.unary("sqrt", UnKind::Sqrt, x)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> AdResult<NodeId> {
        self.unary("scale", UnKind::Scale(factor), x)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> AdResult<NodeId> {
        self.unary("add_scalar", UnKind::AddScalar(c), x)
    }

    fn unary(&mut self, name: &'static str, kind: UnKind, x: NodeId) -> AdResult<NodeId> {
        let vx = &self.nodes[x].value;
        let f = un_fn(kind);
        let out = vx.map(f);
        let ng = self.nodes[x].needs_grad;
        self.checked(name, Op::Un(kind, x), out, ng)
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, x: NodeId, axis: Option<Axis>) -> AdResult<NodeId> {
        self.reduce("sum", RedKind::Sum, x, axis)
    }

    pub fn mean(&mut self, x: NodeId, axis: Option<Axis>) -> AdResult<NodeId> {
        self.reduce("mean", RedKind::Mean, x, axis)
    }

    /// Minimum along an axis. The adjoint flows to the first minimizing
    /// entry (ties resolve to the lowest index).
    pub fn min(&mut self, x: NodeId, axis: Option<Axis>) -> AdResult<NodeId> {
        self.reduce("min", RedKind::Min, x, axis)
    }

    fn reduce(&mut self, name: &'static str, kind: RedKind, x: NodeId, axis: Option<Axis>) -> AdResult<NodeId> {
        let vx = &self.nodes[x].value;
        if vx.is_empty() {
            return Err(AdError::EmptyReduce { op: name });
        }
        let out = match (kind, axis) {
            (RedKind::Sum, None) => Tensor::scalar(vx.data().iter().sum()),
            (RedKind::Mean, None) => Tensor::scalar(vx.data().iter().sum::<f64>() / vx.len() as f64),
            (RedKind::Min, None) => Tensor::scalar(vx.data().iter().cloned().fold(f64::INFINITY, f64::min)),
            (_, Some(Axis::Rows)) => {
                let mut out = match kind {
                    RedKind::Min => Tensor::filled(1, vx.cols(), f64::INFINITY),
                    _ => Tensor::zeros(1, vx.cols()),
                };
                for r in 0..vx.rows() {
                    for c in 0..vx.cols() {
                        let v = vx.get(r, c);
                        let cur = out.get(0, c);
                        out.set(0, c, if matches!(kind, RedKind::Min) { cur.min(v) } else { cur + v });
                    }
                }
                if matches!(kind, RedKind::Mean) {
                    let inv = 1.0 / vx.rows() as f64;
                    out = out.map(|v| v * inv);
                }
                out
            }
            (_, Some(Axis::Cols)) => {
                let mut out = Tensor::zeros(vx.rows(), 1);
                for r in 0..vx.rows() {
                    let row = vx.row(r);
                    let v = match kind {
                        RedKind::Sum => row.iter().sum(),
                        RedKind::Mean => row.iter().sum::<f64>() / row.len() as f64,
                        RedKind::Min => row.iter().cloned().fold(f64::INFINITY, f64::min),
                    };
                    out.set(r, 0, v);
                }
                out
            }
        };
        let ng = self.nodes[x].needs_grad;
        self.checked(name, Op::Reduce(kind, axis, x), out, ng)
    }

    // ── structural ──────────────────────────────────────────────────────

    /// Horizontal concatenation. Parts must agree on the row count;
    /// zero-width parts are skipped.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> AdResult<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&id| &self.nodes[id].value).collect();
        let rows = tensors.first().map(|t| t.rows()).unwrap_or(0);
        for t in &tensors {
            if t.rows() != rows {
                return Err(AdError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let value = Tensor::concat_cols(&tensors);
        let ng = parts.iter().any(|&id| self.nodes[id].needs_grad);
        self.checked("concat_cols", Op::ConcatCols(parts.to_vec()), value, ng)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> AdResult<NodeId> {
        let vx = &self.nodes[x].value;
        if start + len > vx.cols() {
            return Err(AdError::ShapeMismatch {
                op: "slice_cols",
                lhs: vx.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let value = vx.slice_cols(start, len);
        let ng = self.nodes[x].needs_grad;
        self.checked("slice_cols", Op::SliceCols { input: x, start, len }, value, ng)
    }

    /// Inserts a node whose forward value is `value` but whose adjoint is the
    /// identity on `input`. Used by the binarizer.
    pub(crate) fn straight_through(&mut self, input: NodeId, value: Tensor) -> AdResult<NodeId> {
        let vi = &self.nodes[input].value;
        if value.shape() != vi.shape() {
            return Err(AdError::ShapeMismatch {
                op: "straight_through",
                lhs: vi.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        let ng = self.nodes[input].needs_grad;
        self.checked("straight_through", Op::StraightThrough(input), value, ng)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss node. Returns per-node gradients for
    /// every node on a differentiable path to a parameter.
    pub fn backward(&self, loss: NodeId) -> AdResult<Gradients> {
        let lv = &self.nodes[loss].value;
        if lv.shape() != [1, 1] {
            return Err(AdError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let keep = self.nodes[id].needs_grad;
            match &self.nodes[id].op {
                Op::Leaf => {
                    if keep {
                        grads[id] = Some(g);
                    }
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], matmul_nt(&g, vb));
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], matmul_tn(va, &g));
                    }
                }
                Op::Bin(kind, a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let wants_a = self.nodes[*a].needs_grad;
                    let wants_b = self.nodes[*b].needs_grad;
                    let mut ga = if wants_a { Some(Tensor::zeros(va.rows(), va.cols())) } else { None };
                    let mut gb = if wants_b { Some(Tensor::zeros(vb.rows(), vb.cols())) } else { None };
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let gv = g.get(r, c);
                            let (ra, ca) = (bidx(r, va.rows()), bidx(c, va.cols()));
                            let (rb, cb) = (bidx(r, vb.rows()), bidx(c, vb.cols()));
                            let x = va.get(ra, ca);
                            let y = vb.get(rb, cb);
                            let (da, db) = match kind {
                                BinKind::Add => (gv, gv),
                                BinKind::Sub => (gv, -gv),
                                BinKind::Mul => (gv * y, gv * x),
                                BinKind::Div => (gv / y, -gv * x / (y * y)),
                            };
                            if let Some(t) = ga.as_mut() {
                                let cur = t.get(ra, ca);
                                t.set(ra, ca, cur + da);
                            }
                            if let Some(t) = gb.as_mut() {
                                let cur = t.get(rb, cb);
                                t.set(rb, cb, cur + db);
                            }
                        }
                    }
                    if let Some(t) = ga {
                        accumulate(&mut grads[*a], t);
                    }
                    if let Some(t) = gb {
                        accumulate(&mut grads[*b], t);
                    }
                }
                Op::Un(kind, x) => {
                    if self.nodes[*x].needs_grad {
                        let vx = &self.nodes[*x].value;
                        let vy = &self.nodes[id].value;
                        let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                        for i in 0..vx.len() {
                            let x0 = vx.data()[i];
                            let y0 = vy.data()[i];
                            let d = match kind {
                                UnKind::Neg => -1.0,
                                UnKind::Log1p => 1.0 / (1.0 + x0),
                                UnKind::Exp => y0,
                                UnKind::Relu => {
                                    if x0 > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnKind::Tanh => 1.0 - y0 * y0,
                                UnKind::Sigmoid => y0 * (1.0 - y0),
                                UnKind::Sqrt => 0.5 / y0,
                                UnKind::Scale(s) => *s,
                                UnKind::AddScalar(_) => 1.0,
                            };
                            gx.data_mut()[i] = g.data()[i] * d;
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::Reduce(kind, axis, x) => {
                    if self.nodes[*x].needs_grad {
                        let vx = &self.nodes[*x].value;
                        let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                        match (kind, axis) {
                            (RedKind::Sum, None) => {
                                let gv = g.item();
                                gx.data_mut().fill(gv);
                            }
                            (RedKind::Mean, None) => {
                                let gv = g.item() / vx.len() as f64;
                                gx.data_mut().fill(gv);
                            }
                            (RedKind::Min, None) => {
                                let (mut best, mut at) = (f64::INFINITY, 0);
                                for (i, &v) in vx.data().iter().enumerate() {
                                    if v < best {
                                        best = v;
                                        at = i;
                                    }
                                }
                                gx.data_mut()[at] = g.item();
                            }
                            (RedKind::Sum, Some(Axis::Rows)) => {
                                for r in 0..vx.rows() {
                                    for c in 0..vx.cols() {
                                        gx.set(r, c, g.get(0, c));
                                    }
                                }
                            }
                            (RedKind::Mean, Some(Axis::Rows)) => {
                                let inv = 1.0 / vx.rows() as f64;
                                for r in 0..vx.rows() {
                                    for c in 0..vx.cols() {
                                        gx.set(r, c, g.get(0, c) * inv);
                                    }
                                }
                            }
                            (RedKind::Min, Some(Axis::Rows)) => {
                                for c in 0..vx.cols() {
                                    let (mut best, mut at) = (f64::INFINITY, 0);
                                    for r in 0..vx.rows() {
                                        if vx.get(r, c) < best {
                                            best = vx.get(r, c);
                                            at = r;
                                        }
                                    }
                                    gx.set(at, c, g.get(0, c));
                                }
                            }
                            (RedKind::Sum, Some(Axis::Cols)) => {
                                for r in 0..vx.rows() {
                                    for c in 0..vx.cols() {
                                        gx.set(r, c, g.get(r, 0));
                                    }
                                }
                            }
                            (RedKind::Mean, Some(Axis::Cols)) => {
                                for r in 0..vx.rows() {
                                    let inv = 1.0 / vx.cols() as f64;
                                    for c in 0..vx.cols() {
                                        gx.set(r, c, g.get(r, 0) * inv);
                                    }
                                }
                            }
                            (RedKind::Min, Some(Axis::Cols)) => {
                                for r in 0..vx.rows() {
                                    let row = vx.row(r);
                                    let (mut best, mut at) = (f64::INFINITY, 0);
                                    for (c, &v) in row.iter().enumerate() {
                                        if v < best {
                                            best = v;
                                            at = c;
                                        }
                                    }
                                    gx.set(r, at, g.get(r, 0));
                                }
                            }
                        }
                        accumulate(&mut grads[*x], gx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        if self.nodes[p].needs_grad && w > 0 {
                            accumulate(&mut grads[p], g.slice_cols(at, w));
                        }
                        at += w;
                    }
                }
                Op::SliceCols { input, start, len } => {
                    if self.nodes[*input].needs_grad {
                        let vx = &self.nodes[*input].value;
                        let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                        for r in 0..g.rows() {
                            gx.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                        }
                        accumulate(&mut grads[*input], gx);
                    }
                }
                Op::StraightThrough(x) => {
                    if self.nodes[*x].needs_grad {
                        accumulate(&mut grads[*x], g.clone());
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, add: Tensor) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(add.data()) {
                *a += b;
            }
        }
        None => *slot = Some(add),
    }
}

/// Broadcast index: a size-1 axis always reads element 0.
#[inline]
fn bidx(i: usize, dim: usize) -> usize {
    if dim == 1 {
        0
    } else {
        i
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Option<(usize, usize)> {
    let rows = broadcast_dim(a.rows(), b.rows())?;
    let cols = broadcast_dim(a.cols(), b.cols())?;
    Some((rows, cols))
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn bin_fn(kind: BinKind) -> fn(f64, f64) -> f64 {
    match kind {
        BinKind::Add => |x, y| x + y,
        BinKind::Sub => |x, y| x - y,
        BinKind::Mul => |x, y| x * y,
        BinKind::Div => |x, y| x / y,
    }
}

fn un_fn(kind: UnKind) -> impl Fn(f64) -> f64 {
    move |x| match kind {
        UnKind::Neg => -x,
        UnKind::Log1p => x.ln_1p(),
        UnKind::Exp => x.exp(),
        UnKind::Relu => x.max(0.0),
        UnKind::Tanh => x.tanh(),
        UnKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        UnKind::Sqrt => x.sqrt(),
        UnKind::Scale(s) => s * x,
        UnKind::AddScalar(c) => x + c,
    }
}

// ── matmul kernels (row-major, ikj loop order) ──────────────────────────

/// `A[m,k] * B[k,n]`.
fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (kk, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = b.row(kk);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `A[m,k] * B[n,k]^T`: row-by-row dot products.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), b.rows());
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate().take(n) {
            let brow = b.row(j);
            *o = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `A[m,k]^T * B[m,n]`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(k, n);
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (kk, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let orow = out.row_mut(kk);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
