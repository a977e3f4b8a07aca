//! Reverse-mode differentiation over an append-only tape of dense nodes.
//!
//! Every operation appends one node holding its forward value. Parents are
//! always recorded before children, so the node list is already in
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! Binary elementwise operations broadcast: an operand may have one row
//! and/or one column where the other has many. Gradients of broadcast
//! operands are summed back down to their own shape.

use super::matrix::{gemm_acc, Matrix};
use crate::error::{Result, ZolError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    MinConst(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    SumCols(NodeId),
    Dot(NodeId, NodeId),
    RowDot(NodeId, NodeId),
    L2Norm(NodeId),
    RowL2Norm(NodeId),
    ConcatCols(Vec<NodeId>),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::MinConst(..) => "min_const",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Dot(..) => "dot",
            Op::RowDot(..) => "row_dot",
            Op::L2Norm(..) => "l2_norm",
            Op::RowL2Norm(..) => "row_l2_norm",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&Matrix> {
        self.adjoints.get(node.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `node`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, node: NodeId) -> Matrix {
        match self.get(node) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[node.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

/// Smooth `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    fn dim(x: usize, y: usize) -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    }
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

fn broadcast_zip(a: &Matrix, b: &Matrix, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == shape && b.shape() == shape {
        return a.zip_map(b, f);
    }
    let (rows, cols) = shape;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ra = if a.rows() == 1 { 0 } else { r };
        let rb = if b.rows() == 1 { 0 } else { r };
        for c in 0..cols {
            let ca = if a.cols() == 1 { 0 } else { c };
            let cb = if b.cols() == 1 { 0 } else { c };
            out.push(f(a.get(ra, ca), b.get(rb, cb)));
        }
    }
    Matrix::from_vec(rows, cols, out)
}

/// Sums `g` down to `(rows, cols)` along broadcast axes.
fn reduce_to(g: Matrix, rows: usize, cols: usize) -> Matrix {
    if g.shape() == (rows, cols) {
        return g;
    }
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..g.rows() {
        let ro = if rows == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let co = if cols == 1 { 0 } else { c };
            let v = out.get(ro, co) + g.get(r, c);
            out.set(ro, co, v);
        }
    }
    out
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameter (root) nodes in registration order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn value(&self, node: NodeId) -> &Matrix {
        &self.nodes[node.0].value
    }

    /// Forward value of a `1 x 1` node.
    pub fn scalar_value(&self, node: NodeId) -> Result<f64> {
        let v = self.value(node);
        if !v.is_scalar() {
            return Err(ZolError::Shape(format!(
                "expected a scalar node, got {}x{}",
                v.rows(),
                v.cols()
            )));
        }
        Ok(v.data()[0])
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<NodeId> {
        let id = self.leaf(value, true)?;
        self.params.push(id);
        Ok(id)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<NodeId> {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<NodeId> {
        self.constant(Matrix::scalar(value))
    }

    fn leaf(&mut self, value: Matrix, needs_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(ZolError::Numeric("non-finite leaf value".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(ZolError::Numeric(format!(
                "non-finite value produced by `{}`",
                op.tag()
            )));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::Dot(a, b)
            | Op::RowDot(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::ConcatCols(parts) => parts.iter().any(|p| self.nodes[p.0].needs_grad),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::MinConst(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::SumCols(a)
            | Op::L2Norm(a)
            | Op::RowL2Norm(a) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn binary_shape(&self, a: NodeId, b: NodeId, tag: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        broadcast_shape(sa, sb).ok_or_else(|| {
            ZolError::Shape(format!(
                "`{tag}` cannot broadcast {}x{} with {}x{}",
                sa.0, sa.1, sb.0, sb.1
            ))
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "add")?;
        let v = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "sub")?;
        let v = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "mul")?;
        let v = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_shape(a, b, "div")?;
        if self.value(b).data().contains(&0.0) {
            return Err(ZolError::Numeric("division by zero".into()));
        }
        let v = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).try_matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise `min(a, c)`.
    pub fn min_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.min(c));
        self.push(v, Op::MinConst(a, c))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(ZolError::Numeric("mean of an empty node".into()));
        }
        let v = Matrix::scalar(m.sum() / m.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Column means, `rows x cols -> 1 x cols`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(ZolError::Numeric("mean over zero rows".into()));
        }
        let mut out = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (o, v) in out.iter_mut().zip(m.row_slice(r)) {
                *o += v;
            }
        }
        let n = m.rows() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Matrix::row(&out), Op::MeanRows(a))
    }

    /// Row sums, `rows x cols -> rows x 1`.
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        let out: Vec<f64> = (0..m.rows()).map(|r| m.row_slice(r).iter().sum()).collect();
        self.push(Matrix::column(&out), Op::SumCols(a))
    }

    /// Sum of elementwise products of two equal-shape nodes.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(ZolError::Shape(format!(
                "`dot` needs equal shapes, got {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        self.push(Matrix::scalar(s), Op::Dot(a, b))
    }

    /// Per-row dot products, `rows x cols -> rows x 1`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(ZolError::Shape(format!(
                "`row_dot` needs equal shapes, got {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out: Vec<f64> = (0..va.rows())
            .map(|r| va.row_slice(r).iter().zip(vb.row_slice(r)).map(|(x, y)| x * y).sum())
            .collect();
        self.push(Matrix::column(&out), Op::RowDot(a, b))
    }

    /// Euclidean norm of all elements.
    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Matrix::scalar(self.value(a).frobenius_norm());
        self.push(v, Op::L2Norm(a))
    }

    /// Per-row Euclidean norms, `rows x cols -> rows x 1`.
    pub fn row_l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        let out: Vec<f64> = (0..m.rows())
            .map(|r| m.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.push(Matrix::column(&out), Op::RowL2Norm(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hconcat(&mats)?;
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Builds a scalar expression and returns its value with its node.
    pub fn eval_scalar(&mut self, build: impl FnOnce(&mut Graph) -> Result<NodeId>) -> Result<(f64, NodeId)> {
        let node = build(self)?;
        Ok((self.scalar_value(node)?, node))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(ZolError::Shape("loss node is not on this graph".into()));
        }
        if !self.value(loss).is_scalar() {
            let (r, c) = self.value(loss).shape();
            return Err(ZolError::Shape(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        adj.resize(self.nodes.len(), None);
        Ok(Gradients { adjoints: adj, shapes })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.wants(id) {
                        let (r, c) = self.value(id).shape();
                        accumulate(&mut adj[id.0], reduce_to(g.clone(), r, c));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj[a.0], reduce_to(g.clone(), r, c));
                }
                if self.wants(*b) {
                    let (r, c) = self.value(*b).shape();
                    accumulate(&mut adj[b.0], reduce_to(g.map(|x| -x), r, c));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = broadcast_zip(g, vb, g.shape(), |x, y| x * y);
                    accumulate(&mut adj[a.0], reduce_to(ga, va.rows(), va.cols()));
                }
                if self.wants(*b) {
                    let gb = broadcast_zip(g, va, g.shape(), |x, y| x * y);
                    accumulate(&mut adj[b.0], reduce_to(gb, vb.rows(), vb.cols()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = broadcast_zip(g, vb, g.shape(), |x, y| x / y);
                    accumulate(&mut adj[a.0], reduce_to(ga, va.rows(), va.cols()));
                }
                if self.wants(*b) {
                    let q = broadcast_zip(g, out, g.shape(), |x, o| -x * o);
                    let gb = broadcast_zip(&q, vb, g.shape(), |x, y| x / y);
                    accumulate(&mut adj[b.0], reduce_to(gb, vb.rows(), vb.cols()));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    gemm_acc(g, false, vb, true, &mut ga, 0.0);
                    accumulate(&mut adj[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                    gemm_acc(va, true, g, false, &mut gb, 0.0);
                    accumulate(&mut adj[b.0], gb);
                }
            }
            Op::Transpose(a) => accumulate(&mut adj[a.0], g.transpose()),
            Op::Scale(a, c) => accumulate(&mut adj[a.0], g.map(|x| x * c)),
            Op::AddConst(a) => accumulate(&mut adj[a.0], g.clone()),
            Op::Tanh(a) => accumulate(&mut adj[a.0], g.zip_map(out, |x, t| x * (1.0 - t * t))),
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                accumulate(&mut adj[a.0], ga)
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| x * sigmoid(v));
                accumulate(&mut adj[a.0], ga)
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| 2.0 * x * v);
                accumulate(&mut adj[a.0], ga)
            }
            Op::MinConst(a, c) => {
                let ga = g.zip_map(self.value(*a), |x, v| if v < *c { x } else { 0.0 });
                accumulate(&mut adj[a.0], ga)
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(&mut adj[a.0], Matrix::filled(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let s = g.data()[0] / (r * c) as f64;
                accumulate(&mut adj[a.0], Matrix::filled(r, c, s));
            }
            Op::MeanRows(a) => {
                let (r, _) = self.value(*a).shape();
                let row: Vec<f64> = g.data().iter().map(|x| x / r as f64).collect();
                accumulate(&mut adj[a.0], Matrix::repeat_row(&row, r));
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.row_slice_mut(i).fill(g.data()[i]);
                }
                accumulate(&mut adj[a.0], ga);
            }
            Op::Dot(a, b) => {
                let s = g.data()[0];
                if self.wants(*a) {
                    accumulate(&mut adj[a.0], self.value(*b).map(|v| v * s));
                }
                if self.wants(*b) {
                    accumulate(&mut adj[b.0], self.value(*a).map(|v| v * s));
                }
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale_rows = |m: &Matrix| {
                    let mut out = m.clone();
                    for i in 0..m.rows() {
                        let s = g.data()[i];
                        out.row_slice_mut(i).iter_mut().for_each(|v| *v *= s);
                    }
                    out
                };
                if self.wants(*a) {
                    accumulate(&mut adj[a.0], scale_rows(vb));
                }
                if self.wants(*b) {
                    accumulate(&mut adj[b.0], scale_rows(va));
                }
            }
            Op::L2Norm(a) => {
                let n = out.data()[0];
                let s = if n > 0.0 { g.data()[0] / n } else { 0.0 };
                accumulate(&mut adj[a.0], self.value(*a).map(|v| v * s));
            }
            Op::RowL2Norm(a) => {
                let mut ga = self.value(*a).clone();
                for i in 0..ga.rows() {
                    let n = out.data()[i];
                    let s = if n > 0.0 { g.data()[i] / n } else { 0.0 };
                    ga.row_slice_mut(i).iter_mut().for_each(|v| *v *= s);
                }
                accumulate(&mut adj[a.0], ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.value(*p).shape();
                    if self.wants(*p) {
                        let mut gp = Matrix::zeros(r, c);
                        for i in 0..r {
                            gp.row_slice_mut(i).copy_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        accumulate(&mut adj[p.0], gp);
                    }
                    offset += c;
                }
            }
        }
    }
}
