use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{self, row_norm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// `n x m` plus a broadcast `1 x m` row.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Exp(NodeId),
    Log {
        x: NodeId,
        eps: f64,
    },
    Relu(NodeId),
    RowSum(NodeId),
    SumAll(NodeId),
    Scale(NodeId, f64),
    RowSoftmax {
        x: NodeId,
        temperature: f64,
    },
    LogSoftmaxRows {
        x: NodeId,
        temperature: f64,
    },
    L2NormalizeRows {
        x: NodeId,
        eps: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Records a computation over a closed set of primitives, then replays it
/// backwards.
///
/// Node ids are handed out in push order, so the node list is always a
/// topological order of the graph. Once [`Tape::finalize`] is called no more
/// nodes can be added and [`Tape::backward`] becomes available.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    finalized: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the output.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of `id`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
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

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if self.finalized {
            return Err(Error::State(
                "cannot record on a finalized tape".to_string(),
            ));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn val(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Contract(format!("unknown node {}", id.0)))
    }

    /// Parameters, inputs and constants all enter as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        let v = x.zip_map(y, "add", |p, q| p + q)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, r) = (self.val(a)?, self.val(row)?);
        let (_, m) = x.require_matrix("add_row")?;
        if r.numel() != m {
            return Err(shape_err("add_row", x.shape(), r.shape()));
        }
        let mut v = x.clone();
        let rd = r.data();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(rd) {
                *o += b;
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        let v = x.zip_map(y, "sub", |p, q| p - q)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        let v = x.zip_map(y, "mul", |p, q| p * q)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = numerics::matmul(self.val(a)?, self.val(b)?)?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.val(a)?.transpose()?;
        self.push(Op::Transpose(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.val(a)?.map(libm::exp);
        self.push(Op::Exp(a), v)
    }

    /// `log(x + eps)`.
    pub fn log(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.val(a)?.map(|x| libm::log(x + eps));
        self.push(Op::Log { x: a, eps }, v)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.val(a)?.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), v)
    }

    /// `n x m` to `n x 1`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.val(a)?;
        let (n, _) = x.require_matrix("row_sum")?;
        let sums = (0..n).map(|i| x.row(i).iter().sum()).collect();
        let v = Tensor::new(&[n, 1], sums)?;
        self.push(Op::RowSum(a), v)
    }

    /// Sum of every entry, as a `1 x 1` scalar node.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.val(a)?.sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let v = self.val(a)?.map(|x| factor * x);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn row_softmax(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        let v = numerics::row_softmax(self.val(a)?, temperature)?;
        self.push(Op::RowSoftmax { x: a, temperature }, v)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        let v = numerics::log_softmax_rows(self.val(a)?, temperature)?;
        self.push(Op::LogSoftmaxRows { x: a, temperature }, v)
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let v = numerics::l2_normalize_rows(self.val(a)?, eps)?;
        self.push(Op::L2NormalizeRows { x: a, eps }, v)
    }

    /// Reverse sweep from a scalar `output`.
    ///
    /// The tape is not modified, so repeated calls return identical results.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if !self.finalized {
            return Err(Error::State(
                "backward requires a finalized tape".to_string(),
            ));
        }
        let out_val = self.val(output)?;
        if out_val.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, node {} has shape {:?}",
                output.0,
                out_val.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(Tensor::full(out_val.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let m = g.cols();
                    let mut col = vec![0.0; m];
                    for i in 0..g.rows() {
                        for (c, v) in col.iter_mut().zip(g.row(i)) {
                            *c += v;
                        }
                    }
                    let row_shape = self.nodes[row.0].value.shape().to_vec();
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, row, Tensor::new(&row_shape, col)?);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a, g.clone());
                    accumulate(&mut adj, b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut adj, a, g.zip_map(y, "mul'", |p, q| p * q)?);
                    accumulate(&mut adj, b, g.zip_map(x, "mul'", |p, q| p * q)?);
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut adj, a, numerics::matmul(&g, &y.transpose()?)?);
                    accumulate(&mut adj, b, numerics::matmul(&x.transpose()?, &g)?);
                }
                Op::Transpose(a) => accumulate(&mut adj, a, g.transpose()?),
                Op::Exp(a) => {
                    accumulate(&mut adj, a, g.zip_map(&node.value, "exp'", |p, y| p * y)?);
                }
                Op::Log { x, eps } => {
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut adj, x, g.zip_map(xv, "log'", |p, v| p / (v + eps))?);
                }
                Op::Relu(a) => {
                    let xv = &self.nodes[a.0].value;
                    let d = g.zip_map(xv, "relu'", |p, v| if v > 0.0 { p } else { 0.0 })?;
                    accumulate(&mut adj, a, d);
                }
                Op::RowSum(a) => {
                    let xv = &self.nodes[a.0].value;
                    let mut d = Tensor::zeros(xv.shape());
                    for i in 0..d.rows() {
                        let gi = g.data()[i];
                        d.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::SumAll(a) => {
                    let xv = &self.nodes[a.0].value;
                    accumulate(&mut adj, a, Tensor::full(xv.shape(), g.data()[0]));
                }
                Op::Scale(a, s) => accumulate(&mut adj, a, g.map(|v| s * v)),
                Op::RowSoftmax { x, temperature } => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let yi = y.row(i);
                        let dot: f64 = g.row(i).iter().zip(yi).map(|(p, q)| p * q).sum();
                        for (v, &yv) in d.row_mut(i).iter_mut().zip(yi) {
                            *v = yv * (*v - dot) / temperature;
                        }
                    }
                    accumulate(&mut adj, x, d);
                }
                Op::LogSoftmaxRows { x, temperature } => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let total: f64 = g.row(i).iter().sum();
                        for (v, &ly) in d.row_mut(i).iter_mut().zip(y.row(i)) {
                            *v = (*v - libm::exp(ly) * total) / temperature;
                        }
                    }
                    accumulate(&mut adj, x, d);
                }
                Op::L2NormalizeRows { x, eps } => {
                    let xv = &self.nodes[x.0].value;
                    let y = &node.value;
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let norm = row_norm(xv.row(i));
                        if norm > eps {
                            let yi = y.row(i);
                            let dot: f64 = g.row(i).iter().zip(yi).map(|(p, q)| p * q).sum();
                            for (v, &yv) in d.row_mut(i).iter_mut().zip(yi) {
                                *v = (*v - yv * dot) / norm;
                            }
                        } else {
                            d.row_mut(i).iter_mut().for_each(|v| *v /= eps);
                        }
                    }
                    accumulate(&mut adj, x, d);
                }
            }
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn identity_gradient_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(s(4.0)).unwrap();
        t.finalize();
        assert_eq!(t.backward(x).unwrap().get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(s(2.0)).unwrap();
        let y = t.leaf(s(3.0)).unwrap();
        let p = t.mul(x, y).unwrap();
        t.finalize();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
        assert_eq!(g.get(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(s(5.0)).unwrap();
        let sq = t.mul(x, x).unwrap();
        let out = t.add(sq, x).unwrap();
        t.finalize();
        assert_eq!(t.backward(out).unwrap().get(x).unwrap().data(), &[11.0]);
    }

    #[test]
    fn contract_and_state_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(t.backward(x), Err(Error::State(_))));
        t.finalize();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
        assert!(matches!(t.leaf(s(1.0)), Err(Error::State(_))));
    }

    #[test]
    fn unreachable_leaf_has_no_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(s(1.0)).unwrap();
        let y = t.leaf(s(2.0)).unwrap();
        let e = t.exp(x).unwrap();
        t.finalize();
        let g = t.backward(e).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.get_or_zeros(y, t.value(y)).data(), &[0.0]);
    }
}
