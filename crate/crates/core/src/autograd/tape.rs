//! Tape-based reverse-mode differentiation over a fixed operation set.
//!
//! A [`Tape`] is an append-only list of nodes; building an op computes its
//! value eagerly and records the dependency edges, so the tape is both the
//! forward evaluation and the reversal schedule. [`Tape::backward`] seeds a
//! scalar loss with 1 and walks the nodes once in reverse, accumulating
//! adjoints in construction order, which keeps gradient accumulation
//! deterministic down to the bit.
//!
//! The spectral attention tail is the one non-smooth citizen: singular
//! values pass through as a stop-gradient, and the tail sum contributes its
//! subdifferential U_tail·V_tailᵀ, which equals the true derivative wherever
//! the spectrum is simple.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{
    self, filter_columns, matmul, matmul_nt, matmul_tn, row_softmax, sigmoid_map, svd,
    FrequencyMask, Matrix,
};

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant or parameter input; parameters route adjoints into the
    /// gradient map.
    Leaf { param: Option<ParamId> },
    MatMul(NodeId, NodeId),
    /// a · bᵀ, the score-map shape.
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Adds a 1×d bias row to every row of an n×d input.
    AddRowBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Matrix times a 1×1 node, e.g. the squashed fusion coefficient.
    ScaleByScalar(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Sigmoid(NodeId),
    RowSoftmax(NodeId),
    /// Per-column high-/low-pass over the h×w token grid with a mask fixed
    /// at build time. The operator is a circular convolution with a real,
    /// negation-symmetric kernel, hence self-adjoint: the backward pass is
    /// the same filter applied to the adjoint.
    SpectralFilter { input: NodeId, mask: Arc<FrequencyMask>, h: usize, w: usize },
    MeanRows(NodeId),
    /// Σ of singular values past index k of the input. `subgrad` caches
    /// U_tail·V_tailᵀ from the forward decomposition.
    TailSingularSum { input: NodeId, subgrad: Matrix },
    /// Softmax cross-entropy of a 1×c logit row against a class index.
    CrossEntropy { logits: NodeId, label: usize },
    L1Norm(NodeId),
    /// √(Σ(a-b)² + ε) - √ε with ε = 1e-12: zero at a = b, finite gradient
    /// everywhere.
    L2DiffEps(NodeId, NodeId),
}

const L2_EPS: f64 = 1e-12;

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints per parameter, ordered by id.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: std::collections::BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.by_param.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Entry-wise sum; used to accumulate per-sample gradients when a loss
    /// is assembled outside a single tape. Shapes must agree.
    pub fn merge(&mut self, other: &Gradients) -> Result<()> {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(acc) => *acc = acc.add(g)?,
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
        Ok(())
    }
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// The value of a 1×1 node as a plain float.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.rows() != 1 || v.cols() != 1 {
            return Err(Error::Graph(format!(
                "expected scalar node, found {}x{}",
                v.rows(),
                v.cols()
            )));
        }
        Ok(v.get(0, 0))
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<NodeId> {
        Ok(self.constant(Matrix::new(1, 1, vec![value])?))
    }

    /// Loads the parameter's current value onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Leaf { param: Some(id) }, store.value(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulNt(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = numerics::add_row_broadcast(self.value(a), self.value(bias))?;
        Ok(self.push(Op::AddRowBroadcast(a, bias), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn scale_by_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.scalar(s)?;
        let value = self.value(a).scale(sv);
        Ok(self.push(Op::ScaleByScalar(a, s), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = sigmoid_map(self.value(a));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let value = row_softmax(self.value(a));
        self.push(Op::RowSoftmax(a), value)
    }

    pub fn spectral_filter(
        &mut self,
        a: NodeId,
        mask: Arc<FrequencyMask>,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let value = filter_columns(self.value(a), &mask, h, w)?;
        Ok(self.push(Op::SpectralFilter { input: a, mask, h, w }, value))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::shape("mean_rows over zero rows".to_string()));
        }
        let n = av.rows() as f64;
        let value = Matrix::from_fn(1, av.cols(), |_, j| {
            (0..av.rows()).map(|i| av.get(i, j)).sum::<f64>() / n
        });
        Ok(self.push(Op::MeanRows(a), value))
    }

    /// Sum of singular values with index ≥ k (0-based) of the input node's
    /// value. k at or past the spectrum length gives an exact zero with a
    /// zero subgradient.
    pub fn tail_singular_sum(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let av = self.value(a);
        let f = svd(av)?;
        let t = f.sigma.len();
        let tail: f64 = f.sigma.iter().skip(k).sum();
        let mut subgrad = Matrix::zeros(av.rows(), av.cols());
        for r in k..t {
            for i in 0..av.rows() {
                let u_ir = f.u.get(i, r);
                if u_ir == 0.0 {
                    continue;
                }
                for j in 0..av.cols() {
                    subgrad.set(i, j, subgrad.get(i, j) + u_ir * f.vt.get(r, j));
                }
            }
        }
        let value = Matrix::new(1, 1, vec![tail])?;
        Ok(self.push(Op::TailSingularSum { input: a, subgrad }, value))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != 1 {
            return Err(Error::shape(format!("cross_entropy expects a 1×c logit row, got {} rows", lv.rows())));
        }
        if label >= lv.cols() {
            return Err(Error::Lookup(format!("label {label} out of range for {} classes", lv.cols())));
        }
        let row = lv.row(0);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = Matrix::new(1, 1, vec![lse - row[label]])?;
        Ok(self.push(Op::CrossEntropy { logits, label }, value))
    }

    pub fn l1_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let sum: f64 = self.value(a).data().iter().map(|v| v.abs()).sum();
        let value = Matrix::new(1, 1, vec![sum])?;
        Ok(self.push(Op::L1Norm(a), value))
    }

    pub fn l2_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::shape(format!(
                "l2_diff: {}x{} vs {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let ss: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let value = Matrix::new(1, 1, vec![(ss + L2_EPS).sqrt() - L2_EPS.sqrt()])?;
        Ok(self.push(Op::L2DiffEps(a, b), value))
    }

    /// Reverse sweep from a scalar loss node. Returns adjoints for every
    /// parameter leaf reachable from `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, found {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut adjoints: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[loss.0] = Some(Matrix::new(1, 1, vec![1.0])?);

        let mut grads = Gradients::default();
        for idx in (0..=loss.0).rev() {
            let g = match adjoints[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf { param: Some(id) } => match grads.by_param.get_mut(id) {
                    Some(acc) => *acc = acc.add(&g)?,
                    None => {
                        grads.by_param.insert(*id, g);
                    }
                },
                Op::Leaf { param: None } => {}
                Op::MatMul(a, b) => {
                    accumulate(&mut adjoints, *a, matmul_nt(&g, self.value(*b))?)?;
                    accumulate(&mut adjoints, *b, matmul_tn(self.value(*a), &g)?)?;
                }
                Op::MatMulNt(a, b) => {
                    // c = a·bᵀ ⇒ ∂a = g·b, ∂b = gᵀ·a
                    accumulate(&mut adjoints, *a, matmul(&g, self.value(*b))?)?;
                    accumulate(&mut adjoints, *b, matmul_tn(&g, self.value(*a))?)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, g.clone())?;
                    accumulate(&mut adjoints, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *a, g.clone())?;
                    accumulate(&mut adjoints, *b, g.scale(-1.0))?;
                }
                Op::AddRowBroadcast(a, bias) => {
                    let col_sums = Matrix::from_fn(1, g.cols(), |_, j| {
                        (0..g.rows()).map(|i| g.get(i, j)).sum()
                    });
                    accumulate(&mut adjoints, *a, g)?;
                    accumulate(&mut adjoints, *bias, col_sums)?;
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adjoints, *a, g.scale(*c))?;
                }
                Op::ScaleByScalar(a, s) => {
                    let sv = self.value(*s).get(0, 0);
                    let av = self.value(*a);
                    let ds: f64 = g.data().iter().zip(av.data()).map(|(gi, ai)| gi * ai).sum();
                    accumulate(&mut adjoints, *a, g.scale(sv))?;
                    accumulate(&mut adjoints, *s, Matrix::new(1, 1, vec![ds])?)?;
                }
                Op::Hadamard(a, b) => {
                    accumulate(&mut adjoints, *a, g.hadamard(self.value(*b))?)?;
                    accumulate(&mut adjoints, *b, g.hadamard(self.value(*a))?)?;
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let da = Matrix::from_fn(y.rows(), y.cols(), |i, j| {
                        let s = y.get(i, j);
                        g.get(i, j) * s * (1.0 - s)
                    });
                    accumulate(&mut adjoints, *a, da)?;
                }
                Op::RowSoftmax(a) => {
                    // Per row: ∂s = y ⊙ (g - ⟨g, y⟩).
                    let y = &self.nodes[idx].value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 =
                            (0..y.cols()).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..y.cols() {
                            da.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut adjoints, *a, da)?;
                }
                Op::SpectralFilter { input, mask, h, w } => {
                    // Self-adjoint linear operator; see the op doc.
                    accumulate(&mut adjoints, *input, filter_columns(&g, mask, *h, *w)?)?;
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let da = Matrix::from_fn(n, g.cols(), |_, j| g.get(0, j) / n as f64);
                    accumulate(&mut adjoints, *a, da)?;
                }
                Op::TailSingularSum { input, subgrad } => {
                    accumulate(&mut adjoints, *input, subgrad.scale(g.get(0, 0)))?;
                }
                Op::CrossEntropy { logits, label } => {
                    let probs = row_softmax(self.value(*logits));
                    let mut da = probs;
                    da.set(0, *label, da.get(0, *label) - 1.0);
                    accumulate(&mut adjoints, *logits, da.scale(g.get(0, 0)))?;
                }
                Op::L1Norm(a) => {
                    let av = self.value(*a);
                    let gs = g.get(0, 0);
                    let da = av.map(|v| {
                        if v > 0.0 {
                            gs
                        } else if v < 0.0 {
                            -gs
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoints, *a, da)?;
                }
                Op::L2DiffEps(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ss: f64 =
                        av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
                    let inv = 1.0 / (ss + L2_EPS).sqrt();
                    let gs = g.get(0, 0);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| {
                        gs * (av.get(i, j) - bv.get(i, j)) * inv
                    });
                    accumulate(&mut adjoints, *a, da.clone())?;
                    accumulate(&mut adjoints, *b, da.scale(-1.0))?;
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adjoints: &mut [Option<Matrix>], id: NodeId, delta: Matrix) -> Result<()> {
    match &mut adjoints[id.0] {
        Some(acc) => {
            *acc = acc.add(&delta)?;
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}
