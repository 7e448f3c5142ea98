//! A small reverse-mode differentiation graph over `f64` matrices.
//!
//! Each [`Graph`] is built for one forward pass: node values are computed
//! eagerly as ops are appended, and [`Graph::backward`] walks the tape in
//! reverse, accumulating parameter gradients into a
//! [`GradStore`](crate::params::GradStore). Row vectors are `1×d` matrices
//! and scalars are `1×1`, so a single op set covers embeddings, attention,
//! pooling, and the loss.
//!
//! Embedding tables never enter a graph whole: [`Graph::gather`] copies the
//! referenced rows in and scatters gradients back out, which keeps per-sample
//! graphs small even with large vocabularies.

use ndarray::{concatenate, Array2, Axis};

use crate::params::{GradStore, ParamId, ParamSet};

/// Index of a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Leaf with no gradient (inputs, literals, detached zeros).
    Constant,
    /// Leaf whose value is a full parameter tensor.
    Param(ParamId),
    /// Leaf holding selected rows of a parameter tensor.
    GatherRows { param: ParamId, rows: Vec<usize> },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `x + bias` with `bias` (a `1×d` node) broadcast over rows of `x`.
    AddRowBroadcast { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: f64 },
    Tanh(NodeId),
    /// Independent softmax along each row.
    SoftmaxRows(NodeId),
    /// Elementwise product with a constant mask (dropout).
    MulMask { x: NodeId, mask: Array2<f64> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize, len: usize },
    /// `log Σ exp` of a `1×n` row, computed with max subtraction.
    LogSumExp(NodeId),
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
}

fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.values[id.0]
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        id
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn scalar_constant(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(self.params.get(id).clone(), Op::Param(id))
    }

    pub fn gather(&mut self, param: ParamId, rows: &[usize]) -> NodeId {
        let table = self.params.get(param);
        let mut out = Array2::zeros((rows.len(), table.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&table.row(r));
        }
        self.push(
            out,
            Op::GatherRows {
                param,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a.0].dot(&self.values[b.0]);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].t().to_owned();
        self.push(v, Op::Transpose(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        debug_assert_eq!(self.values[bias.0].nrows(), 1);
        let v = &self.values[x.0] + &self.values[bias.0].row(0);
        self.push(v, Op::AddRowBroadcast { x, bias })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.values[x.0].mapv(|v| v * c);
        self.push(v, Op::Scale { x, c })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x.0].mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut v = self.values[x.0].clone();
        for mut row in v.rows_mut() {
            softmax_row_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn mul_mask(&mut self, x: NodeId, mask: Array2<f64>) -> NodeId {
        let v = &self.values[x.0] * &mask;
        self.push(v, Op::MulMask { x, mask })
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let v = concatenate(Axis(0), &views).expect("row concat shape mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let v = concatenate(Axis(1), &views).expect("col concat shape mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[x.0]
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(v, Op::SliceCols { x, start, len })
    }

    pub fn logsumexp(&mut self, x: NodeId) -> NodeId {
        let row = &self.values[x.0];
        debug_assert_eq!(row.nrows(), 1);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let v = Array2::from_elem((1, 1), max + sum.ln());
        self.push(v, Op::LogSumExp(x))
    }

    /// Dot product of two `1×d` rows as a `1×1` node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bt = self.transpose(b);
        self.matmul(a, bt)
    }

    /// Run reverse-mode accumulation from a `1×1` loss node, seeding the
    /// adjoint with `seed` (`1.0` for a plain loss, `1/batch` when averaging
    /// sample losses outside the graph).
    pub fn backward(&self, loss: NodeId, seed: f64, grads: &mut GradStore) {
        debug_assert_eq!(self.values[loss.0].dim(), (1, 1));
        let mut adjoints: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        adjoints[loss.0] = Some(Array2::from_elem((1, 1), seed));

        for i in (0..self.ops.len()).rev() {
            let Some(g) = adjoints[i].take() else { continue };
            match &self.ops[i] {
                Op::Constant => {}
                Op::Param(id) => grads.add(*id, g.view()),
                Op::GatherRows { param, rows } => grads.add_rows(*param, rows, g.view()),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.values[b.0].t());
                    let gb = self.values[a.0].t().dot(&g);
                    accumulate(&mut adjoints, *a, ga);
                    accumulate(&mut adjoints, *b, gb);
                }
                Op::Transpose(x) => accumulate(&mut adjoints, *x, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, g.clone());
                    accumulate(&mut adjoints, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *b, g.mapv(|v| -v));
                    accumulate(&mut adjoints, *a, g);
                }
                Op::AddRowBroadcast { x, bias } => {
                    let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adjoints, *bias, col_sums);
                    accumulate(&mut adjoints, *x, g);
                }
                Op::Scale { x, c } => accumulate(&mut adjoints, *x, g.mapv(|v| v * c)),
                Op::Tanh(x) => {
                    let y = &self.values[i];
                    accumulate(&mut adjoints, *x, (1.0 - y * y) * &g);
                }
                Op::SoftmaxRows(x) => {
                    // dx = y ∘ (g − rowdot(g, y))
                    let y = &self.values[i];
                    let mut gx = Array2::zeros(y.raw_dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        let mut out = gx.row_mut(r);
                        for c in 0..yr.len() {
                            out[c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::MulMask { x, mask } => accumulate(&mut adjoints, *x, &g * mask),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.values[p.0].nrows();
                        let slice = g.slice(ndarray::s![offset..offset + n, ..]).to_owned();
                        accumulate(&mut adjoints, *p, slice);
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.values[p.0].ncols();
                        let slice = g.slice(ndarray::s![.., offset..offset + n]).to_owned();
                        accumulate(&mut adjoints, *p, slice);
                        offset += n;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let mut gx = Array2::zeros(self.values[x.0].raw_dim());
                    gx.slice_mut(ndarray::s![.., *start..start + len]).assign(&g);
                    accumulate(&mut adjoints, *x, gx);
                }
                Op::LogSumExp(x) => {
                    let mut soft = self.values[x.0].clone();
                    softmax_row_in_place(soft.row_mut(0).as_slice_mut().expect("contiguous"));
                    accumulate(&mut adjoints, *x, soft * g[[0, 0]]);
                }
            }
        }
    }
}

fn accumulate(adjoints: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut adjoints[id.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}
