//! Append-only computation record for reverse-mode differentiation.
//!
//! Every operation pushes one node holding the forward value; `backward`
//! walks the record from the loss node down to index zero, so topological
//! order holds by construction. A tape lives for one forward/backward pass
//! and is single-threaded.

use std::sync::Arc;

use super::{mm, mm_nt, mm_tn, sigmoid, Tensor, TensorError};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// a * b^T with b stored untransposed.
    MatmulTransB(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    OneMinus(NodeId),
    /// Row vector added to every row of a matrix.
    AddRowBroadcast(NodeId, NodeId),
    /// Row lookup into a table; the gradient scatter-adds back.
    Gather(NodeId, Arc<Vec<usize>>),
    ConcatCols(Vec<NodeId>),
    Scale(NodeId, f64),
    Sum(NodeId),
    /// Per-row weighted softmax cross-entropy, summed to a scalar.
    /// Rows with weight zero contribute nothing (masked positions).
    SoftmaxXent {
        logits: NodeId,
        targets: Arc<Vec<usize>>,
        weights: Arc<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn matmul_transpose_b(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).matmul_transpose_b(self.value(b))?;
        Ok(self.push(out, Op::MatmulTransB(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| 1.0 - v);
        self.push(out, Op::OneMinus(a))
    }

    /// `a + bias` where `bias` is 1 x cols and is added to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs_rows: av.rows(),
                lhs_cols: av.cols(),
                rhs_rows: bv.rows(),
                rhs_cols: bv.cols(),
            });
        }
        let bias_row = bv.row(0).to_vec();
        let out = Tensor::from_fn(av.rows(), av.cols(), |r, c| av.get(r, c) + bias_row[c]);
        Ok(self.push(out, Op::AddRowBroadcast(a, bias)))
    }

    /// Stacks `table[indices[i]]` as row `i` of the output.
    pub fn gather(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId, TensorError> {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &idx in &indices {
            if idx >= t.rows() {
                return Err(TensorError::IndexOutOfBounds { op: "gather", index: idx, rows: t.rows() });
            }
            data.extend_from_slice(t.row(idx));
        }
        let out = Tensor::from_raw(indices.len(), cols, data);
        Ok(self.push(out, Op::Gather(table, Arc::new(indices))))
    }

    /// Concatenates same-height matrices left to right.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs_rows: rows,
                    lhs_cols: total_cols,
                    rhs_rows: v.rows(),
                    rhs_cols: v.cols(),
                });
            }
            total_cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_raw(rows, total_cols, data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).scale(factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Σ_row weight[row] * cross_entropy(softmax(logits[row]), target[row]),
    /// as a 1x1 node. Uses max-subtracted log-sum-exp.
    pub fn softmax_xent(
        &mut self,
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<NodeId, TensorError> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || weights.len() != lv.rows() {
            return Err(TensorError::Contract(format!(
                "softmax_xent: {} logit rows but {} targets / {} weights",
                lv.rows(),
                targets.len(),
                weights.len()
            )));
        }
        let mut total = 0.0;
        for (row, (&target, &weight)) in targets.iter().zip(&weights).enumerate() {
            if weight == 0.0 {
                continue;
            }
            if target >= lv.cols() {
                return Err(TensorError::IndexOutOfBounds {
                    op: "softmax_xent",
                    index: target,
                    rows: lv.cols(),
                });
            }
            total += weight * row_xent(lv.row(row), target);
        }
        let out = Tensor::scalar(total);
        Ok(self.push(out, Op::SoftmaxXent { logits, targets: Arc::new(targets), weights: Arc::new(weights) }))
    }

    /// Reverse pass from a scalar loss node. Returns one gradient slot per
    /// node; nodes the loss does not reach keep a zero gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(TensorError::NotScalar { rows: loss_value.rows(), cols: loss_value.cols() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            debug_assert_eq!(g.shape(), self.nodes[i].value.shape());
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let da = mm_nt(&g, self.value(*b));
                    let db = mm_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatmulTransB(a, b) => {
                    let da = mm(&g, self.value(*b));
                    let db = mm_tn(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b)).expect("shape fixed at forward");
                    let db = g.mul(self.value(*a)).expect("shape fixed at forward");
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[i].value;
                    let local = Tensor::from_fn(s.rows(), s.cols(), |r, c| {
                        let v = s.get(r, c);
                        v * (1.0 - v)
                    });
                    accumulate(&mut grads, *a, g.mul(&local).expect("same shape"));
                }
                Op::Tanh(a) => {
                    let t = &self.nodes[i].value;
                    let local = t.map(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, g.mul(&local).expect("same shape"));
                }
                Op::OneMinus(a) => {
                    accumulate(&mut grads, *a, g.scale(-1.0));
                }
                Op::AddRowBroadcast(a, bias) => {
                    accumulate(&mut grads, *bias, g.column_sums());
                    accumulate(&mut grads, *a, g);
                }
                Op::Gather(table, indices) => {
                    let shape = self.value(*table).shape();
                    scatter_add(&mut grads, *table, shape, indices, &g);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let piece = Tensor::from_fn(g.rows(), cols, |r, c| g.get(r, offset + c));
                        accumulate(&mut grads, p, piece);
                        offset += cols;
                    }
                }
                Op::Scale(a, factor) => {
                    accumulate(&mut grads, *a, g.scale(*factor));
                }
                Op::Sum(a) => {
                    let upstream = g.get(0, 0);
                    let shape = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor::filled(shape.0, shape.1, upstream));
                }
                Op::SoftmaxXent { logits, targets, weights } => {
                    let upstream = g.get(0, 0);
                    let lv = self.value(*logits);
                    let mut dl = vec![0.0; lv.len()];
                    for (row, (&target, &weight)) in targets.iter().zip(weights.iter()).enumerate() {
                        if weight == 0.0 {
                            continue;
                        }
                        let probs = row_softmax(lv.row(row));
                        let dst = &mut dl[row * lv.cols()..(row + 1) * lv.cols()];
                        for (j, (d, p)) in dst.iter_mut().zip(probs).enumerate() {
                            let indicator = if j == target { 1.0 } else { 0.0 };
                            *d = upstream * weight * (p - indicator);
                        }
                    }
                    accumulate(&mut grads, *logits, Tensor::from_raw(lv.rows(), lv.cols(), dl));
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { entries: grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn scatter_add(
    grads: &mut [Option<Tensor>],
    table: NodeId,
    table_shape: (usize, usize),
    indices: &[usize],
    g: &Tensor,
) {
    let slot = &mut grads[table.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(table_shape.0, table_shape.1));
    }
    let acc = slot.as_mut().expect("just initialized");
    let cols = table_shape.1;
    let data = acc.data_mut();
    for (row, &idx) in indices.iter().enumerate() {
        let dst = &mut data[idx * cols..(idx + 1) * cols];
        for (d, &s) in dst.iter_mut().zip(g.row(row)) {
            *d += s;
        }
    }
}

pub(crate) fn row_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// -log softmax(logits)[target], via max-subtracted log-sum-exp.
pub(crate) fn row_xent(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - logits[target]
}

/// Gradient slots produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    entries: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// The gradient for `id`; zeros when the loss never reached it.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.entries[id.0] {
            Some(t) => t.clone(),
            None => {
                let (rows, cols) = self.shapes[id.0];
                Tensor::zeros(rows, cols)
            }
        }
    }

    pub fn is_reached(&self, id: NodeId) -> bool {
        self.entries[id.0].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x), Tensor::filled(2, 3, 1.0));
    }

    #[test]
    fn backward_of_sum_of_squares_is_two_x() {
        let mut tape = Tape::new();
        let xv = Tensor::new(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x), xv.scale(2.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NotScalar { rows: 2, cols: 2 }));
    }

    #[test]
    fn unreachable_nodes_have_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::scalar(5.0));
        let _dangling = tape.sigmoid(unused);
        let loss = tape.mul(x, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(!grads.is_reached(unused));
        assert_eq!(grads.get(unused), Tensor::scalar(0.0));
        assert_eq!(grads.get(x), Tensor::scalar(4.0));
    }

    /// Central finite differences on a composite gate expression built from
    /// the same primitives a recurrent cell uses.
    #[test]
    fn composite_gate_expression_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = 2;
        let (input_dim, hidden) = (3, 4);
        let x = random_tensor(&mut rng, batch, input_dim);
        let h = random_tensor(&mut rng, batch, hidden);
        let params: Vec<Tensor> = vec![
            random_tensor(&mut rng, input_dim, hidden), // w_z
            random_tensor(&mut rng, hidden, hidden),    // u_z
            random_tensor(&mut rng, 1, hidden),         // b_z
            random_tensor(&mut rng, input_dim, hidden), // w_n
            random_tensor(&mut rng, hidden, hidden),    // u_n
        ];

        let build = |tape: &mut Tape, p: &[NodeId]| -> NodeId {
            let x = tape.leaf(x.clone());
            let h = tape.leaf(h.clone());
            let wx = tape.matmul(x, p[0]).unwrap();
            let uh = tape.matmul(h, p[1]).unwrap();
            let pre = tape.add(wx, uh).unwrap();
            let pre = tape.add_row_broadcast(pre, p[2]).unwrap();
            let z = tape.sigmoid(pre);
            let wn = tape.matmul(x, p[3]).unwrap();
            let un = tape.matmul(h, p[4]).unwrap();
            let npre = tape.add(wn, un).unwrap();
            let n = tape.tanh(npre);
            let zn = tape.one_minus(z);
            let keep = tape.mul(z, h).unwrap();
            let update = tape.mul(zn, n).unwrap();
            let out = tape.add(keep, update).unwrap();
            let sq = tape.mul(out, out).unwrap();
            tape.sum(sq)
        };

        let eval = |probe: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
            let loss = build(&mut tape, &ids);
            tape.value(loss).get(0, 0)
        };

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();

        let eps = 1e-5;
        let mut worst = 0.0f64;
        for (pi, param) in params.iter().enumerate() {
            let analytic = grads.get(ids[pi]);
            for r in 0..param.rows() {
                for c in 0..param.cols() {
                    let mut plus = params.clone();
                    plus[pi] = param.with_entry(r, c, param.get(r, c) + eps);
                    let mut minus = params.clone();
                    minus[pi] = param.with_entry(r, c, param.get(r, c) - eps);
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                    let a = analytic.get(r, c);
                    let scale = a.abs().max(numeric.abs()).max(1e-8);
                    worst = worst.max((a - numeric).abs() / scale);
                }
            }
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }

    #[test]
    fn gather_scatter_gradient_counts_repeats() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let picked = tape.gather(table, vec![1, 1, 0]).unwrap();
        let loss = tape.sum(picked);
        let grads = tape.backward(loss).unwrap();
        // Row 1 picked twice, row 0 once, row 2 never.
        assert_eq!(grads.get(table).data(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn gather_out_of_bounds_is_an_error() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::zeros(3, 2));
        let err = tape.gather(table, vec![3]).unwrap_err();
        assert!(matches!(err, TensorError::IndexOutOfBounds { index: 3, rows: 3, .. }));
    }

    #[test]
    fn concat_cols_splits_gradient_back() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let weights = tape.leaf(Tensor::new(2, 3, vec![1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0]).unwrap());
        let weighted = tape.mul(cat, weights).unwrap();
        let loss = tape.sum(weighted);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 1000.0]);
        assert_eq!(grads.get(b).data(), &[10.0, 100.0, 10000.0, 100000.0]);
    }

    #[test]
    fn softmax_xent_gradient_is_probs_minus_onehot() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(1, 4));
        let loss = tape.softmax_xent(logits, vec![2], vec![1.0]).unwrap();
        assert!((tape.value(loss).get(0, 0) - 4.0f64.ln()).abs() < 1e-12);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(logits);
        for j in 0..4 {
            let want = if j == 2 { 0.25 - 1.0 } else { 0.25 };
            assert!((g.get(0, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_over_sublosses() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let xv = random_tensor(&mut rng, 3, 3);
        let wv = random_tensor(&mut rng, 3, 3);

        let build_parts = |tape: &mut Tape| -> (NodeId, NodeId, NodeId) {
            let x = tape.leaf(xv.clone());
            let w = tape.leaf(wv.clone());
            let prod = tape.matmul(x, w).unwrap();
            let act = tape.tanh(prod);
            let loss_a = tape.sum(act);
            let sq = tape.mul(x, x).unwrap();
            let loss_b = tape.sum(sq);
            (x, loss_a, loss_b)
        };

        let mut combined = Tape::new();
        let (x, la, lb) = build_parts(&mut combined);
        let total = combined.add(la, lb).unwrap();
        let combined_grad = combined.backward(total).unwrap().get(x);

        let mut separate = Tape::new();
        let (x2, la2, lb2) = build_parts(&mut separate);
        let ga = separate.backward(la2).unwrap().get(x2);
        let gb = separate.backward(lb2).unwrap().get(x2);
        let summed = ga.add(&gb).unwrap();

        for (c, s) in combined_grad.data().iter().zip(summed.data()) {
            assert!((c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_seeded_passes_produce_bit_identical_gradients() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut tape = Tape::new();
            let x = tape.leaf(random_tensor(&mut rng, 4, 5));
            let w = tape.leaf(random_tensor(&mut rng, 5, 3));
            let h = tape.matmul(x, w).unwrap();
            let s = tape.sigmoid(h);
            let loss = tape.sum(s);
            let grads = tape.backward(loss).unwrap();
            (grads.get(w), grads.get(x))
        };
        let (w1, x1) = run();
        let (w2, x2) = run();
        assert!(w1.data().iter().zip(w2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(x1.data().iter().zip(x2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
