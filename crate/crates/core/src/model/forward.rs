//! Tape-level forward pass: embedding lookup, dropout, the recurrent scan,
//! and decoding. One call builds the whole graph for a batch; gradients
//! come from `Tape::backward` on whatever loss the caller attaches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, NUM_FEATURES};
use crate::tensor::{NodeId, Tape, Tensor};

use super::{CellKind, ModelError, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles for every parameter tensor, in flat slot order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub nodes: Vec<NodeId>,
}

/// Pushes every parameter onto the tape as a leaf. Cheap: tensor buffers
/// are shared, not copied.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    BoundParams { nodes: params.tensors().iter().map(|t| tape.leaf(t.clone())).collect() }
}

impl BoundParams {
    pub fn embedding(&self, params: &ModelParams, column: usize) -> NodeId {
        self.nodes[params.embedding_slot(column)]
    }

    pub fn gates(&self, params: &ModelParams, layer: usize) -> Vec<GateNodes> {
        params
            .layer_gates(layer)
            .iter()
            .map(|s| GateNodes { w: self.nodes[s.w], u: self.nodes[s.u], b: self.nodes[s.b] })
            .collect()
    }

    pub fn decoder(&self, params: &ModelParams) -> Option<(NodeId, NodeId)> {
        params.decoder_slots().map(|(w, b)| (self.nodes[w], self.nodes[b]))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateNodes {
    pub w: NodeId,
    pub u: NodeId,
    pub b: NodeId,
}

/// Counts recurrent cell evaluations per layer. The complexity claims are
/// measured with this, never inferred.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    per_layer: Vec<u64>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, layer: usize) {
        if self.per_layer.len() <= layer {
            self.per_layer.resize(layer + 1, 0);
        }
        self.per_layer[layer] += 1;
    }

    pub fn per_layer(&self) -> &[u64] {
        &self.per_layer
    }

    pub fn total(&self) -> u64 {
        self.per_layer.iter().sum()
    }

    pub fn reset(&mut self) {
        self.per_layer.clear();
    }
}

/// Inverted dropout: entries survive with probability 1−p and are scaled
/// by 1/(1−p), so the expectation is the identity. Eval mode and p = 0
/// return the input node untouched.
pub fn apply_input_dropout(
    tape: &mut Tape,
    x: NodeId,
    p: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let shape = tape.value(x).shape();
    match dropout_mask(tape, shape, p, mode, rng) {
        Some(mask) => tape.mul(x, mask).expect("mask shape matches by construction"),
        None => x,
    }
}

fn dropout_mask(
    tape: &mut Tape,
    shape: (usize, usize),
    p: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Option<NodeId> {
    if mode == Mode::Eval || p == 0.0 {
        return None;
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(shape.0, shape.1, |_, _| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep_scale
        }
    });
    Some(tape.leaf(mask))
}

/// One GRU step over a batch:
/// z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
/// ñ = tanh(xW_n + (r∘h)U_n + b_n), h' = z∘h + (1−z)∘ñ.
/// The recurrent dropout mask, when present, applies to the h that feeds
/// the U products; the carry path z∘h uses the raw state.
pub fn gru_step(
    tape: &mut Tape,
    h_prev: NodeId,
    x: NodeId,
    gates: &[GateNodes],
    rec_mask: Option<NodeId>,
) -> Result<NodeId, ModelError> {
    assert_eq!(gates.len(), 3, "GRU wants gates [z, r, n]");
    let (gz, gr, gn) = (gates[0], gates[1], gates[2]);
    let h_gate = match rec_mask {
        Some(mask) => tape.mul(h_prev, mask)?,
        None => h_prev,
    };
    let z_pre = gate_preactivation(tape, x, h_gate, gz)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate_preactivation(tape, x, h_gate, gr)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_gate)?;
    let n_pre = gate_preactivation(tape, x, rh, gn)?;
    let n = tape.tanh(n_pre);
    let keep = tape.mul(z, h_prev)?;
    let z_comp = tape.one_minus(z);
    let update = tape.mul(z_comp, n)?;
    Ok(tape.add(keep, update)?)
}

/// One LSTM step over a batch: forget/input/output gates and candidate,
/// c' = f∘c + i∘c̃, h' = o∘tanh(c'). Same dropout placement as the GRU.
pub fn lstm_step(
    tape: &mut Tape,
    h_prev: NodeId,
    c_prev: NodeId,
    x: NodeId,
    gates: &[GateNodes],
    rec_mask: Option<NodeId>,
) -> Result<(NodeId, NodeId), ModelError> {
    assert_eq!(gates.len(), 4, "LSTM wants gates [f, i, o, c]");
    let (gf, gi, go, gc) = (gates[0], gates[1], gates[2], gates[3]);
    let h_gate = match rec_mask {
        Some(mask) => tape.mul(h_prev, mask)?,
        None => h_prev,
    };
    let f_pre = gate_preactivation(tape, x, h_gate, gf)?;
    let f = tape.sigmoid(f_pre);
    let i_pre = gate_preactivation(tape, x, h_gate, gi)?;
    let i = tape.sigmoid(i_pre);
    let o_pre = gate_preactivation(tape, x, h_gate, go)?;
    let o = tape.sigmoid(o_pre);
    let cand_pre = gate_preactivation(tape, x, h_gate, gc)?;
    let cand = tape.tanh(cand_pre);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, cand)?;
    let c_next = tape.add(keep, write)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c_next))
}

/// xW + hU + b (b broadcast over rows).
fn gate_preactivation(
    tape: &mut Tape,
    x: NodeId,
    h: NodeId,
    gate: GateNodes,
) -> Result<NodeId, ModelError> {
    let xw = tape.matmul(x, gate.w)?;
    let hu = tape.matmul(h, gate.u)?;
    let sum = tape.add(xw, hu)?;
    Ok(tape.add_row_broadcast(sum, gate.b)?)
}

/// Looks up all 14 feature embeddings at step `t` and concatenates them in
/// column order into the (batch × input_dim) step input.
pub fn embed_step(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &Batch,
    t: usize,
) -> Result<NodeId, ModelError> {
    let mut parts = Vec::with_capacity(NUM_FEATURES);
    for f in 0..NUM_FEATURES {
        let table = bound.embedding(params, f);
        parts.push(tape.gather(table, batch.feature_column(t, f).to_vec())?);
    }
    Ok(tape.concat_cols(&parts)?)
}

/// Left-to-right scan over the batch: returns hidden states `[layer][step]`.
/// Exactly `max_steps` cell evaluations per layer, whatever the batch
/// width — this is the linear-time path. Recurrent dropout masks are
/// sampled once per layer (variational, one row per session); input
/// dropout is resampled every step.
pub fn encode_session(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &Batch,
    mode: Mode,
    seed: u64,
    counter: &mut OpCounter,
) -> Result<Vec<Vec<NodeId>>, ModelError> {
    let config = params.config();
    let batch_rows = batch.size();
    let hidden = config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let rec_masks: Vec<Option<NodeId>> = (0..config.layers)
        .map(|_| dropout_mask(tape, (batch_rows, hidden), config.recurrent_dropout, mode, &mut rng))
        .collect();

    let mut h: Vec<NodeId> =
        (0..config.layers).map(|_| tape.leaf(Tensor::zeros(batch_rows, hidden))).collect();
    let mut c: Vec<NodeId> = match config.cell {
        CellKind::Lstm => (0..config.layers).map(|_| tape.leaf(Tensor::zeros(batch_rows, hidden))).collect(),
        CellKind::Gru => Vec::new(),
    };

    let mut states: Vec<Vec<NodeId>> = vec![Vec::with_capacity(batch.max_steps); config.layers];
    for t in 0..batch.max_steps {
        let embedded = embed_step(tape, params, bound, batch, t)?;
        let mut input = apply_input_dropout(tape, embedded, config.input_dropout, mode, &mut rng);
        for layer in 0..config.layers {
            let gates = bound.gates(params, layer);
            match config.cell {
                CellKind::Gru => {
                    h[layer] = gru_step(tape, h[layer], input, &gates, rec_masks[layer])?;
                }
                CellKind::Lstm => {
                    let (h_next, c_next) =
                        lstm_step(tape, h[layer], c[layer], input, &gates, rec_masks[layer])?;
                    h[layer] = h_next;
                    c[layer] = c_next;
                }
            }
            counter.record(layer);
            states[layer].push(h[layer]);
            input = h[layer];
        }
    }
    Ok(states)
}

/// Hidden state → logits over cities. Tied mode multiplies by the
/// transposed city embedding table (no bias); feedforward mode is an
/// affine map.
pub fn decode(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    h: NodeId,
) -> Result<NodeId, ModelError> {
    match bound.decoder(params) {
        Some((w, b)) => {
            let hw = tape.matmul(h, w)?;
            Ok(tape.add_row_broadcast(hw, b)?)
        }
        None => Ok(tape.matmul_transpose_b(h, bound.embedding(params, 0))?),
    }
}

#[derive(Debug)]
pub struct ForwardOutput {
    pub bound: BoundParams,
    /// One (batch × n_cities) logits node per step, 0..max_steps.
    pub step_logits: Vec<NodeId>,
}

/// Full forward pass: encode, then decode the top layer at every step.
pub fn forward_many_to_many(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &Batch,
    mode: Mode,
    seed: u64,
) -> Result<ForwardOutput, ModelError> {
    let mut scratch = OpCounter::new();
    forward_many_to_many_counted(tape, params, batch, mode, seed, &mut scratch)
}

pub fn forward_many_to_many_counted(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &Batch,
    mode: Mode,
    seed: u64,
    counter: &mut OpCounter,
) -> Result<ForwardOutput, ModelError> {
    let bound = bind(tape, params);
    let states = encode_session(tape, params, &bound, batch, mode, seed, counter)?;
    let top = states.last().expect("layers ≥ 1 enforced by config");
    let mut step_logits = Vec::with_capacity(top.len());
    for &h in top {
        step_logits.push(decode(tape, params, &bound, h)?);
    }
    Ok(ForwardOutput { bound, step_logits })
}
