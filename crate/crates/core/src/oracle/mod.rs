//! The prefix-equivalence oracle.
//!
//! The engine trains many-to-many: one scan per session, a loss at every
//! step. The claim that justifies it is that this equals training a
//! many-to-one model on *every leading prefix* of every session. This
//! module makes that claim checkable: an explicit many-to-one reference
//! path re-encodes each prefix from a zero state through its own driver
//! loop (cell ops and embedding reads are shared — pure functions — but
//! the scan itself is separate code, so an engine scan bug cannot
//! self-certify), and the outputs, losses, gradients, and sequential op
//! counts are compared.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::{Batch, FeatureFrame, NUM_FEATURES};
use crate::model::{
    bind, decode, embed_step, forward_many_to_many_counted, gru_step, lstm_step, BoundParams,
    CellKind, Mode, ModelError, ModelParams, OpCounter,
};
use crate::objective::{sequence_loss, softmax, LossConfig, ObjectiveError};
use crate::tensor::{NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// All leading prefixes of a frame: lengths 1..=T, targets and mask sliced
/// identically. This is the augmented dataset of the equivalence claim.
pub fn enumerate_prefixes(frame: &FeatureFrame) -> Vec<FeatureFrame> {
    (1..=frame.steps).map(|t| frame.prefix(t)).collect()
}

/// One many-to-one reference pass over a prefix.
#[derive(Debug, Clone)]
pub struct OracleForward {
    /// Softmax over cities after the final step.
    pub pmf: Vec<f64>,
    /// Cross-entropy at the final step, when that step is unmasked.
    pub loss: Option<f64>,
}

/// Encodes the whole prefix from a zero state and decodes only the last
/// hidden state, counting every cell evaluation.
pub fn many_to_one_forward(
    prefix: &FeatureFrame,
    params: &ModelParams,
    counter: &mut OpCounter,
) -> Result<OracleForward, OracleError> {
    let batch = Batch::from_frames(std::slice::from_ref(prefix));
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let final_h = oracle_scan(&mut tape, params, &bound, &batch, counter)?;
    let logits = decode(&mut tape, params, &bound, final_h)?;
    let row = tape.value(logits).row(0).to_vec();
    let pmf = softmax(&row)?;
    let last = prefix.steps - 1;
    let loss = prefix.mask[last].then(|| {
        let target = prefix.targets[last];
        -(pmf[target].ln())
    });
    Ok(OracleForward { pmf, loss })
}

/// The reference scan: plain loop over steps and layers, no dropout, no
/// per-step state collection. Deliberately not `encode_session`.
fn oracle_scan(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    batch: &Batch,
    counter: &mut OpCounter,
) -> Result<NodeId, OracleError> {
    let config = params.config();
    let hidden = config.hidden_dim;
    let rows = batch.size();
    let mut h: Vec<NodeId> =
        (0..config.layers).map(|_| tape.leaf(Tensor::zeros(rows, hidden))).collect();
    let mut c: Vec<NodeId> = match config.cell {
        CellKind::Lstm => {
            (0..config.layers).map(|_| tape.leaf(Tensor::zeros(rows, hidden))).collect()
        }
        CellKind::Gru => Vec::new(),
    };
    for t in 0..batch.max_steps {
        let mut signal = embed_step(tape, params, bound, batch, t)?;
        for layer in 0..config.layers {
            let gates = bound.gates(params, layer);
            match config.cell {
                CellKind::Gru => {
                    h[layer] = gru_step(tape, h[layer], signal, &gates, None)?;
                }
                CellKind::Lstm => {
                    let (h_next, c_next) =
                        lstm_step(tape, h[layer], c[layer], signal, &gates, None)?;
                    h[layer] = h_next;
                    c[layer] = c_next;
                }
            }
            counter.record(layer);
            signal = h[layer];
        }
    }
    Ok(h[config.layers - 1])
}

#[derive(Debug, Clone)]
pub struct PrefixRow {
    /// Prefix length (1-based).
    pub t: usize,
    /// Max absolute pmf deviation between oracle and engine at this t.
    pub max_dev: f64,
    /// City index realizing the max deviation, with both values.
    pub worst_city: usize,
    pub oracle_value: f64,
    pub engine_value: f64,
    /// Total cell steps the oracle spent on this prefix (t per layer).
    pub oracle_ops: u64,
    /// Total cell steps of the single engine pass (T per layer, constant).
    pub engine_ops: u64,
}

#[derive(Debug, Clone)]
pub struct PrefixOracleReport {
    pub session_steps: usize,
    pub tolerance: f64,
    pub rows: Vec<PrefixRow>,
    /// Engine flat-mean unweighted loss over the session, when any step
    /// is unmasked.
    pub engine_loss: Option<f64>,
    /// Mean of oracle per-prefix final-step losses over the same steps.
    pub oracle_mean_loss: Option<f64>,
    pub loss_dev: Option<f64>,
    /// Should equal T(T+1)/2 in every layer.
    pub oracle_ops_per_layer: Vec<u64>,
    /// Should equal T in every layer.
    pub engine_ops_per_layer: Vec<u64>,
    pub pass: bool,
    /// Human-readable detail for every violated comparison.
    pub failures: Vec<String>,
}

impl PrefixOracleReport {
    /// `T,prefix_t,max_dev,oracle_ops,engine_ops` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,prefix_t,max_dev,oracle_ops,engine_ops\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{},{}\n",
                self.session_steps, row.t, row.max_dev, row.oracle_ops, row.engine_ops
            ));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        let worst = self.rows.iter().map(|r| r.max_dev).fold(0.0, f64::max);
        if self.pass {
            format!(
                "PASS T={} max_dev={:.3e} loss_dev={} tolerance={:.1e}",
                self.session_steps,
                worst,
                self.loss_dev.map_or("n/a".to_string(), |d| format!("{d:.3e}")),
                self.tolerance
            )
        } else {
            format!(
                "FAIL T={} ({} violations, worst {:.3e}, tolerance {:.1e})",
                self.session_steps,
                self.failures.len(),
                worst,
                self.tolerance
            )
        }
    }
}

/// Compares the engine's per-step pmfs from one many-to-many pass against
/// a fresh oracle pass over every prefix, plus the flat-mean loss against
/// the mean of per-prefix losses. Both paths read the same parameters.
pub fn check_equivalence(
    frame: &FeatureFrame,
    params: &ModelParams,
    tolerance: f64,
) -> Result<PrefixOracleReport, OracleError> {
    check_equivalence_against(frame, params, params, tolerance)
}

/// The same check with separate engine/oracle parameters. The split
/// exists for negative controls: corrupting one weight in the oracle copy
/// must fail every prefix, proving the comparison has teeth.
pub fn check_equivalence_against(
    frame: &FeatureFrame,
    engine_params: &ModelParams,
    oracle_params: &ModelParams,
    tolerance: f64,
) -> Result<PrefixOracleReport, OracleError> {
    if frame.steps == 0 {
        return Err(OracleError::Contract("frame has no steps".into()));
    }
    // Zero is allowed and can never pass (deviations must be strictly
    // below the tolerance): it is the negative control demonstrating that
    // accumulation-order noise is real and a tolerance is needed.
    if !(tolerance >= 0.0) {
        return Err(OracleError::Contract(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }

    // Engine: one batched many-to-many pass, dropout off.
    let batch = Batch::from_frames(std::slice::from_ref(frame));
    let mut tape = Tape::new();
    let mut engine_counter = OpCounter::new();
    let out = forward_many_to_many_counted(
        &mut tape,
        engine_params,
        &batch,
        Mode::Eval,
        0,
        &mut engine_counter,
    )?;
    let engine_pmfs: Vec<Vec<f64>> = out
        .step_logits
        .iter()
        .map(|&id| softmax(tape.value(id).row(0)))
        .collect::<Result<_, _>>()?;
    let logit_values: Vec<Tensor> =
        out.step_logits.iter().map(|&id| tape.value(id).clone()).collect();
    let engine_loss = match sequence_loss(&logit_values, &batch, &LossConfig::unweighted()) {
        Ok(loss) => Some(loss),
        Err(ObjectiveError::NoContribution) => None,
        Err(e) => return Err(e.into()),
    };
    let engine_total_ops = engine_counter.total();

    // Oracle: a fresh scan per prefix.
    let mut rows = Vec::with_capacity(frame.steps);
    let mut failures = Vec::new();
    let mut oracle_counter = OpCounter::new();
    let mut oracle_losses = Vec::new();
    for (i, prefix) in enumerate_prefixes(frame).into_iter().enumerate() {
        let t = i + 1;
        let mut prefix_counter = OpCounter::new();
        let oracle = many_to_one_forward(&prefix, oracle_params, &mut prefix_counter)?;
        for layer in 0..prefix_counter.per_layer().len() {
            for _ in 0..prefix_counter.per_layer()[layer] {
                oracle_counter.record(layer);
            }
        }
        if let Some(loss) = oracle.loss {
            oracle_losses.push(loss);
        }

        let engine_pmf = &engine_pmfs[t - 1];
        if oracle.pmf.len() != engine_pmf.len() {
            return Err(OracleError::Contract(format!(
                "pmf widths disagree at t={t}: oracle {}, engine {}",
                oracle.pmf.len(),
                engine_pmf.len()
            )));
        }
        let (worst_city, max_dev) = oracle
            .pmf
            .iter()
            .zip(engine_pmf)
            .map(|(o, e)| (o - e).abs())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("pmfs are nonempty");
        if max_dev >= tolerance {
            failures.push(format!(
                "t={t} city={worst_city}: oracle {:.17e} vs engine {:.17e} (|Δ|={max_dev:.3e})",
                oracle.pmf[worst_city],
                engine_pmf[worst_city]
            ));
        }
        rows.push(PrefixRow {
            t,
            max_dev,
            worst_city,
            oracle_value: oracle.pmf[worst_city],
            engine_value: engine_pmf[worst_city],
            oracle_ops: prefix_counter.total(),
            engine_ops: engine_total_ops,
        });
    }

    let oracle_mean_loss = if oracle_losses.is_empty() {
        None
    } else {
        Some(oracle_losses.iter().sum::<f64>() / oracle_losses.len() as f64)
    };
    let loss_dev = match (engine_loss, oracle_mean_loss) {
        (Some(e), Some(o)) => Some((e - o).abs()),
        (None, None) => None,
        (e, o) => {
            failures.push(format!(
                "loss presence disagrees: engine {e:?}, oracle {o:?}"
            ));
            None
        }
    };
    if let Some(dev) = loss_dev {
        if dev >= tolerance {
            failures.push(format!(
                "loss: engine {:.17e} vs oracle mean {:.17e} (|Δ|={dev:.3e})",
                engine_loss.unwrap(),
                oracle_mean_loss.unwrap()
            ));
        }
    }

    Ok(PrefixOracleReport {
        session_steps: frame.steps,
        tolerance,
        pass: failures.is_empty(),
        rows,
        engine_loss,
        oracle_mean_loss,
        loss_dev,
        oracle_ops_per_layer: oracle_counter.per_layer().to_vec(),
        engine_ops_per_layer: engine_counter.per_layer().to_vec(),
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub tolerance: f64,
    /// Max absolute deviation between the engine loss gradient and the
    /// mean of per-prefix oracle loss gradients, over all parameters.
    pub max_dev: f64,
    pub worst_tensor: String,
    pub pass: bool,
}

/// Gradient half of the equivalence claim: d(flat-mean engine loss)/dθ
/// must equal the mean of the per-prefix loss gradients. "Identical to
/// training" covers the training signal, not just the outputs.
pub fn check_gradient_equivalence(
    frame: &FeatureFrame,
    params: &ModelParams,
    tolerance: f64,
) -> Result<GradientReport, OracleError> {
    if frame.steps == 0 {
        return Err(OracleError::Contract("frame has no steps".into()));
    }
    let n_slots = params.tensors().len();

    // Engine gradients from the single many-to-many pass.
    let batch = Batch::from_frames(std::slice::from_ref(frame));
    let mut tape = Tape::new();
    let out = forward_many_to_many_counted(
        &mut tape,
        params,
        &batch,
        Mode::Eval,
        0,
        &mut OpCounter::new(),
    )?;
    let loss = crate::objective::sequence_loss_node(
        &mut tape,
        &out.step_logits,
        &batch,
        &LossConfig::unweighted(),
    )?;
    let engine_grads = tape.backward(loss)?;
    let engine: Vec<Tensor> =
        out.bound.nodes.iter().map(|&node| engine_grads.get(node)).collect();

    // Oracle gradients: one backward per valid prefix, then the mean.
    let valid: Vec<FeatureFrame> = enumerate_prefixes(frame)
        .into_iter()
        .filter(|p| p.mask[p.steps - 1])
        .collect();
    if valid.is_empty() {
        return Err(OracleError::Contract(
            "every prefix is masked; no loss to differentiate".into(),
        ));
    }
    let mut mean: Vec<Tensor> =
        params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    let scale = 1.0 / valid.len() as f64;
    for prefix in &valid {
        let prefix_batch = Batch::from_frames(std::slice::from_ref(prefix));
        let mut prefix_tape = Tape::new();
        let bound = bind(&mut prefix_tape, params);
        let final_h =
            oracle_scan(&mut prefix_tape, params, &bound, &prefix_batch, &mut OpCounter::new())?;
        let logits = decode(&mut prefix_tape, params, &bound, final_h)?;
        let target = prefix.targets[prefix.steps - 1];
        let prefix_loss = prefix_tape.softmax_xent(logits, vec![target], vec![1.0])?;
        let grads = prefix_tape.backward(prefix_loss)?;
        for (slot, &node) in bound.nodes.iter().enumerate() {
            mean[slot] = mean[slot].add(&grads.get(node).scale(scale))?;
        }
    }

    let mut max_dev = 0.0;
    let mut worst_tensor = String::new();
    for slot in 0..n_slots {
        for (e, o) in engine[slot].data().iter().zip(mean[slot].data()) {
            let dev = (e - o).abs();
            if dev > max_dev {
                max_dev = dev;
                worst_tensor = params.names()[slot].clone();
            }
        }
    }
    Ok(GradientReport { tolerance, max_dev, pass: max_dev < tolerance, worst_tensor })
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub steps: usize,
    /// T(T+1)/2, measured.
    pub oracle_ops_per_layer: u64,
    /// T, measured.
    pub engine_ops_per_layer: u64,
    pub oracle_time: Duration,
    pub engine_time: Duration,
}

impl BenchRow {
    /// Exact sequential-op ratio, (T+1)/2.
    pub fn op_ratio(&self) -> f64 {
        self.oracle_ops_per_layer as f64 / self.engine_ops_per_layer as f64
    }
}

/// Measures both paths over synthetic frames of the given lengths: op
/// counts from one counted run (they are deterministic), wall times as
/// medians over `repetitions`.
pub fn benchmark_complexity(
    lengths: &[usize],
    params: &ModelParams,
    repetitions: usize,
) -> Result<Vec<BenchRow>, OracleError> {
    if repetitions == 0 {
        return Err(OracleError::Contract("repetitions must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(lengths.len());
    for &steps in lengths {
        if steps == 0 {
            return Err(OracleError::Contract("benchmark lengths must be positive".into()));
        }
        let frame = bench_frame(steps);
        let batch = Batch::from_frames(std::slice::from_ref(&frame));

        let mut engine_counter = OpCounter::new();
        let mut scratch = OpCounter::new();
        let mut engine_times = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let started = Instant::now();
            let mut tape = Tape::new();
            let counter = if rep == 0 { &mut engine_counter } else { &mut scratch };
            forward_many_to_many_counted(&mut tape, params, &batch, Mode::Eval, 0, counter)?;
            engine_times.push(started.elapsed());
        }

        let mut oracle_counter = OpCounter::new();
        let mut oracle_times = Vec::with_capacity(repetitions);
        let prefixes = enumerate_prefixes(&frame);
        for rep in 0..repetitions {
            let started = Instant::now();
            for prefix in &prefixes {
                let counter = if rep == 0 { &mut oracle_counter } else { &mut scratch };
                many_to_one_forward(prefix, params, counter)?;
            }
            oracle_times.push(started.elapsed());
        }

        let per_layer = |counter: &OpCounter| -> Result<u64, OracleError> {
            let counts = counter.per_layer();
            if counts.is_empty() || counts.iter().any(|&c| c != counts[0]) {
                return Err(OracleError::Contract(format!(
                    "uneven per-layer counts {counts:?}"
                )));
            }
            Ok(counts[0])
        };
        rows.push(BenchRow {
            steps,
            oracle_ops_per_layer: per_layer(&oracle_counter)?,
            engine_ops_per_layer: per_layer(&engine_counter)?,
            oracle_time: median(&mut oracle_times),
            engine_time: median(&mut engine_times),
        });
    }
    Ok(rows)
}

/// All-UNKNOWN features are valid against any vocabulary; timing does not
/// care what the indices are.
fn bench_frame(steps: usize) -> FeatureFrame {
    FeatureFrame {
        utrip_id: format!("bench-{steps}"),
        steps,
        features: vec![[0; NUM_FEATURES]; steps],
        targets: vec![0; steps],
        mask: vec![true; steps],
    }
}

fn median(times: &mut [Duration]) -> Duration {
    times.sort_unstable();
    times[times.len() / 2]
}
