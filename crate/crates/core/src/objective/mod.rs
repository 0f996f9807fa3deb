//! Loss and metrics: masked per-step softmax cross-entropy with the
//! reverse-cumulative-frequency length weighting, plus top-k extraction
//! and recall@k.
//!
//! The sequence loss is a *flat* average over every valid `(session, step)`
//! position in a batch — not a mean of per-session means. That choice is
//! what makes the training signal identical to running the many-to-one
//! reference over every prefix of every session, and it is exactly the
//! short-session dominance the length weighting then corrects.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::Batch;
use crate::tensor::{row_softmax, row_xent, NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("every position in the batch is masked or zero-weighted")]
    NoContribution,
    #[error("recall needs at least one ranking result")]
    EmptyResults,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How per-step weights are derived from the step-count histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRule {
    /// w(t) = N_t / C(t): every length contributes as much in aggregate as
    /// it does in the non-augmented dataset.
    FrequencyOverCumulative,
    /// w(t) = 1 / C(t): the literal reading, kept behind this switch.
    InverseCumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Unweighted,
    Weighted,
}

/// Weight lookup used by the loss. Step indices are 1-based prefix
/// lengths: a prediction made after seeing `t` bookings has index `t`.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub mode: WeightMode,
    length_weights: BTreeMap<usize, f64>,
}

impl LossConfig {
    pub fn unweighted() -> Self {
        Self { mode: WeightMode::Unweighted, length_weights: BTreeMap::new() }
    }

    pub fn weighted(length_weights: BTreeMap<usize, f64>) -> Result<Self, ObjectiveError> {
        for (&t, &w) in &length_weights {
            if !w.is_finite() || w < 0.0 {
                return Err(ObjectiveError::Contract(format!(
                    "weight for step {t} is {w}; weights must be finite and nonnegative"
                )));
            }
        }
        Ok(Self { mode: WeightMode::Weighted, length_weights })
    }

    /// Effective weight for a prediction at 1-based step `t`. Unweighted
    /// mode is 1 everywhere; weighted mode keeps absent lengths at zero —
    /// deliberately no epsilon floor, so a length never seen in training
    /// contributes nothing.
    pub fn weight_at(&self, t: usize) -> f64 {
        match self.mode {
            WeightMode::Unweighted => 1.0,
            WeightMode::Weighted => self.length_weights.get(&t).copied().unwrap_or(0.0),
        }
    }
}

/// Step-length weights with the exact integer ratios they came from, so
/// the conservation property can be checked without floating-point
/// division noise.
#[derive(Debug, Clone)]
pub struct LengthWeights {
    cumulative: BTreeMap<usize, u64>,
    /// Pre-rescale weight as the exact ratio (numerator, C(t)).
    ratios: BTreeMap<usize, (u64, u64)>,
    raw: BTreeMap<usize, f64>,
    rescaled: BTreeMap<usize, f64>,
    rescale_factor: f64,
}

impl LengthWeights {
    /// C(t) = Σ_{l ≥ t} N_l for every t from 1 to the longest step count.
    pub fn cumulative(&self) -> &BTreeMap<usize, u64> {
        &self.cumulative
    }

    /// Pre-rescale weights: N_t/C(t) or 1/C(t) depending on the rule.
    pub fn raw(&self) -> &BTreeMap<usize, f64> {
        &self.raw
    }

    /// Weights after rescaling so Σ_t C(t)·w(t) = Σ_t C(t).
    pub fn rescaled(&self) -> &BTreeMap<usize, f64> {
        &self.rescaled
    }

    /// The exact pre-rescale ratio for step `t`.
    pub fn ratio(&self, t: usize) -> Option<(u64, u64)> {
        self.ratios.get(&t).copied()
    }

    pub fn rescale_factor(&self) -> f64 {
        self.rescale_factor
    }

    /// Conservation, checked in integer space: the aggregate pre-rescale
    /// weight of all C(t) prefixes of length t is C(t)·N_t/C(t) = N_t —
    /// exactly the length's share of the non-augmented dataset.
    pub fn conserves_per_length_mass(&self, histogram: &BTreeMap<usize, u64>) -> bool {
        self.ratios.iter().all(|(&t, &(numer, denom))| {
            denom == self.cumulative.get(&t).copied().unwrap_or(0)
                && numer == histogram.get(&t).copied().unwrap_or(0)
        })
    }
}

/// Derives per-step weights from a histogram of session step counts
/// (`N_t` = number of sessions with exactly `t` predicted steps).
///
/// An empty histogram yields empty weights.
pub fn compute_length_weights(
    histogram: &BTreeMap<usize, u64>,
    rule: WeightRule,
) -> LengthWeights {
    let max_t = histogram
        .iter()
        .filter(|&(_, &n)| n > 0)
        .map(|(&t, _)| t)
        .max()
        .unwrap_or(0);

    let mut cumulative = BTreeMap::new();
    let mut suffix = 0u64;
    let mut by_t: Vec<(usize, u64)> = Vec::with_capacity(max_t);
    for t in (1..=max_t).rev() {
        suffix += histogram.get(&t).copied().unwrap_or(0);
        by_t.push((t, suffix));
    }
    by_t.reverse();
    for &(t, c) in &by_t {
        cumulative.insert(t, c);
    }

    let mut ratios = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for &(t, c) in &by_t {
        let numer = match rule {
            WeightRule::FrequencyOverCumulative => histogram.get(&t).copied().unwrap_or(0),
            WeightRule::InverseCumulative => 1,
        };
        ratios.insert(t, (numer, c));
        raw.insert(t, numer as f64 / c as f64);
    }

    // Rescale so the total weighted mass matches the unweighted one:
    // Σ C(t)·w(t) = Σ C(t). Only the effective learning rate depends on
    // this constant; reports carry the factor so runs stay comparable.
    let total_mass: f64 = cumulative.values().map(|&c| c as f64).sum();
    let weighted_mass: f64 = by_t.iter().map(|&(t, c)| c as f64 * raw[&t]).sum();
    let rescale_factor = if weighted_mass > 0.0 { total_mass / weighted_mass } else { 1.0 };
    let rescaled = raw.iter().map(|(&t, &w)| (t, w * rescale_factor)).collect();

    LengthWeights { cumulative, ratios, raw, rescaled, rescale_factor }
}

/// Row-wise stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(ObjectiveError::NonFinite("softmax input"));
    }
    Ok(row_softmax(logits))
}

/// Softmax over each row of a logits matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor, ObjectiveError> {
    let mut data = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        data.extend(softmax(logits.row(r))?);
    }
    Ok(Tensor::new(logits.rows(), logits.cols(), data)?)
}

/// Flat weighted mean of per-position cross-entropies:
/// Σ w(t)·CE(logits[b,t], target[b,t]) over valid positions, divided by
/// Σ w(t) over the same positions. `logits[t]` is the (batch × V) matrix
/// for step t.
pub fn sequence_loss(
    logits: &[Tensor],
    batch: &Batch,
    config: &LossConfig,
) -> Result<f64, ObjectiveError> {
    let (total, denom) = sequence_loss_terms(logits, batch, config)?;
    if denom == 0.0 {
        return Err(ObjectiveError::NoContribution);
    }
    let loss = total * (1.0 / denom);
    if !loss.is_finite() {
        return Err(ObjectiveError::NonFinite("sequence loss"));
    }
    Ok(loss)
}

/// The numerator and denominator of [`sequence_loss`] separately, so
/// callers evaluating in batches can pool them and take one exact flat
/// mean over a whole split instead of averaging batch means.
pub fn sequence_loss_terms(
    logits: &[Tensor],
    batch: &Batch,
    config: &LossConfig,
) -> Result<(f64, f64), ObjectiveError> {
    check_batch_shapes(logits, batch)?;
    let mut total = 0.0;
    let mut denom = 0.0;
    for (t, step_logits) in logits.iter().enumerate() {
        let weight = config.weight_at(t + 1);
        if weight == 0.0 {
            continue;
        }
        let targets = batch.targets_at(t);
        let mask = batch.mask_at(t);
        let mut step_total = 0.0;
        for b in 0..batch.size() {
            if !mask[b] {
                continue;
            }
            step_total += weight * row_xent(step_logits.row(b), targets[b]);
            denom += weight;
        }
        total += step_total;
    }
    Ok((total, denom))
}

/// Tape version of [`sequence_loss`]: same value, with gradients flowing
/// back into every step's logits. The normalizer Σw is a constant, not a
/// differentiated node.
pub fn sequence_loss_node(
    tape: &mut Tape,
    logits: &[NodeId],
    batch: &Batch,
    config: &LossConfig,
) -> Result<NodeId, ObjectiveError> {
    let values: Vec<&Tensor> = logits.iter().map(|&id| tape.value(id)).collect();
    check_batch_shapes_ref(&values, batch)?;

    let mut denom = 0.0;
    let mut step_terms: Vec<(usize, Vec<f64>)> = Vec::new();
    for t in 0..logits.len() {
        let weight = config.weight_at(t + 1);
        if weight == 0.0 {
            continue;
        }
        let mask = batch.mask_at(t);
        let row_weights: Vec<f64> =
            mask.iter().map(|&m| if m { weight } else { 0.0 }).collect();
        let step_mass: f64 = row_weights.iter().sum();
        if step_mass == 0.0 {
            continue;
        }
        denom += step_mass;
        step_terms.push((t, row_weights));
    }
    if denom == 0.0 {
        return Err(ObjectiveError::NoContribution);
    }

    let mut acc: Option<NodeId> = None;
    for (t, row_weights) in step_terms {
        let term = tape.softmax_xent(logits[t], batch.targets_at(t).to_vec(), row_weights)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    let summed = acc.expect("denominator > 0 implies at least one step term");
    Ok(tape.scale(summed, 1.0 / denom))
}

fn check_batch_shapes(logits: &[Tensor], batch: &Batch) -> Result<(), ObjectiveError> {
    let refs: Vec<&Tensor> = logits.iter().collect();
    check_batch_shapes_ref(&refs, batch)
}

fn check_batch_shapes_ref(logits: &[&Tensor], batch: &Batch) -> Result<(), ObjectiveError> {
    if logits.len() != batch.max_steps {
        return Err(ObjectiveError::Contract(format!(
            "{} logit steps for a batch with max_steps {}",
            logits.len(),
            batch.max_steps
        )));
    }
    for (t, step) in logits.iter().enumerate() {
        if step.rows() != batch.size() {
            return Err(ObjectiveError::Contract(format!(
                "step {t} has {} rows for a batch of {}",
                step.rows(),
                batch.size()
            )));
        }
    }
    Ok(())
}

/// Top-k city indices by descending probability; ties broken by ascending
/// index. `k` larger than the vocabulary returns the full ordering.
pub fn top_k(pmf: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pmf.len()).collect();
    // Stable sort on descending probability keeps equal-probability
    // indices in ascending order — the deterministic tie rule.
    order.sort_by(|&a, &b| pmf[b].total_cmp(&pmf[a]));
    order.truncate(k.min(pmf.len()));
    order
}

/// One trip's ranked recommendations against its true destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingResult {
    /// Ordered recommendation indices, best first, no duplicates.
    pub top: Vec<usize>,
    pub truth: usize,
}

impl RankingResult {
    pub fn new(top: Vec<usize>, truth: usize) -> Self {
        debug_assert!(
            {
                let mut seen = top.clone();
                seen.sort_unstable();
                seen.dedup();
                seen.len() == top.len()
            },
            "top-k list must not contain duplicates"
        );
        Self { top, truth }
    }

    /// Whether the truth appears within the first `k` recommendations
    /// (rank exactly k counts).
    pub fn hit_at(&self, k: usize) -> bool {
        self.top.iter().take(k).any(|&c| c == self.truth)
    }
}

/// Fraction of trips whose true destination appears in the top k.
pub fn recall_at_k(results: &[RankingResult], k: usize) -> Result<f64, ObjectiveError> {
    if results.is_empty() {
        return Err(ObjectiveError::EmptyResults);
    }
    let hits = results.iter().filter(|r| r.hit_at(k)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean fraction of the top-k list that is relevant. With exactly one
/// relevant city per trip this is recall@k / k.
pub fn precision_at_k(results: &[RankingResult], k: usize) -> Result<f64, ObjectiveError> {
    Ok(recall_at_k(results, k)? / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureFrame, NUM_FEATURES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(steps: usize, targets: Vec<usize>, mask: Vec<bool>) -> FeatureFrame {
        FeatureFrame {
            utrip_id: format!("f{steps}"),
            steps,
            features: vec![[0; NUM_FEATURES]; steps],
            targets,
            mask,
        }
    }

    fn histogram(pairs: &[(usize, u64)]) -> BTreeMap<usize, u64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        assert_eq!(softmax(&[2.0; 4]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn softmax_survives_huge_spreads() {
        let p = softmax(&[800.0, -200.0, -200.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 0.999_999);
    }

    #[test]
    fn softmax_rows_sum_to_one_within_1e12() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let row: Vec<f64> = (0..37).map(|_| rng.random_range(-30.0..30.0)).collect();
            let sum: f64 = softmax(&row).unwrap().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(ObjectiveError::NonFinite(_))));
    }

    #[test]
    fn uniform_logits_cost_ln_v() {
        let batch = Batch::from_frames(&[frame(2, vec![1, 3], vec![true, true])]);
        let logits = vec![Tensor::zeros(1, 4), Tensor::zeros(1, 4)];
        let loss = sequence_loss(&logits, &batch, &LossConfig::unweighted()).unwrap();
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn fully_masked_extra_session_changes_nothing() {
        let real = frame(2, vec![1, 2], vec![true, true]);
        let ghost = frame(2, vec![0, 0], vec![false, false]);
        let solo = Batch::from_frames(&[real.clone()]);
        let padded = Batch::from_frames(&[real, ghost]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let solo_logits: Vec<Tensor> =
            (0..2).map(|_| Tensor::from_fn(1, 5, |_, _| rng.random_range(-1.0..1.0))).collect();
        let padded_logits: Vec<Tensor> = solo_logits
            .iter()
            .map(|t| {
                Tensor::from_fn(2, 5, |b, c| if b == 0 { t.get(0, c) } else { 99.0 })
            })
            .collect();

        let config = LossConfig::unweighted();
        let a = sequence_loss(&solo_logits, &solo, &config).unwrap();
        let b = sequence_loss(&padded_logits, &padded, &config).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn padding_steps_never_contribute() {
        // Frames of different lengths force padded positions in the
        // shorter one; the flat mean must cover exactly the valid ones.
        let a = frame(1, vec![0], vec![true]);
        let b = frame(3, vec![1, 2, 0], vec![true, true, true]);
        let batch = Batch::from_frames(&[a, b]);
        let v = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<Tensor> =
            (0..3).map(|_| Tensor::from_fn(2, v, |_, _| rng.random_range(-2.0..2.0))).collect();

        let loss = sequence_loss(&logits, &batch, &LossConfig::unweighted()).unwrap();

        // Independent flat mean over the four valid (session, step) pairs.
        let mut ces = Vec::new();
        ces.push(row_xent(logits[0].row(0), 0));
        ces.push(row_xent(logits[0].row(1), 1));
        ces.push(row_xent(logits[1].row(1), 2));
        ces.push(row_xent(logits[2].row(1), 0));
        let expected = ces.iter().sum::<f64>() / 4.0;
        assert!((loss - expected).abs() < 1e-12);

        // And it is the flat mean, not the mean of per-session means.
        let nested = (ces[0] + (ces[1] + ces[2] + ces[3]) / 3.0) / 2.0;
        assert!((loss - nested).abs() > 1e-3);
    }

    #[test]
    fn unit_weights_reproduce_the_unweighted_loss() {
        let batch = Batch::from_frames(&[frame(3, vec![1, 0, 2], vec![true, true, true])]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<Tensor> =
            (0..3).map(|_| Tensor::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let ones = LossConfig::weighted([(1, 1.0), (2, 1.0), (3, 1.0)].into()).unwrap();
        let a = sequence_loss(&logits, &batch, &LossConfig::unweighted()).unwrap();
        let b = sequence_loss(&logits, &batch, &ones).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn all_masked_batch_is_an_error() {
        let batch = Batch::from_frames(&[frame(2, vec![0, 0], vec![false, false])]);
        let logits = vec![Tensor::zeros(1, 3), Tensor::zeros(1, 3)];
        assert!(matches!(
            sequence_loss(&logits, &batch, &LossConfig::unweighted()),
            Err(ObjectiveError::NoContribution)
        ));
    }

    #[test]
    fn all_zero_weights_are_an_error_not_a_nan() {
        let batch = Batch::from_frames(&[frame(2, vec![0, 1], vec![true, true])]);
        let logits = vec![Tensor::zeros(1, 3), Tensor::zeros(1, 3)];
        let config = LossConfig::weighted([(1, 0.0), (2, 0.0)].into()).unwrap();
        assert!(matches!(
            sequence_loss(&logits, &batch, &config),
            Err(ObjectiveError::NoContribution)
        ));
    }

    #[test]
    fn negative_or_non_finite_weights_are_rejected() {
        assert!(LossConfig::weighted([(1, -0.5)].into()).is_err());
        assert!(LossConfig::weighted([(1, f64::NAN)].into()).is_err());
        assert!(LossConfig::weighted([(1, f64::INFINITY)].into()).is_err());
    }

    #[test]
    fn tape_loss_matches_the_pure_loss() {
        let batch = Batch::from_frames(&[
            frame(2, vec![1, 2], vec![true, false]),
            frame(3, vec![0, 1, 2], vec![true, true, true]),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits: Vec<Tensor> =
            (0..3).map(|_| Tensor::from_fn(2, 4, |_, _| rng.random_range(-2.0..2.0))).collect();
        let config = LossConfig::weighted([(1, 0.8), (2, 0.0), (3, 1.6)].into()).unwrap();

        let pure = sequence_loss(&logits, &batch, &config).unwrap();
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = logits.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = sequence_loss_node(&mut tape, &nodes, &batch, &config).unwrap();
        assert_eq!(tape.value(loss).scalar_value().unwrap().to_bits(), pure.to_bits());

        // Gradient must flow only into steps with nonzero weight.
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(nodes[0]).data().iter().any(|&g| g != 0.0));
        assert!(grads.get(nodes[1]).data().iter().all(|&g| g == 0.0));
        assert!(grads.get(nodes[2]).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn skewed_histogram_weights_match_the_definition() {
        let weights =
            compute_length_weights(&histogram(&[(1, 80), (4, 20)]), WeightRule::FrequencyOverCumulative);
        let c: Vec<(usize, u64)> = weights.cumulative().iter().map(|(&t, &c)| (t, c)).collect();
        assert_eq!(c, vec![(1, 100), (2, 20), (3, 20), (4, 20)]);
        assert_eq!(weights.raw()[&1], 0.8);
        assert_eq!(weights.raw()[&2], 0.0);
        assert_eq!(weights.raw()[&3], 0.0);
        assert_eq!(weights.raw()[&4], 1.0);
        assert_eq!(weights.ratio(1), Some((80, 100)));
        assert_eq!(weights.ratio(4), Some((20, 20)));
        assert!(weights.conserves_per_length_mass(&histogram(&[(1, 80), (4, 20)])));
    }

    #[test]
    fn single_length_histogram_weights_only_the_final_step() {
        let weights =
            compute_length_weights(&histogram(&[(3, 50)]), WeightRule::FrequencyOverCumulative);
        assert_eq!(weights.raw()[&1], 0.0);
        assert_eq!(weights.raw()[&2], 0.0);
        assert_eq!(weights.raw()[&3], 1.0);
    }

    #[test]
    fn uniform_histogram_weights_climb_toward_one() {
        let weights = compute_length_weights(
            &histogram(&[(1, 25), (2, 25), (3, 25), (4, 25)]),
            WeightRule::FrequencyOverCumulative,
        );
        let c: Vec<u64> = weights.cumulative().values().copied().collect();
        assert_eq!(c, vec![100, 75, 50, 25]);
        assert_eq!(weights.raw()[&1], 0.25);
        assert_eq!(weights.raw()[&2], 25.0 / 75.0);
        assert_eq!(weights.raw()[&3], 0.5);
        assert_eq!(weights.raw()[&4], 1.0);
    }

    #[test]
    fn rescaled_weights_restore_the_total_mass() {
        let hist = histogram(&[(1, 80), (2, 7), (3, 11), (4, 20)]);
        let weights = compute_length_weights(&hist, WeightRule::FrequencyOverCumulative);
        let total: f64 = weights.cumulative().values().map(|&c| c as f64).sum();
        let weighted: f64 = weights
            .cumulative()
            .iter()
            .map(|(&t, &c)| c as f64 * weights.rescaled()[&t])
            .sum();
        assert!((weighted - total).abs() / total < 1e-12);
        assert!(weights.rescale_factor() > 0.0);
    }

    #[test]
    fn inverse_rule_weights_are_monotone_nondecreasing() {
        let hist = histogram(&[(1, 80), (2, 7), (3, 11), (4, 20)]);
        let weights = compute_length_weights(&hist, WeightRule::InverseCumulative);
        let raw: Vec<f64> = weights.raw().values().copied().collect();
        assert!(raw.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(weights.ratio(1), Some((1, 118)));
    }

    #[test]
    fn empty_histogram_yields_empty_weights() {
        let weights = compute_length_weights(&histogram(&[]), WeightRule::FrequencyOverCumulative);
        assert!(weights.raw().is_empty());
        assert!(weights.rescaled().is_empty());
    }

    #[test]
    fn top_k_breaks_ties_by_ascending_index() {
        assert_eq!(top_k(&[0.1, 0.4, 0.2, 0.2, 0.1], 4), vec![1, 2, 3, 0]);
    }

    #[test]
    fn top_k_with_large_k_orders_everything() {
        assert_eq!(top_k(&[0.1, 0.4, 0.2, 0.2, 0.1], 10), vec![1, 2, 3, 0, 4]);
    }

    #[test]
    fn top_k_puts_a_one_hot_first() {
        assert_eq!(top_k(&[0.0, 0.0, 1.0, 0.0], 1), vec![2]);
    }

    #[test]
    fn top_k_is_invariant_under_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let logits: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let pmf = softmax(&logits).unwrap();
            assert_eq!(top_k(&logits, 4), top_k(&pmf, 4));
        }
    }

    #[test]
    fn recall_counts_hits_over_trips() {
        let results = vec![
            RankingResult::new(vec![1, 2, 3, 4], 2),
            RankingResult::new(vec![5, 6, 7, 8], 5),
            RankingResult::new(vec![0, 9, 2, 3], 9),
            RankingResult::new(vec![4, 5, 6, 7], 1),
            RankingResult::new(vec![8, 0, 1, 2], 3),
        ];
        assert_eq!(recall_at_k(&results, 4).unwrap(), 0.6);
    }

    #[test]
    fn truth_at_rank_exactly_k_counts() {
        let results = vec![RankingResult::new(vec![5, 3, 9], 9)];
        assert_eq!(recall_at_k(&results, 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&results, 2).unwrap(), 0.0);
    }

    #[test]
    fn all_misses_is_zero_and_empty_is_an_error() {
        let results = vec![RankingResult::new(vec![1, 2], 7)];
        assert_eq!(recall_at_k(&results, 2).unwrap(), 0.0);
        assert!(matches!(recall_at_k(&[], 4), Err(ObjectiveError::EmptyResults)));
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let results: Vec<RankingResult> = (0..60)
            .map(|_| {
                let pmf: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
                RankingResult::new(top_k(&pmf, 10), rng.random_range(0..10))
            })
            .collect();
        let mut last = 0.0;
        for k in 1..=10 {
            let r = recall_at_k(&results, k).unwrap();
            assert!(r >= last, "recall dropped from {last} to {r} at k={k}");
            last = r;
        }
        assert_eq!(recall_at_k(&results, 10).unwrap(), 1.0);
    }

    #[test]
    fn precision_is_recall_over_k_with_one_relevant_item() {
        let results = vec![
            RankingResult::new(vec![1, 2, 3, 4], 2),
            RankingResult::new(vec![5, 6, 7, 8], 0),
        ];
        let recall = recall_at_k(&results, 4).unwrap();
        let precision = precision_at_k(&results, 4).unwrap();
        assert_eq!(precision, recall / 4.0);
    }
}
