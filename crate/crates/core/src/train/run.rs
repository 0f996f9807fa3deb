//! Fold training, cross-validation, evaluation, and the pmf ensemble.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::{
    make_batches, stratified_kfold_by, Batch, FeatureFrame, Vocab,
};
use crate::derive_seed;
use crate::model::{forward_many_to_many, Mode, ModelConfig, ModelParams};
use crate::objective::{
    compute_length_weights, recall_at_k, sequence_loss_node, sequence_loss_terms, softmax,
    top_k, LossConfig, ObjectiveError, RankingResult, WeightMode, WeightRule,
};
use crate::tensor::{Tape, Tensor};

use super::{adam_step, AdamState, ModelType, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_recall_at_4: f64,
    /// Mask-valid loss positions seen this epoch: one per session in
    /// many-to-one mode, one per step in many-to-many.
    pub train_positions: u64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    /// 1-based; on recall ties, the first epoch achieving the max.
    pub best_epoch: usize,
    pub best_recall: f64,
    /// Parameters as of the best epoch.
    pub params: ModelParams,
    pub epochs: Vec<EpochRecord>,
}

/// Builds the loss weighting from the *training* frames only: weighted
/// mode derives the reverse-cumulative-frequency weights from the step
/// histogram; unweighted mode is 1 everywhere.
pub(crate) fn build_loss_config(
    train: &[FeatureFrame],
    mode: WeightMode,
) -> Result<LossConfig, TrainError> {
    match mode {
        WeightMode::Unweighted => Ok(LossConfig::unweighted()),
        WeightMode::Weighted => {
            let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
            for frame in train {
                *histogram.entry(frame.steps).or_insert(0) += 1;
            }
            let weights =
                compute_length_weights(&histogram, WeightRule::FrequencyOverCumulative);
            Ok(LossConfig::weighted(weights.rescaled().clone())?)
        }
    }
}

#[derive(Debug)]
struct EpochStats {
    loss: f64,
    positions: u64,
}

/// One pass over the training frames: forward, loss, backward, Adam.
/// Returns the flat training loss over the epoch's valid positions.
fn run_epoch(
    params: &mut ModelParams,
    state: &mut AdamState,
    train: &[FeatureFrame],
    loss_config: &LossConfig,
    train_config: &TrainConfig,
    fold: usize,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    let seed = train_config.seed;
    let batches = make_batches(
        train.to_vec(),
        train_config.batch_size,
        true,
        derive_seed(seed, &format!("batches/fold{fold}/epoch{epoch}")),
    );
    let mut numer = 0.0;
    let mut denom = 0.0;
    let mut positions = 0u64;
    for (bi, batch) in batches.iter().enumerate() {
        let restricted;
        let effective: &Batch = match train_config.model_type {
            ModelType::ManyToMany => batch,
            ModelType::ManyToOne => {
                restricted = batch.restrict_mask_to_final_step();
                &restricted
            }
        };
        positions += effective.valid_positions() as u64;

        let mut tape = Tape::new();
        let out = forward_many_to_many(
            &mut tape,
            params,
            effective,
            Mode::Train,
            derive_seed(seed, &format!("dropout/fold{fold}/epoch{epoch}/batch{bi}")),
        )?;
        let loss_node = sequence_loss_node(&mut tape, &out.step_logits, effective, loss_config)?;
        let loss = tape.value(loss_node).scalar_value()?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                fold,
                epoch,
                batch: bi,
                what: format!("loss = {loss}"),
            });
        }
        let values: Vec<Tensor> =
            out.step_logits.iter().map(|&id| tape.value(id).clone()).collect();
        let (n, d) = sequence_loss_terms(&values, effective, loss_config)?;
        numer += n;
        denom += d;

        let grads = tape.backward(loss_node)?;
        let grad_tensors: Vec<Tensor> =
            out.bound.nodes.iter().map(|&node| grads.get(node)).collect();
        adam_step(params, &grad_tensors, state, train_config)?;
    }
    if denom == 0.0 {
        return Err(TrainError::Objective(ObjectiveError::NoContribution));
    }
    Ok(EpochStats { loss: numer * (1.0 / denom), positions })
}

/// Trains on `train`, evaluating recall@4 on `val` after every epoch, and
/// returns the parameters from the best epoch (first epoch on ties).
pub fn train_fold(
    fold: usize,
    train: &[FeatureFrame],
    val: &[FeatureFrame],
    vocab: &Vocab,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    train_config.validate()?;
    model_config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::InvalidConfig(format!(
            "fold {fold}: empty split (train {}, val {})",
            train.len(),
            val.len()
        )));
    }

    let loss_config = build_loss_config(train, train_config.weight_mode)?;
    let mut params = ModelParams::init(
        model_config.clone(),
        vocab,
        derive_seed(train_config.seed, &format!("init/fold{fold}")),
    )?;
    let mut state = AdamState::new(&params);

    let mut records = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 1..=train_config.epochs {
        let stats =
            run_epoch(&mut params, &mut state, train, &loss_config, train_config, fold, epoch)?;
        let eval = evaluate(
            &params,
            val,
            &loss_config,
            train_config.model_type,
            train_config.batch_size,
        )?;
        records.push(EpochRecord {
            epoch,
            train_loss: stats.loss,
            val_loss: eval.loss,
            val_recall_at_4: eval.recall_at_4,
            train_positions: stats.positions,
        });
        if pick_best(&records) == Some((epoch, eval.recall_at_4)) {
            best = Some((epoch, eval.recall_at_4, params.clone()));
        }
    }
    let (best_epoch, best_recall, best_params) =
        best.expect("epochs >= 1 guarantees a best epoch");
    Ok(FoldResult { fold, best_epoch, best_recall, params: best_params, epochs: records })
}

/// First epoch achieving the maximum validation recall.
pub(crate) fn pick_best(records: &[EpochRecord]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for r in records {
        if best.map(|(_, b)| r.val_recall_at_4 > b).unwrap_or(true) {
            best = Some((r.epoch, r.val_recall_at_4));
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Flat sequence loss over every valid position in the split.
    pub loss: f64,
    /// Fraction of sessions whose final-step top-4 contains the truth.
    pub recall_at_4: f64,
    pub results: Vec<RankingResult>,
}

/// Evaluates a model over a split: flat loss (restricted to final steps in
/// many-to-one mode) plus final-step recall@4, dropout off.
pub fn evaluate(
    params: &ModelParams,
    frames: &[FeatureFrame],
    loss_config: &LossConfig,
    model_type: ModelType,
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    if frames.is_empty() {
        return Err(TrainError::InvalidConfig("evaluate needs at least one frame".into()));
    }
    let batches = make_batches(frames.to_vec(), batch_size, true, 0);
    let mut numer = 0.0;
    let mut denom = 0.0;
    let mut results = Vec::with_capacity(frames.len());
    for batch in &batches {
        let mut tape = Tape::new();
        let out = forward_many_to_many(&mut tape, params, batch, Mode::Eval, 0)?;
        let values: Vec<Tensor> =
            out.step_logits.iter().map(|&id| tape.value(id).clone()).collect();

        let restricted;
        let loss_batch: &Batch = match model_type {
            ModelType::ManyToMany => batch,
            ModelType::ManyToOne => {
                restricted = batch.restrict_mask_to_final_step();
                &restricted
            }
        };
        let (n, d) = sequence_loss_terms(&values, loss_batch, loss_config)?;
        numer += n;
        denom += d;

        for b in 0..batch.size() {
            if let Some(t) = batch.final_valid_step(b) {
                let pmf = softmax(values[t].row(b))?;
                results.push(RankingResult::new(top_k(&pmf, 4), batch.targets_at(t)[b]));
            }
        }
    }
    if denom == 0.0 {
        return Err(TrainError::Objective(ObjectiveError::NoContribution));
    }
    let recall = recall_at_k(&results, 4)?;
    Ok(EvalReport { loss: numer * (1.0 / denom), recall_at_4: recall, results })
}

/// Final-valid-step rankings for a whole split under an ensemble: member
/// pmfs are averaged in probability space before ranking. One member is
/// the single-model case.
pub fn ensemble_rankings(
    ensemble: &Ensemble,
    frames: &[FeatureFrame],
    k: usize,
    batch_size: usize,
) -> Result<Vec<RankingResult>, TrainError> {
    if frames.is_empty() {
        return Err(TrainError::InvalidConfig("ranking needs at least one frame".into()));
    }
    let batches = make_batches(frames.to_vec(), batch_size, true, 0);
    let mut results = Vec::with_capacity(frames.len());
    for batch in &batches {
        let mut member_logits: Vec<Vec<Tensor>> = Vec::with_capacity(ensemble.len());
        for member in ensemble.members() {
            let mut tape = Tape::new();
            let out = forward_many_to_many(&mut tape, member, batch, Mode::Eval, 0)?;
            member_logits
                .push(out.step_logits.iter().map(|&id| tape.value(id).clone()).collect());
        }
        for b in 0..batch.size() {
            if let Some(t) = batch.final_valid_step(b) {
                let pmfs: Vec<Vec<f64>> = member_logits
                    .iter()
                    .map(|steps| softmax(steps[t].row(b)))
                    .collect::<Result<_, _>>()?;
                let mean = mean_pmfs(&pmfs);
                results.push(RankingResult::new(top_k(&mean, k), batch.targets_at(t)[b]));
            }
        }
    }
    Ok(results)
}

/// The `k` most frequent target cities across valid positions — the
/// static-prediction baseline any sequence model has to beat.
pub fn popularity_top_k(frames: &[FeatureFrame], k: usize) -> Vec<usize> {
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for frame in frames {
        for t in 0..frame.steps {
            if frame.mask[t] {
                *counts.entry(frame.targets[t]).or_insert(0) += 1;
            }
        }
    }
    let n = counts.keys().max().map(|&c| c + 1).unwrap_or(0);
    let mut dense = vec![0.0; n];
    for (&city, &count) in &counts {
        dense[city] = count as f64;
    }
    top_k(&dense, k)
}

#[derive(Debug)]
pub enum FoldOutcome {
    Trained(FoldResult),
    Failed { fold: usize, error: TrainError },
}

#[derive(Debug)]
pub struct CrossValidation {
    /// One outcome per fold, index-aligned with `folds`.
    pub outcomes: Vec<FoldOutcome>,
    /// Validation indices per fold (disjoint partition of the input).
    pub folds: Vec<Vec<usize>>,
    pub ensemble: Ensemble,
}

/// Stratified k-fold training. Failed folds are reported in their slot and
/// the run continues; the ensemble holds the best checkpoint of every fold
/// that finished. `jobs` caps how many folds train concurrently.
pub fn cross_validate(
    frames: &[FeatureFrame],
    vocab: &Vocab,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    jobs: usize,
) -> Result<CrossValidation, TrainError> {
    train_config.validate()?;
    let k = train_config.folds;
    let folds = stratified_kfold_by(
        frames,
        |f: &FeatureFrame| f.steps,
        k,
        derive_seed(train_config.seed, "folds"),
    )?;

    let run_fold = |i: usize| -> FoldOutcome {
        let in_val: Vec<bool> = {
            let mut v = vec![false; frames.len()];
            for &idx in &folds[i] {
                v[idx] = true;
            }
            v
        };
        let train: Vec<FeatureFrame> = frames
            .iter()
            .enumerate()
            .filter(|(idx, _)| !in_val[*idx])
            .map(|(_, f)| f.clone())
            .collect();
        let val: Vec<FeatureFrame> = folds[i].iter().map(|&idx| frames[idx].clone()).collect();
        match train_fold(i, &train, &val, vocab, model_config, train_config) {
            Ok(result) => FoldOutcome::Trained(result),
            Err(error) => FoldOutcome::Failed { fold: i, error },
        }
    };

    let outcomes: Vec<FoldOutcome> = if jobs <= 1 {
        (0..k).map(run_fold).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<FoldOutcome>>> = (0..k).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(k) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= k {
                        break;
                    }
                    let outcome = run_fold(i);
                    *slots[i].lock().expect("no panics hold this lock") = Some(outcome);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("worker finished").expect("every fold ran"))
            .collect()
    };

    let members: Vec<ModelParams> = outcomes
        .iter()
        .filter_map(|o| match o {
            FoldOutcome::Trained(r) => Some(r.params.clone()),
            FoldOutcome::Failed { .. } => None,
        })
        .collect();
    let ensemble = Ensemble::new(members)?;
    Ok(CrossValidation { outcomes, folds, ensemble })
}

/// Best-epoch checkpoints from the successful folds.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<ModelParams>,
}

impl Ensemble {
    pub fn new(members: Vec<ModelParams>) -> Result<Self, TrainError> {
        let Some(first) = members.first() else {
            return Err(TrainError::EmptyEnsemble);
        };
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.n_cities() != first.n_cities() {
                return Err(TrainError::EnsembleMismatch(format!(
                    "member 0 has {} cities, member {i} has {}",
                    first.n_cities(),
                    m.n_cities()
                )));
            }
            if m.names() != first.names() {
                return Err(TrainError::EnsembleMismatch(format!(
                    "member {i} has a different parameter layout"
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ModelParams] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Final-step pmf for one session under every member, averaged in
/// probability space.
pub fn ensemble_predict(
    ensemble: &Ensemble,
    frame: &FeatureFrame,
) -> Result<Vec<f64>, TrainError> {
    if ensemble.is_empty() {
        return Err(TrainError::EmptyEnsemble);
    }
    let batch = Batch::from_frames(std::slice::from_ref(frame));
    let t = batch.max_steps - 1;
    let mut pmfs = Vec::with_capacity(ensemble.len());
    for member in ensemble.members() {
        let mut tape = Tape::new();
        let out = forward_many_to_many(&mut tape, member, &batch, Mode::Eval, 0)?;
        pmfs.push(softmax(tape.value(out.step_logits[t]).row(0))?);
    }
    Ok(mean_pmfs(&pmfs))
}

/// Entry-wise arithmetic mean of equal-length pmfs.
pub fn mean_pmfs(pmfs: &[Vec<f64>]) -> Vec<f64> {
    assert!(!pmfs.is_empty(), "mean of zero pmfs");
    let n = pmfs[0].len();
    assert!(pmfs.iter().all(|p| p.len() == n), "pmf lengths disagree");
    let scale = 1.0 / pmfs.len() as f64;
    (0..n).map(|i| pmfs.iter().map(|p| p[i]).sum::<f64>() * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, featurize, generate_synthetic, SynthConfig, VocabCaps};
    use crate::model::{save_checkpoint, CellKind, DecoderKind};
    use crate::tensor::row_xent;

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            cell: CellKind::Gru,
            layers: 1,
            hidden_dim: 8,
            decoder: DecoderKind::Tied,
            city_dim: 8,
            categorical_dim: 3,
            device_dim: 2,
            numerical_dim: 2,
            input_dropout: 0.0,
            recurrent_dropout: 0.0,
        }
    }

    fn quick_train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 5e-3,
            batch_size: 32,
            epochs,
            folds: 4,
            seed: 7,
            model_type: ModelType::ManyToMany,
            weight_mode: WeightMode::Unweighted,
            ..TrainConfig::default()
        }
    }

    fn corpus(n: usize, seed: u64) -> (Vocab, Vec<FeatureFrame>) {
        let sessions = generate_synthetic(&SynthConfig::new(n, 12, 3, seed)).unwrap();
        let vocab = build_vocab(&sessions, VocabCaps::default()).unwrap();
        let frames = sessions.iter().map(|s| featurize(s, &vocab).unwrap()).collect();
        (vocab, frames)
    }

    #[test]
    fn five_epochs_of_training_reduce_the_loss() {
        let (vocab, frames) = corpus(200, 11);
        let (train, val) = frames.split_at(160);
        let result = train_fold(
            0,
            train,
            val,
            &vocab,
            &tiny_model_config(),
            &quick_train_config(5),
        )
        .unwrap();
        assert_eq!(result.epochs.len(), 5);
        let first = result.epochs[0].train_loss;
        let last = result.epochs[4].train_loss;
        assert!(last < first, "loss went {first} -> {last}");
        assert!(result.best_epoch >= 1 && result.best_epoch <= 5);
    }

    #[test]
    fn many_to_one_touches_exactly_one_position_per_session() {
        let (vocab, frames) = corpus(60, 12);
        let (train, val) = frames.split_at(50);
        let total_steps: u64 = train.iter().map(|f| f.steps as u64).sum();

        let mut config = quick_train_config(1);
        config.model_type = ModelType::ManyToOne;
        let m2o =
            train_fold(0, train, val, &vocab, &tiny_model_config(), &config).unwrap();
        assert_eq!(m2o.epochs[0].train_positions, train.len() as u64);

        config.model_type = ModelType::ManyToMany;
        let m2m =
            train_fold(0, train, val, &vocab, &tiny_model_config(), &config).unwrap();
        assert_eq!(m2m.epochs[0].train_positions, total_steps);
    }

    #[test]
    fn best_epoch_takes_the_first_of_tied_recalls() {
        let records: Vec<EpochRecord> = [0.1, 0.3, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &r)| EpochRecord {
                epoch: i + 1,
                train_loss: 1.0,
                val_loss: 1.0,
                val_recall_at_4: r,
                train_positions: 0,
            })
            .collect();
        assert_eq!(pick_best(&records), Some((2, 0.3)));
    }

    #[test]
    fn validation_data_never_touches_the_training_trajectory() {
        let (vocab, frames) = corpus(120, 13);
        let train = &frames[..80];
        let val_a = &frames[80..100];
        let val_b = &frames[100..120];
        let config = quick_train_config(3);
        let model = tiny_model_config();
        let a = train_fold(0, train, val_a, &vocab, &model, &config).unwrap();
        let b = train_fold(0, train, val_b, &vocab, &model, &config).unwrap();
        for (ra, rb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(
                ra.train_loss.to_bits(),
                rb.train_loss.to_bits(),
                "validation choice leaked into epoch {}",
                ra.epoch
            );
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_best_checkpoints() {
        let (vocab, frames) = corpus(80, 14);
        let (train, val) = frames.split_at(60);
        let config = quick_train_config(2);
        let model = tiny_model_config();
        let a = train_fold(0, train, val, &vocab, &model, &config).unwrap();
        let b = train_fold(0, train, val, &vocab, &model, &config).unwrap();
        assert_eq!(save_checkpoint(&a.params), save_checkpoint(&b.params));
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn non_finite_loss_aborts_the_epoch_with_context() {
        let (vocab, frames) = corpus(30, 15);
        let mut params = ModelParams::init(tiny_model_config(), &vocab, 0).unwrap();
        // Saturate the tied city table so logits overflow to infinity.
        let slot = params.embedding_slot(0);
        let shape = params.tensor(slot).shape();
        params.set_tensor(slot, Tensor::filled(shape.0, shape.1, 1e308));

        let mut state = AdamState::new(&params);
        let config = quick_train_config(1);
        let err = run_epoch(
            &mut params,
            &mut state,
            &frames,
            &LossConfig::unweighted(),
            &config,
            3,
            1,
        )
        .unwrap_err();
        match err {
            TrainError::Diverged { fold, epoch, .. } => {
                assert_eq!((fold, epoch), (3, 1));
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn cross_validation_partitions_and_ensembles_every_fold() {
        let (vocab, frames) = corpus(40, 16);
        let config = quick_train_config(2);
        let cv =
            cross_validate(&frames, &vocab, &tiny_model_config(), &config, 1).unwrap();
        assert_eq!(cv.outcomes.len(), 4);
        assert_eq!(cv.ensemble.len(), 4);
        let mut seen = vec![false; frames.len()];
        for fold in &cv.folds {
            assert_eq!(fold.len(), 10);
            for &idx in fold {
                assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        for outcome in &cv.outcomes {
            assert!(matches!(outcome, FoldOutcome::Trained(_)));
        }
    }

    #[test]
    fn parallel_folds_match_sequential_folds() {
        let (vocab, frames) = corpus(40, 17);
        let config = quick_train_config(1);
        let model = tiny_model_config();
        let sequential = cross_validate(&frames, &vocab, &model, &config, 1).unwrap();
        let parallel = cross_validate(&frames, &vocab, &model, &config, 3).unwrap();
        for (a, b) in sequential.outcomes.iter().zip(&parallel.outcomes) {
            let (FoldOutcome::Trained(ra), FoldOutcome::Trained(rb)) = (a, b) else {
                panic!("both runs should train every fold");
            };
            assert_eq!(save_checkpoint(&ra.params), save_checkpoint(&rb.params));
        }
    }

    #[test]
    fn ensemble_of_identical_members_is_the_member() {
        let (vocab, frames) = corpus(30, 18);
        let params = ModelParams::init(tiny_model_config(), &vocab, 9).unwrap();
        let solo = Ensemble::new(vec![params.clone()]).unwrap();
        let duo = Ensemble::new(vec![params.clone(), params]).unwrap();
        let a = ensemble_predict(&solo, &frames[0]).unwrap();
        let b = ensemble_predict(&duo, &frames[0]).unwrap();
        assert_eq!(a, b);
        let sum: f64 = b.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_pmfs_averages_entrywise() {
        assert_eq!(mean_pmfs(&[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![0.5, 0.5]);
    }

    #[test]
    fn many_to_one_loss_is_the_final_step_restriction() {
        let (vocab, frames) = corpus(25, 19);
        let params = ModelParams::init(tiny_model_config(), &vocab, 10).unwrap();
        let batch = Batch::from_frames(&frames[..8]);
        let mut tape = Tape::new();
        let out = forward_many_to_many(&mut tape, &params, &batch, Mode::Eval, 0).unwrap();
        let values: Vec<Tensor> =
            out.step_logits.iter().map(|&id| tape.value(id).clone()).collect();

        let restricted = batch.restrict_mask_to_final_step();
        let m2o = crate::objective::sequence_loss(
            &values,
            &restricted,
            &LossConfig::unweighted(),
        )
        .unwrap();

        // Independent computation: mean of the final-step cross-entropies.
        let mut ces = Vec::new();
        for b in 0..batch.size() {
            let t = batch.final_valid_step(b).unwrap();
            ces.push(row_xent(values[t].row(b), batch.targets_at(t)[b]));
        }
        let expected = ces.iter().sum::<f64>() / ces.len() as f64;
        assert!((m2o - expected).abs() < 1e-12);
    }

    #[test]
    fn popularity_baseline_ranks_frequent_targets_first() {
        let mut frames = Vec::new();
        for (target, copies) in [(3usize, 5), (7, 4), (2, 3), (9, 2), (4, 1)] {
            for i in 0..copies {
                frames.push(FeatureFrame {
                    utrip_id: format!("p{target}-{i}"),
                    steps: 1,
                    features: vec![[0; crate::data::NUM_FEATURES]],
                    targets: vec![target],
                    mask: vec![true],
                });
            }
        }
        assert_eq!(popularity_top_k(&frames, 4), vec![3, 7, 2, 9]);
    }
}
