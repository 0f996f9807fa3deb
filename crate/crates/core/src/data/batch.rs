//! Padded batch assembly.
//!
//! Layout is step-major: per step `t`, per feature column `f`, the indices
//! for all batch members sit contiguously, which is exactly the slice an
//! embedding gather wants. Padding uses index 0 with the mask cleared.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureFrame, NUM_FEATURES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub utrip_ids: Vec<String>,
    pub steps: Vec<usize>,
    pub max_steps: usize,
    /// `[t][f][b]` → features[(t * NUM_FEATURES + f) * size + b]
    features: Vec<usize>,
    /// `[t][b]`
    targets: Vec<usize>,
    /// `[t][b]`
    mask: Vec<bool>,
}

impl Batch {
    pub fn from_frames(frames: &[FeatureFrame]) -> Batch {
        assert!(!frames.is_empty(), "a batch needs at least one frame");
        let size = frames.len();
        let max_steps = frames.iter().map(|f| f.steps).max().unwrap_or(0);
        let mut features = vec![0usize; max_steps * NUM_FEATURES * size];
        let mut targets = vec![0usize; max_steps * size];
        let mut mask = vec![false; max_steps * size];
        for (b, frame) in frames.iter().enumerate() {
            for t in 0..frame.steps {
                for f in 0..NUM_FEATURES {
                    features[(t * NUM_FEATURES + f) * size + b] = frame.features[t][f];
                }
                targets[t * size + b] = frame.targets[t];
                mask[t * size + b] = frame.mask[t];
            }
        }
        Batch {
            utrip_ids: frames.iter().map(|f| f.utrip_id.clone()).collect(),
            steps: frames.iter().map(|f| f.steps).collect(),
            max_steps,
            features,
            targets,
            mask,
        }
    }

    pub fn size(&self) -> usize {
        self.utrip_ids.len()
    }

    /// Indices of feature column `f` at step `t`, one per batch member.
    pub fn feature_column(&self, t: usize, f: usize) -> &[usize] {
        let size = self.size();
        let start = (t * NUM_FEATURES + f) * size;
        &self.features[start..start + size]
    }

    pub fn targets_at(&self, t: usize) -> &[usize] {
        let size = self.size();
        &self.targets[t * size..(t + 1) * size]
    }

    pub fn mask_at(&self, t: usize) -> &[bool] {
        let size = self.size();
        &self.mask[t * size..(t + 1) * size]
    }

    /// Count of real (unpadded, unmasked) prediction steps in the batch.
    pub fn valid_positions(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Number of padded slots (allocated but not backed by a real step).
    pub fn padded_positions(&self) -> usize {
        self.size() * self.max_steps - self.steps.iter().sum::<usize>()
    }

    /// The last step with a live mask for each batch member, if any.
    pub fn final_valid_step(&self, b: usize) -> Option<usize> {
        (0..self.max_steps).rev().find(|&t| self.mask_at(t)[b])
    }

    /// Same batch with the mask narrowed to each session's final valid
    /// step: the many-to-one restriction of a many-to-many batch.
    pub fn restrict_mask_to_final_step(&self) -> Batch {
        let size = self.size();
        let mut restricted = self.clone();
        let finals: Vec<Option<usize>> = (0..size).map(|b| self.final_valid_step(b)).collect();
        for t in 0..self.max_steps {
            for (b, &last) in finals.iter().enumerate() {
                restricted.mask[t * size + b] = last == Some(t);
            }
        }
        restricted
    }
}

/// Chunks frames into batches. With `sort_by_length` the frames are sorted
/// by step count first — batches then hold near-equal lengths and padding
/// all but vanishes — and the *batch order* is shuffled. Without it, the
/// frames themselves are shuffled and chunked as they come.
pub fn make_batches(
    mut frames: Vec<FeatureFrame>,
    batch_size: usize,
    sort_by_length: bool,
    seed: u64,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    if frames.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if sort_by_length {
        frames.sort_by(|a, b| a.steps.cmp(&b.steps).then_with(|| a.utrip_id.cmp(&b.utrip_id)));
        let mut batches: Vec<Batch> =
            frames.chunks(batch_size).map(Batch::from_frames).collect();
        batches.shuffle(&mut rng);
        batches
    } else {
        frames.shuffle(&mut rng);
        frames.chunks(batch_size).map(Batch::from_frames).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: &str, steps: usize) -> FeatureFrame {
        FeatureFrame {
            utrip_id: id.to_string(),
            steps,
            features: (0..steps).map(|t| [t + 1; NUM_FEATURES]).collect(),
            targets: (0..steps).map(|t| t + 100).collect(),
            mask: vec![true; steps],
        }
    }

    #[test]
    fn sorted_batching_eliminates_padding_on_matched_lengths() {
        let frames = vec![frame("a", 3), frame("b", 7), frame("c", 3), frame("d", 7)];
        let batches = make_batches(frames, 2, true, 1);
        assert_eq!(batches.len(), 2);
        for batch in &batches {
            assert_eq!(batch.padded_positions(), 0);
            let unique: std::collections::HashSet<usize> = batch.steps.iter().copied().collect();
            assert_eq!(unique.len(), 1, "each batch holds a single length");
        }
    }

    #[test]
    fn mixed_lengths_pad_the_shorter_frame() {
        let frames = vec![frame("a", 3), frame("b", 7)];
        let batches = make_batches(frames, 2, true, 0);
        assert_eq!(batches.len(), 1);
        let batch = &batches[0];
        assert_eq!(batch.max_steps, 7);
        assert_eq!(batch.padded_positions(), 4);
        // Padded positions are mask-false and zero-indexed.
        let shorter = batch.steps.iter().position(|&s| s == 3).unwrap();
        for t in 3..7 {
            assert!(!batch.mask_at(t)[shorter]);
            assert_eq!(batch.targets_at(t)[shorter], 0);
            for f in 0..NUM_FEATURES {
                assert_eq!(batch.feature_column(t, f)[shorter], 0);
            }
        }
    }

    #[test]
    fn valid_positions_are_conserved_across_settings() {
        let frames: Vec<FeatureFrame> =
            (0..23).map(|i| frame(&format!("s{i}"), 1 + i % 6)).collect();
        let total: usize = frames.iter().map(|f| f.steps).sum();
        for sort in [true, false] {
            for batch_size in [1, 4, 7, 23] {
                let batches = make_batches(frames.clone(), batch_size, sort, 5);
                let valid: usize = batches.iter().map(Batch::valid_positions).sum();
                assert_eq!(valid, total, "sort={sort} batch_size={batch_size}");
            }
        }
    }

    #[test]
    fn feature_columns_come_back_per_step() {
        let frames = vec![frame("a", 2), frame("b", 2)];
        let batch = Batch::from_frames(&frames);
        assert_eq!(batch.feature_column(0, 0), &[1, 1]);
        assert_eq!(batch.feature_column(1, 5), &[2, 2]);
        assert_eq!(batch.targets_at(1), &[101, 101]);
    }

    #[test]
    fn final_step_restriction_keeps_one_position_per_live_session() {
        let mut concealed = frame("c", 4);
        concealed.mask[3] = false; // final booking hidden, as in test trips
        let mut ghost = frame("g", 2);
        ghost.mask = vec![false, false];
        let frames = vec![frame("a", 3), frame("b", 5), concealed, ghost];
        let batch = Batch::from_frames(&frames);
        let restricted = batch.restrict_mask_to_final_step();

        assert_eq!(restricted.valid_positions(), 3, "one per session with any valid step");
        assert_eq!(batch.final_valid_step(0), Some(2));
        assert_eq!(batch.final_valid_step(1), Some(4));
        assert_eq!(batch.final_valid_step(2), Some(2), "falls back to last unmasked step");
        assert_eq!(batch.final_valid_step(3), None);
        for t in 0..restricted.max_steps {
            for b in 0..restricted.size() {
                let expected = batch.final_valid_step(b) == Some(t);
                assert_eq!(restricted.mask_at(t)[b], expected);
                // Everything but the mask is untouched.
                assert_eq!(restricted.targets_at(t)[b], batch.targets_at(t)[b]);
            }
        }
    }

    #[test]
    fn same_seed_same_batch_order() {
        let frames: Vec<FeatureFrame> =
            (0..40).map(|i| frame(&format!("s{i}"), 1 + i % 8)).collect();
        let a = make_batches(frames.clone(), 8, true, 7);
        let b = make_batches(frames.clone(), 8, true, 7);
        assert_eq!(a, b);
        let ids = |batches: &[Batch]| -> Vec<String> {
            batches.iter().flat_map(|x| x.utrip_ids.clone()).collect()
        };
        let c = make_batches(frames, 8, true, 8);
        assert_ne!(ids(&a), ids(&c), "different seed should reorder batches");
    }
}
