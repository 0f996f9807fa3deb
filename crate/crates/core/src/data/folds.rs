//! Length-stratified k-fold splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Session};

/// Splits session indices into `k` disjoint folds with matching length
/// distributions: sessions are grouped by length, each group is shuffled,
/// and members are dealt round-robin. The dealing cursor continues across
/// groups so remainders spread over different folds instead of piling onto
/// fold 0.
pub fn stratified_kfold(
    sessions: &[Session],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    stratified_kfold_by(sessions, Session::len, k, seed)
}

/// The same dealing scheme over any item type; `stratum` maps an item to
/// its stratification key (session length, frame step count, ...).
pub fn stratified_kfold_by<T>(
    items: &[T],
    stratum: impl Fn(&T) -> usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if k < 2 || k > items.len() {
        return Err(DataError::BadFoldCount { k, sessions: items.len() });
    }

    let mut by_length: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_length.entry(stratum(item)).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for group in by_length.values_mut() {
        group.shuffle(&mut rng);
        for &idx in group.iter() {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    Ok(folds)
}
