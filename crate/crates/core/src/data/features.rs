//! Per-step feature engineering over a session.

use chrono::Datelike;

use super::{Booking, DataError, Session, Vocab, NUM_FEATURES};

/// A featurized session: one row of feature indices per prediction step.
/// Step `t` takes booking `t` as input and predicts the city of booking
/// `t + 1`; masked-off steps (concealed targets, padding) carry no loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureFrame {
    pub utrip_id: String,
    pub steps: usize,
    pub features: Vec<[usize; NUM_FEATURES]>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl FeatureFrame {
    /// A frame truncated to its first `steps` prediction steps. Used by the
    /// prefix oracle, which replays every prefix independently.
    pub fn prefix(&self, steps: usize) -> FeatureFrame {
        assert!(steps >= 1 && steps <= self.steps, "prefix of {steps} from {}", self.steps);
        FeatureFrame {
            utrip_id: self.utrip_id.clone(),
            steps,
            features: self.features[..steps].to_vec(),
            targets: self.targets[..steps].to_vec(),
            mask: self.mask[..steps].to_vec(),
        }
    }
}

/// Turns a session of `n ≥ 2` bookings into `n − 1` prediction steps with
/// the fixed 14-column feature layout. Sessions shorter than 2 have no
/// prediction step and are rejected; callers filter those out up front.
///
/// A concealed final booking still contributes its contextually-known
/// fields (check-in date, booker country, affiliate) as next-step features
/// of the preceding step; its unknown city makes that step's target
/// UNKNOWN with the mask cleared.
pub fn featurize(session: &Session, vocab: &Vocab) -> Result<FeatureFrame, DataError> {
    let n = session.len();
    if n < 2 {
        return Err(DataError::TooShort { utrip_id: session.utrip_id.clone(), len: n });
    }
    let steps = n - 1;
    let mut features = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    let mut mask = Vec::with_capacity(steps);

    for t in 0..steps {
        let cur = &session.bookings[t];
        let next = &session.bookings[t + 1];
        features.push(step_features(cur, next, vocab));
        if next.is_concealed() {
            targets.push(super::vocab::UNKNOWN);
            mask.push(false);
        } else {
            targets.push(vocab.city_index(&next.city_id));
            mask.push(true);
        }
    }

    Ok(FeatureFrame { utrip_id: session.utrip_id.clone(), steps, features, targets, mask })
}

fn step_features(cur: &Booking, next: &Booking, vocab: &Vocab) -> [usize; NUM_FEATURES] {
    let transition = cur.checkout.map(|out| (next.checkin - out).num_days());
    [
        vocab.city_index(&cur.city_id),
        vocab.hotel_country_index(&cur.hotel_country),
        vocab.booker_country_index(&cur.booker_country),
        vocab.booker_country_index(&next.booker_country),
        vocab.day_index(cur.checkin.day()),
        vocab.month_index(cur.checkin.month()),
        vocab.year_index(cur.checkin.year()),
        vocab.day_index(next.checkin.day()),
        vocab.duration_index(cur.duration_days()),
        vocab.duration_index(next.duration_days()),
        vocab.device_class_index(&cur.device_class),
        vocab.transition_index(transition),
        vocab.affiliate_id_index(&cur.affiliate_id),
        vocab.affiliate_id_index(&next.affiliate_id),
    ]
}
