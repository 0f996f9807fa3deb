//! Session ingestion and preparation: CSV parsing, vocabularies, feature
//! engineering, stratified folds, padded batches, and a synthetic generator
//! for experiments that need learnable structure without the real corpus.

mod batch;
mod features;
mod folds;
mod parse;
mod report;
mod synthetic;
mod vocab;

pub use batch::{make_batches, Batch};
pub use features::{featurize, FeatureFrame};
pub use folds::{stratified_kfold, stratified_kfold_by};
pub use parse::{parse_sessions, parse_sessions_path, write_sessions_csv, ParseOutcome, ParseReport, RowIssue};
pub use report::{length_distribution_report, LengthReport};
pub use synthetic::{generate_synthetic, LengthDistribution, SynthConfig};
pub use vocab::{build_vocab, Vocab, VocabCaps, UNKNOWN};

use chrono::NaiveDate;
use thiserror::Error;

/// Number of feature columns per prediction step.
pub const NUM_FEATURES: usize = 14;

/// Fixed feature-column order. Everything downstream (embedding tables,
/// checkpoints, oracle replays) indexes features by this position.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "city",
    "hotel_country",
    "booker_country",
    "next_booker_country",
    "checkin_day",
    "checkin_month",
    "checkin_year",
    "next_checkin_day",
    "duration",
    "next_duration",
    "device_class",
    "transition_days",
    "affiliate_id",
    "next_affiliate_id",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no sessions to work with")]
    EmptyInput,
    #[error("session `{utrip_id}` has {len} booking(s); need at least 2 for one prediction step")]
    TooShort { utrip_id: String, len: usize },
    #[error("cannot split {sessions} sessions into {k} folds")]
    BadFoldCount { k: usize, sessions: usize },
    #[error("invalid length distribution: {0}")]
    BadDistribution(String),
    #[error("invalid synthetic config: {0}")]
    BadSynthConfig(String),
    #[error("malformed vocab file: {0}")]
    BadVocabFile(String),
}

/// One hotel reservation. `checkout` and the id fields may be concealed
/// (empty / absent) on the final booking of an evaluation trip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Booking {
    pub user_id: String,
    pub checkin: NaiveDate,
    pub checkout: Option<NaiveDate>,
    /// Empty string means the city is concealed (prediction target).
    pub city_id: String,
    pub device_class: String,
    pub affiliate_id: String,
    pub booker_country: String,
    /// Empty string means concealed alongside the city.
    pub hotel_country: String,
    pub utrip_id: String,
}

impl Booking {
    /// Stay length in nights, when the checkout date is known.
    pub fn duration_days(&self) -> Option<i64> {
        self.checkout.map(|out| (out - self.checkin).num_days())
    }

    pub fn is_concealed(&self) -> bool {
        self.city_id.is_empty()
    }
}

/// A trip: bookings sorted ascending by check-in date, ties kept in file
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub utrip_id: String,
    pub bookings: Vec<Booking>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.bookings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bookings.is_empty()
    }

    /// True when the last booking's city is hidden and must be predicted.
    pub fn has_concealed_final(&self) -> bool {
        self.bookings.last().is_some_and(Booking::is_concealed)
    }
}
