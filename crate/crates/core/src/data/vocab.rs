//! Dense index vocabularies with a reserved UNKNOWN slot.
//!
//! String-valued features get first-appearance dense indices built from
//! training data only. Calendar and duration features use fixed integer
//! buckets so their cardinality never depends on the data; years are the
//! one numeric feature whose range is open-ended, so they are indexed like
//! strings.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use chrono::Datelike;

use super::{DataError, Session, NUM_FEATURES};

/// Index 0 in every vocabulary.
pub const UNKNOWN: usize = 0;

const DAY_CARD: usize = 32; // UNKNOWN + days 1..=31
const MONTH_CARD: usize = 13; // UNKNOWN + months 1..=12

#[derive(Debug, Clone, PartialEq, Eq)]
struct StringLookup {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl StringLookup {
    fn new() -> Self {
        Self { values: vec!["<unk>".to_string()], index: HashMap::new() }
    }

    fn insert(&mut self, value: &str) {
        if value.is_empty() || self.index.contains_key(value) {
            return;
        }
        self.index.insert(value.to_string(), self.values.len());
        self.values.push(value.to_string());
    }

    fn get(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(UNKNOWN)
    }

    fn cardinality(&self) -> usize {
        self.values.len()
    }
}

/// Clamp bounds for the open-ended numeric features. Values above the cap
/// (or below zero) land in the boundary bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabCaps {
    pub duration_cap: i64,
    pub transition_cap: i64,
}

impl Default for VocabCaps {
    fn default() -> Self {
        Self { duration_cap: 30, transition_cap: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    caps: VocabCaps,
    city: StringLookup,
    hotel_country: StringLookup,
    booker_country: StringLookup,
    device_class: StringLookup,
    affiliate_id: StringLookup,
    years: Vec<i32>,
    year_index: HashMap<i32, usize>,
}

/// Builds vocabularies from (training-fold) sessions, first-appearance
/// order. Sessions from other folds must still featurize cleanly: anything
/// unseen maps to UNKNOWN.
pub fn build_vocab(sessions: &[Session], caps: VocabCaps) -> Result<Vocab, DataError> {
    if sessions.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut v = Vocab {
        caps,
        city: StringLookup::new(),
        hotel_country: StringLookup::new(),
        booker_country: StringLookup::new(),
        device_class: StringLookup::new(),
        affiliate_id: StringLookup::new(),
        years: Vec::new(),
        year_index: HashMap::new(),
    };
    for session in sessions {
        for b in &session.bookings {
            v.city.insert(&b.city_id);
            v.hotel_country.insert(&b.hotel_country);
            v.booker_country.insert(&b.booker_country);
            v.device_class.insert(&b.device_class);
            v.affiliate_id.insert(&b.affiliate_id);
            v.insert_year(b.checkin.year());
        }
    }
    Ok(v)
}

impl Vocab {
    fn insert_year(&mut self, year: i32) {
        if !self.year_index.contains_key(&year) {
            // +1 keeps slot 0 for UNKNOWN.
            self.year_index.insert(year, self.years.len() + 1);
            self.years.push(year);
        }
    }

    pub fn caps(&self) -> VocabCaps {
        self.caps
    }

    pub fn city_index(&self, raw: &str) -> usize {
        self.city.get(raw)
    }

    /// Raw city value for a dense index; None for UNKNOWN or out of range.
    pub fn city_value(&self, index: usize) -> Option<&str> {
        if index == UNKNOWN || index >= self.city.cardinality() {
            None
        } else {
            Some(&self.city.values[index])
        }
    }

    pub fn hotel_country_index(&self, raw: &str) -> usize {
        self.hotel_country.get(raw)
    }

    pub fn booker_country_index(&self, raw: &str) -> usize {
        self.booker_country.get(raw)
    }

    pub fn device_class_index(&self, raw: &str) -> usize {
        self.device_class.get(raw)
    }

    pub fn affiliate_id_index(&self, raw: &str) -> usize {
        self.affiliate_id.get(raw)
    }

    pub fn year_index(&self, year: i32) -> usize {
        self.year_index.get(&year).copied().unwrap_or(UNKNOWN)
    }

    pub fn day_index(&self, day: u32) -> usize {
        debug_assert!((1..=31).contains(&day));
        day.clamp(1, 31) as usize
    }

    pub fn month_index(&self, month: u32) -> usize {
        debug_assert!((1..=12).contains(&month));
        month.clamp(1, 12) as usize
    }

    /// Duration bucket: None (concealed checkout) is UNKNOWN, otherwise
    /// the day count clamped into [0, cap], shifted past the UNKNOWN slot.
    pub fn duration_index(&self, days: Option<i64>) -> usize {
        match days {
            None => UNKNOWN,
            Some(d) => d.clamp(0, self.caps.duration_cap) as usize + 1,
        }
    }

    pub fn transition_index(&self, days: Option<i64>) -> usize {
        match days {
            None => UNKNOWN,
            Some(d) => d.clamp(0, self.caps.transition_cap) as usize + 1,
        }
    }

    pub fn n_cities(&self) -> usize {
        self.city.cardinality()
    }

    /// Cardinality of the vocabulary behind a feature column (0..14).
    pub fn column_cardinality(&self, column: usize) -> usize {
        match column {
            0 => self.city.cardinality(),
            1 => self.hotel_country.cardinality(),
            2 | 3 => self.booker_country.cardinality(),
            4 | 7 => DAY_CARD,
            5 => MONTH_CARD,
            6 => self.years.len() + 1,
            8 | 9 => self.caps.duration_cap as usize + 2,
            10 => self.device_class.cardinality(),
            11 => self.caps.transition_cap as usize + 2,
            12 | 13 => self.affiliate_id.cardinality(),
            _ => panic!("feature column {column} out of range (have {NUM_FEATURES})"),
        }
    }

    /// Plain-text serialization: caps, then one section per lookup with one
    /// raw value per line (index = line position + 1, slot 0 is UNKNOWN).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        writeln!(w, "sessrec-vocab v1")?;
        writeln!(w, "caps duration={} transition={}", self.caps.duration_cap, self.caps.transition_cap)?;
        for (name, lookup) in self.sections() {
            writeln!(w, "[{name}]")?;
            for value in &lookup.values[1..] {
                writeln!(w, "{value}")?;
            }
        }
        writeln!(w, "[year]")?;
        for year in &self.years {
            writeln!(w, "{year}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, DataError> {
        let bad = |msg: &str| DataError::BadVocabFile(msg.to_string());
        let mut lines = r.lines();
        let magic = lines.next().ok_or_else(|| bad("empty file"))??;
        if magic != "sessrec-vocab v1" {
            return Err(bad(&format!("unrecognized magic line `{magic}`")));
        }
        let caps_line = lines.next().ok_or_else(|| bad("missing caps line"))??;
        let caps = parse_caps(&caps_line)?;

        let mut v = Vocab {
            caps,
            city: StringLookup::new(),
            hotel_country: StringLookup::new(),
            booker_country: StringLookup::new(),
            device_class: StringLookup::new(),
            affiliate_id: StringLookup::new(),
            years: Vec::new(),
            year_index: HashMap::new(),
        };
        let mut section = String::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_string();
                continue;
            }
            match section.as_str() {
                "city" => v.city.insert(&line),
                "hotel_country" => v.hotel_country.insert(&line),
                "booker_country" => v.booker_country.insert(&line),
                "device_class" => v.device_class.insert(&line),
                "affiliate_id" => v.affiliate_id.insert(&line),
                "year" => {
                    let year: i32 = line
                        .parse()
                        .map_err(|_| bad(&format!("bad year entry `{line}`")))?;
                    v.year_index.insert(year, v.years.len() + 1);
                    v.years.push(year);
                }
                other => return Err(bad(&format!("value outside any known section (`{other}`)"))),
            }
        }
        Ok(v)
    }

    fn sections(&self) -> [(&'static str, &StringLookup); 5] {
        [
            ("city", &self.city),
            ("hotel_country", &self.hotel_country),
            ("booker_country", &self.booker_country),
            ("device_class", &self.device_class),
            ("affiliate_id", &self.affiliate_id),
        ]
    }
}

fn parse_caps(line: &str) -> Result<VocabCaps, DataError> {
    let bad = |msg: String| DataError::BadVocabFile(msg);
    let rest = line
        .strip_prefix("caps ")
        .ok_or_else(|| bad(format!("expected caps line, got `{line}`")))?;
    let mut caps = VocabCaps::default();
    for piece in rest.split_whitespace() {
        let (key, value) = piece
            .split_once('=')
            .ok_or_else(|| bad(format!("bad caps entry `{piece}`")))?;
        let value: i64 = value.parse().map_err(|_| bad(format!("bad caps value `{piece}`")))?;
        match key {
            "duration" => caps.duration_cap = value,
            "transition" => caps.transition_cap = value,
            other => return Err(bad(format!("unknown caps key `{other}`"))),
        }
    }
    Ok(caps)
}
