//! CSV ingestion for the nine-column booking schema.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{Booking, DataError, Session};

pub const REQUIRED_COLUMNS: [&str; 9] = [
    "user_id",
    "checkin",
    "checkout",
    "city_id",
    "device_class",
    "affiliate_id",
    "booker_country",
    "hotel_country",
    "utrip_id",
];

/// A row that had to be skipped, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default, Clone)]
pub struct ParseReport {
    pub rows_read: u64,
    pub issues: Vec<RowIssue>,
}

impl ParseReport {
    pub fn rows_skipped(&self) -> u64 {
        self.issues.len() as u64
    }
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub sessions: Vec<Session>,
    pub report: ParseReport,
}

pub fn parse_sessions_path(path: &Path) -> Result<ParseOutcome, DataError> {
    let file = std::fs::File::open(path)?;
    parse_sessions(std::io::BufReader::new(file))
}

/// Reads the booking CSV, groups rows by `utrip_id` (first-appearance
/// order), and sorts each group by check-in date, keeping file order on
/// ties. A missing header column is a hard error; rows with unparseable
/// dates or a checkout before checkin are skipped and reported with their
/// line numbers.
pub fn parse_sessions<R: Read>(reader: R) -> Result<ParseOutcome, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new().flexible(true).from_reader(reader);

    let headers = csv_reader.headers()?.clone();
    let mut column: HashMap<&str, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        column.insert(name.trim(), i);
    }
    let mut col = [0usize; 9];
    for (slot, name) in col.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = *column.get(name).ok_or(DataError::MissingColumn(name))?;
    }
    let [c_user, c_checkin, c_checkout, c_city, c_device, c_affiliate, c_booker, c_hotel, c_utrip] = col;

    let mut report = ParseReport::default();
    let mut trip_order: Vec<String> = Vec::new();
    let mut trips: HashMap<String, Vec<(usize, Booking)>> = HashMap::new();
    let mut file_order = 0usize;

    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        report.rows_read += 1;

        let field = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();
        let utrip_id = field(c_utrip);
        if utrip_id.is_empty() {
            report.issues.push(RowIssue { line, reason: "empty utrip_id".into() });
            continue;
        }

        let checkin = match parse_date(&field(c_checkin)) {
            Some(d) => d,
            None => {
                report.issues.push(RowIssue {
                    line,
                    reason: format!("unparseable checkin date `{}`", field(c_checkin)),
                });
                continue;
            }
        };
        let checkout_raw = field(c_checkout);
        let checkout = if checkout_raw.is_empty() {
            None
        } else {
            match parse_date(&checkout_raw) {
                Some(d) => Some(d),
                None => {
                    report.issues.push(RowIssue {
                        line,
                        reason: format!("unparseable checkout date `{checkout_raw}`"),
                    });
                    continue;
                }
            }
        };
        if let Some(out) = checkout {
            if out < checkin {
                report.issues.push(RowIssue {
                    line,
                    reason: format!("checkout {out} before checkin {checkin}"),
                });
                continue;
            }
        }

        let booking = Booking {
            user_id: field(c_user),
            checkin,
            checkout,
            city_id: field(c_city),
            device_class: field(c_device),
            affiliate_id: field(c_affiliate),
            booker_country: field(c_booker),
            hotel_country: field(c_hotel),
            utrip_id: utrip_id.clone(),
        };
        trips.entry(utrip_id.clone()).or_insert_with(|| {
            trip_order.push(utrip_id.clone());
            Vec::new()
        });
        trips.get_mut(&utrip_id).expect("just inserted").push((file_order, booking));
        file_order += 1;
    }

    let mut sessions = Vec::with_capacity(trip_order.len());
    for utrip_id in trip_order {
        let mut rows = trips.remove(&utrip_id).expect("tracked in order list");
        rows.sort_by_key(|(order, b)| (b.checkin, *order));
        sessions.push(Session {
            utrip_id,
            bookings: rows.into_iter().map(|(_, b)| b).collect(),
        });
    }

    Ok(ParseOutcome { sessions, report })
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Writes sessions back out in the same nine-column schema the parser
/// reads; the synthetic generator goes through this to emit corpora.
pub fn write_sessions_csv<W: Write>(sessions: &[Session], writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REQUIRED_COLUMNS)?;
    for session in sessions {
        for b in &session.bookings {
            w.write_record([
                b.user_id.as_str(),
                &b.checkin.to_string(),
                &b.checkout.map(|d| d.to_string()).unwrap_or_default(),
                b.city_id.as_str(),
                b.device_class.as_str(),
                b.affiliate_id.as_str(),
                b.booker_country.as_str(),
                b.hotel_country.as_str(),
                b.utrip_id.as_str(),
            ])?;
        }
    }
    w.flush().map_err(DataError::Io)?;
    Ok(())
}
