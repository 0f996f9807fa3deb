pub mod bench;
pub mod eval;
pub mod predict;
pub mod synth;
pub mod train;
pub mod verify;

use std::collections::BTreeMap;
use std::path::Path;

use sessrec_core::data::{featurize, parse_sessions_path, FeatureFrame, Session, Vocab};

use crate::failure::{data, Failure};

/// Seed precedence: explicit flag, then `SSE_SEED`, then the default.
pub(crate) fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64, Failure> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("SSE_SEED") {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            Failure::Usage(format!("SSE_SEED must be an unsigned integer, got `{raw}`"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(default),
        Err(e) => Err(Failure::Usage(format!("SSE_SEED: {e}"))),
    }
}

/// Splits a `key=value key=value …` line into a map for manifests.
pub(crate) fn kv_to_map(kv: &str) -> BTreeMap<String, String> {
    kv.split_whitespace()
        .filter_map(|piece| piece.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Parses a booking CSV; malformed rows were skipped by the parser and are
/// reported here as warnings, a missing column is a hard error.
pub(crate) fn read_sessions(path: &Path) -> Result<Vec<Session>, Failure> {
    let outcome = parse_sessions_path(path)
        .map_err(|e| data(format!("{}: {e}", path.display())))?;
    for issue in &outcome.report.issues {
        eprintln!("warning: {}:{}: skipped row: {}", path.display(), issue.line, issue.reason);
    }
    Ok(outcome.sessions)
}

/// Featurizes every usable session; sessions below two bookings have no
/// prediction step and are skipped with a warning.
pub(crate) fn featurize_usable(
    sessions: &[Session],
    vocab: &Vocab,
) -> Result<Vec<FeatureFrame>, Failure> {
    let mut frames = Vec::with_capacity(sessions.len());
    let mut skipped = 0usize;
    for session in sessions {
        if session.len() < 2 {
            eprintln!(
                "warning: session {} has {} booking(s), needs 2; skipped",
                session.utrip_id,
                session.len()
            );
            skipped += 1;
            continue;
        }
        frames.push(featurize(session, vocab).map_err(data)?);
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} session(s) shorter than 2 bookings");
    }
    Ok(frames)
}
