//! Session-length analytics: the post-removal length histogram and its
//! prefix-augmented counterpart.

use std::collections::BTreeMap;
use std::fmt;

use super::Session;

/// Length statistics over a corpus. Lengths are counted *after removing
/// the final observation of every session* (its target is what the model
/// predicts, so it is not part of the observable sequence); a raw session
/// of n bookings therefore lands in bin n − 1, and raw length-1 sessions
/// vanish. The prefix histogram counts every leading subsequence of the
/// remaining steps, which is the corpus an explicit prefix augmentation
/// would train on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthReport {
    pub base_counts: BTreeMap<usize, u64>,
    pub prefix_counts: BTreeMap<usize, u64>,
}

pub fn length_distribution_report(sessions: &[Session]) -> LengthReport {
    let mut base_counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut prefix_counts: BTreeMap<usize, u64> = BTreeMap::new();
    for session in sessions {
        let steps = session.len().saturating_sub(1);
        if steps == 0 {
            continue;
        }
        *base_counts.entry(steps).or_default() += 1;
        for prefix_len in 1..=steps {
            *prefix_counts.entry(prefix_len).or_default() += 1;
        }
    }
    LengthReport { base_counts, prefix_counts }
}

impl LengthReport {
    pub fn base_total(&self) -> u64 {
        self.base_counts.values().sum()
    }

    pub fn prefix_total(&self) -> u64 {
        self.prefix_counts.values().sum()
    }

    pub fn base_proportions(&self) -> BTreeMap<usize, f64> {
        proportions(&self.base_counts)
    }

    pub fn prefix_proportions(&self) -> BTreeMap<usize, f64> {
        proportions(&self.prefix_counts)
    }

    /// Mean prediction steps per session — exactly the factor by which
    /// prefix augmentation multiplies the sequence count.
    pub fn mean_steps(&self) -> f64 {
        if self.base_total() == 0 {
            return 0.0;
        }
        self.prefix_total() as f64 / self.base_total() as f64
    }
}

fn proportions(counts: &BTreeMap<usize, u64>) -> BTreeMap<usize, f64> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    counts.iter().map(|(&l, &c)| (l, c as f64 / total as f64)).collect()
}

impl fmt::Display for LengthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "length  sessions  proportion  prefixes  proportion")?;
        let base_prop = self.base_proportions();
        let prefix_prop = self.prefix_proportions();
        let mut lengths: Vec<usize> = self.base_counts.keys().chain(self.prefix_counts.keys()).copied().collect();
        lengths.sort_unstable();
        lengths.dedup();
        for l in lengths {
            writeln!(
                f,
                "{:>6}  {:>8}  {:>10.4}  {:>8}  {:>10.4}",
                l,
                self.base_counts.get(&l).copied().unwrap_or(0),
                base_prop.get(&l).copied().unwrap_or(0.0),
                self.prefix_counts.get(&l).copied().unwrap_or(0),
                prefix_prop.get(&l).copied().unwrap_or(0.0),
            )?;
        }
        writeln!(
            f,
            "total   {:>8}  {:>10}  {:>8}  ({:.2}x more)",
            self.base_total(),
            "",
            self.prefix_total(),
            self.mean_steps(),
        )
    }
}
