//! Seeded synthetic corpus with learnable structure: cities live in
//! geographic blocks and a first-order Markov chain keeps most transitions
//! inside the current block, so a sequence model has something real to
//! pick up at desk scale.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Booking, DataError, Session};

/// Discrete distribution over session lengths (number of bookings).
#[derive(Debug, Clone, PartialEq)]
pub struct LengthDistribution {
    bins: Vec<(usize, f64)>,
}

impl LengthDistribution {
    pub fn new(bins: Vec<(usize, f64)>) -> Result<Self, DataError> {
        if bins.is_empty() {
            return Err(DataError::BadDistribution("no length bins".into()));
        }
        let mut total = 0.0;
        for &(length, mass) in &bins {
            if length == 0 {
                return Err(DataError::BadDistribution("length 0 bin".into()));
            }
            if !(mass >= 0.0) {
                return Err(DataError::BadDistribution(format!(
                    "negative or NaN mass {mass} for length {length}"
                )));
            }
            total += mass;
        }
        if total <= 0.0 {
            return Err(DataError::BadDistribution("total mass is zero".into()));
        }
        Ok(Self { bins })
    }

    /// Session-length proportions measured on the real trip corpus this
    /// engine targets, restricted to lengths ≥ 2 so every generated session
    /// has at least one prediction step. The published table lumps lengths
    /// above 10 into one 0.028 bin; that tail is split evenly across 11
    /// and 12.
    pub fn default_train() -> Self {
        Self::new(vec![
            (2, 0.003),
            (3, 0.452),
            (4, 0.229),
            (5, 0.126),
            (6, 0.074),
            (7, 0.044),
            (8, 0.027),
            (9, 0.016),
            (10, 0.010),
            (11, 0.014),
            (12, 0.014),
        ])
        .expect("static distribution is valid")
    }

    pub fn bins(&self) -> &[(usize, f64)] {
        &self.bins
    }

    /// Normalized mass per length.
    pub fn proportions(&self) -> Vec<(usize, f64)> {
        let total: f64 = self.bins.iter().map(|&(_, m)| m).sum();
        self.bins.iter().map(|&(l, m)| (l, m / total)).collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = self.bins.iter().map(|&(_, m)| m).sum();
        let mut r = rng.random::<f64>() * total;
        for &(length, mass) in &self.bins {
            r -= mass;
            if r < 0.0 {
                return length;
            }
        }
        self.bins.last().expect("validated nonempty").0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub n_cities: usize,
    pub block_count: usize,
    /// Probability that a transition stays inside the current city block.
    pub within_block_mass: f64,
    pub lengths: LengthDistribution,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_sessions: usize, n_cities: usize, block_count: usize, seed: u64) -> Self {
        Self {
            n_sessions,
            n_cities,
            block_count,
            within_block_mass: 0.85,
            lengths: LengthDistribution::default_train(),
            seed,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.block_count < 1 || self.n_cities < self.block_count {
            return Err(DataError::BadSynthConfig(format!(
                "need n_cities ≥ block_count ≥ 1, got {} cities in {} blocks",
                self.n_cities, self.block_count
            )));
        }
        if !(0.0..=1.0).contains(&self.within_block_mass) {
            return Err(DataError::BadSynthConfig(format!(
                "within_block_mass {} outside [0,1]",
                self.within_block_mass
            )));
        }
        Ok(())
    }
}

const DEVICES: [&str; 3] = ["desktop", "mobile", "tablet"];
const DEVICE_WEIGHTS: [f64; 3] = [0.6, 0.3, 0.1];
const STAY_WEIGHTS: [f64; 7] = [0.35, 0.30, 0.15, 0.09, 0.05, 0.03, 0.03]; // nights 1..=7
const GAP_WEIGHTS: [f64; 8] = [0.45, 0.25, 0.12, 0.07, 0.05, 0.03, 0.02, 0.01]; // days 0..=7
const N_BOOKER_COUNTRIES: usize = 8;
const N_AFFILIATES: usize = 20;

/// Deterministic given the config: the same seed reproduces the corpus
/// booking for booking.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Session>, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let blocks = BlockMap::new(config.n_cities, config.block_count);
    let start_date = NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date");

    let booker_weights: Vec<f64> = (0..N_BOOKER_COUNTRIES).map(|j| 1.0 / (j + 1) as f64).collect();
    let affiliate_weights: Vec<f64> = (0..N_AFFILIATES).map(|j| 1.0 / (j + 1) as f64).collect();

    let mut sessions = Vec::with_capacity(config.n_sessions);
    for i in 0..config.n_sessions {
        let length = config.lengths.sample(&mut rng);
        let user_id = i.to_string();
        let utrip_id = format!("{i}_1");
        let booker_country = format!("B{}", weighted_pick(&mut rng, &booker_weights));

        let mut city = rng.random_range(0..config.n_cities);
        let mut checkin = start_date + Days::new(rng.random_range(0..540));
        let mut bookings = Vec::with_capacity(length);
        for _ in 0..length {
            let nights = 1 + weighted_pick(&mut rng, &STAY_WEIGHTS) as u64;
            let checkout = checkin + Days::new(nights);
            bookings.push(Booking {
                user_id: user_id.clone(),
                checkin,
                checkout: Some(checkout),
                city_id: city_name(city),
                device_class: DEVICES[weighted_pick(&mut rng, &DEVICE_WEIGHTS)].to_string(),
                affiliate_id: (7000 + weighted_pick(&mut rng, &affiliate_weights)).to_string(),
                booker_country: booker_country.clone(),
                hotel_country: format!("C{}", blocks.block_of(city)),
                utrip_id: utrip_id.clone(),
            });
            city = blocks.next_city(&mut rng, city, config.within_block_mass);
            let gap = weighted_pick(&mut rng, &GAP_WEIGHTS) as u64;
            checkin = checkout + Days::new(gap);
        }
        sessions.push(Session { utrip_id, bookings });
    }
    Ok(sessions)
}

fn city_name(index: usize) -> String {
    (1000 + index).to_string()
}

/// Contiguous near-equal partition of city indices into blocks.
struct BlockMap {
    n_cities: usize,
    /// Half-open [start, end) range per block.
    ranges: Vec<(usize, usize)>,
    block_of: Vec<usize>,
}

impl BlockMap {
    fn new(n_cities: usize, block_count: usize) -> Self {
        let base = n_cities / block_count;
        let extra = n_cities % block_count;
        let mut ranges = Vec::with_capacity(block_count);
        let mut start = 0;
        for b in 0..block_count {
            let size = base + usize::from(b < extra);
            ranges.push((start, start + size));
            start += size;
        }
        let mut block_of = vec![0; n_cities];
        for (b, &(s, e)) in ranges.iter().enumerate() {
            for slot in &mut block_of[s..e] {
                *slot = b;
            }
        }
        Self { n_cities, ranges, block_of }
    }

    fn block_of(&self, city: usize) -> usize {
        self.block_of[city]
    }

    /// Markov step: with probability `within_mass` a uniform draw over the
    /// other cities of the current block, otherwise a uniform draw outside
    /// it. Degenerate layouts (single block, or a lone city in its block)
    /// fold the missing branch into the other one.
    fn next_city(&self, rng: &mut ChaCha8Rng, current: usize, within_mass: f64) -> usize {
        if self.n_cities == 1 {
            return current;
        }
        let (start, end) = self.ranges[self.block_of[current]];
        let in_block = end - start - 1; // excluding the current city
        let out_block = self.n_cities - (end - start);

        let go_within = if in_block == 0 {
            false
        } else if out_block == 0 {
            true
        } else {
            rng.random::<f64>() < within_mass
        };

        if go_within {
            let j = rng.random_range(0..in_block);
            let candidate = start + j;
            candidate + usize::from(candidate >= current)
        } else {
            let j = rng.random_range(0..out_block);
            if j < start {
                j
            } else {
                j + (end - start)
            }
        }
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        r -= w;
        if r < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
