//! Zone sets, the adjacent discriminator map, the partition-aware mutation
//! engine and the accuracy-guided zones calibrator.
//!
//! A zone set splits clients `0..n` into `m` disjoint zones of equal size.
//! Zone order matters: a client in zone `j` is screened against the aggregate
//! of zone `(j + 1) % m`.

use std::fmt;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZoneSet {
    zones: Vec<Vec<usize>>,
    n: usize,
}

/// First problem found in a candidate zone set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZoneViolation {
    TooFewZones(usize),
    OutOfRange { client: usize },
    Duplicate { client: usize },
    Uncovered { client: usize },
    UnequalSizes { sizes: Vec<usize> },
}

impl fmt::Display for ZoneViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZoneViolation::TooFewZones(m) => write!(f, "need at least 2 zones, got {m}"),
            ZoneViolation::OutOfRange { client } => write!(f, "client {client} out of range"),
            ZoneViolation::Duplicate { client } => write!(f, "client {client} is in more than one zone"),
            ZoneViolation::Uncovered { client } => write!(f, "client {client} is in no zone"),
            ZoneViolation::UnequalSizes { sizes } => write!(f, "zone sizes differ: {sizes:?}"),
        }
    }
}

impl ZoneSet {
    /// Builds a zone set without checking it; see [`ZoneSet::validate`].
    pub fn from_raw(zones: Vec<Vec<usize>>, n: usize) -> Self {
        ZoneSet { zones, n }
    }

    /// Builds and validates a zone set over clients `0..n`.
    pub fn new(zones: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let z = ZoneSet { zones, n };
        z.validate()
            .map_err(|v| Error::InvalidZoneSet(v.to_string()))?;
        Ok(z)
    }

    pub fn zones(&self) -> &[Vec<usize>] {
        &self.zones
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.zones.len()
    }

    /// Every violation, in the order range, duplicates, coverage, sizes.
    pub fn violations(&self) -> Vec<ZoneViolation> {
        let mut out = Vec::new();
        if self.zones.len() < 2 {
            out.push(ZoneViolation::TooFewZones(self.zones.len()));
        }
        let mut seen = vec![0usize; self.n];
        for &c in self.zones.iter().flatten() {
            match seen.get_mut(c) {
                Some(count) => *count += 1,
                None => out.push(ZoneViolation::OutOfRange { client: c }),
            }
        }
        for (c, &count) in seen.iter().enumerate() {
            if count > 1 {
                out.push(ZoneViolation::Duplicate { client: c });
            }
        }
        for (c, &count) in seen.iter().enumerate() {
            if count == 0 {
                out.push(ZoneViolation::Uncovered { client: c });
            }
        }
        let sizes: Vec<usize> = self.zones.iter().map(Vec::len).collect();
        if sizes.windows(2).any(|w| w[0] != w[1]) {
            out.push(ZoneViolation::UnequalSizes { sizes });
        }
        out
    }

    pub fn validate(&self) -> std::result::Result<(), ZoneViolation> {
        match self.violations().into_iter().next() {
            Some(v) => Err(v),
            None => Ok(()),
        }
    }

    pub fn zone_of(&self, client: usize) -> Result<usize> {
        self.zones
            .iter()
            .position(|z| z.contains(&client))
            .ok_or(Error::UnknownClient(client))
    }

    /// `zone_of` for every client at once.
    pub fn assignment(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.n];
        for (j, z) in self.zones.iter().enumerate() {
            for &c in z {
                if c < self.n {
                    owner[c] = j;
                }
            }
        }
        owner
    }

    /// Index of the zone whose aggregate screens `client`: the next zone,
    /// wrapping from the last back to the first.
    pub fn discriminator_of(&self, client: usize) -> Result<usize> {
        if client >= self.n {
            return Err(Error::UnknownClient(client));
        }
        Ok((self.zone_of(client)? + 1) % self.m())
    }

    /// Members sorted within each zone; zone order is preserved.
    pub fn canonical(&self) -> ZoneSet {
        let mut zones = self.zones.clone();
        zones.iter_mut().for_each(|z| z.sort_unstable());
        ZoneSet { zones, n: self.n }
    }

    fn flatten(&self) -> Vec<usize> {
        self.zones.concat()
    }

    fn from_flat(flat: &[usize], m: usize, n: usize) -> ZoneSet {
        let size = flat.len() / m;
        ZoneSet {
            zones: flat.chunks(size).map(<[usize]>::to_vec).collect(),
            n,
        }
    }
}

fn check_divisible(n: usize, m: usize) -> Result<()> {
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::ZonesNotDivisible { n, m });
    }
    Ok(())
}

/// Uniformly random zone set: shuffle client ids and cut into `m` blocks.
pub fn random_zone_set(n: usize, m: usize, seed: u64) -> Result<ZoneSet> {
    if m < 2 {
        return Err(Error::TooFewZones(m));
    }
    check_divisible(n, m)?;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut seed::rng_from(seed));
    Ok(ZoneSet::from_flat(&ids, m, n))
}

/// Number of ordered partitions of `n` clients into `m` equal zones:
/// `n! / ((n/m)!)^m`.
pub fn count_zone_maps(n: usize, m: usize) -> Result<BigUint> {
    check_divisible(n, m)?;
    let fact = |k: usize| (1..=k).fold(BigUint::from(1u32), |acc, i| acc * BigUint::from(i));
    let block = fact(n / m);
    Ok(fact(n) / block.pow(m as u32))
}

/// Zone sets ordered by decreasing accuracy, with bounded length and no
/// duplicates up to within-zone order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestingInputs {
    entries: Vec<(ZoneSet, f64)>,
    capacity: usize,
}

impl InterestingInputs {
    pub fn new(capacity: usize) -> Self {
        InterestingInputs {
            entries: Vec::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn entries(&self) -> &[(ZoneSet, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts `(zones, gta)`. A duplicate keeps one entry with the newest
    /// score; ties in score keep insertion order.
    pub fn insert(&mut self, zones: ZoneSet, gta: f64) {
        let canon = zones.canonical();
        self.entries.retain(|(z, _)| *z != canon);
        let pos = self
            .entries
            .iter()
            .position(|(_, g)| *g < gta)
            .unwrap_or(self.entries.len());
        self.entries.insert(pos, (canon, gta));
        self.entries.truncate(self.capacity);
    }

    /// Rank-proportional pick: the best of `L` entries has weight `L`, the
    /// worst weight 1.
    pub fn select<'a>(&'a self, rng: &mut ChaCha8Rng) -> Result<&'a ZoneSet> {
        let len = self.entries.len();
        if len == 0 {
            return Err(Error::EmptyQueue);
        }
        let total = len * (len + 1) / 2;
        let mut ticket = rng.random_range(0..total);
        for (rank, (z, _)) in self.entries.iter().enumerate() {
            let weight = len - rank;
            if ticket < weight {
                return Ok(z);
            }
            ticket -= weight;
        }
        unreachable!("ticket drawn below the total weight")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationWeights {
    pub swap: f64,
    pub k_swap: f64,
    pub crossover: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        MutationWeights {
            swap: 0.5,
            k_swap: 0.3,
            crossover: 0.2,
        }
    }
}

/// Exchanges one client between two distinct zones.
fn swap_once(zones: &mut [Vec<usize>], rng: &mut ChaCha8Rng) {
    let m = zones.len();
    let a = rng.random_range(0..m);
    let b = (a + rng.random_range(1..m)) % m;
    let i = rng.random_range(0..zones[a].len());
    let j = rng.random_range(0..zones[b].len());
    let tmp = zones[a][i];
    zones[a][i] = zones[b][j];
    zones[b][j] = tmp;
}

/// Exchanges `zones[a][i]` and `zones[b][j]`.
pub fn swap_clients(z: &ZoneSet, a: usize, i: usize, b: usize, j: usize) -> ZoneSet {
    let mut zones = z.zones.clone();
    let tmp = zones[a][i];
    zones[a][i] = zones[b][j];
    zones[b][j] = tmp;
    ZoneSet { zones, n: z.n }
}

/// Keeps parent A's first `cut` zones, fills the rest in parent B's client
/// order, then replaces clients already used by the still-missing ones in
/// ascending order.
pub fn crossover(a: &ZoneSet, b: &ZoneSet, cut: usize) -> ZoneSet {
    let size = a.n / a.m();
    let mut flat = a.flatten();
    flat.truncate(cut * size);
    flat.extend_from_slice(&b.flatten()[cut * size..]);

    let mut used = vec![false; a.n];
    let mut duplicates = Vec::new();
    for (pos, &c) in flat.iter().enumerate() {
        if used[c] {
            duplicates.push(pos);
        } else {
            used[c] = true;
        }
    }
    let missing = (0..a.n).filter(|&c| !used[c]);
    for (pos, c) in duplicates.into_iter().zip(missing) {
        flat[pos] = c;
    }
    ZoneSet::from_flat(&flat, a.m(), a.n)
}

/// One mutant derived from a rank-proportionally chosen queue entry.
pub fn mutate(
    queue: &InterestingInputs,
    weights: &MutationWeights,
    rng: &mut ChaCha8Rng,
) -> Result<ZoneSet> {
    let base = queue.select(rng)?;
    let mut zones = base.zones.clone();
    let total = weights.swap + weights.k_swap + weights.crossover;
    let roll = if total > 0.0 {
        rng.random::<f64>() * total
    } else {
        0.0
    };
    if roll < weights.swap || total <= 0.0 {
        swap_once(&mut zones, rng);
    } else if roll < weights.swap + weights.k_swap {
        for _ in 0..rng.random_range(2..=4) {
            swap_once(&mut zones, rng);
        }
    } else {
        let other = queue.select(rng)?;
        let cut = rng.random_range(1..base.m());
        let child = crossover(base, other, cut);
        if child.canonical() != base.canonical() {
            return Ok(child);
        }
        // same parent twice, or parents agreeing on the tail
        swap_once(&mut zones, rng);
    }
    Ok(ZoneSet { zones, n: base.n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorConfig {
    /// Mutation iterations per calibration.
    pub iterations: usize,
    /// Calibration interval in epochs.
    pub interval: usize,
    pub queue_capacity: usize,
    pub weights: MutationWeights,
    pub seed: u64,
}

impl Default for CalibratorConfig {
    fn default() -> Self {
        CalibratorConfig {
            iterations: 50,
            interval: 5,
            queue_capacity: 32,
            weights: MutationWeights::default(),
            seed: 0,
        }
    }
}

impl CalibratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("tau must be >= 1".into()));
        }
        if self.interval == 0 {
            return Err(Error::Config("xi must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mutation-based search over zone sets, keeping its queue of interesting
/// inputs between calls.
#[derive(Debug, Clone)]
pub struct ZonesCalibrator {
    config: CalibratorConfig,
    queue: InterestingInputs,
    calls: u64,
}

impl ZonesCalibrator {
    pub fn new(config: CalibratorConfig) -> Result<Self> {
        config.validate()?;
        let queue = InterestingInputs::new(config.queue_capacity);
        Ok(ZonesCalibrator {
            config,
            queue,
            calls: 0,
        })
    }

    pub fn queue(&self) -> &InterestingInputs {
        &self.queue
    }

    pub fn config(&self) -> &CalibratorConfig {
        &self.config
    }

    /// Runs `iterations` rounds of mutate, score, enqueue. Returns the best
    /// zone set seen and its score; the input is replaced only by a mutant
    /// with strictly higher fitness.
    pub fn calibrate<F>(&mut self, current: &ZoneSet, current_gta: f64, mut fitness: F) -> (ZoneSet, f64)
    where
        F: FnMut(&ZoneSet) -> f64,
    {
        let mut rng = seed::derived_rng(self.config.seed, Stream::Calibrator, &[self.calls]);
        self.calls += 1;

        self.queue.insert(current.clone(), current_gta);
        let mut best = (current.clone(), current_gta);
        for _ in 0..self.config.iterations {
            let mutant = mutate(&self.queue, &self.config.weights, &mut rng)
                .expect("queue holds at least the current zone set");
            let gta = fitness(&mutant);
            self.queue.insert(mutant.clone(), gta);
            if gta > best.1 {
                best = (mutant, gta);
            }
        }
        best
    }
}

/// One-shot calibration with a fresh queue.
pub fn calibrate<F>(current: &ZoneSet, current_gta: f64, fitness: F, config: &CalibratorConfig) -> Result<ZoneSet>
where
    F: FnMut(&ZoneSet) -> f64,
{
    let mut cal = ZonesCalibrator::new(config.clone())?;
    Ok(cal.calibrate(current, current_gta, fitness).0)
}
