//! Online cache decisions: admission, prefetch candidate selection, the
//! two-expert regret-minimizing eviction, classical baselines and Belady.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissionConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AdmissionConfig {
    fn default() -> Self {
        AdmissionConfig {
            alpha: 3000.0,
            beta: 7000.0,
        }
    }
}

/// Admit a missed line when it is predicted to be either frequent or reused soon.
pub fn admit(f: f64, r: f64, cfg: &AdmissionConfig) -> bool {
    f > cfg.alpha || r < cfg.beta
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefetchCandidate {
    pub address: u32,
    pub probability: f64,
}

fn rank(a: &(Vec<u8>, f64), b: &(Vec<u8>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// The `n` most probable byte strings under independent per-position
/// distributions, most probable first, ties in byte-lexicographic order.
pub fn beam_search(rows: &[&[f64]], n: usize) -> Vec<(Vec<u8>, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let mut beams: Vec<(Vec<u8>, f64)> = vec![(Vec::new(), 1.0)];
    for row in rows {
        // Only a row's n best bytes can appear in the n best extensions.
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(n);
        let mut next = Vec::with_capacity(beams.len() * order.len());
        for (prefix, p) in &beams {
            for &byte in &order {
                let mut s = prefix.clone();
                s.push(byte as u8);
                next.push((s, p * row[byte]));
            }
        }
        next.sort_by(rank);
        next.truncate(n);
        beams = next;
    }
    beams
}

/// Top-`n` addresses from four byte distributions.
pub fn select_prefetch_candidates<T: Scalar>(byte_probs: &[Vec<T>], n: usize) -> Vec<PrefetchCandidate> {
    assert_eq!(byte_probs.len(), 4, "one distribution per address byte");
    let rows: Vec<Vec<f64>> = byte_probs
        .iter()
        .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    beam_search(&refs, n)
        .into_iter()
        .map(|(bytes, probability)| PrefetchCandidate {
            address: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            probability,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expert {
    Frequency,
    Reuse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvictionCandidateScore {
    pub address: u32,
    pub frequency: f64,
    pub reuse: f64,
    /// Larger means more recently used; breaks ties in favour of evicting the
    /// least recently used.
    pub last_access: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeCarConfig {
    pub lambda: f64,
    /// Regret discount base; `None` selects `0.005^(1/capacity)`.
    pub discount: Option<f64>,
    pub capacity: usize,
    pub seed: u64,
}

impl LeCarConfig {
    pub fn new(capacity: usize, seed: u64) -> Self {
        LeCarConfig {
            lambda: 0.45,
            discount: None,
            capacity,
            seed,
        }
    }

    pub fn discount_base(&self) -> f64 {
        self.discount
            .unwrap_or_else(|| 0.005f64.powf(1.0 / self.capacity.max(1) as f64))
    }
}

/// Expert weights, per-expert ghost histories and the sampling RNG.
#[derive(Debug, Clone)]
pub struct LeCarState {
    w_f: f64,
    w_r: f64,
    lambda: f64,
    discount: f64,
    capacity: usize,
    ghost_f: VecDeque<(u32, u64)>,
    ghost_r: VecDeque<(u32, u64)>,
    rng: ChaCha8Rng,
    ghost_hits: u64,
}

impl LeCarState {
    pub fn new(cfg: &LeCarConfig) -> Self {
        LeCarState {
            w_f: 0.5,
            w_r: 0.5,
            lambda: cfg.lambda,
            discount: cfg.discount_base(),
            capacity: cfg.capacity.max(1),
            ghost_f: VecDeque::new(),
            ghost_r: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            ghost_hits: 0,
        }
    }

    /// Overrides the weights; they are renormalized to sum to one.
    pub fn with_weights(mut self, w_f: f64, w_r: f64) -> Result<Self> {
        let s = w_f + w_r;
        if !(w_f >= 0.0 && w_r >= 0.0 && s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("invalid expert weights ({w_f}, {w_r})")));
        }
        self.w_f = w_f / s;
        self.w_r = w_r / s;
        Ok(self)
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.w_f, self.w_r)
    }

    /// Number of misses that hit a ghost list so far.
    pub fn ghost_hits(&self) -> u64 {
        self.ghost_hits
    }

    pub fn ghost(&self, expert: Expert) -> impl Iterator<Item = &(u32, u64)> {
        match expert {
            Expert::Frequency => self.ghost_f.iter(),
            Expert::Reuse => self.ghost_r.iter(),
        }
    }

    fn take_ghost(list: &mut VecDeque<(u32, u64)>, address: u32) -> Option<u64> {
        let pos = list.iter().position(|&(a, _)| a == address)?;
        list.remove(pos).map(|(_, t)| t)
    }

    /// Rewards the expert that did not evict `address`, if it is a ghost.
    pub fn update(&mut self, address: u32, now: u64) {
        let (t0, other) = if let Some(t0) = Self::take_ghost(&mut self.ghost_f, address) {
            (t0, Expert::Reuse)
        } else if let Some(t0) = Self::take_ghost(&mut self.ghost_r, address) {
            (t0, Expert::Frequency)
        } else {
            return;
        };
        self.ghost_hits += 1;
        let regret = self.discount.powf(now.saturating_sub(t0) as f64);
        let boost = (self.lambda * regret).exp();
        match other {
            Expert::Frequency => self.w_f *= boost,
            Expert::Reuse => self.w_r *= boost,
        }
        let s = self.w_f + self.w_r;
        self.w_f /= s;
        self.w_r /= s;
    }

    pub fn sample_expert(&mut self) -> Expert {
        if self.rng.gen::<f64>() < self.w_f {
            Expert::Frequency
        } else {
            Expert::Reuse
        }
    }

    /// Records `address`, evicted by `expert` at `now`, in that expert's history.
    pub fn record_eviction(&mut self, expert: Expert, address: u32, now: u64) {
        Self::take_ghost(&mut self.ghost_f, address);
        Self::take_ghost(&mut self.ghost_r, address);
        let list = match expert {
            Expert::Frequency => &mut self.ghost_f,
            Expert::Reuse => &mut self.ghost_r,
        };
        if list.len() == self.capacity {
            list.pop_front();
        }
        list.push_back((address, now));
    }

    /// Samples an expert and returns the index of its victim among `scores`.
    pub fn choose_victim(&mut self, scores: &[EvictionCandidateScore], now: u64) -> Result<(usize, Expert)> {
        if scores.is_empty() {
            return Err(Error::Logic("eviction requested with no candidates".into()));
        }
        let expert = self.sample_expert();
        let idx = expert_victim(expert, scores);
        self.record_eviction(expert, scores[idx].address, now);
        Ok((idx, expert))
    }
}

/// Victim of a single expert: least frequency or greatest reuse distance,
/// least recently used among ties.
pub fn expert_victim(expert: Expert, scores: &[EvictionCandidateScore]) -> usize {
    let key = |s: &EvictionCandidateScore| match expert {
        Expert::Frequency => s.frequency.max(0.0),
        Expert::Reuse => -s.reuse.max(0.0),
    };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let (k, kb) = (key(s), key(&scores[best]));
        if k < kb || (k == kb && s.last_access < scores[best].last_access) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Baseline {
    Lru,
    Lfu,
    Fifo,
    Lifo,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Lru, Baseline::Lfu, Baseline::Fifo, Baseline::Lifo];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Lru => "lru",
            Baseline::Lfu => "lfu",
            Baseline::Fifo => "fifo",
            Baseline::Lifo => "lifo",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown baseline policy `{s}`")))
    }
}

/// Per-resident bookkeeping the baselines decide on. Timestamps are
/// strictly increasing event counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidentMeta {
    pub address: u32,
    pub last_access: u64,
    pub inserted: u64,
    /// Accesses since insertion, including the inserting one.
    pub count: u64,
}

/// Index of the resident a classical policy evicts.
pub fn baseline_evict(policy: Baseline, residents: &[ResidentMeta]) -> Result<usize> {
    if residents.is_empty() {
        return Err(Error::Logic(format!("{policy} eviction from an empty cache")));
    }
    let pick = |key: &dyn Fn(&ResidentMeta) -> (u64, u64)| {
        (0..residents.len())
            .min_by_key(|&i| key(&residents[i]))
            .unwrap()
    };
    Ok(match policy {
        Baseline::Lru => pick(&|m| (m.last_access, 0)),
        Baseline::Lfu => pick(&|m| (m.count, m.last_access)),
        Baseline::Fifo => pick(&|m| (m.inserted, 0)),
        Baseline::Lifo => pick(&|m| (u64::MAX - m.inserted, 0)),
    })
}

/// Index of the resident whose next use is farthest away (never counts as
/// infinitely far), lower address among ties.
pub fn belady_evict(residents: &[(u32, Option<usize>)]) -> Result<usize> {
    if residents.is_empty() {
        return Err(Error::Logic("belady eviction from an empty cache".into()));
    }
    let key = |&(a, next): &(u32, Option<usize>)| (next.map_or(u64::MAX, |n| n as u64), std::cmp::Reverse(a));
    Ok((0..residents.len())
        .max_by_key(|&i| key(&residents[i]))
        .unwrap())
}
