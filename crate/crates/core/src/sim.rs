//! Trace-driven cache simulation for the learned policy and the baselines.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{distribution_vector, KdeWindow};
use crate::model::{DeapModel, EmbeddingCache};
use crate::policy::{
    admit, baseline_evict, belady_evict, select_prefetch_candidates, AdmissionConfig, Baseline,
    EvictionCandidateScore, Expert, LeCarConfig, LeCarState, ResidentMeta,
};
use crate::scalar::Scalar;
use crate::trace::{LabeledTrace, TraceRecord};

/// A resident line and the bookkeeping every policy may consult.
#[derive(Debug, Clone, PartialEq)]
pub struct Resident {
    pub meta: ResidentMeta,
    /// Trace index of the next access after the most recent one.
    pub next_use: Option<usize>,
    /// Inserted by a prefetch and not accessed since.
    pub prefetched: bool,
    /// Scores kept with the line, used when scores are not refreshed.
    pub scores: (f64, f64),
    /// Trace index at which `scores` were computed.
    pub scored_at: usize,
}

/// Fixed-capacity set of resident lines.
#[derive(Debug, Clone)]
pub struct CacheState {
    capacity: usize,
    entries: Vec<Resident>,
    index: HashMap<u32, usize>,
    tick: u64,
}

impl CacheState {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("cache capacity must be at least 1".into()));
        }
        Ok(CacheState {
            capacity,
            entries: Vec::with_capacity(capacity),
            index: HashMap::with_capacity(capacity),
            tick: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn contains(&self, address: u32) -> bool {
        self.index.contains_key(&address)
    }

    pub fn residents(&self) -> &[Resident] {
        &self.entries
    }

    pub fn metas(&self) -> Vec<ResidentMeta> {
        self.entries.iter().map(|e| e.meta).collect()
    }

    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    /// Records a hit on a resident line. Returns whether it had been prefetched and unused.
    pub fn touch(&mut self, address: u32, next_use: Option<usize>) -> bool {
        let t = self.next_tick();
        let e = &mut self.entries[self.index[&address]];
        e.meta.last_access = t;
        e.meta.count += 1;
        e.next_use = next_use;
        std::mem::take(&mut e.prefetched)
    }

    pub fn insert(&mut self, address: u32, next_use: Option<usize>, prefetched: bool, scores: (f64, f64)) {
        assert!(!self.is_full(), "insert into a full cache");
        assert!(!self.contains(address), "insert of a resident line");
        let t = self.next_tick();
        self.index.insert(address, self.entries.len());
        self.entries.push(Resident {
            meta: ResidentMeta {
                address,
                last_access: t,
                inserted: t,
                count: u64::from(!prefetched),
            },
            next_use,
            prefetched,
            scores,
            scored_at: 0,
        });
    }

    pub fn rescore(&mut self, address: u32, scores: (f64, f64), at: usize) {
        let e = &mut self.entries[self.index[&address]];
        e.scores = scores;
        e.scored_at = at;
    }

    pub fn remove_at(&mut self, i: usize) -> Resident {
        let e = self.entries.swap_remove(i);
        self.index.remove(&e.meta.address);
        if i < self.entries.len() {
            self.index.insert(self.entries[i].meta.address, i);
        }
        e
    }
}

/// The most recent misses, oldest first.
#[derive(Debug, Clone)]
pub struct MissBuffer {
    capacity: usize,
    records: VecDeque<TraceRecord>,
}

impl MissBuffer {
    pub fn new(capacity: usize) -> Self {
        MissBuffer {
            capacity: capacity.max(1),
            records: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, r: TraceRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn recent(&self, n: usize) -> Vec<TraceRecord> {
        let skip = self.records.len().saturating_sub(n);
        self.records.iter().skip(skip).copied().collect()
    }

    /// `n` entries drawn without replacement, kept in buffer order.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<TraceRecord> {
        let n = n.min(self.records.len());
        let mut idx = sample(rng, self.records.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.records[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyId {
    Learned,
    Lru,
    Lfu,
    Fifo,
    Lifo,
    Belady,
}

impl PolicyId {
    pub const ALL: [PolicyId; 6] = [
        PolicyId::Learned,
        PolicyId::Lru,
        PolicyId::Lfu,
        PolicyId::Fifo,
        PolicyId::Lifo,
        PolicyId::Belady,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyId::Learned => "learned",
            PolicyId::Lru => "lru",
            PolicyId::Lfu => "lfu",
            PolicyId::Fifo => "fifo",
            PolicyId::Lifo => "lifo",
            PolicyId::Belady => "belady",
        }
    }

    pub fn baseline(self) -> Option<Baseline> {
        match self {
            PolicyId::Lru => Some(Baseline::Lru),
            PolicyId::Lfu => Some(Baseline::Lfu),
            PolicyId::Fifo => Some(Baseline::Fifo),
            PolicyId::Lifo => Some(Baseline::Lifo),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        PolicyId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

/// Hit statistics of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: PolicyId,
    pub accesses: u64,
    pub hits: u64,
    pub hit_rate: f64,
    /// Hits per evaluation batch, in trace order.
    pub batch_hits: Vec<u64>,
}

impl PolicyResult {
    fn new(policy: PolicyId) -> Self {
        PolicyResult {
            policy,
            accesses: 0,
            hits: 0,
            hit_rate: 0.0,
            batch_hits: Vec::new(),
        }
    }

    fn record(&mut self, hit: bool, batch_size: usize) {
        if self.accesses as usize % batch_size.max(1) == 0 {
            self.batch_hits.push(0);
        }
        self.accesses += 1;
        if hit {
            self.hits += 1;
            *self.batch_hits.last_mut().unwrap() += 1;
        }
    }

    fn finish(mut self) -> Self {
        self.hit_rate = if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        };
        self
    }
}

/// Demand-fetch run of a classical policy or Belady.
pub fn run_baseline(trace: &LabeledTrace, policy: PolicyId, capacity: usize, batch_size: usize) -> Result<PolicyResult> {
    Ok(run_baselines(trace, &[policy], capacity, batch_size)?.remove(0))
}

/// Runs several demand-fetch policies side by side in one pass over the trace.
pub fn run_baselines(
    trace: &LabeledTrace,
    policies: &[PolicyId],
    capacity: usize,
    batch_size: usize,
) -> Result<Vec<PolicyResult>> {
    if let Some(p) = policies.iter().find(|p| **p == PolicyId::Learned) {
        return Err(Error::Config(format!("`{p}` is not a demand-fetch baseline")));
    }
    let mut caches = policies
        .iter()
        .map(|_| CacheState::new(capacity))
        .collect::<Result<Vec<_>>>()?;
    let mut results: Vec<PolicyResult> = policies.iter().map(|&p| PolicyResult::new(p)).collect();
    for (i, r) in trace.records().iter().enumerate() {
        let next = trace.next_use[i];
        for ((cache, res), &policy) in caches.iter_mut().zip(&mut results).zip(policies) {
            let hit = cache.contains(r.address);
            if hit {
                cache.touch(r.address, next);
            } else {
                if cache.is_full() {
                    let victim = match policy.baseline() {
                        Some(b) => baseline_evict(b, &cache.metas())?,
                        None => {
                            let view: Vec<(u32, Option<usize>)> = cache
                                .residents()
                                .iter()
                                .map(|e| (e.meta.address, e.next_use))
                                .collect();
                            belady_evict(&view)?
                        }
                    };
                    cache.remove_at(victim);
                }
                cache.insert(r.address, next, false, (0.0, 0.0));
            }
            debug_assert!(cache.len() <= capacity);
            res.record(hit, batch_size);
        }
    }
    Ok(results.into_iter().map(PolicyResult::finish).collect())
}

/// Where the two eviction experts get their (frequency, reuse) scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// Decoder predictions.
    Model,
    /// True future frequency and reuse distance from the trace labels.
    Oracle,
    /// In-cache access count and time since last access.
    Past,
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(ScoreSource::Model),
            "oracle" => Ok(ScoreSource::Oracle),
            "past" => Ok(ScoreSource::Past),
            _ => Err(Error::Config(format!("unknown score source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferSampling {
    Recent,
    Uniform,
}

impl FromStr for BufferSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recent" => Ok(BufferSampling::Recent),
            "uniform" => Ok(BufferSampling::Uniform),
            _ => Err(Error::Config(format!("unknown buffer sampling `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreCache {
    /// Rescore every resident at each eviction.
    Fresh,
    /// Reuse the scores computed when the line was inserted.
    Stale,
    /// Score each line when it is accessed. At eviction the predicted reuse
    /// distance is reduced by the time since that access; a line past its
    /// predicted reuse is taken to be dead and ranks as farthest.
    Access,
}

impl FromStr for ScoreCache {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(ScoreCache::Fresh),
            "stale" => Ok(ScoreCache::Stale),
            "access" => Ok(ScoreCache::Access),
            _ => Err(Error::Config(format!("unknown score cache mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub capacity: usize,
    pub miss_buffer: usize,
    pub prefetch_interval: usize,
    pub sequence_length: usize,
    /// Candidates per prefetch; zero disables prefetching.
    pub prefetch_n: usize,
    /// `None` admits every miss.
    pub admission: Option<AdmissionConfig>,
    pub lecar_lambda: f64,
    pub lecar_discount: Option<f64>,
    /// Pins the initial expert weights.
    pub initial_weights: Option<(f64, f64)>,
    pub scores: ScoreSource,
    pub score_cache: ScoreCache,
    pub buffer_sampling: BufferSampling,
    pub kde_floor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            capacity: 32,
            miss_buffer: 50,
            prefetch_interval: 30,
            sequence_length: 30,
            prefetch_n: 5,
            admission: Some(AdmissionConfig::default()),
            lecar_lambda: 0.45,
            lecar_discount: None,
            initial_weights: None,
            scores: ScoreSource::Model,
            score_cache: ScoreCache::Access,
            buffer_sampling: BufferSampling::Recent,
            kde_floor: crate::kde::DEFAULT_BANDWIDTH_FLOOR,
            batch_size: 10_000,
            seed: 0,
        }
    }
}

/// Counters specific to the learned policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LearnedStats {
    pub admissions: u64,
    pub rejections: u64,
    pub prefetch_issued: u64,
    pub prefetch_inserted: u64,
    pub prefetch_useful: u64,
    pub evictions_by_frequency: u64,
    pub evictions_by_reuse: u64,
    pub ghost_hits: u64,
    pub final_weights: (f64, f64),
}

/// What happened at one step of the learned policy.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Hit,
    Miss {
        admitted: bool,
        evicted: Option<(u32, Expert)>,
        prefetched: Vec<u32>,
    },
}

/// Exact future labels of every address at the current position.
struct OracleView<'t> {
    trace: &'t LabeledTrace,
    last_seen: HashMap<u32, usize>,
    first_seen: HashMap<u32, (usize, u64)>,
}

impl<'t> OracleView<'t> {
    fn new(trace: &'t LabeledTrace) -> Self {
        let mut first_seen: HashMap<u32, (usize, u64)> = HashMap::new();
        for (i, r) in trace.records().iter().enumerate() {
            first_seen.entry(r.address).or_insert((i, 0)).1 += 1;
        }
        OracleView {
            trace,
            last_seen: HashMap::new(),
            first_seen,
        }
    }

    fn observe(&mut self, r: &TraceRecord) {
        self.last_seen.insert(r.address, r.index);
    }

    /// (remaining accesses after `now`, timesteps until the next one).
    fn scores(&self, address: u32, now: usize) -> (f64, f64) {
        let cap = self.trace.cap as f64;
        match self.last_seen.get(&address) {
            Some(&i) => (
                self.trace.future_frequency[i] as f64,
                self.trace.next_use[i].map_or(cap, |n| (n - now) as f64),
            ),
            None => match self.first_seen.get(&address) {
                Some(&(first, count)) if first > now => (count as f64, (first - now) as f64),
                _ => (0.0, cap),
            },
        }
    }
}

/// The learned cache-management policy: admission, prefetching and
/// two-expert eviction around a trained model.
pub struct LearnedPolicy<'a, T> {
    model: Option<&'a DeapModel<T>>,
    cfg: SimConfig,
    cache: CacheState,
    buffer: MissBuffer,
    window: KdeWindow<T>,
    lecar: LeCarState,
    embeddings: EmbeddingCache<T>,
    rng: ChaCha8Rng,
    oracle: Option<OracleView<'a>>,
    distribution: Vec<T>,
    last_prefetch: Option<usize>,
    pub stats: LearnedStats,
}

impl<'a, T: Scalar> LearnedPolicy<'a, T> {
    pub fn new(model: Option<&'a DeapModel<T>>, trace: Option<&'a LabeledTrace>, cfg: SimConfig) -> Result<Self> {
        if cfg.scores == ScoreSource::Model && model.is_none() {
            return Err(Error::Config("model scores require a model".into()));
        }
        if cfg.prefetch_n > 0 && model.is_none() {
            return Err(Error::Config("prefetching requires a model".into()));
        }
        if cfg.scores == ScoreSource::Oracle && trace.is_none() {
            return Err(Error::Config("oracle scores require a labeled trace".into()));
        }
        if cfg.sequence_length == 0 || cfg.sequence_length > cfg.miss_buffer {
            return Err(Error::Config(format!(
                "prefetch sequence length {} must lie in [1, miss buffer {}]",
                cfg.sequence_length, cfg.miss_buffer
            )));
        }
        let mut lecar = LeCarState::new(&LeCarConfig {
            lambda: cfg.lecar_lambda,
            discount: cfg.lecar_discount,
            capacity: cfg.capacity,
            seed: cfg.seed,
        });
        if let Some((wf, wr)) = cfg.initial_weights {
            lecar = lecar.with_weights(wf, wr)?;
        }
        let probes = model.map_or(0, |m| m.dims.kde_probes);
        Ok(LearnedPolicy {
            model,
            cache: CacheState::new(cfg.capacity)?,
            buffer: MissBuffer::new(cfg.miss_buffer),
            window: KdeWindow::new(cfg.miss_buffer, T::lit(cfg.kde_floor)),
            lecar,
            embeddings: EmbeddingCache::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_b0ff),
            oracle: trace.filter(|_| cfg.scores == ScoreSource::Oracle).map(OracleView::new),
            distribution: vec![T::zero(); probes],
            last_prefetch: None,
            stats: LearnedStats::default(),
            cfg,
        })
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn lecar(&self) -> &LeCarState {
        &self.lecar
    }

    pub fn miss_buffer(&self) -> &MissBuffer {
        &self.buffer
    }

    fn score(&mut self, address: u32, resident: Option<&Resident>, now: usize) -> Result<(f64, f64)> {
        let (f, r) = match self.cfg.scores {
            ScoreSource::Model => {
                let model = self.model.expect("checked at construction");
                let a = self.embeddings.address_ref(model, address);
                let (f, r) = model.decode_future(a, &self.distribution)?;
                (f.to_f64_lossy(), r.to_f64_lossy())
            }
            ScoreSource::Oracle => self.oracle.as_ref().unwrap().scores(address, now),
            ScoreSource::Past => match resident {
                Some(e) => (e.meta.count as f64, (self.cache.tick - e.meta.last_access) as f64),
                None => (0.0, 0.0),
            },
        };
        Ok((f.max(0.0), r.max(0.0)))
    }

    fn evict_one(&mut self, now: usize) -> Result<(u32, Expert)> {
        let mut scores = Vec::with_capacity(self.cache.len());
        for i in 0..self.cache.len() {
            let e = self.cache.entries[i].clone();
            let (f, r) = match self.cfg.score_cache {
                ScoreCache::Stale if self.cfg.scores == ScoreSource::Model => e.scores,
                ScoreCache::Access if self.cfg.scores == ScoreSource::Model => {
                    let (f, r) = e.scores;
                    let age = (now - e.scored_at) as f64;
                    (f, if age > r { f64::MAX } else { r - age })
                }
                _ => self.score(e.meta.address, Some(&e), now)?,
            };
            scores.push(EvictionCandidateScore {
                address: e.meta.address,
                frequency: f,
                reuse: r,
                last_access: e.meta.last_access,
            });
        }
        let (idx, expert) = self.lecar.choose_victim(&scores, now as u64)?;
        match expert {
            Expert::Frequency => self.stats.evictions_by_frequency += 1,
            Expert::Reuse => self.stats.evictions_by_reuse += 1,
        }
        let e = self.cache.remove_at(idx);
        Ok((e.meta.address, expert))
    }

    fn prefetch(&mut self, now: usize) -> Result<Vec<u32>> {
        let Some(model) = self.model else {
            return Ok(Vec::new());
        };
        let seq = match self.cfg.buffer_sampling {
            BufferSampling::Recent => self.buffer.recent(self.cfg.sequence_length),
            BufferSampling::Uniform => self.buffer.sample(self.cfg.sequence_length, &mut self.rng),
        };
        let steps: Vec<Vec<T>> = seq.iter().map(|r| self.embeddings.step(model, r)).collect();
        let refs: Vec<&[T]> = steps.iter().map(Vec::as_slice).collect();
        let probs = model
            .head_logits(&refs)?
            .iter()
            .map(|l| crate::nn::softmax(l, T::one()))
            .collect::<Result<Vec<_>>>()?;
        let mut inserted = Vec::new();
        for c in select_prefetch_candidates(&probs, self.cfg.prefetch_n) {
            self.stats.prefetch_issued += 1;
            if self.cache.contains(c.address) {
                continue;
            }
            let scores = self.score(c.address, None, now)?;
            if self.cache.is_full() {
                self.evict_one(now)?;
            }
            self.cache.insert(c.address, None, true, scores);
            self.cache.rescore(c.address, scores, now);
            self.stats.prefetch_inserted += 1;
            inserted.push(c.address);
        }
        Ok(inserted)
    }

    /// Processes one access. `record.index` must be the current timestep.
    pub fn step(&mut self, record: &TraceRecord) -> Result<StepOutcome> {
        let now = record.index;
        let next_use = self
            .oracle
            .as_ref()
            .and_then(|o| o.trace.next_use.get(now).copied().flatten());
        if self.cache.contains(record.address) {
            if self.cache.touch(record.address, next_use) {
                self.stats.prefetch_useful += 1;
            }
            if self.cfg.score_cache == ScoreCache::Access && self.cfg.scores == ScoreSource::Model {
                let scores = self.score(record.address, None, now)?;
                self.cache.rescore(record.address, scores, now);
            }
            if let Some(o) = self.oracle.as_mut() {
                o.observe(record);
            }
            return Ok(StepOutcome::Hit);
        }

        self.buffer.push(*record);
        if let Some(model) = self.model {
            self.window.push(self.embeddings.step(model, record));
            self.distribution = distribution_vector(&self.window, model.dims.kde_probes)?.values;
        }
        self.lecar.update(record.address, now as u64);
        if let Some(o) = self.oracle.as_mut() {
            o.observe(record);
        }
        let scores = self.score(record.address, None, now)?;
        let admitted = self
            .cfg
            .admission
            .as_ref()
            .is_none_or(|a| admit(scores.0, scores.1, a));
        let mut evicted = None;
        if admitted {
            self.stats.admissions += 1;
            if self.cache.is_full() {
                evicted = Some(self.evict_one(now)?);
            }
            self.cache.insert(record.address, next_use, false, scores);
            self.cache.rescore(record.address, scores, now);
        } else {
            self.stats.rejections += 1;
        }

        let mut prefetched = Vec::new();
        let due = self
            .last_prefetch
            .is_none_or(|t| now - t >= self.cfg.prefetch_interval);
        if self.cfg.prefetch_n > 0 && due && self.buffer.len() >= self.cfg.sequence_length {
            self.last_prefetch = Some(now);
            prefetched = self.prefetch(now)?;
        }
        debug_assert!(self.cache.len() <= self.cfg.capacity);
        Ok(StepOutcome::Miss {
            admitted,
            evicted,
            prefetched,
        })
    }

    pub fn finish(mut self) -> LearnedStats {
        self.stats.ghost_hits = self.lecar.ghost_hits();
        self.stats.final_weights = self.lecar.weights();
        self.stats
    }
}

/// Runs the learned policy over the trace.
pub fn run_learned<T: Scalar>(
    trace: &LabeledTrace,
    model: Option<&DeapModel<T>>,
    cfg: &SimConfig,
) -> Result<(PolicyResult, LearnedStats)> {
    let mut policy = LearnedPolicy::new(model, Some(trace), cfg.clone())?;
    let mut result = PolicyResult::new(PolicyId::Learned);
    for r in trace.records() {
        let hit = matches!(policy.step(r)?, StepOutcome::Hit);
        result.record(hit, cfg.batch_size);
    }
    Ok((result.finish(), policy.finish()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub capacity: usize,
    pub accesses: u64,
    pub batch_size: usize,
    pub policies: Vec<PolicyResult>,
    pub learned: Option<LearnedStats>,
}

impl SimulationReport {
    pub fn hit_rate(&self, policy: PolicyId) -> Option<f64> {
        self.policies
            .iter()
            .find(|p| p.policy == policy)
            .map(|p| p.hit_rate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("simulation report: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,accesses,hits,hit_rate\n");
        for p in &self.policies {
            out.push_str(&format!("{},{},{},{:.6}\n", p.policy, p.accesses, p.hits, p.hit_rate));
        }
        out
    }
}

/// Runs every requested policy over the same trace and capacity.
pub fn run_simulation<T: Scalar>(
    trace: &LabeledTrace,
    model: Option<&DeapModel<T>>,
    cfg: &SimConfig,
    policies: &[PolicyId],
) -> Result<SimulationReport> {
    let mut results = Vec::with_capacity(policies.len());
    let mut learned = None;
    let demand: Vec<PolicyId> = policies
        .iter()
        .copied()
        .filter(|p| *p != PolicyId::Learned)
        .collect();
    let mut demand_results = run_baselines(trace, &demand, cfg.capacity, cfg.batch_size)?.into_iter();
    for &p in policies {
        if p == PolicyId::Learned {
            let (r, stats) = run_learned(trace, model, cfg)?;
            results.push(r);
            learned = Some(stats);
        } else {
            results.push(demand_results.next().unwrap());
        }
    }
    Ok(SimulationReport {
        capacity: cfg.capacity,
        accesses: trace.len() as u64,
        batch_size: cfg.batch_size,
        policies: results,
        learned,
    })
}
