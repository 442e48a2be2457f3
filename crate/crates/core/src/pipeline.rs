//! End-to-end commands: pretrain byte embeddings, train the model, simulate
//! and merge reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TrainingStream};
use crate::embed::{pretrain_word2vec, ByteEmbeddingTables};
use crate::error::{Error, Result};
use crate::model::{
    load_checkpoint, load_tables, save_checkpoint, save_tables, DeapModel, EmbeddingCache, Losses,
    TrainingExample,
};
use crate::nn::Optimizer;
use crate::policy::{baseline_evict, Baseline};
use crate::scalar::Scalar;
use crate::sim::{run_simulation, CacheState, PolicyId, SimulationReport};
use crate::trace::{label_trace, load_trace, synth_trace, LabeledTrace, SynthKind, Trace, TraceFormat, TraceRecord};

/// Loads a trace file, or generates one from `synth:<length>:<seed>:<kind>`.
pub fn load_source(source: &Path, format: TraceFormat) -> Result<Trace> {
    let s = source.to_string_lossy();
    if let Some(rest) = s.strip_prefix("synth:") {
        let mut parts = rest.splitn(3, ':');
        let bad = || Error::Config(format!("synthetic trace `{s}` is not synth:<length>:<seed>:<kind>"));
        let length: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let seed: u64 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let kind: SynthKind = parts.next().ok_or_else(bad)?.parse()?;
        return Ok(synth_trace(&kind, length, seed)?.trace);
    }
    load_trace(source, format)
}

pub fn load_labeled(source: &Path, format: TraceFormat, label_cap: Option<u64>) -> Result<LabeledTrace> {
    let trace = load_source(source, format)?;
    let cap = label_cap.unwrap_or(trace.len() as u64 + 1);
    label_trace(trace, cap)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set")))
}

/// Misses of a demand-fetch LRU cache, in trace order.
pub fn lru_miss_stream(trace: &Trace, capacity: usize) -> Result<Vec<TraceRecord>> {
    let mut cache = CacheState::new(capacity)?;
    let mut out = Vec::new();
    for r in &trace.records {
        if cache.contains(r.address) {
            cache.touch(r.address, None);
            continue;
        }
        if cache.is_full() {
            let v = baseline_evict(Baseline::Lru, &cache.metas())?;
            cache.remove_at(v);
        }
        cache.insert(r.address, None, false, (0.0, 0.0));
        out.push(*r);
    }
    Ok(out)
}

pub fn training_stream(trace: &Trace, cfg: &RunConfig) -> Result<Vec<TraceRecord>> {
    match cfg.training_stream {
        TrainingStream::All => Ok(trace.records.clone()),
        TrainingStream::Misses => lru_miss_stream(trace, cfg.miss_cache()),
    }
}

/// Positions `t` of the stream usable as the last input of a window of
/// `seq_len`, thinned evenly to at most `max`.
pub fn example_positions(stream_len: usize, seq_len: usize, max: usize) -> Vec<usize> {
    if stream_len < seq_len + 1 {
        return Vec::new();
    }
    let all: Vec<usize> = (seq_len - 1..stream_len - 1).collect();
    if all.len() <= max {
        return all;
    }
    (0..max).map(|i| all[i * all.len() / max]).collect()
}

/// A training set over a stream of accesses with labels from the full trace.
pub struct Dataset<'a> {
    pub trace: &'a LabeledTrace,
    pub stream: Vec<TraceRecord>,
    pub positions: Vec<usize>,
    pub seq_len: usize,
    pub window: usize,
}

impl<'a> Dataset<'a> {
    pub fn new(trace: &'a LabeledTrace, stream: Vec<TraceRecord>, seq_len: usize, window: usize, max: usize) -> Self {
        let positions = example_positions(stream.len(), seq_len, max);
        Dataset {
            trace,
            stream,
            positions,
            seq_len,
            window,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn max_frequency(&self) -> f64 {
        self.positions
            .iter()
            .map(|&t| self.trace.future_frequency[self.stream[t + 1].index] as f64)
            .fold(1.0, f64::max)
    }

    /// Builds the examples at the given positions, computing each
    /// distribution vector with the current model parameters.
    pub fn examples<T: Scalar>(&self, model: &DeapModel<T>, positions: &[usize], floor: f64) -> Result<Vec<TrainingExample<T>>> {
        let mut cache = EmbeddingCache::new();
        positions
            .iter()
            .map(|&t| {
                let target = self.stream[t + 1];
                let lo = (t + 1).saturating_sub(self.window);
                let d = model.distribution_of(&self.stream[lo..=t], T::lit(floor), &mut cache)?;
                Ok(TrainingExample {
                    sequence: self.stream[t + 1 - self.seq_len..=t].to_vec(),
                    target: target.address,
                    frequency: self.trace.future_frequency[target.index] as f64,
                    reuse: self.trace.reuse_distance[target.index] as f64,
                    distribution: d.values,
                })
            })
            .collect()
    }

    /// Fraction of examples whose next-miss byte `j` is the argmax of head `j`.
    pub fn byte_accuracy<T: Scalar>(&self, model: &DeapModel<T>, positions: &[usize]) -> Result<[f64; 4]> {
        let mut correct = [0usize; 4];
        let mut cache = EmbeddingCache::new();
        for &t in positions {
            let steps: Vec<Vec<T>> = self.stream[t + 1 - self.seq_len..=t]
                .iter()
                .map(|r| cache.step(model, r))
                .collect();
            let refs: Vec<&[T]> = steps.iter().map(Vec::as_slice).collect();
            let logits = model.head_logits(&refs)?;
            let target = self.stream[t + 1].address.to_be_bytes();
            for j in 0..4 {
                let arg = (0..logits[j].len())
                    .max_by(|&a, &b| logits[j][a].partial_cmp(&logits[j][b]).unwrap().then(b.cmp(&a)))
                    .unwrap();
                if arg == target[j] as usize {
                    correct[j] += 1;
                }
            }
        }
        let n = positions.len().max(1) as f64;
        Ok(correct.map(|c| c as f64 / n))
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: DeapModel<T>,
    pub optimizer: Optimizer<T>,
    /// Mean losses of each epoch.
    pub epochs: Vec<Losses>,
    /// Losses of every optimizer step.
    pub steps: Vec<Losses>,
}

/// Trains `model` on `data` for the configured number of epochs.
pub fn train_model<T: Scalar>(
    mut model: DeapModel<T>,
    optimizer: Option<Optimizer<T>>,
    data: &Dataset,
    cfg: &RunConfig,
    on_epoch: &mut dyn FnMut(usize, &Losses),
) -> Result<TrainOutcome<T>> {
    let weights = cfg.loss_weights()?;
    let mut opt = optimizer.unwrap_or_else(|| Optimizer::new(cfg.training_optimizer()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x7a11);
    let mut order: Vec<usize> = data.positions.clone();
    let mut epochs = Vec::new();
    let mut steps = Vec::new();
    if cfg.number_of_epochs > 0 && data.is_empty() {
        return Err(Error::Config(format!(
            "training stream of {} accesses is too short for sequences of {}",
            data.stream.len(),
            data.seq_len
        )));
    }
    for epoch in 0..cfg.number_of_epochs {
        order.shuffle(&mut rng);
        let mut sum = Losses::default();
        let mut n = 0.0;
        for chunk in order.chunks(cfg.training_batch_size) {
            let batch = data.examples(&model, chunk, cfg.kde_bandwidth_floor)?;
            let l = model.training_step(
                &batch,
                &weights,
                cfg.training_temperature,
                &mut opt,
                !cfg.freeze_byte_tables,
            )?;
            let w = chunk.len() as f64;
            sum.prefetching += l.prefetching * w;
            sum.frequency += l.frequency * w;
            sum.recency += l.recency * w;
            sum.total += l.total * w;
            n += w;
            steps.push(l);
        }
        let mean = Losses {
            prefetching: sum.prefetching / n,
            frequency: sum.frequency / n,
            recency: sum.recency / n,
            total: sum.total / n,
        };
        on_epoch(epoch, &mean);
        epochs.push(mean);
    }
    Ok(TrainOutcome {
        model,
        optimizer: opt,
        epochs,
        steps,
    })
}

/// Per-epoch pretraining losses, written next to the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub address_losses: Vec<f64>,
    pub pc_losses: Vec<f64>,
}

pub fn pretrain_log_path(tables: &Path) -> PathBuf {
    let mut s = tables.as_os_str().to_owned();
    s.push(".log.json");
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Pretrains byte embeddings on the training trace and writes the tables and loss log.
pub fn pretrain(cfg: &RunConfig) -> Result<PretrainLog> {
    let trace = load_source(required(&cfg.train_trace, "train_trace")?, cfg.trace_format)?;
    let out = pretrain_word2vec::<f64>(&trace, &cfg.word2vec())?;
    if let Some(dir) = cfg.tables_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    save_tables(&out.tables, &cfg.tables_path)?;
    let log = PretrainLog {
        address_losses: out.address_losses,
        pc_losses: out.pc_losses,
    };
    write(
        &pretrain_log_path(&cfg.tables_path),
        &serde_json::to_string_pretty(&log).expect("log serializes"),
    )?;
    Ok(log)
}

pub fn curve_csv(epochs: &[Losses]) -> String {
    let mut s = String::from("epoch,l_prefetching,l_frequency,l_recency,l_total\n");
    for (i, l) in epochs.iter().enumerate() {
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            i + 1,
            l.prefetching,
            l.frequency,
            l.recency,
            l.total
        ));
    }
    s
}

pub fn curve_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".curve.csv");
    PathBuf::from(s)
}

/// Builds or resumes a model, trains it, and writes the checkpoint and loss curve.
pub fn train(cfg: &RunConfig, on_epoch: &mut dyn FnMut(usize, &Losses)) -> Result<TrainOutcome<f64>> {
    let trace = load_labeled(required(&cfg.train_trace, "train_trace")?, cfg.trace_format, cfg.label_cap)?;
    let dims = cfg.model_dims();
    let (model, optimizer) = match &cfg.resume_from {
        Some(path) => {
            let ck = load_checkpoint::<f64>(path, Some(&dims), cfg.training_optimizer())?;
            (ck.model, ck.optimizer)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let tables = if cfg.random_tables {
                ByteEmbeddingTables::random(dims.d_byte, &mut rng)
            } else {
                load_tables::<f64>(&cfg.tables_path, Some(dims.d_byte))?
            };
            (DeapModel::new(dims, tables, &mut rng)?, None)
        }
    };
    let data = Dataset::new(
        &trace,
        training_stream(&trace.trace, cfg)?,
        cfg.prefetching_input_sequence_length,
        cfg.miss_buffer_size,
        cfg.max_train_sequences,
    );
    let mut model = model;
    if cfg.resume_from.is_none() {
        model.frequency_scale = data.max_frequency();
        model.reuse_scale = trace.cap as f64;
        model.init_head_priors(data.positions.iter().map(|&t| data.stream[t + 1].address));
    }
    let outcome = train_model(model, optimizer, &data, cfg, on_epoch)?;
    if let Some(dir) = cfg.checkpoint_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    save_checkpoint(&outcome.model, Some(&outcome.optimizer), &cfg.checkpoint_path)?;
    write(&curve_path(&cfg.checkpoint_path), &curve_csv(&outcome.epochs))?;
    Ok(outcome)
}

/// Simulates the requested policies on the test trace. With `write_files`
/// the report lands in `output_dir` as `report.json` and `report.csv`.
pub fn simulate(cfg: &RunConfig, policies: &[PolicyId], write_files: bool) -> Result<SimulationReport> {
    let trace = load_labeled(required(&cfg.test_trace, "test_trace")?, cfg.trace_format, cfg.label_cap)?;
    let sim = cfg.sim();
    let report = if policies.contains(&PolicyId::Learned) {
        let ck = load_checkpoint::<f64>(&cfg.checkpoint_path, Some(&cfg.model_dims()), cfg.training_optimizer())?;
        if cfg.inference_f32 {
            let m32 = ck.model.cast::<f32>();
            run_simulation(&trace, Some(&m32), &sim, policies)?
        } else {
            run_simulation(&trace, Some(&ck.model), &sim, policies)?
        }
    } else {
        run_simulation::<f64>(&trace, None, &sim, policies)?
    };
    if write_files {
        write(&cfg.output_dir.join("report.json"), &report.to_json())?;
        write(&cfg.output_dir.join("report.csv"), &report.to_csv())?;
    }
    Ok(report)
}

/// One row of a merged comparison: a policy's hit rate in every report and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: PolicyId,
    pub hit_rates: Vec<Option<f64>>,
    pub mean_hit_rate: f64,
}

/// Merges simulation reports into per-policy mean hit rates.
pub fn compare(reports: &[SimulationReport]) -> Vec<ComparisonRow> {
    let mut policies: BTreeMap<usize, PolicyId> = BTreeMap::new();
    for r in reports {
        for p in &r.policies {
            let rank = PolicyId::ALL.iter().position(|x| *x == p.policy).unwrap();
            policies.insert(rank, p.policy);
        }
    }
    policies
        .into_values()
        .map(|policy| {
            let hit_rates: Vec<Option<f64>> = reports.iter().map(|r| r.hit_rate(policy)).collect();
            let present: Vec<f64> = hit_rates.iter().flatten().copied().collect();
            ComparisonRow {
                policy,
                mean_hit_rate: present.iter().sum::<f64>() / present.len().max(1) as f64,
                hit_rates,
            }
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow], names: &[String]) -> String {
    let mut s = String::from("policy");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push_str(",mean\n");
    for row in rows {
        s.push_str(row.policy.name());
        for h in &row.hit_rates {
            s.push(',');
            if let Some(v) = h {
                s.push_str(&format!("{v:.6}"));
            }
        }
        s.push_str(&format!(",{:.6}\n", row.mean_hit_rate));
    }
    s
}

/// Reads report JSON files and writes the merged table to `output`.
pub fn report(inputs: &[PathBuf], output: &Path) -> Result<Vec<ComparisonRow>> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one input".into()));
    }
    let mut reports = Vec::new();
    for p in inputs {
        let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        reports.push(SimulationReport::from_json(&text)?);
    }
    let rows = compare(&reports);
    let names: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
    write(output, &comparison_csv(&rows, &names))?;
    Ok(rows)
}
