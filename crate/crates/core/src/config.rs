//! Flat `key = value` run configuration with range validation.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embed::Word2VecConfig;
use crate::error::{Error, Result};
use crate::model::{LossWeights, ModelDims};
use crate::nn::{Algorithm, OptimizerConfig};
use crate::policy::AdmissionConfig;
use crate::sim::{BufferSampling, ScoreCache, ScoreSource, SimConfig};
use crate::trace::TraceFormat;

/// Which accesses of the training trace form the prefetcher's input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingStream {
    /// Misses of an LRU cache of `training_miss_cache` lines.
    Misses,
    /// Every access.
    All,
}

impl FromStr for TrainingStream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "misses" => Ok(TrainingStream::Misses),
            "all" => Ok(TrainingStream::All),
            _ => Err(Error::Config(format!("unknown training stream `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub number_of_epochs: usize,
    pub training_batch_size: usize,
    pub optimizer: Algorithm,
    pub learning_rate: f64,
    pub training_temperature: f64,
    pub lstm_hidden_cell_size: usize,
    pub decoder_hidden_size: usize,
    pub prefetching_input_sequence_length: usize,
    pub address_embedding_size: usize,
    pub weight_for_cross_entropy_loss: f64,
    pub weight_for_frequency_mse_loss: f64,
    pub weight_for_reuse_distance_mse_loss: f64,
    pub word2vec_number_of_epochs: usize,
    pub word2vec_learning_rate: f64,
    pub word2vec_weight_decay: f64,
    pub word2vec_optimizer: Algorithm,
    pub word2vec_encoder_hidden_layer_size: usize,
    pub word2vec_byte_embedding_dimension: usize,
    pub word2vec_context_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub miss_buffer_size: usize,
    pub test_simulation_prefetching_interval: usize,
    pub cache_size: usize,
    pub test_simulation_batch_size: usize,

    pub combiner_hidden: usize,
    pub kde_probes: usize,
    pub kde_bandwidth_floor: f64,
    pub prefetch_n: usize,
    /// Reuse-distance label for lines never used again; `None` means trace length + 1.
    pub label_cap: Option<u64>,
    pub rng_seed: u64,
    pub lecar_lambda: f64,
    pub lecar_discount: Option<f64>,
    pub score_cache: ScoreCache,
    pub buffer_sampling: BufferSampling,
    pub admission: bool,
    pub freeze_byte_tables: bool,
    pub random_tables: bool,
    pub inference_f32: bool,
    pub word2vec_max_tokens: usize,
    pub word2vec_batch_size: usize,
    pub max_train_sequences: usize,
    pub training_stream: TrainingStream,
    /// Capacity of the LRU cache whose misses form the training stream; 0 uses `cache_size`.
    pub training_miss_cache: usize,

    pub trace_format: TraceFormat,
    pub train_trace: Option<PathBuf>,
    pub test_trace: Option<PathBuf>,
    pub tables_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub resume_from: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            number_of_epochs: 20,
            training_batch_size: 256,
            optimizer: Algorithm::Adam,
            learning_rate: 1e-3,
            training_temperature: 1e-3,
            lstm_hidden_cell_size: 40,
            decoder_hidden_size: 10,
            prefetching_input_sequence_length: 30,
            address_embedding_size: 20,
            weight_for_cross_entropy_loss: 0.33,
            weight_for_frequency_mse_loss: 0.33,
            weight_for_reuse_distance_mse_loss: 0.33,
            word2vec_number_of_epochs: 120,
            word2vec_learning_rate: 3e-3,
            word2vec_weight_decay: 1e-3,
            word2vec_optimizer: Algorithm::Adam,
            word2vec_encoder_hidden_layer_size: 128,
            word2vec_byte_embedding_dimension: 20,
            word2vec_context_size: 4,
            alpha: 3000.0,
            beta: 7000.0,
            miss_buffer_size: 50,
            test_simulation_prefetching_interval: 30,
            cache_size: 32,
            test_simulation_batch_size: 10_000,

            combiner_hidden: 128,
            kde_probes: 16,
            kde_bandwidth_floor: 1e-2,
            prefetch_n: 5,
            label_cap: None,
            rng_seed: 0,
            lecar_lambda: 0.45,
            lecar_discount: None,
            score_cache: ScoreCache::Access,
            buffer_sampling: BufferSampling::Recent,
            admission: true,
            freeze_byte_tables: false,
            random_tables: false,
            inference_f32: false,
            word2vec_max_tokens: 2048,
            word2vec_batch_size: 256,
            max_train_sequences: 4096,
            training_stream: TrainingStream::Misses,
            training_miss_cache: 0,

            trace_format: TraceFormat::Csv,
            train_trace: None,
            test_trace: None,
            tables_path: PathBuf::from("tables.bin"),
            checkpoint_path: PathBuf::from("model.ckpt"),
            resume_from: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if matches!(value, "" | "none" | "auto") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn in_range<T: PartialOrd + Display>(key: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v < lo || v > hi {
        return Err(Error::Config(format!("`{key}` = {v} is outside the permitted range [{lo}, {hi}]")));
    }
    Ok(())
}

fn in_set<T: PartialEq + Display>(key: &str, v: T, set: &[T]) -> Result<()> {
    if !set.contains(&v) {
        let list: Vec<String> = set.iter().map(ToString::to_string).collect();
        return Err(Error::Config(format!(
            "`{key}` = {v} is not one of the permitted values {{{}}}",
            list.join(", ")
        )));
    }
    Ok(())
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key.trim() {
            "number_of_epochs" | "epochs" => self.number_of_epochs = parse(key, v)?,
            "training_batch_size" => self.training_batch_size = parse(key, v)?,
            "optimizer" => self.optimizer = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "training_temperature" => self.training_temperature = parse(key, v)?,
            "lstm_hidden_cell_size" => self.lstm_hidden_cell_size = parse(key, v)?,
            "decoder_hidden_size" => self.decoder_hidden_size = parse(key, v)?,
            "prefetching_input_sequence_length" => {
                self.prefetching_input_sequence_length = parse(key, v)?
            }
            "address_embedding_size" => self.address_embedding_size = parse(key, v)?,
            "weight_for_cross_entropy_loss" => self.weight_for_cross_entropy_loss = parse(key, v)?,
            "weight_for_frequency_mse_loss" => self.weight_for_frequency_mse_loss = parse(key, v)?,
            "weight_for_reuse_distance_mse_loss" => {
                self.weight_for_reuse_distance_mse_loss = parse(key, v)?
            }
            "word2vec_number_of_epochs" => self.word2vec_number_of_epochs = parse(key, v)?,
            "word2vec_learning_rate" => self.word2vec_learning_rate = parse(key, v)?,
            "word2vec_weight_decay" => self.word2vec_weight_decay = parse(key, v)?,
            "word2vec_optimizer" => self.word2vec_optimizer = parse(key, v)?,
            "word2vec_encoder_hidden_layer_size" => {
                self.word2vec_encoder_hidden_layer_size = parse(key, v)?
            }
            "word2vec_byte_embedding_dimension" => {
                self.word2vec_byte_embedding_dimension = parse(key, v)?
            }
            "word2vec_context_size" => self.word2vec_context_size = parse(key, v)?,
            "alpha" | "admission_frequency_threshold" => self.alpha = parse(key, v)?,
            "beta" | "admission_reuse_distance_threshold" => self.beta = parse(key, v)?,
            "miss_buffer_size" => self.miss_buffer_size = parse(key, v)?,
            "test_simulation_prefetching_interval" => {
                self.test_simulation_prefetching_interval = parse(key, v)?
            }
            "cache_size" => self.cache_size = parse(key, v)?,
            "test_simulation_batch_size" => self.test_simulation_batch_size = parse(key, v)?,
            "combiner_hidden" => self.combiner_hidden = parse(key, v)?,
            "kde_probes" => self.kde_probes = parse(key, v)?,
            "kde_bandwidth_floor" => self.kde_bandwidth_floor = parse(key, v)?,
            "prefetch_n" => self.prefetch_n = parse(key, v)?,
            "label_cap" => self.label_cap = optional(key, v)?,
            "rng_seed" | "seed" => self.rng_seed = parse(key, v)?,
            "lecar_lambda" => self.lecar_lambda = parse(key, v)?,
            "lecar_discount" => self.lecar_discount = optional(key, v)?,
            "score_cache" => self.score_cache = v.parse()?,
            "buffer_sampling" => self.buffer_sampling = v.parse()?,
            "admission" => self.admission = parse_bool(key, v)?,
            "freeze_byte_tables" => self.freeze_byte_tables = parse_bool(key, v)?,
            "random_tables" => self.random_tables = parse_bool(key, v)?,
            "inference_f32" => self.inference_f32 = parse_bool(key, v)?,
            "word2vec_max_tokens" => self.word2vec_max_tokens = parse(key, v)?,
            "word2vec_batch_size" => self.word2vec_batch_size = parse(key, v)?,
            "max_train_sequences" => self.max_train_sequences = parse(key, v)?,
            "training_stream" => self.training_stream = v.parse()?,
            "training_miss_cache" => self.training_miss_cache = parse(key, v)?,
            "trace_format" => self.trace_format = v.parse()?,
            "train_trace" => self.train_trace = opt_path(v),
            "test_trace" => self.test_trace = opt_path(v),
            "tables_path" => self.tables_path = PathBuf::from(v),
            "checkpoint_path" => self.checkpoint_path = PathBuf::from(v),
            "resume_from" => self.resume_from = opt_path(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`, got `{line}`", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `key=value` overrides, then validation.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(format!("reading config {}", p.display()), e))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // 0 epochs is accepted as an explicit no-op run.
        if self.number_of_epochs != 0 {
            in_range("number_of_epochs", self.number_of_epochs, 1, 20)?;
        }
        in_set("training_batch_size", self.training_batch_size, &[32, 64, 128, 256, 512])?;
        in_range("learning_rate", self.learning_rate, 1e-5, 1e-1)?;
        in_set("training_temperature", self.training_temperature, &[1e-3, 1e-2])?;
        in_range("lstm_hidden_cell_size", self.lstm_hidden_cell_size, 20, 40)?;
        in_range("decoder_hidden_size", self.decoder_hidden_size, 1, usize::MAX)?;
        in_set(
            "prefetching_input_sequence_length",
            self.prefetching_input_sequence_length,
            &[20, 30],
        )?;
        in_range("address_embedding_size", self.address_embedding_size, 5, 25)?;
        for (k, w) in [
            ("weight_for_cross_entropy_loss", self.weight_for_cross_entropy_loss),
            ("weight_for_frequency_mse_loss", self.weight_for_frequency_mse_loss),
            ("weight_for_reuse_distance_mse_loss", self.weight_for_reuse_distance_mse_loss),
        ] {
            in_range(k, w, 0.0, f64::MAX)?;
        }
        self.loss_weights()?;
        in_range("word2vec_number_of_epochs", self.word2vec_number_of_epochs, 20, 500)?;
        in_range("word2vec_learning_rate", self.word2vec_learning_rate, 1e-5, 1e-2)?;
        in_range("word2vec_weight_decay", self.word2vec_weight_decay, 1e-6, 10.0)?;
        in_range(
            "word2vec_encoder_hidden_layer_size",
            self.word2vec_encoder_hidden_layer_size,
            50,
            200,
        )?;
        in_range(
            "word2vec_byte_embedding_dimension",
            self.word2vec_byte_embedding_dimension,
            5,
            25,
        )?;
        in_range("word2vec_context_size", self.word2vec_context_size, 2, 10)?;
        in_set("alpha", self.alpha, &[50.0, 300.0, 500.0, 1000.0, 3000.0])?;
        in_set("beta", self.beta, &[500.0, 3000.0, 5000.0, 7000.0, 8000.0])?;
        in_set("miss_buffer_size", self.miss_buffer_size, &[30, 50, 70, 100])?;
        in_set(
            "test_simulation_prefetching_interval",
            self.test_simulation_prefetching_interval,
            &[10, 20, 30, 50],
        )?;
        in_set("cache_size", self.cache_size, &[32, 64])?;
        in_set("test_simulation_batch_size", self.test_simulation_batch_size, &[5000, 10000])?;

        in_range("combiner_hidden", self.combiner_hidden, 1, usize::MAX)?;
        in_range("kde_probes", self.kde_probes, 1, 4096)?;
        if !(self.kde_bandwidth_floor > 0.0 && self.kde_bandwidth_floor.is_finite()) {
            return Err(Error::Config(format!(
                "`kde_bandwidth_floor` = {} must be positive",
                self.kde_bandwidth_floor
            )));
        }
        in_range("prefetch_n", self.prefetch_n, 0, 256)?;
        if let Some(cap) = self.label_cap {
            in_range("label_cap", cap, 1, u64::MAX)?;
        }
        in_range("lecar_lambda", self.lecar_lambda, 0.0, f64::MAX)?;
        if let Some(d) = self.lecar_discount {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!(
                    "`lecar_discount` = {d} is outside the permitted range (0, 1]"
                )));
            }
        }
        in_range("word2vec_max_tokens", self.word2vec_max_tokens, 8, usize::MAX)?;
        in_range("word2vec_batch_size", self.word2vec_batch_size, 1, usize::MAX)?;
        in_range("max_train_sequences", self.max_train_sequences, 1, usize::MAX)?;
        if self.prefetching_input_sequence_length > self.miss_buffer_size {
            return Err(Error::Config(format!(
                "`prefetching_input_sequence_length` = {} exceeds `miss_buffer_size` = {}",
                self.prefetching_input_sequence_length, self.miss_buffer_size
            )));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(
            self.weight_for_cross_entropy_loss,
            self.weight_for_frequency_mse_loss,
            self.weight_for_reuse_distance_mse_loss,
        )
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            d_byte: self.word2vec_byte_embedding_dimension,
            combiner_hidden: self.combiner_hidden,
            d_addr: self.address_embedding_size,
            lstm_hidden: self.lstm_hidden_cell_size,
            decoder_hidden: self.decoder_hidden_size,
            kde_probes: self.kde_probes,
        }
    }

    pub fn training_optimizer(&self) -> OptimizerConfig {
        match self.optimizer {
            Algorithm::Adam => OptimizerConfig::adam(self.learning_rate),
            Algorithm::Sgd => OptimizerConfig::sgd(self.learning_rate),
        }
    }

    pub fn word2vec(&self) -> Word2VecConfig {
        let optimizer = match self.word2vec_optimizer {
            Algorithm::Adam => OptimizerConfig::adam(self.word2vec_learning_rate),
            Algorithm::Sgd => OptimizerConfig::sgd(self.word2vec_learning_rate),
        }
        .with_weight_decay(self.word2vec_weight_decay);
        Word2VecConfig {
            epochs: self.word2vec_number_of_epochs,
            optimizer,
            hidden: self.word2vec_encoder_hidden_layer_size,
            d_byte: self.word2vec_byte_embedding_dimension,
            context: self.word2vec_context_size,
            batch_size: self.word2vec_batch_size,
            max_tokens: self.word2vec_max_tokens,
            seed: self.rng_seed,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            capacity: self.cache_size,
            miss_buffer: self.miss_buffer_size,
            prefetch_interval: self.test_simulation_prefetching_interval,
            sequence_length: self.prefetching_input_sequence_length,
            prefetch_n: self.prefetch_n,
            admission: self.admission.then_some(AdmissionConfig {
                alpha: self.alpha,
                beta: self.beta,
            }),
            lecar_lambda: self.lecar_lambda,
            lecar_discount: self.lecar_discount,
            initial_weights: None,
            scores: ScoreSource::Model,
            score_cache: self.score_cache,
            buffer_sampling: self.buffer_sampling,
            kde_floor: self.kde_bandwidth_floor,
            batch_size: self.test_simulation_batch_size,
            seed: self.rng_seed,
        }
    }

    pub fn miss_cache(&self) -> usize {
        if self.training_miss_cache == 0 {
            self.cache_size
        } else {
            self.training_miss_cache
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(overrides: &[&str]) -> Result<RunConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(None, &o)
    }

    #[test]
    fn defaults_are_valid() {
        let c = load(&[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model_dims(), ModelDims::default());
        let w = c.word2vec();
        assert_eq!((w.epochs, w.hidden, w.d_byte, w.context), (120, 128, 20, 4));
        assert_eq!(w.optimizer.weight_decay, 1e-3);
        let s = c.sim();
        assert_eq!((s.capacity, s.miss_buffer, s.prefetch_interval, s.batch_size), (32, 50, 30, 10_000));
    }

    #[test]
    fn out_of_range_names_key_and_range() {
        let err = load(&["word2vec_context_size=1"]).unwrap_err().to_string();
        assert!(err.contains("word2vec_context_size") && err.contains("[2, 10]"), "{err}");
        let err = load(&["training_batch_size=100"]).unwrap_err().to_string();
        assert!(err.contains("training_batch_size") && err.contains("512"), "{err}");
        let err = load(&["learning_rate=0.5"]).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(load(&["cache_size=48"]).is_err());
        assert!(load(&["number_of_epochs=21"]).is_err());
        assert!(load(&["number_of_epochs=0"]).is_ok());
        assert!(load(&["bogus=1"]).unwrap_err().to_string().contains("bogus"));
        assert!(load(&["epochs"]).is_err());
        assert!(load(&["lstm_hidden_cell_size=abc"]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\ncache_size = 64\nalpha = 500  # inline\n\nscore_cache = stale\n").unwrap();
        let c = RunConfig::load(Some(&p), &["cache_size=32".into()]).unwrap();
        assert_eq!(c.cache_size, 32);
        assert_eq!(c.alpha, 500.0);
        assert_eq!(c.score_cache, ScoreCache::Stale);

        std::fs::write(&p, "cache_size = 64\nword2vec_context_size = 11\n").unwrap();
        let err = RunConfig::load(Some(&p), &[]).unwrap_err().to_string();
        assert!(err.contains("word2vec_context_size"), "{err}");
        std::fs::write(&p, "cache_size 64\n").unwrap();
        let err = RunConfig::load(Some(&p), &[]).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        let missing = RunConfig::load(Some(&dir.path().join("none.cfg")), &[]);
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
