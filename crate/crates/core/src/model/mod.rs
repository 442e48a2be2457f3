//! The full network: byte embeddings, LSTM prefetcher with four byte heads,
//! and the frequency / reuse-distance decoder.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_tables, read_checkpoint, read_tables, save_checkpoint,
    save_tables, tables_bytes, Checkpoint,
};

use std::collections::HashMap;

use rand::Rng;

use crate::embed::{tokenize, ByteEmbeddingTables, Combiner, EmbeddingMemo, Stream, POSITIONS, VOCAB};
use crate::error::{Error, Result};
use crate::kde::{distribution_vector, DistributionVector, KdeWindow};
use crate::nn::{
    cross_entropy, mse, soft_argmax_embed, soft_argmax_embed_backward, softmax, softmax_backward,
    Activation, Dense, LstmCell, LstmStepCache, Matrix, Optimizer, Parameterized,
};
use crate::scalar::Scalar;
use crate::trace::TraceRecord;

/// Layer sizes. Everything else about the architecture is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_byte: usize,
    pub combiner_hidden: usize,
    pub d_addr: usize,
    pub lstm_hidden: usize,
    pub decoder_hidden: usize,
    pub kde_probes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_byte: 20,
            combiner_hidden: 128,
            d_addr: 20,
            lstm_hidden: 40,
            decoder_hidden: 10,
            kde_probes: 16,
        }
    }
}

impl ModelDims {
    /// Width of one LSTM input `e_i = a_i ++ p_i`.
    pub fn step_dim(&self) -> usize {
        2 * self.d_addr
    }

    pub fn decoder_input(&self) -> usize {
        self.d_addr + self.kde_probes
    }

    pub(crate) fn fields(&self) -> [(&'static str, usize); 6] {
        [
            ("d_byte", self.d_byte),
            ("combiner_hidden", self.combiner_hidden),
            ("d_addr", self.d_addr),
            ("lstm_hidden", self.lstm_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("kde_probes", self.kde_probes),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub prefetching: f64,
    pub frequency: f64,
    pub recency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            prefetching: 0.33,
            frequency: 0.33,
            recency: 0.33,
        }
    }
}

impl LossWeights {
    pub fn new(prefetching: f64, frequency: f64, recency: f64) -> Result<Self> {
        let w = LossWeights {
            prefetching,
            frequency,
            recency,
        };
        let all = [prefetching, frequency, recency];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || all.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with at least one positive, got {all:?}"
            )));
        }
        Ok(w)
    }

    pub fn total(&self, prefetching: f64, frequency: f64, recency: f64) -> f64 {
        self.prefetching * prefetching + self.frequency * frequency + self.recency * recency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub prefetching: f64,
    pub frequency: f64,
    pub recency: f64,
    pub total: f64,
}

/// One supervised example: a window of misses, the miss that followed, the
/// labels of that next miss, and the distribution vector at the window end.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample<T> {
    pub sequence: Vec<TraceRecord>,
    pub target: u32,
    pub frequency: f64,
    pub reuse: f64,
    pub distribution: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeapModel<T> {
    pub dims: ModelDims,
    pub tables: ByteEmbeddingTables<T>,
    pub address_combiner: Combiner<T>,
    pub pc_combiner: Combiner<T>,
    pub lstm: LstmCell<T>,
    pub heads: Vec<Dense<T>>,
    pub trunk: Dense<T>,
    pub frequency_head: Dense<T>,
    pub reuse_head: Dense<T>,
    /// Regression targets `x` are trained as `ln(1 + x) / ln(1 + scale)`, and
    /// decoder outputs mapped back through the inverse.
    pub frequency_scale: f64,
    pub reuse_scale: f64,
}

impl<T: Scalar> DeapModel<T> {
    /// All parameters zero, unit target scales.
    pub fn zeros(dims: ModelDims) -> Self {
        let combiner = || Combiner::zeros(POSITIONS * dims.d_byte, dims.combiner_hidden, dims.d_addr);
        DeapModel {
            dims,
            tables: ByteEmbeddingTables::zeros(dims.d_byte),
            address_combiner: combiner(),
            pc_combiner: combiner(),
            lstm: LstmCell::zeros(dims.step_dim(), dims.lstm_hidden),
            heads: (0..POSITIONS)
                .map(|_| Dense::zeros(dims.lstm_hidden, VOCAB, Activation::Identity))
                .collect(),
            trunk: Dense::zeros(dims.decoder_input(), dims.decoder_hidden, Activation::Relu),
            frequency_head: Dense::zeros(dims.decoder_hidden, 1, Activation::Identity),
            reuse_head: Dense::zeros(dims.decoder_hidden, 1, Activation::Identity),
            frequency_scale: 1.0,
            reuse_scale: 1.0,
        }
    }

    /// Randomly initialized network around the given byte tables.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, tables: ByteEmbeddingTables<T>, rng: &mut R) -> Result<Self> {
        if tables.d_byte() != dims.d_byte {
            return Err(Error::dimension("d_byte", dims.d_byte, tables.d_byte()));
        }
        let input = POSITIONS * dims.d_byte;
        Ok(DeapModel {
            dims,
            tables,
            address_combiner: Combiner::new(input, dims.combiner_hidden, dims.d_addr, rng),
            pc_combiner: Combiner::new(input, dims.combiner_hidden, dims.d_addr, rng),
            lstm: LstmCell::new(dims.step_dim(), dims.lstm_hidden, rng),
            heads: (0..POSITIONS)
                .map(|_| Dense::new(dims.lstm_hidden, VOCAB, Activation::Identity, rng))
                .collect(),
            trunk: Dense::new(dims.decoder_input(), dims.decoder_hidden, Activation::Relu, rng),
            frequency_head: Dense::new(dims.decoder_hidden, 1, Activation::Identity, rng),
            reuse_head: Dense::new(dims.decoder_hidden, 1, Activation::Identity, rng),
            frequency_scale: 1.0,
            reuse_scale: 1.0,
        })
    }

    pub fn cast<U: Scalar>(&self) -> DeapModel<U> {
        DeapModel {
            dims: self.dims,
            tables: self.tables.cast(),
            address_combiner: self.address_combiner.cast(),
            pc_combiner: self.pc_combiner.cast(),
            lstm: self.lstm.cast(),
            heads: self.heads.iter().map(Dense::cast).collect(),
            trunk: self.trunk.cast(),
            frequency_head: self.frequency_head.cast(),
            reuse_head: self.reuse_head.cast(),
            frequency_scale: self.frequency_scale,
            reuse_scale: self.reuse_scale,
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = DeapModel::zeros(self.dims);
        z.frequency_scale = self.frequency_scale;
        z.reuse_scale = self.reuse_scale;
        z
    }

    pub fn embed_address(&self, address: u32) -> Vec<T> {
        self.address_combiner
            .forward(&self.tables.lookup(Stream::Address, address))
    }

    pub fn embed_pc(&self, pc: u32) -> Vec<T> {
        self.pc_combiner.forward(&self.tables.lookup(Stream::Pc, pc))
    }

    pub fn embed_step(&self, record: &TraceRecord) -> Vec<T> {
        let mut e = self.embed_address(record.address);
        e.extend(self.embed_pc(record.pc));
        e
    }

    /// Sets each byte head's bias to the smoothed log-frequency of that byte
    /// among `targets`. Without it the heads fit the byte marginals through
    /// the recurrent state, which saturates before any sequence dependence is
    /// learned.
    pub fn init_head_priors(&mut self, targets: impl IntoIterator<Item = u32>) {
        let mut counts = vec![[0usize; VOCAB]; POSITIONS];
        let mut n = 0usize;
        for t in targets {
            for (j, b) in tokenize(t).0.iter().enumerate() {
                counts[j][*b as usize] += 1;
            }
            n += 1;
        }
        if n == 0 {
            return;
        }
        let denom = n as f64 + 0.5 * VOCAB as f64;
        for (head, row) in self.heads.iter_mut().zip(&counts) {
            for (b, &c) in head.bias.iter_mut().zip(row.iter()) {
                *b = T::lit(((c as f64 + 0.5) / denom).ln());
            }
        }
    }

    /// Byte-head logits after running the LSTM over pre-computed step embeddings.
    pub fn head_logits(&self, steps: &[&[T]]) -> Result<Vec<Vec<T>>> {
        if steps.is_empty() {
            return Err(Error::shape("prefetch input sequence is empty"));
        }
        let n = self.dims.lstm_hidden;
        let (mut h, mut c) = (vec![T::zero(); n], vec![T::zero(); n]);
        for x in steps {
            (h, c) = self.lstm.step(x, &h, &c)?;
        }
        Ok(self.heads.iter().map(|g| g.forward_unchecked(&h)).collect())
    }

    /// Four 256-way next-miss byte distributions.
    pub fn prefetch_forward(&self, sequence: &[TraceRecord]) -> Result<Vec<Vec<T>>> {
        let steps: Vec<Vec<T>> = sequence.iter().map(|r| self.embed_step(r)).collect();
        let refs: Vec<&[T]> = steps.iter().map(Vec::as_slice).collect();
        self.head_logits(&refs)?
            .iter()
            .map(|l| softmax(l, T::one()))
            .collect()
    }

    fn decoder_input(&self, a: &[T], d: &[T]) -> Result<Vec<T>> {
        if a.len() != self.dims.d_addr || d.len() != self.dims.kde_probes {
            return Err(Error::shape(format!(
                "decoder expects address embedding of {} and distribution vector of {}, got {} and {}",
                self.dims.d_addr,
                self.dims.kde_probes,
                a.len(),
                d.len()
            )));
        }
        let scale = T::one() / T::lit(self.dims.step_dim() as f64);
        let mut z = a.to_vec();
        z.extend(d.iter().map(|&v| v * scale));
        Ok(z)
    }

    /// Predicted future frequency and reuse distance, in counts and timesteps.
    pub fn decode_future(&self, a: &[T], d: &[T]) -> Result<(T, T)> {
        let z = self.decoder_input(a, d)?;
        let t = self.trunk.forward_unchecked(&z);
        let f = self.frequency_head.forward_unchecked(&t)[0];
        let r = self.reuse_head.forward_unchecked(&t)[0];
        Ok((
            from_target(f, self.frequency_scale),
            from_target(r, self.reuse_scale),
        ))
    }

    /// Distribution vector of a window of accesses, embedded with the current parameters.
    pub fn distribution_of(
        &self,
        window: &[TraceRecord],
        floor: T,
        cache: &mut EmbeddingCache<T>,
    ) -> Result<DistributionVector<T>> {
        let kde = KdeWindow::from_samples(window.iter().map(|r| cache.step(self, r)), floor);
        distribution_vector(&kde, self.dims.kde_probes)
    }

    /// Mean batch losses and their gradients, accumulated into `grads`.
    pub fn compute_gradients(
        &self,
        batch: &[TrainingExample<T>],
        weights: &LossWeights,
        temperature: f64,
        grads: &mut DeapModel<T>,
        train_tables: bool,
    ) -> Result<Losses> {
        if batch.is_empty() {
            return Err(Error::shape("empty training batch"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Numeric(format!("soft-argmax temperature must be positive, got {temperature}")));
        }
        let dims = self.dims;
        let tau = T::lit(temperature);
        let inv_b = T::one() / T::lit(batch.len() as f64);
        let w0 = T::lit(weights.prefetching) * inv_b;
        let w1 = T::lit(weights.frequency) * inv_b;
        let w2 = T::lit(weights.recency) * inv_b;
        let two = T::lit(2.0);

        let mut addr_memo = EmbeddingMemo::new(Stream::Address);
        let mut pc_memo = EmbeddingMemo::new(Stream::Pc);
        let mut sums = [0f64; 3];
        let address_tables: Vec<&Matrix<T>> = self.tables.address.iter().collect();
        let mut soft_table_grads = ByteEmbeddingTables::<T>::zeros(dims.d_byte);

        for ex in batch {
            if ex.sequence.is_empty() {
                return Err(Error::shape("training example with empty sequence"));
            }
            if ex.distribution.len() != dims.kde_probes {
                return Err(Error::shape(format!(
                    "distribution vector of length {} for {} probes",
                    ex.distribution.len(),
                    dims.kde_probes
                )));
            }
            // Forward: embeddings and recurrence.
            let keys: Vec<(usize, usize)> = ex
                .sequence
                .iter()
                .map(|r| {
                    (
                        addr_memo.get(r.address, &self.tables, &self.address_combiner),
                        pc_memo.get(r.pc, &self.tables, &self.pc_combiner),
                    )
                })
                .collect();
            let n = dims.lstm_hidden;
            let (mut h, mut c) = (vec![T::zero(); n], vec![T::zero(); n]);
            let mut caches: Vec<LstmStepCache<T>> = Vec::with_capacity(keys.len());
            for &(ka, kp) in &keys {
                let mut x = addr_memo.output(ka).to_vec();
                x.extend_from_slice(pc_memo.output(kp));
                let (h2, c2, cache) = self.lstm.step_cached(&x, &h, &c);
                h = h2;
                c = c2;
                caches.push(cache);
            }

            // Byte heads.
            let target = tokenize(ex.target).0;
            let logits: Vec<Vec<T>> = self.heads.iter().map(|g| g.forward_unchecked(&h)).collect();
            let mut dlogits: Vec<Vec<T>> = Vec::with_capacity(POSITIONS);
            let mut soft: Vec<Vec<T>> = Vec::with_capacity(POSITIONS);
            for (j, l) in logits.iter().enumerate() {
                let p = softmax(l, T::one())?;
                sums[0] += cross_entropy(&p, target[j]).to_f64_lossy();
                let mut d: Vec<T> = p.iter().map(|&v| v * w0).collect();
                d[target[j] as usize] -= w0;
                dlogits.push(d);
                soft.push(softmax(l, tau)?);
            }

            // Decoder on the soft-argmax address embedding.
            let soft_refs: Vec<&[T]> = soft.iter().map(Vec::as_slice).collect();
            let soft_embed = soft_argmax_embed(&soft_refs, &address_tables);
            let a_trace = self.address_combiner.trace(soft_embed);
            let z = self.decoder_input(&a_trace.output, &ex.distribution)?;
            let t = self.trunk.forward_unchecked(&z);
            let f = self.frequency_head.forward_unchecked(&t);
            let r = self.reuse_head.forward_unchecked(&t);
            let f_target = T::lit(to_target(ex.frequency, self.frequency_scale));
            let r_target = T::lit(to_target(ex.reuse, self.reuse_scale));
            sums[1] += mse(f[0], f_target).to_f64_lossy();
            sums[2] += mse(r[0], r_target).to_f64_lossy();

            // Backward through the decoder.
            let df = [two * (f[0] - f_target) * w1];
            let dr = [two * (r[0] - r_target) * w2];
            let mut dt = vec![T::zero(); dims.decoder_hidden];
            self.frequency_head
                .backward_into(&t, &f, &df, &mut grads.frequency_head, Some(&mut dt));
            self.reuse_head
                .backward_into(&t, &r, &dr, &mut grads.reuse_head, Some(&mut dt));
            let dz = self.trunk.backward(&z, &t, &dt, &mut grads.trunk);
            let dsoft_embed =
                self.address_combiner
                    .backward(&a_trace, &dz[..dims.d_addr], &mut grads.address_combiner);
            let mut tg: Vec<&mut Matrix<T>> = soft_table_grads.address.iter_mut().collect();
            let dsoft = soft_argmax_embed_backward(
                &soft_refs,
                &address_tables,
                &dsoft_embed,
                if train_tables { Some(&mut tg[..]) } else { None },
            );
            for j in 0..POSITIONS {
                let dl = softmax_backward(&soft[j], &dsoft[j], tau);
                for (a, b) in dlogits[j].iter_mut().zip(dl) {
                    *a += b;
                }
            }

            // Heads and recurrence.
            let mut dh = vec![T::zero(); n];
            for j in 0..POSITIONS {
                self.heads[j].backward_into(&h, &logits[j], &dlogits[j], &mut grads.heads[j], Some(&mut dh));
            }
            let mut dc = vec![T::zero(); n];
            for (cache, &(ka, kp)) in caches.iter().zip(&keys).rev() {
                let (dh_prev, dc_prev, dx) = self.lstm.backward(cache, &dh, &dc, &mut grads.lstm);
                addr_memo.add_grad(ka, &dx[..dims.d_addr]);
                pc_memo.add_grad(kp, &dx[dims.d_addr..]);
                dh = dh_prev;
                dc = dc_prev;
            }
        }

        let tables = if train_tables { Some(&mut grads.tables) } else { None };
        match tables {
            Some(tg) => {
                addr_memo.backward(&self.address_combiner, &mut grads.address_combiner, Some(tg));
                pc_memo.backward(&self.pc_combiner, &mut grads.pc_combiner, Some(tg));
                tg.accumulate(&soft_table_grads);
            }
            None => {
                addr_memo.backward(&self.address_combiner, &mut grads.address_combiner, None);
                pc_memo.backward(&self.pc_combiner, &mut grads.pc_combiner, None);
            }
        }

        let b = batch.len() as f64;
        let (lp, lf, lr) = (sums[0] / b, sums[1] / b, sums[2] / b);
        Ok(Losses {
            prefetching: lp,
            frequency: lf,
            recency: lr,
            total: weights.total(lp, lf, lr),
        })
    }

    /// Computes the batch gradients and applies one optimizer step.
    pub fn training_step(
        &mut self,
        batch: &[TrainingExample<T>],
        weights: &LossWeights,
        temperature: f64,
        optimizer: &mut Optimizer<T>,
        train_tables: bool,
    ) -> Result<Losses> {
        let mut grads = self.zeros_like();
        let losses = self.compute_gradients(batch, weights, temperature, &mut grads, train_tables)?;
        optimizer.step(self, &grads)?;
        Ok(losses)
    }
}

impl<T: Scalar> Parameterized<T> for DeapModel<T> {
    fn params(&self) -> Vec<(String, &[T])> {
        fn prefixed<'a, T>(prefix: &str, list: Vec<(String, &'a [T])>) -> Vec<(String, &'a [T])> {
            list.into_iter()
                .map(|(n, p)| (format!("{prefix}.{n}"), p))
                .collect()
        }
        let mut out = self.tables.params();
        out.extend(prefixed("address_combiner", self.address_combiner.params()));
        out.extend(prefixed("pc_combiner", self.pc_combiner.params()));
        out.extend(prefixed("lstm", self.lstm.params()));
        for (j, g) in self.heads.iter().enumerate() {
            out.extend(prefixed(&format!("head_{}", j + 1), g.params()));
        }
        out.extend(prefixed("trunk", self.trunk.params()));
        out.extend(prefixed("frequency_head", self.frequency_head.params()));
        out.extend(prefixed("reuse_head", self.reuse_head.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.tables.params_mut();
        out.extend(self.address_combiner.params_mut());
        out.extend(self.pc_combiner.params_mut());
        out.extend(self.lstm.params_mut());
        for g in &mut self.heads {
            out.extend(g.params_mut());
        }
        out.extend(self.trunk.params_mut());
        out.extend(self.frequency_head.params_mut());
        out.extend(self.reuse_head.params_mut());
        out
    }
}

/// Log-compresses a regression label into roughly `[0, 1]`. Reuse distances
/// are heavy tailed (never-reused lines carry the label cap), and on a linear
/// scale the short distances that separate hot lines are lost in the tail.
pub fn to_target(x: f64, scale: f64) -> f64 {
    x.max(0.0).ln_1p() / scale.max(1.0).ln_1p()
}

pub fn from_target<T: Scalar>(y: T, scale: f64) -> T {
    (y * T::lit(scale.max(1.0).ln_1p())).exp() - T::one()
}

/// Address and PC embeddings computed with one fixed set of parameters.
/// Must be cleared whenever the model changes.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache<T> {
    address: HashMap<u32, Vec<T>>,
    pc: HashMap<u32, Vec<T>>,
}

impl<T: Scalar> EmbeddingCache<T> {
    pub fn new() -> Self {
        EmbeddingCache {
            address: HashMap::new(),
            pc: HashMap::new(),
        }
    }

    pub fn clear(&mut self) {
        self.address.clear();
        self.pc.clear();
    }

    pub fn address(&mut self, model: &DeapModel<T>, address: u32) -> Vec<T> {
        self.address
            .entry(address)
            .or_insert_with(|| model.embed_address(address))
            .clone()
    }

    pub fn address_ref(&mut self, model: &DeapModel<T>, address: u32) -> &[T] {
        self.address
            .entry(address)
            .or_insert_with(|| model.embed_address(address))
    }

    pub fn step(&mut self, model: &DeapModel<T>, record: &TraceRecord) -> Vec<T> {
        let mut e = self.address(model, record.address);
        e.extend_from_slice(
            self.pc
                .entry(record.pc)
                .or_insert_with(|| model.embed_pc(record.pc)),
        );
        e
    }
}
