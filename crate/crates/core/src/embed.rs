//! Byte-level embeddings of addresses and program counters.
//!
//! Every 32-bit value is split into four big-endian bytes. Each byte position
//! of each stream (address, PC) owns a 256-row embedding table; the four
//! looked-up rows are concatenated and mixed by a small MLP into one
//! address-level vector.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy_floor, init_uniform, softmax, Activation, Dense, Matrix, Optimizer,
    OptimizerConfig, Parameterized,
};
use crate::scalar::{axpy, Scalar};
use crate::trace::{Trace, TraceRecord};

pub const VOCAB: usize = 256;
pub const POSITIONS: usize = 4;

/// Big-endian bytes of a 32-bit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ByteTuple(pub [u8; 4]);

impl ByteTuple {
    pub fn recompose(self) -> u32 {
        u32::from_be_bytes(self.0)
    }
}

pub fn tokenize(value: u32) -> ByteTuple {
    ByteTuple(value.to_be_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Address,
    Pc,
}

/// Four position tables per stream, each `256 x d_byte`.
#[derive(Debug, Clone, PartialEq)]
pub struct ByteEmbeddingTables<T> {
    pub address: Vec<Matrix<T>>,
    pub pc: Vec<Matrix<T>>,
}

impl<T: Scalar> ByteEmbeddingTables<T> {
    pub fn zeros(d_byte: usize) -> Self {
        let t = || (0..POSITIONS).map(|_| Matrix::zeros(VOCAB, d_byte)).collect();
        ByteEmbeddingTables {
            address: t(),
            pc: t(),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_byte: usize, rng: &mut R) -> Self {
        let mut tables = Self::zeros(d_byte);
        for p in tables.params_mut() {
            for v in p.iter_mut() {
                *v = T::lit(rng.gen_range(-1.0..=1.0));
            }
        }
        tables
    }

    /// Every position table of each stream set to a copy of that stream's
    /// shared table.
    pub fn from_shared(address: &Matrix<T>, pc: &Matrix<T>) -> Self {
        ByteEmbeddingTables {
            address: vec![address.clone(); POSITIONS],
            pc: vec![pc.clone(); POSITIONS],
        }
    }

    pub fn d_byte(&self) -> usize {
        self.address[0].cols
    }

    pub fn stream(&self, stream: Stream) -> &[Matrix<T>] {
        match stream {
            Stream::Address => &self.address,
            Stream::Pc => &self.pc,
        }
    }

    pub fn stream_mut(&mut self, stream: Stream) -> &mut [Matrix<T>] {
        match stream {
            Stream::Address => &mut self.address,
            Stream::Pc => &mut self.pc,
        }
    }

    /// Concatenated position embeddings `W_1[b1] ++ .. ++ W_4[b4]`.
    pub fn lookup(&self, stream: Stream, value: u32) -> Vec<T> {
        let tables = self.stream(stream);
        let mut out = Vec::with_capacity(POSITIONS * self.d_byte());
        for (table, byte) in tables.iter().zip(tokenize(value).0) {
            out.extend_from_slice(table.row(byte as usize));
        }
        out
    }

    /// Adds `grad` (laid out like [`lookup`](Self::lookup)) to the rows used by `value`.
    pub fn accumulate_lookup(&mut self, stream: Stream, value: u32, grad: &[T]) {
        let d = self.d_byte();
        for (j, (table, byte)) in self
            .stream_mut(stream)
            .iter_mut()
            .zip(tokenize(value).0)
            .enumerate()
        {
            axpy(T::one(), &grad[j * d..(j + 1) * d], table.row_mut(byte as usize));
        }
    }

    pub fn cast<U: Scalar>(&self) -> ByteEmbeddingTables<U> {
        ByteEmbeddingTables {
            address: self.address.iter().map(Matrix::cast).collect(),
            pc: self.pc.iter().map(Matrix::cast).collect(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for ByteEmbeddingTables<T> {
    fn params(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::with_capacity(2 * POSITIONS);
        for (j, t) in self.address.iter().enumerate() {
            out.push((format!("address_table_{}", j + 1), &t.data[..]));
        }
        for (j, t) in self.pc.iter().enumerate() {
            out.push((format!("pc_table_{}", j + 1), &t.data[..]));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.address
            .iter_mut()
            .chain(self.pc.iter_mut())
            .map(|t| &mut t.data[..])
            .collect()
    }
}

/// `relu` hidden layer followed by a linear projection to `d_addr`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner<T> {
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

/// Intermediate values of one combiner evaluation.
#[derive(Debug, Clone)]
pub struct CombinerTrace<T> {
    pub input: Vec<T>,
    pub hidden: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Scalar> Combiner<T> {
    pub fn zeros(input: usize, hidden: usize, d_addr: usize) -> Self {
        Combiner {
            hidden: Dense::zeros(input, hidden, Activation::Relu),
            output: Dense::zeros(hidden, d_addr, Activation::Identity),
        }
    }

    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, d_addr: usize, rng: &mut R) -> Self {
        Combiner {
            hidden: Dense::new(input, hidden, Activation::Relu, rng),
            output: Dense::new(hidden, d_addr, Activation::Identity, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.trace(input.to_vec()).output
    }

    pub fn trace(&self, input: Vec<T>) -> CombinerTrace<T> {
        let hidden = self.hidden.forward_unchecked(&input);
        let output = self.output.forward_unchecked(&hidden);
        CombinerTrace {
            input,
            hidden,
            output,
        }
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward(&self, t: &CombinerTrace<T>, grad_out: &[T], grads: &mut Combiner<T>) -> Vec<T> {
        let gh = self
            .output
            .backward(&t.hidden, &t.output, grad_out, &mut grads.output);
        self.hidden.backward(&t.input, &t.hidden, &gh, &mut grads.hidden)
    }

    pub fn cast<U: Scalar>(&self) -> Combiner<U> {
        Combiner {
            hidden: self.hidden.cast(),
            output: self.output.cast(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for Combiner<T> {
    fn params(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (n, p) in self.hidden.params() {
            out.push((format!("hidden.{n}"), p));
        }
        for (n, p) in self.output.params() {
            out.push((format!("output.{n}"), p));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.hidden.params_mut();
        out.extend(self.output.params_mut());
        out
    }
}

/// Address-level embedding `f(W_1[b1] ++ .. ++ W_4[b4])`.
pub fn embed_address<T: Scalar>(
    value: u32,
    tables: &ByteEmbeddingTables<T>,
    combiner: &Combiner<T>,
) -> Vec<T> {
    combiner.forward(&tables.lookup(Stream::Address, value))
}

pub fn embed_pc<T: Scalar>(
    value: u32,
    tables: &ByteEmbeddingTables<T>,
    combiner: &Combiner<T>,
) -> Vec<T> {
    combiner.forward(&tables.lookup(Stream::Pc, value))
}

/// Input embedding of one access: address embedding followed by PC embedding.
pub fn embed_step<T: Scalar>(
    record: &TraceRecord,
    tables: &ByteEmbeddingTables<T>,
    address_combiner: &Combiner<T>,
    pc_combiner: &Combiner<T>,
) -> Vec<T> {
    let mut e = embed_address(record.address, tables, address_combiner);
    e.extend(embed_pc(record.pc, tables, pc_combiner));
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word2VecConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub hidden: usize,
    pub d_byte: usize,
    /// Total number of surrounding bytes; `ceil(c/2)` before and `floor(c/2)`
    /// after the center.
    pub context: usize,
    pub batch_size: usize,
    /// Upper bound on corpus tokens per stream.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for Word2VecConfig {
    fn default() -> Self {
        Word2VecConfig {
            epochs: 120,
            optimizer: OptimizerConfig::adam(3e-3).with_weight_decay(1e-3),
            hidden: 128,
            d_byte: 20,
            context: 4,
            batch_size: 256,
            max_tokens: 2048,
            seed: 0,
        }
    }
}

/// CBOW network: averaged context embeddings, one relu hidden layer, and a
/// 256-way softmax over the center byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Cbow<T> {
    pub embedding: Matrix<T>,
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

impl<T: Scalar> Cbow<T> {
    pub fn new<R: Rng + ?Sized>(d_byte: usize, hidden: usize, rng: &mut R) -> Self {
        let mut embedding = Matrix::zeros(VOCAB, d_byte);
        init_uniform(&mut embedding.data, 1, rng);
        Cbow {
            embedding,
            hidden: Dense::new(d_byte, hidden, Activation::Relu, rng),
            output: Dense::new(hidden, VOCAB, Activation::Identity, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_params();
        z
    }

    /// Loss of one example and, when `grads` is given, its accumulated gradient
    /// scaled by `scale`.
    fn example(&self, context: &[u8], center: u8, grads: Option<(&mut Cbow<T>, T)>) -> T {
        let d = self.embedding.cols;
        let inv = T::one() / T::lit(context.len() as f64);
        let mut avg = vec![T::zero(); d];
        for &c in context {
            axpy(inv, self.embedding.row(c as usize), &mut avg);
        }
        let h = self.hidden.forward_unchecked(&avg);
        let logits = self.output.forward_unchecked(&h);
        let probs = softmax(&logits, T::one()).expect("finite logits");
        let loss = cross_entropy_floor(probs[center as usize]);
        if let Some((g, scale)) = grads {
            let mut dlogits: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            dlogits[center as usize] -= scale;
            let dh = self.output.backward(&h, &logits, &dlogits, &mut g.output);
            let davg = self.hidden.backward(&avg, &h, &dh, &mut g.hidden);
            for &c in context {
                axpy(inv, &davg, g.embedding.row_mut(c as usize));
            }
        }
        loss
    }
}

impl<T: Scalar> Parameterized<T> for Cbow<T> {
    fn params(&self) -> Vec<(String, &[T])> {
        let mut out = vec![("embedding".to_string(), &self.embedding.data[..])];
        for (n, p) in self.hidden.params() {
            out.push((format!("hidden.{n}"), p));
        }
        for (n, p) in self.output.params() {
            out.push((format!("output.{n}"), p));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![&mut self.embedding.data[..]];
        out.extend(self.hidden.params_mut());
        out.extend(self.output.params_mut());
        out
    }
}

/// `(context, center)` pairs of one sentence, with the window truncated at
/// the sentence edges. Centers without any context are skipped.
pub fn cbow_examples(sentence: &[u8], context: usize) -> Vec<(Vec<u8>, u8)> {
    let before = context.div_ceil(2);
    let after = context / 2;
    let mut out = Vec::with_capacity(sentence.len());
    for (i, &center) in sentence.iter().enumerate() {
        let lo = i.saturating_sub(before);
        let hi = (i + after + 1).min(sentence.len());
        let ctx: Vec<u8> = sentence[lo..i]
            .iter()
            .chain(&sentence[i + 1..hi])
            .copied()
            .collect();
        if !ctx.is_empty() {
            out.push((ctx, center));
        }
    }
    out
}

/// Trains a CBOW model over the given sentences and returns it together with
/// the mean loss of every epoch.
pub fn train_cbow<T: Scalar>(
    sentences: &[Vec<u8>],
    cfg: &Word2VecConfig,
    seed: u64,
) -> Result<(Cbow<T>, Vec<f64>)> {
    let examples: Vec<(Vec<u8>, u8)> = sentences
        .iter()
        .flat_map(|s| cbow_examples(s, cfg.context))
        .collect();
    if examples.is_empty() {
        return Err(Error::Config("word2vec corpus has no usable tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Cbow::<T>::new(cfg.d_byte, cfg.hidden, &mut rng);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    let mut grads = model.zeros_like();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grads.zero_params();
            let scale = T::one() / T::lit(chunk.len() as f64);
            for &k in chunk {
                let (ctx, center) = &examples[k];
                total += model
                    .example(ctx, *center, Some((&mut grads, scale)))
                    .to_f64_lossy();
            }
            opt.step(&mut model, &grads)?;
        }
        losses.push(total / examples.len() as f64);
    }
    Ok((model, losses))
}

/// Mean CBOW loss of `model` over the sentences, without training.
pub fn cbow_loss<T: Scalar>(model: &Cbow<T>, sentences: &[Vec<u8>], context: usize) -> f64 {
    let examples: Vec<_> = sentences
        .iter()
        .flat_map(|s| cbow_examples(s, context))
        .collect();
    let total: f64 = examples
        .iter()
        .map(|(c, t)| model.example(c, *t, None).to_f64_lossy())
        .sum();
    total / examples.len().max(1) as f64
}

/// Byte sentences of one stream: evenly spaced blocks of consecutive values,
/// each contributing its four bytes in order, capped at `max_tokens` bytes.
pub fn byte_corpus(values: &[u32], max_tokens: usize) -> Vec<Vec<u8>> {
    const BLOCK_VALUES: usize = 64;
    let budget_values = (max_tokens / POSITIONS).max(1);
    if values.len() <= budget_values {
        return vec![values.iter().flat_map(|v| v.to_be_bytes()).collect()];
    }
    let blocks = budget_values.div_ceil(BLOCK_VALUES);
    let stride = values.len() / blocks;
    let mut out = Vec::with_capacity(blocks);
    let mut remaining = budget_values;
    for b in 0..blocks {
        let start = b * stride;
        let take = BLOCK_VALUES.min(remaining).min(values.len() - start);
        remaining -= take;
        out.push(
            values[start..start + take]
                .iter()
                .flat_map(|v| v.to_be_bytes())
                .collect(),
        );
    }
    out
}

/// Output of [`pretrain_word2vec`].
#[derive(Debug, Clone)]
pub struct Pretrained<T> {
    pub tables: ByteEmbeddingTables<T>,
    pub address_losses: Vec<f64>,
    pub pc_losses: Vec<f64>,
}

/// CBOW pretraining over the address and PC byte streams of `trace`. Each
/// stream's learned embedding initializes all four of its position tables.
pub fn pretrain_word2vec<T: Scalar>(trace: &Trace, cfg: &Word2VecConfig) -> Result<Pretrained<T>> {
    if trace.is_empty() {
        return Err(Error::Config("word2vec pretraining needs a non-empty trace".into()));
    }
    let addresses: Vec<u32> = trace.records.iter().map(|r| r.address).collect();
    let pcs: Vec<u32> = trace.records.iter().map(|r| r.pc).collect();
    let (address_model, address_losses) =
        train_cbow::<T>(&byte_corpus(&addresses, cfg.max_tokens), cfg, cfg.seed)?;
    let (pc_model, pc_losses) = train_cbow::<T>(
        &byte_corpus(&pcs, cfg.max_tokens),
        cfg,
        cfg.seed.wrapping_add(1),
    )?;
    Ok(Pretrained {
        tables: ByteEmbeddingTables::from_shared(&address_model.embedding, &pc_model.embedding),
        address_losses,
        pc_losses,
    })
}

/// Memoizes combiner evaluations per distinct value and accumulates the
/// gradients flowing back into them, so each distinct value is pushed through
/// the combiner once per pass.
pub(crate) struct EmbeddingMemo<T> {
    stream: Stream,
    index: HashMap<u32, usize>,
    values: Vec<u32>,
    traces: Vec<CombinerTrace<T>>,
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> EmbeddingMemo<T> {
    pub fn new(stream: Stream) -> Self {
        EmbeddingMemo {
            stream,
            index: HashMap::new(),
            values: Vec::new(),
            traces: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn get(
        &mut self,
        value: u32,
        tables: &ByteEmbeddingTables<T>,
        combiner: &Combiner<T>,
    ) -> usize {
        if let Some(&k) = self.index.get(&value) {
            return k;
        }
        let k = self.values.len();
        self.index.insert(value, k);
        self.values.push(value);
        self.traces
            .push(combiner.trace(tables.lookup(self.stream, value)));
        self.grads.push(vec![T::zero(); combiner.output_dim()]);
        k
    }

    pub fn output(&self, k: usize) -> &[T] {
        &self.traces[k].output
    }

    pub fn add_grad(&mut self, k: usize, grad: &[T]) {
        axpy(T::one(), grad, &mut self.grads[k]);
    }

    /// Pushes the accumulated gradients back through the combiner, in first-use order.
    pub fn backward(
        &self,
        combiner: &Combiner<T>,
        combiner_grads: &mut Combiner<T>,
        table_grads: Option<&mut ByteEmbeddingTables<T>>,
    ) {
        let mut table_grads = table_grads;
        for k in 0..self.values.len() {
            if self.grads[k].iter().all(|g| *g == T::zero()) {
                continue;
            }
            let gin = combiner.backward(&self.traces[k], &self.grads[k], combiner_grads);
            if let Some(tg) = table_grads.as_deref_mut() {
                tg.accumulate_lookup(self.stream, self.values[k], &gin);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize(0xDEAD_BEEF), ByteTuple([0xDE, 0xAD, 0xBE, 0xEF]));
        assert_eq!(tokenize(0), ByteTuple([0, 0, 0, 0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v: u32 = rng.gen();
            assert_eq!(tokenize(v).recompose(), v);
        }
    }

    #[test]
    fn context_window_truncates_at_edges() {
        let ex = cbow_examples(&[1, 2, 3, 4, 5], 4);
        assert_eq!(ex[0], (vec![2, 3], 1));
        assert_eq!(ex[1], (vec![1, 3, 4], 2));
        assert_eq!(ex[2], (vec![1, 2, 4, 5], 3));
        assert_eq!(ex[4], (vec![3, 4], 5));
        assert!(cbow_examples(&[9], 4).is_empty());
        // odd context sizes lean backwards
        assert_eq!(cbow_examples(&[1, 2, 3, 4, 5], 3)[2], (vec![1, 2, 4], 3));
    }

    fn small_cfg(epochs: usize) -> Word2VecConfig {
        Word2VecConfig {
            epochs,
            hidden: 16,
            d_byte: 6,
            batch_size: 32,
            ..Word2VecConfig::default()
        }
    }

    #[test]
    fn periodic_corpus_loss_decreases() {
        let sentence: Vec<u8> = (0..200).map(|i| if i % 2 == 0 { 0x11 } else { 0x7f }).collect();
        let (_, losses) = train_cbow::<f64>(&[sentence], &small_cfg(15), 3).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    }

    #[test]
    fn pretraining_is_deterministic() {
        let trace = Trace::from_pairs((0..300u32).map(|i| (0x400 + 4 * (i % 7), 0x1000 + 64 * (i % 13))));
        let a = pretrain_word2vec::<f64>(&trace, &small_cfg(3)).unwrap();
        let b = pretrain_word2vec::<f64>(&trace, &small_cfg(3)).unwrap();
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.address_losses, b.address_losses);
        assert_eq!(a.tables.address[0], a.tables.address[3]);
        assert_eq!(a.address_losses.len(), 3);
    }

    #[test]
    fn pretraining_rejects_empty_trace() {
        let err = pretrain_word2vec::<f64>(&Trace::default(), &small_cfg(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn corpus_respects_budget() {
        let values: Vec<u32> = (0..10_000).collect();
        let corpus = byte_corpus(&values, 1024);
        let tokens: usize = corpus.iter().map(Vec::len).sum();
        assert_eq!(tokens, 1024);
        assert_eq!(byte_corpus(&values[..3], 1024), vec![vec![0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 2]]);
    }

    fn tiny() -> (ByteEmbeddingTables<f64>, Combiner<f64>, Combiner<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tables = ByteEmbeddingTables::random(3, &mut rng);
        let a = Combiner::new(12, 7, 5, &mut rng);
        let p = Combiner::new(12, 7, 5, &mut rng);
        (tables, a, p)
    }

    #[test]
    fn embedding_shapes_and_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tables = ByteEmbeddingTables::<f64>::random(20, &mut rng);
        let ca = Combiner::new(80, 128, 20, &mut rng);
        let cp = Combiner::new(80, 128, 20, &mut rng);
        let a = embed_address(0xDEAD_BEEF, &tables, &ca);
        assert_eq!(a.len(), 20);
        assert_eq!(a, embed_address(0xDEAD_BEEF, &tables, &ca));
        let rec = TraceRecord { pc: 0x40, address: 0xDEAD_BEEF, index: 0 };
        let e = embed_step(&rec, &tables, &ca, &cp);
        assert_eq!(e.len(), 40);
        assert_eq!(&e[..20], &a[..]);
        assert_eq!(&e[20..], &embed_pc(0x40, &tables, &cp)[..]);
        // swapping the two fields swaps which table set each goes through
        let swapped = TraceRecord { pc: 0xDEAD_BEEF, address: 0x40, index: 0 };
        let es = embed_step(&swapped, &tables, &ca, &cp);
        assert_eq!(&es[..20], &embed_address(0x40, &tables, &ca)[..]);
        assert_eq!(&es[20..], &embed_pc(0xDEAD_BEEF, &tables, &cp)[..]);
    }

    #[test]
    fn one_byte_difference_changes_embedding() {
        let (tables, ca, _) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let v: u32 = rng.gen();
            let pos = rng.gen_range(0..4);
            let mut bytes = tokenize(v).0;
            bytes[pos] = bytes[pos].wrapping_add(rng.gen_range(1..=255));
            let w = ByteTuple(bytes).recompose();
            assert_ne!(tables.lookup(Stream::Address, v), tables.lookup(Stream::Address, w));
            assert_ne!(embed_address(v, &tables, &ca), embed_address(w, &tables, &ca));
        }
    }

    #[test]
    fn combiner_gradients_match_finite_differences() {
        let (tables, ca, _) = tiny();
        let values = [0xDEAD_BEEF_u32, 0x0000_0040, 0xDEAD_0000];
        let coef: Vec<f64> = (0..5).map(|k| 0.3 * k as f64 - 0.5).collect();
        let loss = |t: &ByteEmbeddingTables<f64>, c: &Combiner<f64>| -> f64 {
            values
                .iter()
                .map(|&v| {
                    let a = embed_address(v, t, c);
                    a.iter().zip(&coef).map(|(x, w)| w * x * x).sum::<f64>()
                })
                .sum()
        };
        let mut memo = EmbeddingMemo::new(Stream::Address);
        let mut cg = ca.clone();
        cg.zero_params();
        let mut tg = ByteEmbeddingTables::zeros(3);
        for &v in values.iter().chain(&[0xDEAD_BEEF]) {
            let _ = memo.get(v, &tables, &ca);
        }
        for &v in &values {
            let k = memo.get(v, &tables, &ca);
            let a = memo.output(k).to_vec();
            let g: Vec<f64> = a.iter().zip(&coef).map(|(x, w)| 2.0 * w * x).collect();
            memo.add_grad(k, &g);
        }
        memo.backward(&ca, &mut cg, Some(&mut tg));

        let report = grad_check(&ca.flatten(), &cg.flatten(), |p| {
            let mut c = ca.clone();
            c.assign_flat(p);
            loss(&tables, &c)
        });
        assert!(report.passes(1e-4), "{report:?}");
        let report = grad_check(&tables.flatten(), &tg.flatten(), |p| {
            let mut t = tables.clone();
            t.assign_flat(p);
            loss(&t, &ca)
        });
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn cbow_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Cbow::<f64>::new(4, 6, &mut rng);
        let data = [(vec![1u8, 2, 4], 3u8), (vec![7, 1], 2)];
        let mut g = model.zeros_like();
        for (c, t) in &data {
            model.example(c, *t, Some((&mut g, 1.0)));
        }
        let report = grad_check(&model.flatten(), &g.flatten(), |p| {
            let mut m = model.clone();
            m.assign_flat(p);
            data.iter().map(|(c, t)| m.example(c, *t, None)).sum()
        });
        assert!(report.passes(1e-4), "{report:?}");
    }
}
