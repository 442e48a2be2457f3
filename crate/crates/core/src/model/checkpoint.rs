//! Binary containers for model checkpoints and byte-embedding tables.
//!
//! Layout: magic, a header of little-endian `u64` dimensions, then every
//! parameter buffer in declaration order as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::embed::ByteEmbeddingTables;
use crate::error::{Error, Result};
use crate::nn::{Optimizer, OptimizerConfig, Parameterized};
use crate::scalar::Scalar;

use super::{DeapModel, ModelDims};

const MODEL_MAGIC: &[u8; 5] = b"DEAP1";
const TABLES_MAGIC: &[u8; 5] = b"DEAPT";
const OPTIMIZER_TAG: &[u8; 4] = b"ADAM";

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn floats<T: Scalar>(&mut self, vs: &[T]) {
        for v in vs {
            self.f64(v.to_f64_lossy());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "file truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fill<T: Scalar>(&mut self, out: &mut [T], what: &str) -> Result<()> {
        let bytes = self.take(8 * out.len(), what)?;
        for (v, chunk) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = T::lit(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        Ok(())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn check_magic(r: &mut Reader, magic: &[u8; 5]) -> Result<()> {
    let found = r.take(magic.len(), "magic")?;
    if found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(found),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// A loaded checkpoint: the model and, when present, the optimizer state it
/// was saved with.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: DeapModel<T>,
    pub optimizer: Option<Optimizer<T>>,
}

pub fn checkpoint_bytes<T: Scalar>(model: &DeapModel<T>, optimizer: Option<&Optimizer<T>>) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    for (_, v) in model.dims.fields() {
        w.u64(v as u64);
    }
    w.f64(model.frequency_scale);
    w.f64(model.reuse_scale);
    w.u64(model.param_count() as u64);
    for (_, p) in model.params() {
        w.floats(p);
    }
    if let Some(opt) = optimizer.filter(|o| !o.first_moment.is_empty()) {
        w.0.extend_from_slice(OPTIMIZER_TAG);
        w.u64(opt.step_count);
        for m in opt.first_moment.iter().chain(&opt.second_moment) {
            w.floats(m);
        }
    }
    w.0
}

pub fn save_checkpoint<T: Scalar>(
    model: &DeapModel<T>,
    optimizer: Option<&Optimizer<T>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), &checkpoint_bytes(model, optimizer))
}

/// Parses a checkpoint. When `expected` is given, every header dimension must
/// match it. `optimizer` supplies the hyperparameters for restored optimizer state.
pub fn read_checkpoint<T: Scalar>(
    bytes: &[u8],
    expected: Option<&ModelDims>,
    optimizer: OptimizerConfig,
) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_magic(&mut r, MODEL_MAGIC)?;
    let mut raw = [0usize; 6];
    for (slot, (name, _)) in raw.iter_mut().zip(ModelDims::default().fields()) {
        *slot = r.u64(name)? as usize;
    }
    let dims = ModelDims {
        d_byte: raw[0],
        combiner_hidden: raw[1],
        d_addr: raw[2],
        lstm_hidden: raw[3],
        decoder_hidden: raw[4],
        kde_probes: raw[5],
    };
    if raw.iter().any(|&v| v == 0 || v > 1 << 20) {
        return Err(Error::Format(format!("implausible dimensions {dims:?}")));
    }
    if let Some(exp) = expected {
        for ((name, want), (_, got)) in exp.fields().into_iter().zip(dims.fields()) {
            if want != got {
                return Err(Error::dimension(name, want, got));
            }
        }
    }
    let mut model = DeapModel::<T>::zeros(dims);
    model.frequency_scale = r.f64("frequency_scale")?;
    model.reuse_scale = r.f64("reuse_scale")?;
    let count = r.u64("parameter count")? as usize;
    if count != model.param_count() {
        return Err(Error::dimension("parameter_count", model.param_count(), count));
    }
    for p in model.params_mut() {
        r.fill(p, "parameters")?;
    }
    let mut restored = None;
    if !r.done() {
        let tag = r.take(OPTIMIZER_TAG.len(), "optimizer tag")?;
        if tag != OPTIMIZER_TAG {
            return Err(Error::Format("unexpected trailing data after parameters".into()));
        }
        let mut opt = Optimizer::new(optimizer);
        opt.step_count = r.u64("optimizer step count")?;
        let shapes: Vec<usize> = model.params().iter().map(|(_, p)| p.len()).collect();
        for moments in [&mut opt.first_moment, &mut opt.second_moment] {
            for &len in &shapes {
                let mut v = vec![T::zero(); len];
                r.fill(&mut v, "optimizer state")?;
                moments.push(v);
            }
        }
        if !r.done() {
            return Err(Error::Format("unexpected trailing data after optimizer state".into()));
        }
        restored = Some(opt);
    }
    Ok(Checkpoint {
        model,
        optimizer: restored,
    })
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected: Option<&ModelDims>,
    optimizer: OptimizerConfig,
) -> Result<Checkpoint<T>> {
    read_checkpoint(&read_file(path.as_ref())?, expected, optimizer)
}

pub fn tables_bytes<T: Scalar>(tables: &ByteEmbeddingTables<T>) -> Vec<u8> {
    let mut w = Writer(TABLES_MAGIC.to_vec());
    w.u64(tables.d_byte() as u64);
    for (_, p) in tables.params() {
        w.floats(p);
    }
    w.0
}

pub fn save_tables<T: Scalar>(tables: &ByteEmbeddingTables<T>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &tables_bytes(tables))
}

pub fn read_tables<T: Scalar>(bytes: &[u8], expected_d_byte: Option<usize>) -> Result<ByteEmbeddingTables<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_magic(&mut r, TABLES_MAGIC)?;
    let d = r.u64("d_byte")? as usize;
    if d == 0 || d > 1 << 16 {
        return Err(Error::Format(format!("implausible d_byte {d}")));
    }
    if let Some(want) = expected_d_byte.filter(|&w| w != d) {
        return Err(Error::dimension("d_byte", want, d));
    }
    let mut tables = ByteEmbeddingTables::zeros(d);
    for p in tables.params_mut() {
        r.fill(p, "embedding tables")?;
    }
    if !r.done() {
        return Err(Error::Format("unexpected trailing data after tables".into()));
    }
    Ok(tables)
}

pub fn load_tables<T: Scalar>(path: impl AsRef<Path>, expected_d_byte: Option<usize>) -> Result<ByteEmbeddingTables<T>> {
    read_tables(&read_file(path.as_ref())?, expected_d_byte)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> DeapModel<f64> {
        let dims = ModelDims {
            d_byte: 3,
            combiner_hidden: 6,
            d_addr: 4,
            lstm_hidden: 5,
            decoder_hidden: 3,
            kde_probes: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tables = ByteEmbeddingTables::random(3, &mut rng);
        let mut m = DeapModel::new(dims, tables, &mut rng).unwrap();
        m.reuse_scale = 101.0;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = checkpoint_bytes(&m, None);
        let back = read_checkpoint::<f64>(&bytes, Some(&m.dims), OptimizerConfig::adam(1e-3)).unwrap();
        assert!(back.optimizer.is_none());
        assert_eq!(back.model, m);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.model.flatten()), bits(m.flatten()));
        assert_eq!(&bytes[..5], b"DEAP1");
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut m = model();
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3));
        let mut g = m.clone();
        g.zero_params();
        g.trunk.bias[0] = 0.5;
        opt.step(&mut m, &g).unwrap();
        let bytes = checkpoint_bytes(&m, Some(&opt));
        let back = read_checkpoint::<f64>(&bytes, None, OptimizerConfig::adam(1e-3)).unwrap();
        let o = back.optimizer.unwrap();
        assert_eq!(o.step_count, 1);
        assert_eq!(o.first_moment, opt.first_moment);
        assert_eq!(o.second_moment, opt.second_moment);
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let m = model();
        let bytes = checkpoint_bytes(&m, None);
        for cut in [0, 3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = read_checkpoint::<f64>(&bytes[..cut], None, OptimizerConfig::adam(1e-3)).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint::<f64>(&bad, None, OptimizerConfig::adam(1e-3)),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let m = model();
        let bytes = checkpoint_bytes(&m, None);
        let mut other = m.dims;
        other.d_addr = 20;
        match read_checkpoint::<f64>(&bytes, Some(&other), OptimizerConfig::adam(1e-3)) {
            Err(Error::Dimension { field, expected, found }) => {
                assert_eq!(field, "d_addr");
                assert_eq!((expected.as_str(), found.as_str()), ("20", "4"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tables_round_trip() {
        let t = model().tables;
        let bytes = tables_bytes(&t);
        assert_eq!(read_tables::<f64>(&bytes, Some(3)).unwrap(), t);
        assert!(matches!(read_tables::<f64>(&bytes, Some(20)), Err(Error::Dimension { .. })));
        assert!(matches!(read_tables::<f64>(&bytes[..40], None), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, None, &path).unwrap();
        let back = load_checkpoint::<f64>(&path, None, OptimizerConfig::adam(1e-3)).unwrap();
        assert_eq!(back.model, m);
        let missing = load_checkpoint::<f64>(dir.path().join("nope"), None, OptimizerConfig::adam(1e-3));
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
