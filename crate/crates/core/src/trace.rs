//! Memory access traces: loading, ground-truth labels and synthetic workloads.
//!
//! A trace file holds one `pc,address` pair per line. Both fields are 32-bit
//! and may be written in hex (`0x` prefix) or decimal. Lines starting with `#`
//! and blank lines are skipped.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub mod workload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub pc: u32,
    pub address: u32,
    /// Position in the trace, in timesteps.
    pub index: usize,
}

/// Records in trace order with contiguous indices starting at zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let records = pairs
            .into_iter()
            .enumerate()
            .map(|(index, (pc, address))| TraceRecord { pc, address, index })
            .collect();
        Trace { records }
    }

    /// Trace whose PCs are all zero.
    pub fn from_addresses(addresses: &[u32]) -> Self {
        Self::from_pairs(addresses.iter().map(|&a| (0, a)))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u32> + '_ {
        self.records.iter().map(|r| r.address)
    }

    /// Contiguous sub-trace `[start, end)` with indices renumbered from zero.
    pub fn slice(&self, start: usize, end: usize) -> Trace {
        Self::from_pairs(self.records[start..end].iter().map(|r| (r.pc, r.address)))
    }
}

/// A trace together with its future-knowledge labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTrace {
    pub trace: Trace,
    /// Timesteps until the next access to the same address, or `cap`.
    pub reuse_distance: Vec<u64>,
    /// Number of later accesses to the same address in this trace.
    pub future_frequency: Vec<u64>,
    /// Index of the next access to the same address.
    pub next_use: Vec<Option<usize>>,
    pub cap: u64,
}

impl LabeledTrace {
    pub fn records(&self) -> &[TraceRecord] {
        &self.trace.records
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    /// `pc,address` per line.
    #[default]
    Csv,
    /// `pc address` separated by any whitespace.
    Whitespace,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "ws" | "whitespace" => Ok(TraceFormat::Whitespace),
            other => Err(Error::Config(format!(
                "unknown trace format `{other}` (expected csv or whitespace)"
            ))),
        }
    }
}

fn parse_u32(field: &str) -> std::result::Result<u32, String> {
    let field = field.trim();
    let parsed = if let Some(hex) = field
        .strip_prefix("0x")
        .or_else(|| field.strip_prefix("0X"))
    {
        u32::from_str_radix(hex, 16)
    } else {
        field.parse::<u32>()
    };
    parsed.map_err(|e| format!("invalid 32-bit value `{field}`: {e}"))
}

/// Parses trace text. `path` is used only for error messages.
pub fn parse_trace(text: &str, format: TraceFormat, path: &Path) -> Result<Trace> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match format {
            TraceFormat::Csv => line.split(',').collect(),
            TraceFormat::Whitespace => line.split_whitespace().collect(),
        };
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if fields.len() != 2 {
            return Err(err(format!(
                "expected 2 fields (pc, address), found {}",
                fields.len()
            )));
        }
        let pc = parse_u32(fields[0]).map_err(err)?;
        let address = parse_u32(fields[1]).map_err(err)?;
        pairs.push((pc, address));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyTrace(path.to_path_buf()));
    }
    Ok(Trace::from_pairs(pairs))
}

pub fn load_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading trace {}", path.display()), e))?;
    parse_trace(&text, format, path)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(trace.len() * 22 + 16);
    out.push_str("# pc,address\n");
    for r in &trace.records {
        out.push_str(&format!("0x{:08x},0x{:08x}\n", r.pc, r.address));
    }
    let mut file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Computes reuse distances, future frequencies and next-use indices in one
/// backward pass. `cap` replaces the reuse distance of accesses that never
/// recur and must exceed the trace length.
pub fn label_trace(trace: Trace, cap: u64) -> Result<LabeledTrace> {
    let n = trace.len();
    if cap <= n as u64 {
        return Err(Error::Config(format!(
            "label_cap must exceed the trace length ({n}), got {cap}"
        )));
    }
    let mut reuse_distance = vec![cap; n];
    let mut future_frequency = vec![0; n];
    let mut next_use = vec![None; n];
    let mut seen: HashMap<u32, (usize, u64)> = HashMap::new();
    for (i, record) in trace.records.iter().enumerate().rev() {
        let entry = seen.entry(record.address).or_insert((usize::MAX, 0));
        if entry.0 != usize::MAX {
            next_use[i] = Some(entry.0);
            reuse_distance[i] = (entry.0 - i) as u64;
        }
        future_frequency[i] = entry.1;
        *entry = (i, entry.1 + 1);
    }
    Ok(LabeledTrace {
        trace,
        reuse_distance,
        future_frequency,
        next_use,
        cap,
    })
}

/// Labels with the default cap of `len + 1`.
pub fn label_default(trace: Trace) -> LabeledTrace {
    let cap = trace.len() as u64 + 1;
    label_trace(trace, cap).expect("len + 1 always exceeds len")
}

/// Synthetic workload families.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    /// A fixed loop over `period` distinct lines.
    Cyclic { period: usize },
    /// Independent draws from `distinct` lines with Zipf popularity.
    Zipf { distinct: usize, exponent: f64 },
    /// Rounds over `hot` heavy hitters separated by scans of `scan` lines that
    /// are never touched again. Recency-based eviction flushes the hot set
    /// during every scan while frequency-based eviction keeps it.
    Adversarial { hot: usize, scan: usize },
    /// Program-like mixture, see [`workload`].
    Program,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthKind::Cyclic { period } => write!(f, "cyclic:{period}"),
            SynthKind::Zipf { distinct, exponent } => write!(f, "zipf:{distinct}:{exponent}"),
            SynthKind::Adversarial { hot, scan } => write!(f, "adversarial:{hot}:{scan}"),
            SynthKind::Program => write!(f, "program"),
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    /// `cyclic[:period]`, `zipf[:distinct[:exponent]]`,
    /// `adversarial[:hot[:scan]]` or `program`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = |what: &str| Error::Config(format!("invalid synthetic trace kind `{s}`: {what}"));
        let usize_arg = |i: usize, default: usize| -> Result<usize> {
            match args.get(i) {
                None => Ok(default),
                Some(a) => a
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| bad("expected a positive integer")),
            }
        };
        let kind = match name {
            "cyclic" if args.len() <= 1 => SynthKind::Cyclic {
                period: usize_arg(0, 4)?,
            },
            "zipf" if args.len() <= 2 => SynthKind::Zipf {
                distinct: usize_arg(0, 256)?,
                exponent: match args.get(1) {
                    None => 1.0,
                    Some(a) => a
                        .parse::<f64>()
                        .ok()
                        .filter(|e| e.is_finite() && *e > 0.0)
                        .ok_or_else(|| bad("expected a positive exponent"))?,
                },
            },
            "adversarial" if args.len() <= 2 => SynthKind::Adversarial {
                hot: usize_arg(0, 6)?,
                scan: usize_arg(1, 10)?,
            },
            "program" if args.is_empty() => SynthKind::Program,
            "cyclic" | "zipf" | "adversarial" | "program" => return Err(bad("too many arguments")),
            _ => return Err(bad("unknown kind")),
        };
        Ok(kind)
    }
}

/// Base of the synthetic data region; lines are 64 bytes apart.
pub const SYNTH_BASE: u32 = 0x1000_0000;
pub const LINE: u32 = 64;

fn line_address(base: u32, line: usize) -> u32 {
    base.wrapping_add((line as u32).wrapping_mul(LINE))
}

fn pc_for(site: usize) -> u32 {
    0x0040_0000 + 4 * site as u32
}

/// Deterministic synthetic trace for `(kind, length, seed)`.
pub fn synth_trace(kind: &SynthKind, length: usize, seed: u64) -> Result<LabeledTrace> {
    if length == 0 {
        return Err(Error::Config("synthetic trace length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(u32, u32)> = match *kind {
        SynthKind::Cyclic { period } => (0..length)
            .map(|t| {
                let i = t % period;
                (pc_for(i), line_address(SYNTH_BASE, i))
            })
            .collect(),
        SynthKind::Zipf { distinct, exponent } => {
            let zipf = ZipfTable::new(distinct, exponent);
            (0..length)
                .map(|_| {
                    let rank = zipf.sample(&mut rng);
                    (pc_for(rank % 16), line_address(SYNTH_BASE, rank))
                })
                .collect()
        }
        SynthKind::Adversarial { hot, scan } => {
            let scan_base = SYNTH_BASE + 0x0100_0000;
            let mut next_scan = 0usize;
            let mut out = Vec::with_capacity(length);
            'outer: loop {
                for h in 0..hot {
                    if out.len() == length {
                        break 'outer;
                    }
                    out.push((pc_for(0), line_address(SYNTH_BASE, h)));
                }
                for _ in 0..scan {
                    if out.len() == length {
                        break 'outer;
                    }
                    out.push((pc_for(1), line_address(scan_base, next_scan)));
                    next_scan += 1;
                }
            }
            out
        }
        SynthKind::Program => {
            return Ok(label_default(workload::program_trace(
                &workload::ProgramLayout::default(),
                length,
                seed,
            )))
        }
    };
    Ok(label_default(Trace::from_pairs(pairs)))
}

/// Inverse-CDF sampler over ranks `0..n` with weight `1 / (rank + 1)^s`.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: usize, exponent: f64) -> Self {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 0..n {
            acc += 1.0 / ((k + 1) as f64).powf(exponent);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        ZipfTable { cdf }
    }
}

impl Distribution<usize> for ZipfTable {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf
            .partition_point(|&c| c < u)
            .min(self.cdf.len() - 1)
    }
}
