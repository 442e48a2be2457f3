//! Program-like synthetic traces.
//!
//! A [`ProgramLayout`] fixes where a toy program keeps its data: a small hot
//! stack frame, a few global arrays that are swept repeatedly, a large input
//! buffer that is read once front to back, and a heap from which short-lived
//! scratch buffers are carved. Each kernel keeps its loop state in its own
//! stack slot and touches it every few accesses, the way a compiled loop
//! spills its counter. A run interleaves kernels over that layout;
//! the run seed only changes which kernel runs next and the kernel sizes, so
//! two runs of the same layout share their address space the way two
//! executions of one binary do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Trace, LINE};

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramLayout {
    pub stack_base: u32,
    pub stack_lines: usize,
    pub array_base: u32,
    /// Line counts of the global arrays, laid out back to back.
    pub arrays: Vec<usize>,
    pub input_base: u32,
    pub heap_base: u32,
    /// Scratch buffer size range in lines.
    pub scratch_lines: (usize, usize),
    /// A kernel touches its stack slot after every `stack_stride` data accesses.
    pub stack_stride: usize,
}

impl Default for ProgramLayout {
    fn default() -> Self {
        ProgramLayout {
            stack_base: 0x7fff_0000,
            stack_lines: 10,
            array_base: 0x0060_0000,
            arrays: vec![40, 56],
            input_base: 0x2000_0000,
            heap_base: 0x0800_0000,
            scratch_lines: (4, 12),
            stack_stride: 3,
        }
    }
}

const PC_STACK: u32 = 0x0040_1000;
const PC_SWEEP: u32 = 0x0040_2000;
const PC_INPUT: u32 = 0x0040_3000;
const PC_SCRATCH: u32 = 0x0040_4000;

struct Emitter<'a> {
    layout: &'a ProgramLayout,
    rng: ChaCha8Rng,
    out: Vec<(u32, u32)>,
    length: usize,
    input_cursor: u32,
    heap_cursor: u32,
    slot: u32,
    since_stack: usize,
}

impl Emitter<'_> {
    fn full(&self) -> bool {
        self.out.len() >= self.length
    }

    fn push(&mut self, pc: u32, address: u32) {
        if self.full() {
            return;
        }
        self.out.push((pc, address));
        self.since_stack += 1;
        if self.since_stack >= self.layout.stack_stride && !self.full() {
            self.since_stack = 0;
            let slot = self.slot % self.layout.stack_lines as u32;
            self.out
                .push((PC_STACK + 4 * slot, self.layout.stack_base + slot * LINE));
        }
    }

    fn enter(&mut self, slot: usize) {
        self.slot = slot as u32;
        self.since_stack = 0;
    }

    fn sweep(&mut self, array: usize) {
        let offset: usize = self.layout.arrays[..array].iter().sum();
        let base = self.layout.array_base + (offset as u32) * LINE;
        let pc = PC_SWEEP + 0x100 * array as u32;
        self.enter(array);
        for i in 0..self.layout.arrays[array] {
            self.push(pc, base + i as u32 * LINE);
        }
    }

    fn read_input(&mut self, lines: usize) {
        self.enter(self.layout.arrays.len());
        for _ in 0..lines {
            let addr = self.layout.input_base.wrapping_add(self.input_cursor * LINE);
            self.input_cursor += 1;
            self.push(PC_INPUT, addr);
        }
    }

    fn scratch(&mut self) {
        let (lo, hi) = self.layout.scratch_lines;
        let lines = self.rng.gen_range(lo..=hi) as u32;
        let base = self.layout.heap_base.wrapping_add(self.heap_cursor * LINE);
        self.heap_cursor += lines;
        for pass in 0..3u32 {
            self.enter(self.layout.arrays.len() + 1 + pass as usize);
            for i in 0..lines {
                self.push(PC_SCRATCH + 4 * pass, base + i * LINE);
            }
        }
    }
}

/// Deterministic program-like trace of exactly `length` records.
pub fn program_trace(layout: &ProgramLayout, length: usize, seed: u64) -> Trace {
    let mut em = Emitter {
        layout,
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::with_capacity(length + 1),
        length,
        input_cursor: 0,
        heap_cursor: 0,
        slot: 0,
        since_stack: 0,
    };
    while !em.full() {
        match em.rng.gen_range(0..4) {
            0 | 1 => {
                let array = em.rng.gen_range(0..layout.arrays.len());
                em.sweep(array);
            }
            2 => {
                let lines = em.rng.gen_range(8..32);
                em.read_input(lines);
            }
            _ => em.scratch(),
        }
    }
    em.out.truncate(length);
    Trace::from_pairs(em.out)
}
