//! Execution probes.
//!
//! Every optimized path is generic over a [`Probe`]. The public entry points
//! pass [`NoProbe`], whose empty inlined hooks compile away; tests and the
//! verifier pass a [`CountingProbe`] to observe exactly what a path executes.

use alloc::vec;
use alloc::vec::Vec;

pub trait Probe {
    /// One multiply-accumulate executed by an inner loop.
    #[inline(always)]
    fn mac(&mut self) {}

    /// `count` accumulator values flushed to an output buffer.
    #[inline(always)]
    fn output_writes(&mut self, _count: usize) {}

    /// Pattern `pattern` wrote flat output element `index` while combining
    /// partial results.
    #[inline(always)]
    fn scatter_write(&mut self, _pattern: usize, _index: usize) {}
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl Probe for NoProbe {}

/// Counts MACs and output writes, and records which pattern wrote each
/// element of the combined output.
#[derive(Debug, Default, Clone)]
pub struct CountingProbe {
    pub macs: u64,
    pub output_writes: u64,
    writes_per_element: Vec<u32>,
    last_writer: Vec<usize>,
}

impl CountingProbe {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also tracks per-element scatter writes into an output of `len` floats.
    pub fn tracking(len: usize) -> Self {
        Self {
            macs: 0,
            output_writes: 0,
            writes_per_element: vec![0; len],
            last_writer: vec![usize::MAX; len],
        }
    }

    pub fn writes_per_element(&self) -> &[u32] {
        &self.writes_per_element
    }

    /// Pattern that last wrote each tracked element (`usize::MAX` if none).
    pub fn writers(&self) -> &[usize] {
        &self.last_writer
    }

    /// `true` iff every tracked element was written exactly once.
    pub fn write_once(&self) -> bool {
        !self.writes_per_element.is_empty() && self.writes_per_element.iter().all(|&n| n == 1)
    }
}

impl Probe for CountingProbe {
    fn mac(&mut self) {
        self.macs += 1;
    }

    fn output_writes(&mut self, count: usize) {
        self.output_writes += count as u64;
    }

    fn scatter_write(&mut self, pattern: usize, index: usize) {
        self.output_writes += 1;
        if let Some(n) = self.writes_per_element.get_mut(index) {
            *n += 1;
            self.last_writer[index] = pattern;
        }
    }
}
