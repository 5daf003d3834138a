//! Trace records, address geometry, splitting and synthetic generators.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryAccess {
    pub ordinal: u64,
    pub cycle: u64,
    pub pc: u64,
    pub vaddr: u64,
}

impl MemoryAccess {
    pub fn new(ordinal: u64, cycle: u64, pc: u64, vaddr: u64) -> Self {
        Self {
            ordinal,
            cycle,
            pc,
            vaddr,
        }
    }
}

/// Virtual address geometry.
///
/// A byte address splits into a `p`-bit page address, a `c`-bit block index
/// and the intra-block offset. Prefetching works on block addresses
/// (`p + c` bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressConfig {
    pub addr_bits: u32,
    pub page_size_bits: u32,
    pub block_offset_bits: u32,
}

impl Default for AddressConfig {
    fn default() -> Self {
        Self {
            addr_bits: 64,
            page_size_bits: 12,
            block_offset_bits: 6,
        }
    }
}

impl AddressConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.block_offset_bits < self.page_size_bits && self.page_size_bits < self.addr_bits)
        {
            return Err(Error::Config(format!(
                "need block_offset_bits < page_size_bits < addr_bits, got {} / {} / {}",
                self.block_offset_bits, self.page_size_bits, self.addr_bits
            )));
        }
        if self.addr_bits > 64 {
            return Err(Error::Config(format!(
                "addr_bits {} exceeds 64",
                self.addr_bits
            )));
        }
        Ok(())
    }

    /// Block-index bits within a page (`c`).
    pub fn block_index_bits(&self) -> u32 {
        self.page_size_bits - self.block_offset_bits
    }

    /// Page-address bits (`p`).
    pub fn page_bits(&self) -> u32 {
        self.addr_bits - self.page_size_bits
    }

    /// Width of a block address (`p + c`).
    pub fn block_bits(&self) -> u32 {
        self.addr_bits - self.block_offset_bits
    }

    /// Mask selecting the low `p + c` bits.
    pub fn block_mask(&self) -> u64 {
        low_mask(self.block_bits())
    }

    pub fn blocks_per_page(&self) -> u64 {
        1u64 << self.block_index_bits()
    }

    pub fn block_address(&self, vaddr: u64) -> u64 {
        (vaddr >> self.block_offset_bits) & self.block_mask()
    }

    pub fn page_of_block(&self, block: u64) -> u64 {
        block >> self.block_index_bits()
    }

    pub fn offset_of_block(&self, block: u64) -> u64 {
        block & low_mask(self.block_index_bits())
    }

    /// First byte address of `block`.
    pub fn block_base(&self, block: u64) -> u64 {
        (block & self.block_mask()) << self.block_offset_bits
    }
}

/// Mask with the low `bits` bits set (`bits` may be 64).
pub(crate) fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Block address of `vaddr` under `cfg`.
pub fn block_address(vaddr: u64, cfg: &AddressConfig) -> u64 {
    cfg.block_address(vaddr)
}

/// Contiguous train / validation / test ranges over a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl TraceSplit {
    pub fn len(&self) -> usize {
        self.test.end
    }

    pub fn is_empty(&self) -> bool {
        self.test.end == 0
    }
}

/// Split fractions for [`split_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.4,
            validation: 0.1,
            test: 0.5,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Split(format!("fractions must be positive: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Prefix split: boundaries at `floor(cumulative fraction * n)`.
pub fn split_trace(len: usize, ratios: SplitRatios) -> Result<TraceSplit> {
    ratios.validate()?;
    if len < 3 {
        return Err(Error::Split(format!("trace has {len} records, need at least 3")));
    }
    let n = len as f64;
    let a = libm::floor(ratios.train * n) as usize;
    let b = libm::floor((ratios.train + ratios.validation) * n) as usize;
    let a = a.min(len);
    let b = b.clamp(a, len);
    Ok(TraceSplit {
        train: 0..a,
        validation: a..b,
        test: b..len,
    })
}

/// Checks the ordinal and cycle invariants of a trace.
pub fn validate_trace(trace: &[MemoryAccess]) -> Result<()> {
    for (i, w) in trace.iter().enumerate() {
        if w.ordinal != i as u64 {
            return Err(Error::Config(format!(
                "record {i} has ordinal {}, expected {i}",
                w.ordinal
            )));
        }
    }
    if let Some(i) = trace.windows(2).position(|w| w[1].cycle < w[0].cycle) {
        return Err(Error::Config(format!(
            "cycle decreases between records {i} and {}",
            i + 1
        )));
    }
    Ok(())
}

/// Mean cycles between consecutive accesses (1.0 for traces shorter than 2).
pub fn mean_cycles_per_access(trace: &[MemoryAccess]) -> f64 {
    match (trace.first(), trace.last()) {
        (Some(first), Some(last)) if trace.len() >= 2 => {
            (last.cycle - first.cycle) as f64 / (trace.len() - 1) as f64
        }
        _ => 1.0,
    }
}

/// One PC-tagged stride stream of [`Pattern::MultiPc`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrideStream {
    pub pc: u64,
    pub stride: i64,
    pub start_block: u64,
}

/// Access pattern families for synthetic traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    /// Constant block stride. With `period`, the stream restarts at
    /// `start_block` every `period` accesses.
    Stride {
        stride: i64,
        start_block: u64,
        #[serde(default)]
        period: Option<u64>,
    },
    /// Random walk confined to one page for `dwell` accesses, then moves on
    /// by `page_stride` pages.
    PageWalk {
        start_page: u64,
        max_step: u64,
        dwell: u64,
        page_stride: i64,
    },
    /// Repeating block-delta sequence that crosses page boundaries. When
    /// `drift_every > 0`, the last delta of the sequence grows by `drift`
    /// once per `drift_every` accesses, so late deltas are unseen early on.
    PageSkip {
        deltas: Vec<i64>,
        start_block: u64,
        #[serde(default)]
        drift_every: u64,
        #[serde(default)]
        drift: i64,
    },
    /// Scans a page upward by `stride` blocks from a random offset to the
    /// page end, then moves `min_page_jump..=max_page_jump` pages on and
    /// starts over.
    PageScan {
        start_page: u64,
        stride: u64,
        min_page_jump: u64,
        max_page_jump: u64,
    },
    /// Interleaved per-PC stride streams; each access picks a stream at
    /// random.
    MultiPc { streams: Vec<StrideStream> },
    /// Uniformly random blocks in `[base_block, base_block + region_blocks)`.
    Uniform { base_block: u64, region_blocks: u64 },
}

impl Pattern {
    pub fn name(&self) -> &'static str {
        match self {
            Pattern::Stride { .. } => "stride",
            Pattern::PageWalk { .. } => "page_walk",
            Pattern::PageSkip { .. } => "page_skip",
            Pattern::PageScan { .. } => "page_scan",
            Pattern::MultiPc { .. } => "multi_pc",
            Pattern::Uniform { .. } => "uniform",
        }
    }
}

/// A synthetic trace description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    #[serde(flatten)]
    pub pattern: Pattern,
    /// PC for single-stream patterns.
    #[serde(default = "default_pc")]
    pub pc: u64,
    /// Spacing of the cycle field.
    #[serde(default = "default_cycles_per_access")]
    pub cycles_per_access: u64,
}

fn default_pc() -> u64 {
    0x40_0000
}

fn default_cycles_per_access() -> u64 {
    1
}

impl PatternSpec {
    pub fn new(pattern: Pattern) -> Self {
        Self {
            pattern,
            pc: default_pc(),
            cycles_per_access: default_cycles_per_access(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{}: {msg}", self.pattern.name())));
        match &self.pattern {
            Pattern::Stride { period, .. } => {
                if *period == Some(0) {
                    return bad("period must be positive");
                }
            }
            Pattern::PageWalk { dwell, .. } => {
                if *dwell == 0 {
                    return bad("dwell must be positive");
                }
            }
            Pattern::PageSkip { deltas, .. } => {
                if deltas.is_empty() {
                    return bad("delta sequence is empty");
                }
            }
            Pattern::PageScan {
                stride,
                min_page_jump,
                max_page_jump,
                ..
            } => {
                if *stride == 0 || *min_page_jump == 0 || max_page_jump < min_page_jump {
                    return bad("need stride > 0 and 0 < min_page_jump <= max_page_jump");
                }
            }
            Pattern::MultiPc { streams } => {
                if streams.is_empty() {
                    return bad("no streams");
                }
            }
            Pattern::Uniform { region_blocks, .. } => {
                if *region_blocks == 0 {
                    return bad("region is empty");
                }
            }
        }
        if self.cycles_per_access == 0 {
            return bad("cycles_per_access must be positive");
        }
        Ok(())
    }
}

/// Deterministic synthetic trace. The generator is ChaCha8 seeded with
/// `seed`; byte addresses carry a random 8-byte-aligned offset inside the
/// block.
pub fn generate_trace(
    spec: &PatternSpec,
    length: usize,
    seed: u64,
    addr: &AddressConfig,
) -> Result<Vec<MemoryAccess>> {
    spec.validate()?;
    addr.validate()?;
    if length == 0 {
        return Err(Error::Config("trace length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = addr.block_mask();
    let bpp = addr.blocks_per_page();
    let line_words = (1u64 << addr.block_offset_bits) / 8;

    let mut out = Vec::with_capacity(length);
    let mut emit = |rng: &mut ChaCha8Rng, i: usize, pc: u64, block: u64| {
        let word = if line_words > 1 {
            rng.gen_range(0..line_words)
        } else {
            0
        };
        let vaddr = addr.block_base(block & mask) | (word * 8);
        out.push(MemoryAccess::new(
            i as u64,
            i as u64 * spec.cycles_per_access,
            pc,
            vaddr,
        ));
    };

    match &spec.pattern {
        Pattern::Stride {
            stride,
            start_block,
            period,
        } => {
            for i in 0..length {
                let step = match period {
                    Some(p) => i as u64 % p,
                    None => i as u64,
                };
                let block = start_block.wrapping_add((*stride as u64).wrapping_mul(step));
                emit(&mut rng, i, spec.pc, block);
            }
        }
        Pattern::PageWalk {
            start_page,
            max_step,
            dwell,
            page_stride,
        } => {
            let mut page = *start_page;
            let mut offset = rng.gen_range(0..bpp);
            for i in 0..length {
                if i > 0 && i as u64 % dwell == 0 {
                    page = page.wrapping_add(*page_stride as u64);
                    offset = rng.gen_range(0..bpp);
                } else if i > 0 {
                    let span = 2 * max_step + 1;
                    let step = rng.gen_range(0..span) as i64 - *max_step as i64;
                    // reflect at the page edges
                    let mut o = offset as i64 + step;
                    let last = bpp as i64 - 1;
                    if o < 0 {
                        o = -o;
                    }
                    if o > last {
                        o = 2 * last - o;
                    }
                    offset = o.clamp(0, last) as u64;
                }
                let block = (page << addr.block_index_bits()) | offset;
                emit(&mut rng, i, spec.pc, block);
            }
        }
        Pattern::PageSkip {
            deltas,
            start_block,
            drift_every,
            drift,
        } => {
            let mut block = *start_block;
            for i in 0..length {
                emit(&mut rng, i, spec.pc, block);
                let pos = i % deltas.len();
                let mut d = deltas[pos];
                if pos + 1 == deltas.len() && *drift_every > 0 {
                    d += drift * (i as u64 / drift_every) as i64;
                }
                block = block.wrapping_add(d as u64) & mask;
            }
        }
        Pattern::PageScan {
            start_page,
            stride,
            min_page_jump,
            max_page_jump,
        } => {
            let mut page = *start_page;
            let mut offset = rng.gen_range(0..bpp);
            for i in 0..length {
                let block = (page << addr.block_index_bits()) | offset;
                emit(&mut rng, i, spec.pc, block);
                offset += stride;
                if offset >= bpp {
                    page = page.wrapping_add(rng.gen_range(*min_page_jump..=*max_page_jump));
                    offset = rng.gen_range(0..bpp);
                }
            }
        }
        Pattern::MultiPc { streams } => {
            let mut cursors: Vec<u64> = streams.iter().map(|s| s.start_block).collect();
            for i in 0..length {
                let k = rng.gen_range(0..streams.len());
                let block = cursors[k];
                cursors[k] = block.wrapping_add(streams[k].stride as u64) & mask;
                emit(&mut rng, i, streams[k].pc, block);
            }
        }
        Pattern::Uniform {
            base_block,
            region_blocks,
        } => {
            for i in 0..length {
                let block = base_block.wrapping_add(rng.gen_range(0..*region_blocks));
                emit(&mut rng, i, spec.pc, block);
            }
        }
    }
    Ok(out)
}
