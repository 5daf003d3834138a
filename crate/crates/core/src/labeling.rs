//! Delta-bitmap labels.
//!
//! A future access `j` steps after trigger `t` contributes the block delta
//! `block(t + skip + j) - block(t)` when it is nonzero and within
//! `±bound`. The set of such deltas maps to a `2·bound`-bit bitmap:
//! negative deltas `-bound..=-1` occupy bits `0..bound`, positive deltas
//! `1..=bound` occupy bits `bound..2·bound`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AddressConfig, MemoryAccess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Look-forward window `W` in accesses.
    pub window: usize,
    /// Largest representable `|delta|` in blocks.
    pub bound: u32,
    /// Accesses skipped before the window opens (distance labeling).
    pub skip: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            window: 128,
            bound: 128,
            skip: 0,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.bound == 0 {
            return Err(Error::Config(format!(
                "window ({}) and bound ({}) must be positive",
                self.window, self.bound
            )));
        }
        Ok(())
    }

    /// Bitmap size `B = 2·bound`.
    pub fn bitmap_bits(&self) -> usize {
        2 * self.bound as usize
    }

    pub fn delta_to_bit(&self, delta: i64) -> Option<usize> {
        let bound = self.bound as i64;
        match delta {
            d if (-bound..=-1).contains(&d) => Some((d + bound) as usize),
            d if (1..=bound).contains(&d) => Some((d + bound - 1) as usize),
            _ => None,
        }
    }

    pub fn bit_to_delta(&self, bit: usize) -> i64 {
        let bound = self.bound as i64;
        let i = bit as i64;
        if i < bound {
            i - bound
        } else {
            i - bound + 1
        }
    }
}

/// Unordered set of nonzero block deltas.
pub type DeltaSet = BTreeSet<i64>;

/// Fixed-size bit vector over deltas.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeltaBitmap {
    len: usize,
    words: Vec<u64>,
}

impl DeltaBitmap {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range");
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    /// Packs 8 bits per byte, bit `i` at byte `i / 8`, position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.iter_ones() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Shape(format!(
                "{} bytes cannot hold a {len}-bit bitmap",
                bytes.len()
            )));
        }
        let mut out = Self::new(len);
        for i in 0..len {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                out.set(i, true);
            }
        }
        Ok(out)
    }
}

/// Future deltas of the trigger at index `t`. The window stops at `end`
/// (exclusive); the flag reports whether it was cut short.
pub fn collect_future_deltas(
    trace: &[MemoryAccess],
    t: usize,
    end: usize,
    cfg: &LabelConfig,
    addr: &AddressConfig,
) -> (DeltaSet, bool) {
    let end = end.min(trace.len());
    let current = addr.block_address(trace[t].vaddr) as i64;
    let first = t + cfg.skip + 1;
    let last = t + cfg.skip + cfg.window;
    let bound = cfg.bound as i64;
    let mut deltas = DeltaSet::new();
    for a in trace.iter().take(end.min(last + 1)).skip(first) {
        let d = (addr.block_address(a.vaddr) as i64).wrapping_sub(current);
        if d != 0 && d.abs() <= bound {
            deltas.insert(d);
        }
    }
    (deltas, last >= end)
}

pub fn deltas_to_bitmap(deltas: &DeltaSet, cfg: &LabelConfig) -> Result<DeltaBitmap> {
    let mut bm = DeltaBitmap::new(cfg.bitmap_bits());
    for &d in deltas {
        let bit = cfg.delta_to_bit(d).ok_or(Error::Range {
            what: "delta outside label bound",
            value: d,
        })?;
        bm.set(bit, true);
    }
    Ok(bm)
}

pub fn bitmap_to_deltas(bitmap: &DeltaBitmap, cfg: &LabelConfig) -> DeltaSet {
    bitmap.iter_ones().map(|i| cfg.bit_to_delta(i)).collect()
}

/// `current_block + d` for every delta, dropping results outside the
/// block address space.
pub fn prefetch_addresses(current_block: u64, deltas: &DeltaSet, addr: &AddressConfig) -> Vec<u64> {
    let limit = addr.block_mask();
    deltas
        .iter()
        .filter_map(|&d| current_block.checked_add_signed(d))
        .filter(|&b| b <= limit)
        .collect()
}

/// Accesses to skip so that prefetches issued `latency_cycles` after the
/// trigger are still ahead of demand.
pub fn distance_skip(latency_cycles: u64, mean_cycles_per_access: f64) -> usize {
    if latency_cycles == 0 || !(mean_cycles_per_access > 0.0) {
        return 0;
    }
    libm::ceil(latency_cycles as f64 / mean_cycles_per_access) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(blocks: &[u64]) -> Vec<MemoryAccess> {
        blocks
            .iter()
            .enumerate()
            .map(|(i, b)| MemoryAccess::new(i as u64, i as u64, 0, b << 6))
            .collect()
    }

    fn cfg(window: usize, skip: usize) -> LabelConfig {
        LabelConfig {
            window,
            bound: 128,
            skip,
        }
    }

    // Brute-force window enumeration, written without the iterator chain.
    fn oracle_deltas(blocks: &[u64], t: usize, c: &LabelConfig) -> DeltaSet {
        let mut out = DeltaSet::new();
        let mut j = 1;
        while j <= c.window {
            let k = t + c.skip + j;
            if k < blocks.len() {
                let d = blocks[k] as i64 - blocks[t] as i64;
                if d != 0 && d.abs() <= c.bound as i64 {
                    out.insert(d);
                }
            }
            j += 1;
        }
        out
    }

    #[test]
    fn distance_skip_rounds_up() {
        assert_eq!(distance_skip(200, 10.0), 20);
        assert_eq!(distance_skip(200, 3.0), 67);
        assert_eq!(distance_skip(0, 10.0), 0);
        assert_eq!(distance_skip(50, 0.0), 0);
    }

    #[test]
    fn future_delta_examples() {
        let addr = AddressConfig::default();
        let blocks = [1000, 1001, 1005, 998];
        let c = cfg(3, 0);
        let (d, cut) = collect_future_deltas(&trace_of(&blocks), 0, 4, &c, &addr);
        assert_eq!(d, oracle_deltas(&blocks, 0, &c));
        assert_eq!(d, DeltaSet::from([1, 5, -2]));
        assert!(!cut);

        let same = [7, 7, 7, 7];
        let (d, _) = collect_future_deltas(&trace_of(&same), 0, 4, &c, &addr);
        assert!(d.is_empty());

        let b = 500;
        let skipped = [b, b + 1, b + 2, b + 7];
        let c = cfg(1, 2);
        let (d, _) = collect_future_deltas(&trace_of(&skipped), 0, 4, &c, &addr);
        assert_eq!(d, oracle_deltas(&skipped, 0, &c));
        assert_eq!(d, DeltaSet::from([7]));
    }

    #[test]
    fn window_truncates_at_end() {
        let addr = AddressConfig::default();
        let blocks = [10, 11, 12];
        let (d, cut) = collect_future_deltas(&trace_of(&blocks), 1, 3, &cfg(5, 0), &addr);
        assert_eq!(d, DeltaSet::from([1]));
        assert!(cut);
    }

    #[test]
    fn out_of_bound_deltas_dropped() {
        let addr = AddressConfig::default();
        let blocks = [1000, 1129, 1128, 872, 871];
        let (d, _) = collect_future_deltas(&trace_of(&blocks), 0, 5, &cfg(4, 0), &addr);
        assert_eq!(d, DeltaSet::from([-128, 128]));
    }

    #[test]
    fn bitmap_examples() {
        let c = cfg(1, 0);
        assert_eq!(deltas_to_bitmap(&DeltaSet::new(), &c).unwrap().count_ones(), 0);
        for (d, bit) in [(-128, 0), (-1, 127), (1, 128), (128, 255)] {
            let bm = deltas_to_bitmap(&DeltaSet::from([d]), &c).unwrap();
            assert_eq!(bm.iter_ones().collect::<Vec<_>>(), vec![bit]);
        }
        let bm = deltas_to_bitmap(&DeltaSet::from([1, 5, -2]), &c).unwrap();
        assert_eq!(bm.iter_ones().collect::<Vec<_>>(), vec![126, 128, 132]);
        assert!(deltas_to_bitmap(&DeltaSet::from([129]), &c).is_err());
        assert!(deltas_to_bitmap(&DeltaSet::from([0]), &c).is_err());

        let mut single = DeltaBitmap::new(256);
        single.set(255, true);
        assert_eq!(bitmap_to_deltas(&single, &c), DeltaSet::from([128]));
        assert!(bitmap_to_deltas(&DeltaBitmap::new(256), &c).is_empty());
    }

    #[test]
    fn byte_packing_roundtrip() {
        let c = cfg(1, 0);
        let bm = deltas_to_bitmap(&DeltaSet::from([-128, -3, 9, 128]), &c).unwrap();
        let bytes = bm.to_bytes();
        assert_eq!(bytes.len(), 32);
        assert_eq!(bytes[0], 1);
        assert_eq!(DeltaBitmap::from_bytes(256, &bytes).unwrap(), bm);
        assert!(DeltaBitmap::from_bytes(256, &bytes[1..]).is_err());
    }

    #[test]
    fn prefetch_address_examples() {
        let addr = AddressConfig::default();
        assert_eq!(
            prefetch_addresses(1000, &DeltaSet::from([1, -2]), &addr),
            vec![998, 1001]
        );
        assert!(prefetch_addresses(0, &DeltaSet::from([-1]), &addr).is_empty());
        assert!(prefetch_addresses(1000, &DeltaSet::new(), &addr).is_empty());
        assert!(prefetch_addresses(addr.block_mask(), &DeltaSet::from([1]), &addr).is_empty());
    }

    #[test]
    fn bound_reaches_past_page() {
        // with bound 128 > 64 blocks per page, every interior block has a
        // representable delta landing in another page
        let addr = AddressConfig::default();
        let c = cfg(1, 0);
        for offset in 0..addr.blocks_per_page() {
            let block = (50 << 6) | offset;
            let crosses = (1..=c.bound as i64)
                .flat_map(|d| [d, -d])
                .any(|d| addr.page_of_block(block.wrapping_add_signed(d)) != 50);
            assert!(crosses);
        }
    }

    #[test]
    fn skip_zero_is_plain_labeling() {
        let addr = AddressConfig::default();
        let blocks: Vec<u64> = (0..200).map(|i| 4000 + (i * 7 % 23)).collect();
        let trace = trace_of(&blocks);
        for t in 0..150 {
            let (a, _) = collect_future_deltas(&trace, t, 200, &cfg(16, 0), &addr);
            assert_eq!(a, oracle_deltas(&blocks, t, &cfg(16, 0)));
        }
    }
}
