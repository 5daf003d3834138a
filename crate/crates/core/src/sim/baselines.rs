use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use super::{AccessEvent, Prefetcher};

/// Never prefetches.
#[derive(Debug, Clone, Default)]
pub struct NoPrefetcher;

impl Prefetcher for NoPrefetcher {
    fn name(&self) -> &str {
        "none"
    }
    fn predict(&mut self, _event: &AccessEvent, _out: &mut Vec<u64>) {}
}

/// Prefetches the next `degree` blocks.
#[derive(Debug, Clone)]
pub struct NextLinePrefetcher {
    pub degree: u64,
}

impl NextLinePrefetcher {
    pub fn new(degree: u64) -> Self {
        Self { degree }
    }
}

impl Prefetcher for NextLinePrefetcher {
    fn name(&self) -> &str {
        "next_line"
    }
    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        for k in 1..=self.degree {
            if let Some(b) = event.block.checked_add(k) {
                out.push(b);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StrideEntry {
    last_block: u64,
    stride: i64,
    confidence: u32,
    last_used: u64,
}

/// Per-PC stride detector. A stride is trusted after it has been seen
/// `confirmations` times in a row.
#[derive(Debug, Clone)]
pub struct StridePrefetcher {
    table: BTreeMap<u64, StrideEntry>,
    capacity: usize,
    confirmations: u32,
    degree: u64,
    clock: u64,
}

impl StridePrefetcher {
    pub fn new(capacity: usize, confirmations: u32, degree: u64) -> Self {
        Self {
            table: BTreeMap::new(),
            capacity: capacity.max(1),
            confirmations,
            degree,
            clock: 0,
        }
    }
}

impl Default for StridePrefetcher {
    fn default() -> Self {
        Self::new(256, 3, 1)
    }
}

impl Prefetcher for StridePrefetcher {
    fn name(&self) -> &str {
        "stride"
    }

    fn observe(&mut self, event: &AccessEvent) {
        self.clock += 1;
        let pc = event.access.pc;
        let block = event.block;
        if let Some(e) = self.table.get_mut(&pc) {
            let stride = block.wrapping_sub(e.last_block) as i64;
            if stride != 0 && stride == e.stride {
                e.confidence = e.confidence.saturating_add(1);
            } else {
                e.stride = stride;
                e.confidence = u32::from(stride != 0);
            }
            e.last_block = block;
            e.last_used = self.clock;
            return;
        }
        if self.table.len() >= self.capacity {
            let victim = self
                .table
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(&k, _)| k);
            if let Some(k) = victim {
                self.table.remove(&k);
            }
        }
        self.table.insert(
            pc,
            StrideEntry {
                last_block: block,
                stride: 0,
                confidence: 0,
                last_used: self.clock,
            },
        );
    }

    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        let Some(e) = self.table.get(&event.access.pc) else {
            return;
        };
        if e.confidence < self.confirmations {
            return;
        }
        let mut b = event.block;
        for _ in 0..self.degree {
            match b.checked_add_signed(e.stride) {
                Some(n) => {
                    out.push(n);
                    b = n;
                }
                None => break,
            }
        }
    }
}

/// Offsets whose prime factors are at most 5, up to 256.
pub fn smooth_offsets(max: i64) -> Vec<i64> {
    (1..=max)
        .filter(|&n| {
            let mut m = n;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .collect()
}

/// Offset prefetcher that learns the best single offset in rounds.
///
/// Each access tests one candidate offset `d`: if `block - d` is among
/// the recent demand blocks, `d` scores. A learning phase ends when a
/// score saturates or after `max_rounds` passes over the candidates; the
/// best offset (smallest on ties) is used if its score exceeds
/// `min_score`.
#[derive(Debug, Clone)]
pub struct BestOffsetPrefetcher {
    offsets: Vec<i64>,
    scores: Vec<u32>,
    cursor: usize,
    round: u32,
    max_rounds: u32,
    max_score: u32,
    min_score: u32,
    recent: VecDeque<u64>,
    recent_counts: BTreeMap<u64, u32>,
    recent_capacity: usize,
    active: Option<i64>,
    degree: u64,
}

impl BestOffsetPrefetcher {
    pub fn new(offsets: Vec<i64>, degree: u64) -> Self {
        let mut offsets = offsets;
        offsets.sort_unstable();
        offsets.dedup();
        Self {
            scores: alloc::vec![0; offsets.len()],
            offsets,
            cursor: 0,
            round: 0,
            max_rounds: 100,
            max_score: 31,
            min_score: 1,
            recent: VecDeque::new(),
            recent_counts: BTreeMap::new(),
            recent_capacity: 256,
            active: None,
            degree,
        }
    }

    pub fn with_limits(mut self, max_rounds: u32, max_score: u32, min_score: u32) -> Self {
        self.max_rounds = max_rounds.max(1);
        self.max_score = max_score.max(1);
        self.min_score = min_score;
        self
    }

    /// Offset currently used for prefetching.
    pub fn active_offset(&self) -> Option<i64> {
        self.active
    }

    fn remember(&mut self, block: u64) {
        self.recent.push_back(block);
        *self.recent_counts.entry(block).or_insert(0) += 1;
        if self.recent.len() > self.recent_capacity {
            let old = self.recent.pop_front().expect("non-empty");
            if let Some(c) = self.recent_counts.get_mut(&old) {
                *c -= 1;
                if *c == 0 {
                    self.recent_counts.remove(&old);
                }
            }
        }
    }

    fn end_phase(&mut self) {
        let mut best: Option<(usize, u32)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        self.active = match best {
            Some((i, s)) if s > self.min_score => Some(self.offsets[i]),
            _ => None,
        };
        self.scores.iter_mut().for_each(|s| *s = 0);
        self.cursor = 0;
        self.round = 0;
    }
}

impl Default for BestOffsetPrefetcher {
    fn default() -> Self {
        Self::new(smooth_offsets(256), 1)
    }
}

impl Prefetcher for BestOffsetPrefetcher {
    fn name(&self) -> &str {
        "best_offset"
    }

    fn observe(&mut self, event: &AccessEvent) {
        if self.offsets.is_empty() {
            return;
        }
        let d = self.offsets[self.cursor];
        let hit = event
            .block
            .checked_add_signed(-d)
            .is_some_and(|b| self.recent_counts.contains_key(&b));
        let mut saturated = false;
        if hit {
            self.scores[self.cursor] += 1;
            saturated = self.scores[self.cursor] >= self.max_score;
        }
        self.cursor += 1;
        if self.cursor == self.offsets.len() {
            self.cursor = 0;
            self.round += 1;
        }
        if saturated || self.round >= self.max_rounds {
            self.end_phase();
        }
        self.remember(event.block);
    }

    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        let Some(d) = self.active else {
            return;
        };
        let mut b = event.block;
        for _ in 0..self.degree {
            match b.checked_add_signed(d) {
                Some(n) => {
                    out.push(n);
                    b = n;
                }
                None => break,
            }
        }
    }
}

/// Knows the trace: prefetches the blocks of the next `window` accesses.
#[derive(Debug, Clone)]
pub struct OraclePrefetcher {
    blocks: Vec<u64>,
    window: usize,
}

impl OraclePrefetcher {
    /// `blocks[i]` is the block of the `i`-th replayed access.
    pub fn new(blocks: Vec<u64>, window: usize) -> Self {
        Self { blocks, window }
    }
}

impl Prefetcher for OraclePrefetcher {
    fn name(&self) -> &str {
        "oracle"
    }
    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        let start = (event.index + 1).min(self.blocks.len());
        let end = (event.index + 1 + self.window).min(self.blocks.len());
        out.extend(
            self.blocks[start..end]
                .iter()
                .copied()
                .filter(|&b| b != event.block),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::MemoryAccess;
    use alloc::vec;

    fn event(i: usize, pc: u64, block: u64) -> AccessEvent {
        AccessEvent {
            index: i,
            access: MemoryAccess {
                ordinal: i as u64,
                cycle: i as u64,
                pc,
                vaddr: block << 6,
            },
            block,
            hit: false,
            prefetch_hit: false,
        }
    }

    fn run<P: Prefetcher>(p: &mut P, blocks: &[u64]) -> Vec<Vec<u64>> {
        blocks
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let e = event(i, 0x40, b);
                p.observe(&e);
                let mut out = Vec::new();
                p.predict(&e, &mut out);
                out
            })
            .collect()
    }

    #[test]
    fn next_line() {
        let mut p = NextLinePrefetcher::new(2);
        assert_eq!(run(&mut p, &[10]), vec![vec![11, 12]]);
    }

    #[test]
    fn stride_needs_three_confirmations() {
        let mut p = StridePrefetcher::default();
        let out = run(&mut p, &[0, 3, 6, 9, 12]);
        assert!(out[..3].iter().all(Vec::is_empty));
        assert_eq!(out[3], vec![12]);
        assert_eq!(out[4], vec![15]);
    }

    #[test]
    fn stride_resets_on_change() {
        let mut p = StridePrefetcher::default();
        let out = run(&mut p, &[0, 3, 6, 9, 10, 11, 12, 13]);
        assert_eq!(out[3], vec![12]);
        // 9 -> 10 starts a new stride; 12 is its third sighting
        assert!(out[4].is_empty() && out[5].is_empty());
        assert_eq!(out[6], vec![13]);
        assert_eq!(out[7], vec![14]);
    }

    #[test]
    fn stride_tracks_pcs_separately() {
        let mut p = StridePrefetcher::new(1, 1, 1);
        let a = event(0, 1, 0);
        let b = event(1, 2, 100);
        p.observe(&a);
        p.observe(&b);
        // capacity 1: pc 1 was evicted
        assert!(!p.table.contains_key(&1));
    }

    #[test]
    fn best_offset_finds_stride() {
        let mut p = BestOffsetPrefetcher::default();
        let blocks: Vec<u64> = (0..20_000).map(|i| 3 * i).collect();
        run(&mut p, &blocks);
        assert_eq!(p.active_offset(), Some(3));
    }

    #[test]
    fn best_offset_stays_off_on_noise() {
        let mut p = BestOffsetPrefetcher::default();
        // quadratic gaps never repeat
        let blocks: Vec<u64> = (0..5_000u64).map(|i| i * i * 7919).collect();
        run(&mut p, &blocks);
        assert_eq!(p.active_offset(), None);
    }

    #[test]
    fn smooth_offsets_list() {
        let o = smooth_offsets(256);
        assert_eq!(&o[..10], &[1, 2, 3, 4, 5, 6, 8, 9, 10, 12]);
        assert_eq!(o.len(), 52);
    }

    #[test]
    fn oracle_window() {
        let mut p = OraclePrefetcher::new(vec![1, 2, 1, 3, 4], 2);
        let out = run(&mut p, &[1, 2, 1, 3, 4]);
        assert_eq!(out[0], vec![2]);
        assert_eq!(out[1], vec![1, 3]);
        assert_eq!(out[4], Vec::<u64>::new());
    }
}
