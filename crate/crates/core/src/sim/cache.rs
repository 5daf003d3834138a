use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Line {
    block: u64,
    last_used: u64,
    /// Filled by a prefetch and not yet touched by demand.
    unused_prefetch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub block: u64,
    pub unused_prefetch: bool,
}

/// Set-associative cache over block addresses with true LRU.
#[derive(Debug, Clone)]
pub struct Cache {
    sets: Vec<Vec<Line>>,
    ways: usize,
    clock: u64,
}

impl Cache {
    pub fn new(sets: usize, ways: usize) -> Self {
        Self {
            sets: vec![Vec::with_capacity(ways); sets],
            ways,
            clock: 0,
        }
    }

    fn set_of(&self, block: u64) -> usize {
        (block % self.sets.len() as u64) as usize
    }

    pub fn contains(&self, block: u64) -> bool {
        self.sets[self.set_of(block)].iter().any(|l| l.block == block)
    }

    /// Demand lookup. On a hit, returns whether the line was an unused
    /// prefetch (and marks it used).
    pub fn access(&mut self, block: u64) -> Option<bool> {
        self.clock += 1;
        let clock = self.clock;
        let s = self.set_of(block);
        let line = self.sets[s].iter_mut().find(|l| l.block == block)?;
        line.last_used = clock;
        let was = line.unused_prefetch;
        line.unused_prefetch = false;
        Some(was)
    }

    /// Inserts a block that is not resident, evicting the LRU line of a
    /// full set.
    pub fn insert(&mut self, block: u64, prefetched: bool) -> Option<Eviction> {
        debug_assert!(!self.contains(block));
        self.clock += 1;
        let line = Line {
            block,
            last_used: self.clock,
            unused_prefetch: prefetched,
        };
        let ways = self.ways;
        let s = self.set_of(block);
        let set = &mut self.sets[s];
        if set.len() < ways {
            set.push(line);
            return None;
        }
        let (victim, _) = set
            .iter()
            .enumerate()
            .min_by_key(|(_, l)| l.last_used)
            .expect("full set is non-empty");
        let old = core::mem::replace(&mut set[victim], line);
        Some(Eviction {
            block: old.block,
            unused_prefetch: old.unused_prefetch,
        })
    }

    pub fn unused_prefetches(&self) -> usize {
        self.sets
            .iter()
            .flatten()
            .filter(|l| l.unused_prefetch)
            .count()
    }

    pub fn resident(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_eviction_order() {
        let mut c = Cache::new(1, 2);
        assert_eq!(c.insert(1, false), None);
        assert_eq!(c.insert(2, true), None);
        assert_eq!(c.access(1), Some(false));
        let ev = c.insert(3, false).unwrap();
        assert_eq!(
            ev,
            Eviction {
                block: 2,
                unused_prefetch: true
            }
        );
        assert!(c.contains(1) && c.contains(3) && !c.contains(2));
    }

    #[test]
    fn prefetch_flag_clears_on_demand() {
        let mut c = Cache::new(4, 1);
        c.insert(5, true);
        assert_eq!(c.unused_prefetches(), 1);
        assert_eq!(c.access(5), Some(true));
        assert_eq!(c.access(5), Some(false));
        assert_eq!(c.unused_prefetches(), 0);
        assert_eq!(c.access(6), None);
    }

    #[test]
    fn sets_are_independent() {
        let mut c = Cache::new(2, 1);
        c.insert(0, false);
        c.insert(1, false);
        assert_eq!(c.resident(), 2);
        assert_eq!(c.insert(2, false).unwrap().block, 0);
        assert!(c.contains(1));
    }
}
