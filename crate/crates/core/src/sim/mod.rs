//! Trace-driven LLC simulation with a prefetch pipeline.
//!
//! Each access first retires prefetches whose inference finished, then
//! performs the demand lookup, then (if admitted as a trigger) asks the
//! prefetcher for blocks. Requests become resident at `trigger cycle + T`.
//! A prefetched line counts as useful when a demand access hits it before
//! it is evicted; a demand miss on a block still in flight marks that
//! request late.

mod baselines;
mod cache;
mod model_prefetcher;

pub use baselines::{BestOffsetPrefetcher, NextLinePrefetcher, NoPrefetcher, OraclePrefetcher, StridePrefetcher};
pub use cache::{Cache, Eviction};
pub use model_prefetcher::{ModelPrefetcher, Selection};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AddressConfig, MemoryAccess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub sets: usize,
    pub ways: usize,
    pub line_bytes: usize,
}

impl Default for CacheConfig {
    /// 64 sets × 16 ways × 64 B = 64 KiB.
    fn default() -> Self {
        Self {
            sets: 64,
            ways: 16,
            line_bytes: 64,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self, addr: &AddressConfig) -> Result<()> {
        if self.sets == 0 || self.ways == 0 {
            return Err(Error::Config("cache needs at least one set and way".into()));
        }
        if self.line_bytes != 1usize << addr.block_offset_bits {
            return Err(Error::Config(format!(
                "line size {} does not match the {}-bit block offset",
                self.line_bytes, addr.block_offset_bits
            )));
        }
        Ok(())
    }

    pub fn capacity_bytes(&self) -> usize {
        self.sets * self.ways * self.line_bytes
    }
}

/// Inference throughput bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Throughput {
    /// One inference per `T` cycles; triggers during an inference are dropped.
    #[serde(alias = "L")]
    Low,
    /// One inference per cycle.
    #[serde(alias = "H")]
    High,
}

impl Throughput {
    pub fn tag(self) -> &'static str {
        match self {
            Throughput::Low => "L",
            Throughput::High => "H",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    /// Inference latency `T` in cycles.
    pub cycles: u64,
    pub throughput: Throughput,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            cycles: 0,
            throughput: Throughput::High,
        }
    }
}

/// Which demand accesses invoke the prefetcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerStream {
    /// Every LLC access.
    #[default]
    Access,
    /// Demand misses and first hits on prefetched lines.
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cache: CacheConfig,
    pub latency: LatencyModel,
    pub trigger: TriggerStream,
}

/// What a prefetcher sees for one demand access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    /// Position in the replayed trace.
    pub index: usize,
    pub access: MemoryAccess,
    pub block: u64,
    pub hit: bool,
    /// The hit consumed a not-yet-used prefetched line.
    pub prefetch_hit: bool,
}

pub trait Prefetcher {
    fn name(&self) -> &str;

    /// Called on every demand access, before any prediction for it.
    fn observe(&mut self, _event: &AccessEvent) {}

    /// Appends candidate blocks for an admitted trigger.
    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>);

    /// Triggers on which the prefetcher could not predict (cold history).
    fn idle_triggers(&self) -> u64 {
        0
    }
}

impl<P: Prefetcher + ?Sized> Prefetcher for &mut P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn observe(&mut self, event: &AccessEvent) {
        (**self).observe(event)
    }
    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        (**self).predict(event, out)
    }
    fn idle_triggers(&self) -> u64 {
        (**self).idle_triggers()
    }
}

/// Everything that happened while replaying one access.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepRecord {
    pub block: u64,
    pub hit: bool,
    pub prefetch_hit: bool,
    /// The demand missed on a block whose prefetch was still in flight.
    pub late: bool,
    /// Prefetches that became resident during this step.
    pub filled: Vec<u64>,
    pub evicted: Vec<Eviction>,
    pub triggered: bool,
    /// Admitted requests (new, not already resident or in flight).
    pub issued: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub prefetcher: alloc::string::String,
    pub demand_accesses: u64,
    pub demand_hits: u64,
    pub demand_misses: u64,
    /// Misses of the same trace without prefetching.
    pub baseline_misses: u64,
    pub prefetches_issued: u64,
    pub useful_prefetches: u64,
    pub useless_evicted: u64,
    pub late_prefetches: u64,
    pub resident_unused: u64,
    pub in_flight_at_end: u64,
    pub triggers: u64,
    pub dropped_triggers: u64,
    pub idle_triggers: u64,
    /// `useful / issued`; 0 when nothing was issued.
    pub accuracy: f64,
    pub accuracy_defined: bool,
    /// `useful / baseline_misses`.
    pub coverage: f64,
    /// `degree_histogram[d]` counts admitted triggers that requested `d`
    /// distinct blocks.
    pub degree_histogram: Vec<u64>,
    pub mean_degree: f64,
}

/// Step-wise simulator state.
pub struct Simulator {
    cfg: SimConfig,
    addr: AddressConfig,
    cache: Cache,
    /// `(ready cycle, sequence) -> block`
    pending: BTreeMap<(u64, u64), u64>,
    pending_blocks: BTreeMap<u64, (u64, u64)>,
    seq: u64,
    busy_until: Option<u64>,
    index: usize,
    scratch: Vec<u64>,
    report: SimReport,
}

impl Simulator {
    pub fn new(cfg: SimConfig, addr: AddressConfig) -> Result<Self> {
        addr.validate()?;
        cfg.cache.validate(&addr)?;
        Ok(Self {
            cache: Cache::new(cfg.cache.sets, cfg.cache.ways),
            cfg,
            addr,
            pending: BTreeMap::new(),
            pending_blocks: BTreeMap::new(),
            seq: 0,
            busy_until: None,
            index: 0,
            scratch: Vec::new(),
            report: SimReport {
                prefetcher: alloc::string::String::new(),
                demand_accesses: 0,
                demand_hits: 0,
                demand_misses: 0,
                baseline_misses: 0,
                prefetches_issued: 0,
                useful_prefetches: 0,
                useless_evicted: 0,
                late_prefetches: 0,
                resident_unused: 0,
                in_flight_at_end: 0,
                triggers: 0,
                dropped_triggers: 0,
                idle_triggers: 0,
                accuracy: 0.0,
                accuracy_defined: false,
                coverage: 0.0,
                degree_histogram: Vec::new(),
                mean_degree: 0.0,
            },
        })
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    fn fill_prefetch(&mut self, block: u64, rec: &mut StepRecord) {
        if self.cache.contains(block) {
            return;
        }
        if let Some(ev) = self.cache.insert(block, true) {
            if ev.unused_prefetch {
                self.report.useless_evicted += 1;
            }
            rec.evicted.push(ev);
        }
        rec.filled.push(block);
    }

    fn retire_ready(&mut self, cycle: u64, rec: &mut StepRecord) {
        while let Some((&key, &block)) = self.pending.first_key_value() {
            if key.0 > cycle {
                break;
            }
            self.pending.remove(&key);
            self.pending_blocks.remove(&block);
            self.fill_prefetch(block, rec);
        }
    }

    /// Replays one access.
    pub fn step<P: Prefetcher + ?Sized>(
        &mut self,
        access: &MemoryAccess,
        prefetcher: &mut P,
    ) -> StepRecord {
        let cycle = access.cycle;
        let block = self.addr.block_address(access.vaddr);
        let mut rec = StepRecord {
            block,
            ..StepRecord::default()
        };
        self.retire_ready(cycle, &mut rec);

        self.report.demand_accesses += 1;
        match self.cache.access(block) {
            Some(was_unused_prefetch) => {
                rec.hit = true;
                self.report.demand_hits += 1;
                if was_unused_prefetch {
                    rec.prefetch_hit = true;
                    self.report.useful_prefetches += 1;
                }
            }
            None => {
                self.report.demand_misses += 1;
                if let Some(key) = self.pending_blocks.remove(&block) {
                    self.pending.remove(&key);
                    rec.late = true;
                    self.report.late_prefetches += 1;
                }
                if let Some(ev) = self.cache.insert(block, false) {
                    if ev.unused_prefetch {
                        self.report.useless_evicted += 1;
                    }
                    rec.evicted.push(ev);
                }
            }
        }

        let event = AccessEvent {
            index: self.index,
            access: *access,
            block,
            hit: rec.hit,
            prefetch_hit: rec.prefetch_hit,
        };
        self.index += 1;
        prefetcher.observe(&event);

        let wants = match self.cfg.trigger {
            TriggerStream::Access => true,
            TriggerStream::Miss => !rec.hit || rec.prefetch_hit,
        };
        if !wants {
            return rec;
        }
        let latency = self.cfg.latency.cycles;
        if self.cfg.latency.throughput == Throughput::Low {
            if self.busy_until.is_some_and(|b| cycle < b) {
                self.report.dropped_triggers += 1;
                return rec;
            }
            self.busy_until = Some(cycle + latency);
        }
        rec.triggered = true;
        self.report.triggers += 1;

        let mut out = core::mem::take(&mut self.scratch);
        out.clear();
        prefetcher.predict(&event, &mut out);
        let limit = self.addr.block_mask();
        let requested: BTreeSet<u64> = out.iter().copied().filter(|&b| b <= limit).collect();
        self.scratch = out;
        let degree = requested.len();
        if self.report.degree_histogram.len() <= degree {
            self.report.degree_histogram.resize(degree + 1, 0);
        }
        self.report.degree_histogram[degree] += 1;

        let ready = cycle + latency;
        for b in requested {
            if self.cache.contains(b) || self.pending_blocks.contains_key(&b) {
                continue;
            }
            self.report.prefetches_issued += 1;
            rec.issued.push(b);
            if latency == 0 {
                self.fill_prefetch(b, &mut rec);
            } else {
                let key = (ready, self.seq);
                self.seq += 1;
                self.pending.insert(key, b);
                self.pending_blocks.insert(b, key);
            }
        }
        rec
    }

    /// Closes the run; coverage is relative to `baseline_misses`.
    pub fn finish<P: Prefetcher + ?Sized>(mut self, prefetcher: &P, baseline_misses: u64) -> SimReport {
        let r = &mut self.report;
        r.prefetcher = prefetcher.name().into();
        r.idle_triggers = prefetcher.idle_triggers();
        r.baseline_misses = baseline_misses;
        r.resident_unused = self.cache.unused_prefetches() as u64;
        r.in_flight_at_end = self.pending.len() as u64;
        r.accuracy_defined = r.prefetches_issued > 0;
        r.accuracy = if r.accuracy_defined {
            r.useful_prefetches as f64 / r.prefetches_issued as f64
        } else {
            0.0
        };
        r.coverage = if baseline_misses > 0 {
            r.useful_prefetches as f64 / baseline_misses as f64
        } else {
            0.0
        };
        let total: u64 = r.degree_histogram.iter().sum();
        let weighted: u64 = r
            .degree_histogram
            .iter()
            .enumerate()
            .map(|(d, c)| d as u64 * c)
            .sum();
        r.mean_degree = if total > 0 {
            weighted as f64 / total as f64
        } else {
            0.0
        };
        self.report
    }
}

impl SimReport {
    /// `useful + useless evicted + late + resident unused + in flight`
    /// must equal `issued`.
    pub fn is_conserved(&self) -> bool {
        self.useful_prefetches
            + self.useless_evicted
            + self.late_prefetches
            + self.resident_unused
            + self.in_flight_at_end
            == self.prefetches_issued
    }
}

/// Demand misses of `trace` without prefetching.
pub fn baseline_misses(trace: &[MemoryAccess], cache: &CacheConfig, addr: &AddressConfig) -> u64 {
    let mut c = Cache::new(cache.sets, cache.ways);
    let mut misses = 0;
    for a in trace {
        let b = addr.block_address(a.vaddr);
        if c.access(b).is_none() {
            misses += 1;
            c.insert(b, false);
        }
    }
    misses
}

/// Demand accesses that miss without prefetching.
pub fn miss_filter(
    trace: &[MemoryAccess],
    cache: &CacheConfig,
    addr: &AddressConfig,
) -> Vec<MemoryAccess> {
    let mut c = Cache::new(cache.sets, cache.ways);
    let mut out = Vec::new();
    for a in trace {
        let b = addr.block_address(a.vaddr);
        if c.access(b).is_none() {
            c.insert(b, false);
            let mut m = *a;
            m.ordinal = out.len() as u64;
            out.push(m);
        }
    }
    out
}

/// Replays `trace` through `prefetcher` and a no-prefetch baseline.
pub fn simulate<P: Prefetcher + ?Sized>(
    trace: &[MemoryAccess],
    prefetcher: &mut P,
    cfg: &SimConfig,
    addr: &AddressConfig,
) -> Result<SimReport> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let mut sim = Simulator::new(*cfg, *addr)?;
    for a in trace {
        sim.step(a, prefetcher);
    }
    let base = baseline_misses(trace, &cfg.cache, addr);
    Ok(sim.finish(prefetcher, base))
}

/// Per-trigger degree histogram as `(degree, count)` pairs with nonzero
/// counts.
pub fn histogram_pairs(hist: &[u64]) -> Vec<(usize, u64)> {
    hist.iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(d, &c)| (d, c))
        .collect()
}
