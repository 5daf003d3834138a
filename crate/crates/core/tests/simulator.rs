use proptest::prelude::*;
use segpf_core::sim::{
    simulate, AccessEvent, BestOffsetPrefetcher, CacheConfig, LatencyModel, NextLinePrefetcher,
    NoPrefetcher, OraclePrefetcher, Prefetcher, SimConfig, Simulator, StridePrefetcher, Throughput,
    TriggerStream,
};
use segpf_core::trace::{AddressConfig, MemoryAccess};

fn accesses(blocks: &[u64], cycles_per_access: u64) -> Vec<MemoryAccess> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, &b)| MemoryAccess {
            ordinal: i as u64,
            cycle: i as u64 * cycles_per_access,
            pc: 0x400000,
            vaddr: b << 6,
        })
        .collect()
}

/// Returns a fixed request list per trace index.
struct Scripted(Vec<Vec<u64>>);

impl Prefetcher for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }
    fn predict(&mut self, event: &AccessEvent, out: &mut Vec<u64>) {
        if let Some(r) = self.0.get(event.index) {
            out.extend(r);
        }
    }
}

/// Direct-mapped reference model: one `(block, unused_prefetch)` slot per
/// set, prefetches fill immediately.
struct DirectMapped {
    slots: Vec<Option<(u64, bool)>>,
    useful: u64,
    issued: u64,
}

impl DirectMapped {
    fn step(&mut self, block: u64, requests: &[u64]) -> (bool, Vec<u64>) {
        let n = self.slots.len() as u64;
        let mut evicted = Vec::new();
        let s = (block % n) as usize;
        let hit = match self.slots[s] {
            Some((b, unused)) if b == block => {
                if unused {
                    self.useful += 1;
                }
                self.slots[s] = Some((b, false));
                true
            }
            old => {
                if let Some((b, _)) = old {
                    evicted.push(b);
                }
                self.slots[s] = Some((block, false));
                false
            }
        };
        for &r in requests {
            let rs = (r % n) as usize;
            if matches!(self.slots[rs], Some((b, _)) if b == r) {
                continue;
            }
            self.issued += 1;
            if let Some((b, _)) = self.slots[rs] {
                evicted.push(b);
            }
            self.slots[rs] = Some((r, true));
        }
        (hit, evicted)
    }
}

#[test]
fn five_access_scenario() {
    let addr = AddressConfig::default();
    let cfg = SimConfig {
        cache: CacheConfig {
            sets: 2,
            ways: 1,
            line_bytes: 64,
        },
        ..SimConfig::default()
    };
    let blocks = [0, 1, 2, 0, 4];
    let script = vec![vec![2], vec![], vec![], vec![], vec![]];
    let trace = accesses(&blocks, 1);

    let mut oracle = DirectMapped {
        slots: vec![None; 2],
        useful: 0,
        issued: 0,
    };
    let expected: Vec<(bool, Vec<u64>)> = blocks
        .iter()
        .zip(&script)
        .map(|(&b, r)| oracle.step(b, r))
        .collect();
    // frozen from the reference model
    assert_eq!(
        expected,
        vec![
            (false, vec![0]),
            (false, vec![]),
            (true, vec![]),
            (false, vec![2]),
            (false, vec![0]),
        ]
    );
    assert_eq!((oracle.useful, oracle.issued), (1, 1));

    let mut sim = Simulator::new(cfg, addr).unwrap();
    let mut pf = Scripted(script);
    for (a, (hit, evicted)) in trace.iter().zip(&expected) {
        let rec = sim.step(a, &mut pf);
        assert_eq!(rec.hit, *hit);
        let got: Vec<u64> = rec.evicted.iter().map(|e| e.block).collect();
        assert_eq!(&got, evicted);
    }
    let r = sim.finish(&pf, 4);
    assert_eq!(r.useful_prefetches, 1);
    assert_eq!(r.prefetches_issued, 1);
    assert_eq!(r.accuracy, 1.0);
    assert!(r.is_conserved());
}

fn repeating(footprint: u64, reps: usize) -> Vec<u64> {
    (0..reps).flat_map(|_| 100..100 + footprint).collect()
}

#[test]
fn perfect_oracle_coverage() {
    let addr = AddressConfig::default();
    let cfg = SimConfig::default();
    for footprint in [4u64, 17, 64] {
        let blocks = repeating(footprint, 20);
        let trace = accesses(&blocks, 1);
        let mut pf = OraclePrefetcher::new(blocks.clone(), 4);
        let r = simulate(&trace, &mut pf, &cfg, &addr).unwrap();
        assert_eq!(r.baseline_misses, footprint);
        // only the first access is uncovered
        let analytic = 1.0 - 1.0 / footprint as f64;
        assert!((r.coverage - analytic).abs() < 1e-9);
        assert!(r.is_conserved());
    }
}

#[test]
fn late_prefetch_is_counted() {
    let addr = AddressConfig::default();
    let cfg = SimConfig {
        latency: LatencyModel {
            cycles: 10,
            throughput: Throughput::High,
        },
        ..SimConfig::default()
    };
    let trace = accesses(&[0, 1, 2], 1);
    let mut pf = NextLinePrefetcher::new(1);
    let r = simulate(&trace, &mut pf, &cfg, &addr).unwrap();
    assert_eq!(r.late_prefetches, 2);
    assert_eq!(r.useful_prefetches, 0);
    assert_eq!(r.in_flight_at_end, 1);
    assert!(r.is_conserved());
}

#[test]
fn latency_delays_residency() {
    let addr = AddressConfig::default();
    let cfg = SimConfig {
        latency: LatencyModel {
            cycles: 5,
            throughput: Throughput::High,
        },
        ..SimConfig::default()
    };
    // block 0 at cycle 0 requests block 1, ready at cycle 5; block 1 comes at cycle 10
    let trace = accesses(&[0, 1], 10);
    let mut pf = NextLinePrefetcher::new(1);
    let r = simulate(&trace, &mut pf, &cfg, &addr).unwrap();
    assert_eq!(r.useful_prefetches, 1);
}

#[test]
fn low_throughput_drops_busy_triggers() {
    let addr = AddressConfig::default();
    let cfg = SimConfig {
        latency: LatencyModel {
            cycles: 3,
            throughput: Throughput::Low,
        },
        ..SimConfig::default()
    };
    let trace = accesses(&(0..9).map(|i| i * 10).collect::<Vec<_>>(), 1);
    let mut pf = NoPrefetcher;
    let r = simulate(&trace, &mut pf, &cfg, &addr).unwrap();
    // admitted at cycles 0, 3, 6
    assert_eq!(r.triggers, 3);
    assert_eq!(r.dropped_triggers, 6);
}

#[test]
fn miss_trigger_stream_skips_plain_hits() {
    let addr = AddressConfig::default();
    let cfg = SimConfig {
        trigger: TriggerStream::Miss,
        ..SimConfig::default()
    };
    let trace = accesses(&[0, 0, 0, 1], 1);
    let mut pf = NoPrefetcher;
    let r = simulate(&trace, &mut pf, &cfg, &addr).unwrap();
    assert_eq!(r.triggers, 2);
}

#[test]
fn no_prefetch_has_undefined_accuracy() {
    let addr = AddressConfig::default();
    let trace = accesses(&[1, 2, 3], 1);
    let r = simulate(&trace, &mut NoPrefetcher, &SimConfig::default(), &addr).unwrap();
    assert!(!r.accuracy_defined);
    assert_eq!(r.accuracy, 0.0);
    assert_eq!(r.coverage, 0.0);
    assert_eq!(r.degree_histogram, vec![3]);
}

#[test]
fn empty_trace_is_rejected() {
    let addr = AddressConfig::default();
    assert!(simulate(&[], &mut NoPrefetcher, &SimConfig::default(), &addr).is_err());
}

#[test]
fn oracle_dominates_baselines() {
    let addr = AddressConfig::default();
    let cfg = SimConfig::default();
    let mut blocks: Vec<u64> = Vec::new();
    for rep in 0..40u64 {
        for i in 0..300u64 {
            blocks.push(10_000 + 3 * i + (rep % 2) * 7);
        }
    }
    let trace = accesses(&blocks, 1);
    let oracle = simulate(&trace, &mut OraclePrefetcher::new(blocks.clone(), 16), &cfg, &addr)
        .unwrap()
        .coverage;
    let others = [
        simulate(&trace, &mut NextLinePrefetcher::new(4), &cfg, &addr).unwrap(),
        simulate(&trace, &mut StridePrefetcher::default(), &cfg, &addr).unwrap(),
        simulate(&trace, &mut BestOffsetPrefetcher::default(), &cfg, &addr).unwrap(),
    ];
    for r in &others {
        assert!(oracle >= r.coverage, "{} {} > {}", r.prefetcher, r.coverage, oracle);
    }
}

proptest! {
    #[test]
    fn accounting_is_conserved(
        blocks in prop::collection::vec(0u64..512, 1..400),
        degree in 0u64..6,
        latency in 0u64..40,
        low in any::<bool>(),
        miss_stream in any::<bool>(),
        sets in 1usize..8,
        ways in 1usize..4,
    ) {
        let addr = AddressConfig::default();
        let cfg = SimConfig {
            cache: CacheConfig { sets, ways, line_bytes: 64 },
            latency: LatencyModel {
                cycles: latency,
                throughput: if low { Throughput::Low } else { Throughput::High },
            },
            trigger: if miss_stream { TriggerStream::Miss } else { TriggerStream::Access },
        };
        let trace = accesses(&blocks, 3);
        let r = simulate(&trace, &mut NextLinePrefetcher::new(degree), &cfg, &addr).unwrap();
        prop_assert!(r.is_conserved());
        prop_assert!(r.useful_prefetches <= r.prefetches_issued);
        prop_assert!(r.accuracy >= 0.0 && r.accuracy <= 1.0);
        prop_assert_eq!(r.demand_hits + r.demand_misses, blocks.len() as u64);
        prop_assert_eq!(r.triggers + r.dropped_triggers <= blocks.len() as u64, true);
    }
}
