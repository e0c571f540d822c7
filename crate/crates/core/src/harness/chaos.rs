//! Random fault schedules for safety sweeps.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{FaultSpec, Scenario};
use crate::protocol::Mode;

/// A short run with crashes, restarts, partitions and link cuts drawn from
/// `seed`. Every fault is undone before the workload ends.
pub fn scenario(seed: u64, n: usize, mode: Mode) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scenario::new(n, mode);
    s.seed = seed;
    s.duration_ms = 3_000.0;
    s.drain_ms = 2_000.0;
    s.network.jitter = 0.2;
    s.network.delay_ms = rng.random_range(1.0..6.0);
    s.heartbeat.election_min_ms = 150.0;
    s.heartbeat.election_max_ms = 300.0;
    s.retransmit_ms = 150.0;
    s.snapshot_stride = rng.random_range(20..200);
    s.gossip.deferral_bytes = *[0usize, 20_000, 400_000].choose(&mut rng).expect("nonempty");
    s.gossip.batched = rng.random_bool(0.5);
    s.workload.clients = rng.random_range(2..5);
    s.workload.put_ratio = 0.6;
    s.workload.key_count = 4;
    s.workload.timeout_ms = 200.0;
    s.workload.mix = vec![(16, 3.0), (4_096, 2.0), (65_536, 1.0)];
    s.record_applies = true;

    let events = rng.random_range(1..6);
    let mut at = rng.random_range(100.0..600.0);
    for _ in 0..events {
        let hold = rng.random_range(100.0..900.0);
        match rng.random_range(0..4) {
            0 | 1 => {
                let node = if rng.random_bool(0.4) { 0 } else { rng.random_range(0..n) };
                s.faults.push(FaultSpec::Crash { at_ms: at, node });
                s.faults.push(FaultSpec::Restart {
                    at_ms: at + hold,
                    node,
                });
            }
            2 => {
                let mut ids: Vec<usize> = (0..n).collect();
                ids.shuffle(&mut rng);
                let cut = rng.random_range(1..n);
                let (a, b) = ids.split_at(cut);
                s.faults.push(FaultSpec::Partition {
                    at_ms: at,
                    groups: vec![a.to_vec(), b.to_vec()],
                });
                s.faults.push(FaultSpec::Heal { at_ms: at + hold });
            }
            _ => {
                let from = rng.random_range(0..n);
                let to = (from + rng.random_range(1..n)) % n;
                s.faults.push(FaultSpec::LinkUp {
                    at_ms: at,
                    from,
                    to,
                    up: false,
                });
                s.faults.push(FaultSpec::LinkUp {
                    at_ms: at + hold,
                    from,
                    to,
                    up: true,
                });
            }
        }
        at += rng.random_range(50.0..700.0);
    }
    let last = s.faults.iter().map(|f| f.at_ms()).fold(0.0, f64::max);
    s.duration_ms = s.duration_ms.max(last + 500.0);
    s
}
