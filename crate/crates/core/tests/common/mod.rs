//! Scenario builders shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use bytes::Bytes;
use crossword::assignment::{ClusterParams, Config};
use crossword::harness::scenario::{ChooserSpec, FaultSpec, Phase};
use crossword::harness::world::Node;
use crossword::harness::{Scenario, World};
use crossword::protocol::{Command, Message, Mode, Observation, Replica};
use crossword::simnet::{ms, Fault, LinkParams, Sim};
use crossword::tuner::LinearModel;
use rand::{Rng, RngCore};

pub fn replica(sim: &Sim<Node>, id: usize) -> &Replica {
    match sim.node(id) {
        Node::Replica(r) => r,
        _ => panic!("node {id} is not a replica"),
    }
}

/// Log-uniform integer in `[lo, hi]`.
pub fn log_uniform(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    let x = rng.random_range((lo as f64).ln()..=(hi as f64).ln());
    (x.exp().round() as usize).clamp(lo, hi)
}

#[derive(Debug)]
pub struct DurabilityOutcome {
    pub leader: Option<usize>,
    pub recovered: bool,
    pub acked_by: Vec<usize>,
    /// Distinct shards of the value held by the servers left running.
    pub surviving_shards: usize,
}

/// Commits one Put through leader 0, crashes `crashed` the moment the
/// leader executes it, and reports whether a surviving leader holds the
/// exact value afterwards. With `starve`, Accepts only reach the first
/// `q - 1` followers, so exactly a quorum holds the instance.
pub fn durability(mode: Mode, config: Option<Config>, crashed: &[usize], starve: bool, seed: u64) -> DurabilityOutcome {
    let n = 5;
    let mut s = Scenario::new(n, mode);
    s.seed = seed;
    s.workload.clients = 1;
    s.workload.start_ms = 1e9;
    if let Some(c) = config {
        s.chooser = ChooserSpec::Fixed { q: c.q, c: c.c };
    }
    let q = config.unwrap_or_else(|| Config::rspaxos(&s.params())).q;
    let mut w = World::new(&s);
    w.run_to(ms(100.0));
    assert!(replica(&w.sim, 0).is_leader(), "bootstrap leader missing");
    let starved: Vec<usize> = if starve { (q..n).collect() } else { Vec::new() };
    for &f in &starved {
        w.sim.set_link_up(0, f, false);
    }
    let mut value = vec![0u8; 50_000];
    let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    rng.fill_bytes(&mut value);
    let value = Bytes::from(value);
    let cmd = Command::put(n as u64, 1, "durable", value.clone());
    w.sim.inject(n, 0, Message::ClientRequest { cmd });
    let until = w.sim.now() + ms(2_000.0);
    let acked = w
        .sim
        .run_until(until, |sim| replica(sim, 0).kv().read("durable").is_some());
    assert!(acked, "the Put was never acknowledged");
    let acked_by: Vec<usize> = (0..n)
        .filter(|&i| replica(&w.sim, i).log().values().any(|inst| inst.payload_len > 40_000 && !inst.held().is_empty()))
        .collect();
    let surviving_shards = (0..n)
        .filter(|i| !crashed.contains(i))
        .flat_map(|i| {
            replica(&w.sim, i)
                .log()
                .values()
                .filter(|inst| inst.payload_len > 40_000)
                .flat_map(|inst| inst.durable.iter())
                .collect::<Vec<_>>()
        })
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let now = w.sim.now();
    for &c in crashed {
        w.sim.schedule_fault(now, Fault::Crash { node: c });
    }
    for &f in &starved {
        w.sim.schedule_fault(now, Fault::SetLinkUp { from: 0, to: f, up: true });
    }
    w.run_to(now + ms(5_000.0));
    let leader = w.leader();
    let recovered = leader.is_some_and(|l| {
        replica(&w.sim, l)
            .kv()
            .read("durable")
            .is_some_and(|v| v.value == value)
    });
    DurabilityOutcome {
        leader,
        recovered,
        acked_by,
        surviving_shards,
    }
}

pub fn two_subsets(n: usize) -> Vec<[usize; 2]> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| [a, b])).collect()
}

/// Mean per-instance commit latency in ms and the configs used.
pub fn mean_commit_latency(s: &Scenario) -> (f64, Vec<Option<Config>>) {
    let out = crossword::harness::run(s);
    let mut lat = Vec::new();
    let mut cfgs = Vec::new();
    for (_, _, o) in &out.observations {
        if let Observation::Committed { latency_us, config, .. } = o {
            lat.push(*latency_us as f64 / 1000.0);
            cfgs.push(*config);
        }
    }
    (lat.iter().sum::<f64>() / lat.len().max(1) as f64, cfgs)
}

pub fn regional(mode: Mode, mix: &[(usize, f64)]) -> Scenario {
    let mut s = Scenario::new(5, mode);
    s.duration_ms = 5_000.0;
    s.network.delay_ms = 4.0;
    s.network.mbps = 1000.0;
    s.workload.clients = 8;
    s.workload.mix = mix.to_vec();
    s
}

/// Times at which the environment changes in [`adaptive_sequence`].
pub const CHANGES_MS: [f64; 5] = [0.0, 6_000.0, 12_000.0, 18_000.0, 24_000.0];
pub const SEQUENCE_END_MS: f64 = 30_000.0;
pub const LAGGED: [usize; 2] = [3, 4];

/// Payload shrink, bandwidth drop, bandwidth restore, then two lagging
/// followers.
pub fn adaptive_sequence() -> Scenario {
    let mut s = Scenario::new(5, Mode::Crossword);
    s.duration_ms = SEQUENCE_END_MS;
    s.workload.clients = 2;
    s.workload.value_mean_bytes = 65_536;
    s.workload.phases = vec![Phase {
        at_ms: CHANGES_MS[1],
        value_mean_bytes: 4_096,
    }];
    s.faults = vec![
        FaultSpec::Network {
            at_ms: CHANGES_MS[2],
            delay_ms: 4.0,
            mbps: 100.0,
        },
        FaultSpec::Network {
            at_ms: CHANGES_MS[3],
            delay_ms: 4.0,
            mbps: 1000.0,
        },
        FaultSpec::Lag {
            at_ms: CHANGES_MS[4],
            nodes: LAGGED.to_vec(),
            factor: 10.0,
        },
    ];
    s
}

/// Exact round-trip models of each follower at time `t_ms` in
/// [`adaptive_sequence`]: both link delays plus the follower's disk write.
pub fn true_models(s: &Scenario, t_ms: f64) -> Vec<LinearModel> {
    let disk = s.network.disk();
    (1..s.n)
        .map(|p| {
            let (mut delay, mut mbps) = (4.0, 1000.0);
            if (CHANGES_MS[2]..CHANGES_MS[3]).contains(&t_ms) {
                mbps = 100.0;
            }
            if t_ms >= CHANGES_MS[4] && LAGGED.contains(&p) {
                delay *= 10.0;
                mbps /= 10.0;
            }
            let link = LinkParams::from_mbps(delay, mbps);
            LinearModel {
                peer: p,
                intercept_ms: 2.0 * delay + disk.delay_ms,
                slope_ms_per_byte: 1.0 / link.bandwidth_bytes_per_ms + 1.0 / disk.bandwidth_bytes_per_ms,
                fitted_at: 0,
                n_points: 0,
            }
        })
        .collect()
}

pub fn p5() -> ClusterParams {
    ClusterParams::new(5).unwrap()
}

/// Steady 64 KB writes, then the leader crashes at `crash_ms`.
pub fn failover(mode: Mode, crash_ms: f64) -> Scenario {
    let mut s = Scenario::new(5, mode);
    s.duration_ms = crash_ms + 2_000.0;
    s.workload.clients = 2;
    s.workload.value_mean_bytes = 65_536;
    s.workload.value_stddev_ratio = 0.0;
    s.faults = vec![FaultSpec::Crash { at_ms: crash_ms, node: 0 }];
    s
}

pub struct FailoverStats {
    /// Payload bytes committed by the old leader before it crashed.
    pub log_bytes: u64,
    pub recon_bytes: u64,
    pub recon_slots: usize,
    /// Payload of slots the new leader knew committed but had to rebuild.
    pub recon_payload: u64,
    /// Payload of slots still undecided from the new leader's view.
    pub inflight_payload: u64,
    pub max_value: usize,
}

pub fn failover_stats(s: &Scenario) -> FailoverStats {
    let crash = match s.faults[0] {
        FaultSpec::Crash { at_ms, .. } => ms(at_ms),
        _ => unreachable!(),
    };
    let out = crossword::harness::run(s);
    let mut slots = std::collections::BTreeMap::new();
    let mut recon = None;
    for (t, node, o) in &out.observations {
        match o {
            Observation::Committed { slot, payload_len, .. } if *node == 0 && *t < crash => {
                slots.insert(*slot, *payload_len as u64);
            }
            Observation::RecoveryDone {
                recon_bytes,
                recon_slots,
                recon_payload,
                inflight_payload,
                ..
            } if *node != 0 && *t > crash => {
                recon.get_or_insert((*recon_bytes, *recon_slots, *recon_payload, *inflight_payload));
            }
            _ => {}
        }
    }
    let (recon_bytes, recon_slots, recon_payload, inflight_payload) = recon.expect("a new leader finished recovery");
    FailoverStats {
        log_bytes: slots.values().sum(),
        recon_bytes,
        recon_slots,
        recon_payload,
        inflight_payload,
        max_value: s.workload.value_mean_bytes,
    }
}
