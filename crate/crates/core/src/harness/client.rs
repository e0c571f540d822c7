//! Closed-loop clients and follower readers.

use bytes::Bytes;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::scenario::{KeyDist, WorkloadSpec};
use crate::protocol::{write_id, CmdKind, CmdResult, Command, Message, Reply, WriteId};
use crate::simnet::{ms, Micros, NodeId};

/// One client operation as seen from outside the cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub client: u64,
    pub seq: u64,
    pub kind: CmdKind,
    pub key: String,
    /// Identity of the value a Put writes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<WriteId>,
    pub invoke_us: Micros,
    /// `None` if no reply arrived before the run ended.
    pub respond_us: Option<Micros>,
    /// Writer of the value a Get returned; `None` means the key was absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<WriteId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientTimer {
    Issue,
    /// Fires if attempt `attempt` of request `seq` got no reply.
    Timeout { seq: u64, attempt: u32 },
    Retry { seq: u64, attempt: u32 },
}

/// What a client wants the host to do.
#[derive(Debug)]
pub enum ClientAction {
    Send(NodeId, Message),
    Timer(Micros, ClientTimer),
    Record(OpRecord),
}

#[derive(Debug)]
struct Outstanding {
    cmd: Command,
    invoke: Micros,
    attempt: u32,
}

/// Value-size generator honoring phases and mixes.
#[derive(Debug, Clone)]
pub struct SizeGen {
    mix: Option<(Vec<usize>, WeightedIndex<f64>)>,
    phases: Vec<(Micros, usize)>,
    stddev_ratio: f64,
}

impl SizeGen {
    pub fn new(w: &WorkloadSpec) -> Self {
        let mix = if w.mix.is_empty() {
            None
        } else {
            let sizes = w.mix.iter().map(|(s, _)| *s).collect();
            let idx = WeightedIndex::new(w.mix.iter().map(|(_, wt)| *wt)).expect("validated weights");
            Some((sizes, idx))
        };
        let mut phases = vec![(0, w.value_mean_bytes)];
        phases.extend(w.phases.iter().map(|p| (ms(p.at_ms), p.value_mean_bytes)));
        phases.sort_by_key(|p| p.0);
        SizeGen {
            mix,
            phases,
            stddev_ratio: w.value_stddev_ratio,
        }
    }

    pub fn mean_at(&self, now: Micros) -> usize {
        self.phases.iter().rev().find(|p| p.0 <= now).map_or(0, |p| p.1)
    }

    pub fn sample(&self, now: Micros, rng: &mut impl Rng) -> usize {
        if let Some((sizes, idx)) = &self.mix {
            return sizes[idx.sample(rng)];
        }
        let mean = self.mean_at(now) as f64;
        let sd = mean * self.stddev_ratio;
        if sd <= 0.0 {
            return mean as usize;
        }
        let v: f64 = Normal::new(mean, sd).expect("finite").sample(rng);
        v.round().max(0.0) as usize
    }
}

#[derive(Debug, Clone)]
pub struct KeyGen {
    count: usize,
    zipf: Option<Zipf<f64>>,
}

impl KeyGen {
    pub fn new(w: &WorkloadSpec) -> Self {
        let zipf = match w.key_dist {
            KeyDist::Uniform => None,
            KeyDist::Zipfian => Some(Zipf::new(w.key_count as f64, w.zipf_theta).expect("validated")),
        };
        KeyGen {
            count: w.key_count,
            zipf,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> String {
        let i = match &self.zipf {
            Some(z) => (z.sample(rng) as usize).saturating_sub(1).min(self.count - 1),
            None => rng.random_range(0..self.count),
        };
        format!("k{i}")
    }
}

/// A closed-loop client: one request in flight, retried until answered.
#[derive(Debug)]
pub struct Client {
    id: NodeId,
    n: usize,
    put_ratio: f64,
    sizes: SizeGen,
    keys: KeyGen,
    interval: Micros,
    timeout: Micros,
    start: Micros,
    stop: Micros,
    leader: NodeId,
    seq: u64,
    outstanding: Option<Outstanding>,
    rng: ChaCha8Rng,
}

impl Client {
    pub fn new(id: NodeId, n: usize, w: &WorkloadSpec, stop: Micros, seed: u64) -> Self {
        Client {
            id,
            n,
            put_ratio: w.put_ratio,
            sizes: SizeGen::new(w),
            keys: KeyGen::new(w),
            interval: ms(w.interval_ms),
            timeout: ms(w.timeout_ms),
            start: ms(w.start_ms),
            stop,
            leader: 0,
            seq: 0,
            outstanding: None,
            rng: ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn start(&mut self, now: Micros) -> Vec<ClientAction> {
        let spread = self.rng.random_range(0..1_000);
        vec![ClientAction::Timer(self.start.saturating_sub(now) + spread, ClientTimer::Issue)]
    }

    /// The in-flight operation, reported as incomplete.
    pub fn pending(&self) -> Option<OpRecord> {
        self.outstanding.as_ref().map(|o| record(&o.cmd, o.invoke, None, None))
    }

    fn issue(&mut self, now: Micros) -> Vec<ClientAction> {
        if now >= self.stop || self.outstanding.is_some() {
            return Vec::new();
        }
        self.seq += 1;
        let key = self.keys.sample(&mut self.rng);
        let cmd = if self.rng.random_bool(self.put_ratio) {
            let len = self.sizes.sample(now, &mut self.rng);
            let fill = (write_id(self.id as u64, self.seq) % 251) as u8;
            Command::put(self.id as u64, self.seq, key, Bytes::from(vec![fill; len]))
        } else {
            Command::get(self.id as u64, self.seq, key)
        };
        self.outstanding = Some(Outstanding {
            cmd,
            invoke: now,
            attempt: 0,
        });
        self.send()
    }

    fn send(&mut self) -> Vec<ClientAction> {
        let o = self.outstanding.as_ref().expect("in flight");
        vec![
            ClientAction::Send(self.leader, Message::ClientRequest { cmd: o.cmd.clone() }),
            ClientAction::Timer(
                self.timeout,
                ClientTimer::Timeout {
                    seq: o.cmd.seq,
                    attempt: o.attempt,
                },
            ),
        ]
    }

    fn current(&self, seq: u64, attempt: u32) -> bool {
        self.outstanding
            .as_ref()
            .is_some_and(|o| o.cmd.seq == seq && o.attempt == attempt)
    }

    fn retry(&mut self, next_leader: NodeId) -> Vec<ClientAction> {
        self.leader = next_leader;
        if let Some(o) = self.outstanding.as_mut() {
            o.attempt += 1;
        }
        self.send()
    }

    pub fn on_timer(&mut self, t: ClientTimer, now: Micros) -> Vec<ClientAction> {
        match t {
            ClientTimer::Issue => self.issue(now),
            ClientTimer::Timeout { seq, attempt } if self.current(seq, attempt) => {
                self.retry((self.leader + 1) % self.n)
            }
            ClientTimer::Retry { seq, attempt } if self.current(seq, attempt) => self.retry(self.leader),
            _ => Vec::new(),
        }
    }

    pub fn on_message(&mut self, from: NodeId, msg: Message, now: Micros) -> Vec<ClientAction> {
        let Message::ClientReply { seq, reply } = msg else {
            return Vec::new();
        };
        let Some(o) = self.outstanding.as_ref() else {
            return Vec::new();
        };
        if o.cmd.seq != seq {
            return Vec::new();
        }
        match reply {
            Reply::Done(res) => {
                let result = match res {
                    CmdResult::Get(v) => v.map(|v| v.writer),
                    CmdResult::Put => None,
                };
                let o = self.outstanding.take().expect("in flight");
                let mut out = vec![ClientAction::Record(record(&o.cmd, o.invoke, Some(now), result))];
                out.push(ClientAction::Timer(self.interval, ClientTimer::Issue));
                out
            }
            Reply::Redirect(Some(l)) if l != from && l < self.n => self.retry(l),
            Reply::Redirect(_) | Reply::Local(_) => {
                let o = self.outstanding.as_mut().expect("in flight");
                o.attempt += 1;
                self.leader = (self.leader + 1) % self.n;
                vec![ClientAction::Timer(
                    ms(20.0),
                    ClientTimer::Retry {
                        seq,
                        attempt: o.attempt,
                    },
                )]
            }
        }
    }
}

fn record(cmd: &Command, invoke: Micros, respond: Option<Micros>, result: Option<WriteId>) -> OpRecord {
    OpRecord {
        client: cmd.client,
        seq: cmd.seq,
        kind: cmd.kind,
        key: cmd.key.clone(),
        value: (cmd.kind == CmdKind::Put).then(|| cmd.write_id()),
        invoke_us: invoke,
        respond_us: respond,
        result,
    }
}

/// Periodically reads keys from one follower without going through the leader.
#[derive(Debug)]
pub struct Reader {
    id: NodeId,
    target: NodeId,
    interval: Micros,
    start: Micros,
    stop: Micros,
    keys: KeyGen,
    seq: u64,
    rng: ChaCha8Rng,
}

impl Reader {
    pub fn new(id: NodeId, target: NodeId, w: &WorkloadSpec, stop: Micros, seed: u64) -> Self {
        Reader {
            id,
            target,
            interval: ms(w.follower_read_interval_ms).max(1),
            start: ms(w.start_ms),
            stop,
            keys: KeyGen::new(w),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)),
        }
    }

    pub fn start(&mut self, now: Micros) -> Vec<ClientAction> {
        vec![ClientAction::Timer(self.start.saturating_sub(now) + self.interval, ClientTimer::Issue)]
    }

    pub fn on_timer(&mut self, t: ClientTimer, now: Micros) -> Vec<ClientAction> {
        if t != ClientTimer::Issue || now >= self.stop {
            return Vec::new();
        }
        self.seq += 1;
        let key = self.keys.sample(&mut self.rng);
        vec![
            ClientAction::Send(
                self.target,
                Message::FollowerRead {
                    client: self.id as u64,
                    seq: self.seq,
                    key,
                },
            ),
            ClientAction::Timer(self.interval, ClientTimer::Issue),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workload() -> WorkloadSpec {
        WorkloadSpec::default()
    }

    #[test]
    fn put_then_reply_records_a_complete_op() {
        let mut c = Client::new(5, 5, &workload(), 1_000_000, 1);
        let out = c.on_timer(ClientTimer::Issue, 10);
        let ClientAction::Send(0, Message::ClientRequest { cmd }) = &out[0] else {
            panic!("{out:?}")
        };
        assert_eq!(cmd.kind, CmdKind::Put);
        let out = c.on_message(
            0,
            Message::ClientReply {
                seq: cmd.seq,
                reply: Reply::Done(CmdResult::Put),
            },
            50,
        );
        let ClientAction::Record(r) = &out[0] else { panic!() };
        assert_eq!((r.invoke_us, r.respond_us), (10, Some(50)));
        assert_eq!(r.value, Some(write_id(5, 1)));
        assert!(c.pending().is_none());
    }

    #[test]
    fn redirect_resends_same_seq() {
        let mut c = Client::new(5, 5, &workload(), 1_000_000, 1);
        c.on_timer(ClientTimer::Issue, 0);
        let out = c.on_message(
            0,
            Message::ClientReply {
                seq: 1,
                reply: Reply::Redirect(Some(3)),
            },
            5,
        );
        let ClientAction::Send(3, Message::ClientRequest { cmd }) = &out[0] else {
            panic!("{out:?}")
        };
        assert_eq!(cmd.seq, 1);
        // The first attempt's timeout is stale now.
        assert!(c.on_timer(ClientTimer::Timeout { seq: 1, attempt: 0 }, 9).is_empty());
    }

    #[test]
    fn no_new_requests_after_stop() {
        let mut c = Client::new(5, 5, &workload(), 100, 1);
        assert!(c.on_timer(ClientTimer::Issue, 100).is_empty());
    }

    #[test]
    fn phases_switch_mean() {
        let mut w = workload();
        w.value_mean_bytes = 65536;
        w.phases.push(super::super::scenario::Phase {
            at_ms: 5.0,
            value_mean_bytes: 4096,
        });
        let g = SizeGen::new(&w);
        assert_eq!(g.mean_at(0), 65536);
        assert_eq!(g.mean_at(5_000), 4096);
    }

    #[test]
    fn zipf_keys_in_range() {
        let mut w = workload();
        w.key_dist = KeyDist::Zipfian;
        w.key_count = 10;
        let g = KeyGen::new(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hot = 0;
        for _ in 0..1000 {
            let k = g.sample(&mut rng);
            let i: usize = k[1..].parse().unwrap();
            assert!(i < 10);
            hot += (i == 0) as usize;
        }
        assert!(hot > 200, "{hot}");
    }
}
