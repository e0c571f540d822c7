//! Deterministic discrete-event network simulator.
//!
//! Every directed link is a FIFO pipe: a message occupies the link for
//! `size / bandwidth` and then travels for `delay`. A node's self-link
//! models its local storage. Events are processed in `(time, sequence)`
//! order, so a scenario plus a seed fully determines the trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Simulated time in microseconds.
pub type Micros = u64;
pub type NodeId = usize;

pub const US_PER_MS: f64 = 1_000.0;

pub fn ms(v: f64) -> Micros {
    (v * US_PER_MS).round().max(0.0) as Micros
}

pub fn to_ms(t: Micros) -> f64 {
    t as f64 / US_PER_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub delay_ms: f64,
    pub bandwidth_bytes_per_ms: f64,
}

impl LinkParams {
    pub fn new(delay_ms: f64, bandwidth_bytes_per_ms: f64) -> Self {
        assert!(delay_ms >= 0.0, "link delay must be non-negative");
        assert!(bandwidth_bytes_per_ms > 0.0, "link bandwidth must be positive");
        LinkParams {
            delay_ms,
            bandwidth_bytes_per_ms,
        }
    }

    /// `mbps` megabits per second.
    pub fn from_mbps(delay_ms: f64, mbps: f64) -> Self {
        LinkParams::new(delay_ms, mbps * 1e6 / 8.0 / 1e3)
    }

    pub fn serialization_us(&self, size: usize) -> Micros {
        (size as f64 / self.bandwidth_bytes_per_ms * US_PER_MS).ceil() as Micros
    }
}

/// Size accounting for simulated messages.
pub trait Wire {
    /// Bytes charged against link bandwidth.
    fn wire_size(&self) -> usize;
    /// Portion of `wire_size` that is erasure-shard payload.
    fn payload_bytes(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub messages: u64,
    pub bytes: u64,
    pub payload_bytes: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
struct LinkState {
    params: LinkParams,
    up: bool,
    busy_until: Micros,
    last_arrival: Micros,
    stats: LinkStats,
}

/// A fault or environment change applied at a scheduled time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    Crash { node: NodeId },
    Restart { node: NodeId },
    SetLink { from: NodeId, to: NodeId, params: LinkParams },
    SetLinkUp { from: NodeId, to: NodeId, up: bool },
    /// Cuts every link between different groups; nodes not listed keep
    /// their links.
    Partition { groups: Vec<Vec<NodeId>> },
    /// Restores every link.
    Heal,
}

/// A simulated process.
pub trait Actor: Sized {
    type Msg: Wire;
    type Timer;
    type Obs;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self>);
    fn on_message(&mut self, from: NodeId, msg: Self::Msg, ctx: &mut Ctx<'_, Self>);
    fn on_timer(&mut self, timer: Self::Timer, ctx: &mut Ctx<'_, Self>);
    /// Drops volatile state; durable state stays.
    fn on_crash(&mut self);
    fn on_restart(&mut self, ctx: &mut Ctx<'_, Self>);
}

enum Output<A: Actor> {
    Send { to: NodeId, msg: A::Msg },
    Timer { after: Micros, timer: A::Timer },
    Persist { bytes: usize, timer: A::Timer },
}

/// Handler-side view of the simulator.
pub struct Ctx<'a, A: Actor> {
    now: Micros,
    me: NodeId,
    out: Vec<Output<A>>,
    obs: &'a mut Vec<(Micros, NodeId, A::Obs)>,
}

impl<A: Actor> Ctx<'_, A> {
    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn send(&mut self, to: NodeId, msg: A::Msg) {
        self.out.push(Output::Send { to, msg });
    }

    pub fn set_timer(&mut self, after: Micros, timer: A::Timer) {
        self.out.push(Output::Timer { after, timer });
    }

    /// Writes `bytes` through the node's storage link; `timer` fires when
    /// the write is durable.
    pub fn persist(&mut self, bytes: usize, timer: A::Timer) {
        self.out.push(Output::Persist { bytes, timer });
    }

    pub fn observe(&mut self, obs: A::Obs) {
        self.obs.push((self.now, self.me, obs));
    }
}

enum EventKind<A: Actor> {
    Deliver { from: NodeId, to: NodeId, msg: A::Msg },
    Timer { node: NodeId, timer: A::Timer },
    Fault(Fault),
}

struct Event<A: Actor> {
    at: Micros,
    seq: u64,
    incarnation: u64,
    kind: EventKind<A>,
}

impl<A: Actor> PartialEq for Event<A> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<A: Actor> Eq for Event<A> {}
impl<A: Actor> PartialOrd for Event<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<A: Actor> Ord for Event<A> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct Sim<A: Actor> {
    now: Micros,
    seq: u64,
    nodes: Vec<A>,
    alive: Vec<bool>,
    incarnation: Vec<u64>,
    links: Vec<Vec<LinkState>>,
    queue: BinaryHeap<Event<A>>,
    rng: ChaCha8Rng,
    jitter: f64,
    observations: Vec<(Micros, NodeId, A::Obs)>,
    started: bool,
    processed: u64,
}

impl<A: Actor> Sim<A> {
    /// All links start with `default_link`; self-links with `storage`.
    pub fn new(nodes: Vec<A>, default_link: LinkParams, storage: LinkParams, seed: u64) -> Self {
        let k = nodes.len();
        let links = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| LinkState {
                        params: if a == b { storage } else { default_link },
                        up: true,
                        busy_until: 0,
                        last_arrival: 0,
                        stats: LinkStats::default(),
                    })
                    .collect()
            })
            .collect();
        Sim {
            now: 0,
            seq: 0,
            alive: vec![true; k],
            incarnation: vec![0; k],
            nodes,
            links,
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            jitter: 0.0,
            observations: Vec::new(),
            started: false,
            processed: 0,
        }
    }

    /// Multiplicative delay noise: each delay is scaled by `1 + U(-j, j)`.
    pub fn set_jitter(&mut self, j: f64) {
        self.jitter = j.clamp(0.0, 1.0);
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn nodes(&self) -> &[A] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &A {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut A {
        &mut self.nodes[id]
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.alive[id]
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn link_params(&self, from: NodeId, to: NodeId) -> LinkParams {
        self.links[from][to].params
    }

    pub fn link_stats(&self, from: NodeId, to: NodeId) -> LinkStats {
        self.links[from][to].stats
    }

    pub fn set_link(&mut self, from: NodeId, to: NodeId, params: LinkParams) {
        self.links[from][to].params = params;
    }

    pub fn set_link_up(&mut self, from: NodeId, to: NodeId, up: bool) {
        self.links[from][to].up = up;
    }

    pub fn observations(&self) -> &[(Micros, NodeId, A::Obs)] {
        &self.observations
    }

    pub fn take_observations(&mut self) -> Vec<(Micros, NodeId, A::Obs)> {
        std::mem::take(&mut self.observations)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn push(&mut self, at: Micros, incarnation: u64, kind: EventKind<A>) {
        self.seq += 1;
        self.queue.push(Event {
            at,
            seq: self.seq,
            incarnation,
            kind,
        });
    }

    pub fn schedule_fault(&mut self, at: Micros, fault: Fault) {
        let at = at.max(self.now);
        self.push(at, 0, EventKind::Fault(fault));
    }

    /// Places `msg` on the `from -> to` link as if `from` sent it now.
    pub fn inject(&mut self, from: NodeId, to: NodeId, msg: A::Msg) {
        self.transmit(from, to, msg);
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, msg: A::Msg) {
        let size = msg.wire_size();
        let payload = msg.payload_bytes();
        let now = self.now;
        let jitter = self.jitter;
        let noise = if jitter > 0.0 {
            1.0 + self.rng.random_range(-jitter..=jitter)
        } else {
            1.0
        };
        let link = &mut self.links[from][to];
        if !link.up {
            link.stats.dropped += 1;
            return;
        }
        let start = now.max(link.busy_until);
        link.busy_until = start + link.params.serialization_us(size);
        let delay = ms(link.params.delay_ms * noise);
        let arrival = (link.busy_until + delay).max(link.last_arrival);
        link.last_arrival = arrival;
        link.stats.messages += 1;
        link.stats.bytes += size as u64;
        link.stats.payload_bytes += payload as u64;
        let inc = self.incarnation[to];
        self.push(arrival, inc, EventKind::Deliver { from, to, msg });
    }

    fn apply_outputs(&mut self, me: NodeId, out: Vec<Output<A>>) {
        let inc = self.incarnation[me];
        for o in out {
            match o {
                Output::Send { to, msg } => self.transmit(me, to, msg),
                Output::Timer { after, timer } => {
                    let at = self.now + after;
                    self.push(at, inc, EventKind::Timer { node: me, timer });
                }
                Output::Persist { bytes, timer } => {
                    let link = &mut self.links[me][me];
                    let start = self.now.max(link.busy_until);
                    link.busy_until = start + link.params.serialization_us(bytes);
                    link.stats.messages += 1;
                    link.stats.bytes += bytes as u64;
                    let at = link.busy_until + ms(link.params.delay_ms);
                    self.push(at, inc, EventKind::Timer { node: me, timer });
                }
            }
        }
    }

    fn with_ctx<F>(&mut self, node: NodeId, f: F)
    where
        F: FnOnce(&mut A, &mut Ctx<'_, A>),
    {
        let mut ctx = Ctx {
            now: self.now,
            me: node,
            out: Vec::new(),
            obs: &mut self.observations,
        };
        f(&mut self.nodes[node], &mut ctx);
        let out = ctx.out;
        self.apply_outputs(node, out);
    }

    fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for id in 0..self.nodes.len() {
            self.with_ctx(id, |n, ctx| n.on_start(ctx));
        }
    }

    fn apply_fault(&mut self, fault: Fault) {
        match fault {
            Fault::Crash { node } => {
                if self.alive[node] {
                    self.alive[node] = false;
                    self.incarnation[node] += 1;
                    self.nodes[node].on_crash();
                }
            }
            Fault::Restart { node } => {
                if !self.alive[node] {
                    self.alive[node] = true;
                    self.incarnation[node] += 1;
                    // Pending writes on the storage link died with the node.
                    self.links[node][node].busy_until = self.now;
                    self.with_ctx(node, |n, ctx| n.on_restart(ctx));
                }
            }
            Fault::SetLink { from, to, params } => self.links[from][to].params = params,
            Fault::SetLinkUp { from, to, up } => self.links[from][to].up = up,
            Fault::Partition { groups } => {
                let k = self.nodes.len();
                let mut group_of = vec![None; k];
                for (g, members) in groups.iter().enumerate() {
                    for &m in members {
                        group_of[m] = Some(g);
                    }
                }
                for a in 0..k {
                    for b in 0..k {
                        if let (Some(ga), Some(gb)) = (group_of[a], group_of[b]) {
                            if ga != gb {
                                self.links[a][b].up = false;
                            }
                        }
                    }
                }
            }
            Fault::Heal => {
                for row in &mut self.links {
                    for l in row {
                        l.up = true;
                    }
                }
            }
        }
    }

    /// Processes the next event; returns its time, or `None` when idle.
    pub fn step(&mut self) -> Option<Micros> {
        self.start();
        let ev = self.queue.pop()?;
        debug_assert!(ev.at >= self.now, "simulated clock went backwards");
        self.now = ev.at;
        self.processed += 1;
        match ev.kind {
            EventKind::Deliver { from, to, msg } => {
                if self.alive[to] && ev.incarnation == self.incarnation[to] && self.links[from][to].up {
                    self.with_ctx(to, |n, ctx| n.on_message(from, msg, ctx));
                } else {
                    self.links[from][to].stats.dropped += 1;
                }
            }
            EventKind::Timer { node, timer } => {
                if self.alive[node] && ev.incarnation == self.incarnation[node] {
                    self.with_ctx(node, |n, ctx| n.on_timer(timer, ctx));
                }
            }
            EventKind::Fault(f) => self.apply_fault(f),
        }
        Some(self.now)
    }

    /// Time of the next pending event.
    pub fn peek_time(&self) -> Option<Micros> {
        self.queue.peek().map(|e| e.at)
    }

    /// Runs every event with time `<= until`, then advances the clock there.
    pub fn run(&mut self, until: Micros) {
        self.start();
        while let Some(t) = self.peek_time() {
            if t > until {
                break;
            }
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Runs until `pred` holds (checked after each event) or `until` passes.
    /// Returns whether `pred` became true.
    pub fn run_until<F: FnMut(&Self) -> bool>(&mut self, until: Micros, mut pred: F) -> bool {
        self.start();
        if pred(self) {
            return true;
        }
        while let Some(t) = self.peek_time() {
            if t > until {
                break;
            }
            self.step();
            if pred(self) {
                return true;
            }
        }
        self.now = self.now.max(until);
        false
    }
}
