//! Wires replicas and clients into the simulator and runs a scenario.

use std::collections::BTreeMap;

use serde::Serialize;

use super::client::{Client, ClientAction, ClientTimer, OpRecord, Reader};
use super::scenario::{FaultSpec, Scenario};
use crate::protocol::{Env, Message, Observation, Replica, Role, Slot, Timer};
use crate::simnet::{ms, Actor, Ctx, Fault, LinkParams, LinkStats, Micros, NodeId, Sim};

pub enum Node {
    Replica(Box<Replica>),
    Client(Box<Client>),
    Reader(Box<Reader>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeTimer {
    Replica(Timer),
    Client(ClientTimer),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Obs {
    Replica(Observation),
    Client(OpRecord),
}

struct SimEnv<'c, 'a> {
    ctx: &'c mut Ctx<'a, Node>,
}

impl Env for SimEnv<'_, '_> {
    fn now(&self) -> Micros {
        self.ctx.now()
    }

    fn send(&mut self, to: NodeId, msg: Message) {
        self.ctx.send(to, msg);
    }

    fn set_timer(&mut self, after: Micros, timer: Timer) {
        self.ctx.set_timer(after, NodeTimer::Replica(timer));
    }

    fn persist(&mut self, bytes: usize, timer: Timer) {
        self.ctx.persist(bytes, NodeTimer::Replica(timer));
    }

    fn observe(&mut self, obs: Observation) {
        self.ctx.observe(Obs::Replica(obs));
    }
}

fn apply(actions: Vec<ClientAction>, ctx: &mut Ctx<'_, Node>) {
    for a in actions {
        match a {
            ClientAction::Send(to, msg) => ctx.send(to, msg),
            ClientAction::Timer(after, t) => ctx.set_timer(after, NodeTimer::Client(t)),
            ClientAction::Record(r) => ctx.observe(Obs::Client(r)),
        }
    }
}

impl Actor for Node {
    type Msg = Message;
    type Timer = NodeTimer;
    type Obs = Obs;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self>) {
        let now = ctx.now();
        match self {
            Node::Replica(r) => r.start(&mut SimEnv { ctx }),
            Node::Client(c) => apply(c.start(now), ctx),
            Node::Reader(r) => apply(r.start(now), ctx),
        }
    }

    fn on_message(&mut self, from: NodeId, msg: Message, ctx: &mut Ctx<'_, Self>) {
        let now = ctx.now();
        match self {
            Node::Replica(r) => r.handle_message(from, msg, &mut SimEnv { ctx }),
            Node::Client(c) => apply(c.on_message(from, msg, now), ctx),
            Node::Reader(_) => {}
        }
    }

    fn on_timer(&mut self, timer: NodeTimer, ctx: &mut Ctx<'_, Self>) {
        let now = ctx.now();
        match (self, timer) {
            (Node::Replica(r), NodeTimer::Replica(t)) => r.handle_timer(t, &mut SimEnv { ctx }),
            (Node::Client(c), NodeTimer::Client(t)) => apply(c.on_timer(t, now), ctx),
            (Node::Reader(r), NodeTimer::Client(t)) => apply(r.on_timer(t, now), ctx),
            _ => {}
        }
    }

    fn on_crash(&mut self) {
        if let Node::Replica(r) = self {
            r.crash();
        }
    }

    fn on_restart(&mut self, ctx: &mut Ctx<'_, Self>) {
        match self {
            Node::Replica(r) => r.restart(&mut SimEnv { ctx }),
            other => other.on_start(ctx),
        }
    }
}

/// Replica-to-replica link parameters over time, used to resolve relative
/// faults into absolute ones.
fn lower_faults(s: &Scenario) -> Vec<(Micros, Fault)> {
    let n = s.n;
    let mut model = vec![vec![s.network.replica_link(); n]; n];
    for l in &s.network.links {
        let p = LinkParams::from_mbps(l.delay_ms, l.mbps);
        model[l.from][l.to] = p;
        if l.symmetric {
            model[l.to][l.from] = p;
        }
    }
    let mut faults: Vec<&FaultSpec> = s.faults.iter().collect();
    faults.sort_by(|a, b| a.at_ms().total_cmp(&b.at_ms()));
    let mut out = Vec::new();
    for f in faults {
        let at = ms(f.at_ms());
        let mut set = |model: &mut Vec<Vec<LinkParams>>, from: NodeId, to: NodeId, p: LinkParams| {
            if from < n && to < n {
                model[from][to] = p;
            }
            out.push((at, Fault::SetLink { from, to, params: p }));
        };
        match f {
            FaultSpec::Crash { node, .. } => out.push((at, Fault::Crash { node: *node })),
            FaultSpec::Restart { node, .. } => out.push((at, Fault::Restart { node: *node })),
            FaultSpec::SetLink {
                from,
                to,
                delay_ms,
                mbps,
                symmetric,
                ..
            } => {
                let p = LinkParams::from_mbps(*delay_ms, *mbps);
                set(&mut model, *from, *to, p);
                if *symmetric {
                    set(&mut model, *to, *from, p);
                }
            }
            FaultSpec::LinkUp { from, to, up, .. } => out.push((
                at,
                Fault::SetLinkUp {
                    from: *from,
                    to: *to,
                    up: *up,
                },
            )),
            FaultSpec::Partition { groups, .. } => out.push((at, Fault::Partition { groups: groups.clone() })),
            FaultSpec::Heal { .. } => out.push((at, Fault::Heal)),
            FaultSpec::Network { delay_ms, mbps, .. } => {
                let p = LinkParams::from_mbps(*delay_ms, *mbps);
                for a in 0..n {
                    for b in 0..n {
                        if a != b {
                            set(&mut model, a, b, p);
                        }
                    }
                }
            }
            FaultSpec::Lag { nodes, factor, .. } => {
                let mut touched = Vec::new();
                for a in 0..n {
                    for b in 0..n {
                        if a != b && (nodes.contains(&a) || nodes.contains(&b)) {
                            touched.push((a, b));
                        }
                    }
                }
                for (a, b) in touched {
                    let old = model[a][b];
                    let p = LinkParams::new(old.delay_ms * factor, old.bandwidth_bytes_per_ms / factor);
                    set(&mut model, a, b, p);
                }
            }
        }
    }
    out
}

/// Two replicas executed different values in the same slot, or reached the
/// same execution point with different state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub slot: Slot,
    pub digests: Vec<(NodeId, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaSummary {
    pub id: NodeId,
    pub alive: bool,
    pub leader: bool,
    pub commit_bar: Slot,
    pub exec_bar: Slot,
    pub kv_hash: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub end_us: Micros,
    pub events: u64,
    pub observations: Vec<(Micros, NodeId, Observation)>,
    /// Completed operations, then the ones still in flight at the end.
    pub history: Vec<OpRecord>,
    /// `links[from][to]` over every node, clients included.
    pub links: Vec<Vec<LinkStats>>,
    pub replicas: Vec<ReplicaSummary>,
    pub divergence: Option<Divergence>,
}

/// A scenario loaded into the simulator.
pub struct World {
    pub scenario: Scenario,
    pub sim: Sim<Node>,
}

impl World {
    pub fn new(s: &Scenario) -> Self {
        let n = s.n;
        let cfg = s.replica_config();
        let stop = ms(s.duration_ms);
        let mut nodes: Vec<Node> = (0..n)
            .map(|i| Node::Replica(Box::new(Replica::new(i, cfg.clone()))))
            .collect();
        let w = &s.workload;
        for c in 0..w.clients {
            nodes.push(Node::Client(Box::new(Client::new(n + c, n, w, stop, s.seed))));
        }
        let target = w.follower_read_target.unwrap_or(n - 1);
        for r in 0..w.follower_readers {
            let id = n + w.clients + r;
            nodes.push(Node::Reader(Box::new(Reader::new(id, target, w, stop, s.seed))));
        }
        let total = nodes.len();
        let mut sim = Sim::new(nodes, s.network.replica_link(), s.network.disk(), s.seed);
        sim.set_jitter(s.network.jitter);
        let cl = s.network.client_link();
        for c in n..total {
            for r in 0..n {
                sim.set_link(c, r, cl);
                sim.set_link(r, c, cl);
            }
        }
        for l in &s.network.links {
            let p = LinkParams::from_mbps(l.delay_ms, l.mbps);
            sim.set_link(l.from, l.to, p);
            if l.symmetric {
                sim.set_link(l.to, l.from, p);
            }
        }
        for (at, f) in lower_faults(s) {
            sim.schedule_fault(at, f);
        }
        World {
            scenario: s.clone(),
            sim,
        }
    }

    pub fn replica(&self, id: NodeId) -> &Replica {
        match self.sim.node(id) {
            Node::Replica(r) => r,
            _ => panic!("node {id} is not a replica"),
        }
    }

    pub fn leader(&self) -> Option<NodeId> {
        (0..self.scenario.n)
            .filter(|&i| self.sim.is_alive(i) && self.replica(i).role() == Role::Leader)
            .max_by_key(|&i| self.replica(i).promised())
    }

    pub fn run_to(&mut self, t: Micros) {
        self.sim.run(t);
    }

    /// Runs to the end of the workload plus the drain period.
    pub fn run(mut self) -> RunOutput {
        let end = ms(self.scenario.duration_ms + self.scenario.drain_ms);
        self.sim.run(end);
        self.finish()
    }

    pub fn finish(self) -> RunOutput {
        let n = self.scenario.n;
        let mut sim = self.sim;
        let total = sim.nodes().len();
        let mut observations = Vec::new();
        let mut history = Vec::new();
        for (t, node, o) in sim.take_observations() {
            match o {
                Obs::Replica(o) => observations.push((t, node, o)),
                Obs::Client(r) => history.push(r),
            }
        }
        for node in sim.nodes() {
            if let Node::Client(c) = node {
                history.extend(c.pending());
            }
        }
        let replicas: Vec<ReplicaSummary> = (0..n)
            .map(|i| {
                let Node::Replica(r) = sim.node(i) else { unreachable!() };
                ReplicaSummary {
                    id: i,
                    alive: sim.is_alive(i),
                    leader: sim.is_alive(i) && r.role() == Role::Leader,
                    commit_bar: r.commit_bar(),
                    exec_bar: r.exec_bar(),
                    kv_hash: r.kv().state_hash(0, r.exec_bar()),
                }
            })
            .collect();
        let divergence = check_divergence(&observations, &replicas);
        let links = (0..total)
            .map(|a| (0..total).map(|b| sim.link_stats(a, b)).collect())
            .collect();
        RunOutput {
            scenario: self.scenario,
            end_us: sim.now(),
            events: sim.events_processed(),
            observations,
            history,
            links,
            replicas,
            divergence,
        }
    }
}

/// Runs a scenario start to finish.
pub fn run(s: &Scenario) -> RunOutput {
    World::new(s).run()
}

fn check_divergence(obs: &[(Micros, NodeId, Observation)], replicas: &[ReplicaSummary]) -> Option<Divergence> {
    let mut by_slot: BTreeMap<Slot, Vec<(NodeId, u64)>> = BTreeMap::new();
    for (_, node, o) in obs {
        if let Observation::Executed { slot, digest } = o {
            by_slot.entry(*slot).or_default().push((*node, *digest));
        }
    }
    for (slot, d) in by_slot {
        if d.iter().any(|x| x.1 != d[0].1) {
            return Some(Divergence { slot, digests: d });
        }
    }
    for a in replicas {
        for b in replicas {
            if a.id < b.id && a.exec_bar == b.exec_bar && a.kv_hash != b.kv_hash {
                return Some(Divergence {
                    slot: a.exec_bar,
                    digests: vec![(a.id, a.kv_hash), (b.id, b.kv_hash)],
                });
            }
        }
    }
    None
}
