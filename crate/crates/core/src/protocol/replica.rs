//! Replica state, dispatch, follower-side handlers, execution and snapshots.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::command::{decode_batch, fnv1a, CmdKind, Command, KvStore};
use super::gossip::GossipState;
use super::leader::{Candidate, LeaderState};
use super::messages::{Accept, Message, PrepareEntry, Reply, ShardList};
use super::{ballot_owner, shard_set, Ballot, Env, Mode, Observation, ReplicaConfig, Slot, Timer};
use crate::assignment::{AssignmentPolicy, ClusterParams, ServerId, ShardSet};
use crate::erasure::{self, CodingScheme};
use crate::simnet::{Micros, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Null,
    Preparing,
    Accepting,
    CommittedPartial,
    CommittedKnown,
    Executed,
}

/// One log slot as seen by one replica.
#[derive(Debug, Clone)]
pub struct Instance {
    /// Highest ballot at which this replica accepted the slot.
    pub ballot: Ballot,
    /// Ballot under which the held value was first proposed.
    pub origin: Ballot,
    pub scheme: CodingScheme,
    pub payload_len: usize,
    pub policy: Arc<AssignmentPolicy>,
    /// Shards in memory: durable ones plus gossiped ones.
    pub shards: BTreeMap<usize, Bytes>,
    /// Shards that survive a crash.
    pub durable: ShardSet,
    pub committed: bool,
    /// The full payload once known.
    pub payload: Option<Bytes>,
    pub executed: bool,
    pub(crate) gossip_at: Option<Micros>,
}

impl Instance {
    pub(crate) fn new(origin: Ballot, scheme: CodingScheme, payload_len: usize, policy: Arc<AssignmentPolicy>) -> Self {
        Instance {
            ballot: 0,
            origin,
            scheme,
            payload_len,
            policy,
            shards: BTreeMap::new(),
            durable: ShardSet::EMPTY,
            committed: false,
            payload: None,
            executed: false,
            gossip_at: None,
        }
    }

    pub fn status(&self) -> Status {
        match (self.executed, self.committed, self.payload.is_some()) {
            (true, _, _) => Status::Executed,
            (_, true, true) => Status::CommittedKnown,
            (_, true, false) => Status::CommittedPartial,
            _ if self.ballot > 0 => Status::Accepting,
            _ => Status::Null,
        }
    }

    pub fn held(&self) -> ShardSet {
        self.shards.keys().copied().collect()
    }

    /// Adds shards of the same value, ignoring malformed ones.
    pub(crate) fn merge(&mut self, shards: &ShardList) -> usize {
        let len = self.scheme.shard_len(self.payload_len);
        let mut added = 0;
        for (i, b) in shards {
            if *i < self.scheme.n_shards() && b.len() == len && !self.shards.contains_key(i) {
                self.shards.insert(*i, b.clone());
                added += b.len();
            }
        }
        added
    }

    /// Decodes the payload once enough shards are present.
    pub(crate) fn try_decode(&mut self) -> bool {
        if self.payload.is_some() {
            return true;
        }
        if self.shards.len() < self.scheme.data_shards() {
            return false;
        }
        match erasure::reconstruct(&self.shards, self.scheme, self.payload_len) {
            Ok(p) => {
                self.payload = Some(Bytes::from(p));
                true
            }
            Err(_) => false,
        }
    }

    /// Shards `want`, taken from memory or re-encoded from a known payload.
    pub(crate) fn shards_for(&self, want: ShardSet) -> ShardList {
        let have = self.held();
        if want.is_subset(have) || self.payload.is_none() {
            return want
                .intersection(have)
                .iter()
                .map(|i| (i, self.shards[&i].clone()))
                .collect();
        }
        let cw = erasure::encode(self.payload.as_ref().unwrap(), self.scheme);
        want.iter()
            .filter(|&i| i < self.scheme.n_shards())
            .map(|i| (i, cw.shards[i].clone()))
            .collect()
    }
}

/// A durable image of the state machine after executing all slots `< idx`.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub idx: Slot,
    pub kv: KvStore,
}

pub struct Replica {
    pub(crate) id: ServerId,
    pub(crate) cfg: ReplicaConfig,
    pub(crate) params: ClusterParams,
    pub(crate) scheme: CodingScheme,
    /// Balanced round-robin policies indexed by `c`.
    pub(crate) rr: Vec<Arc<AssignmentPolicy>>,
    pub(crate) full: Arc<AssignmentPolicy>,

    // Durable.
    pub(crate) promised: Ballot,
    pub(crate) max_seen: Ballot,
    pub(crate) log: BTreeMap<Slot, Instance>,
    pub(crate) snap: Snapshot,

    // Volatile.
    pub(crate) role: Role,
    pub(crate) kv: KvStore,
    pub(crate) commit_bar: Slot,
    pub(crate) exec_bar: Slot,
    pub(crate) leader_hint: Option<ServerId>,
    pub(crate) last_heard: Option<Micros>,
    pub(crate) election_timeout: Micros,
    /// Latest `(ballot, commit_bar)` announced by a leader.
    pub(crate) hb_commit: (Ballot, Slot),
    /// Lowest snapshot index across the cluster, as last announced.
    pub(crate) snap_bar: Slot,
    pub(crate) cand: Option<Candidate>,
    pub(crate) lead: Option<Box<LeaderState>>,
    pub(crate) gossip: GossipState,
    pub(crate) rng: ChaCha8Rng,
}

impl Replica {
    pub fn new(id: ServerId, cfg: ReplicaConfig) -> Self {
        let params = ClusterParams::new(cfg.n).expect("valid cluster size");
        let full = Arc::new(AssignmentPolicy::full_copy(cfg.n));
        let rr = std::iter::once(full.clone())
            .chain((1..=params.m).map(|c| Arc::new(AssignmentPolicy::balanced_rr(&params, c).unwrap())))
            .collect();
        let scheme = match (cfg.mode, &cfg.unbalanced) {
            (Mode::MultiPaxos, _) => full.scheme(),
            (Mode::Crossword, Some(p)) => p.scheme(),
            _ => params.scheme,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(id as u64 + 1)));
        let mut r = Replica {
            id,
            params,
            scheme,
            rr,
            full,
            promised: 0,
            max_seen: 0,
            log: BTreeMap::new(),
            snap: Snapshot::default(),
            role: Role::Follower,
            kv: KvStore::new(),
            commit_bar: 0,
            exec_bar: 0,
            leader_hint: None,
            last_heard: None,
            election_timeout: 0,
            hb_commit: (0, 0),
            snap_bar: 0,
            cand: None,
            lead: None,
            gossip: GossipState::new(cfg.n),
            rng,
            cfg,
        };
        r.election_timeout = r.draw_timeout();
        r
    }

    // ---- accessors ----

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn config(&self) -> &ReplicaConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    pub fn promised(&self) -> Ballot {
        self.promised
    }

    pub fn leader_ballot(&self) -> Option<Ballot> {
        self.lead.as_ref().map(|l| l.ballot)
    }

    pub fn commit_bar(&self) -> Slot {
        self.commit_bar
    }

    pub fn exec_bar(&self) -> Slot {
        self.exec_bar
    }

    pub fn snapshot_idx(&self) -> Slot {
        self.snap.idx
    }

    pub fn kv(&self) -> &KvStore {
        &self.kv
    }

    pub fn instance(&self, slot: Slot) -> Option<&Instance> {
        self.log.get(&slot)
    }

    pub fn log(&self) -> &BTreeMap<Slot, Instance> {
        &self.log
    }

    pub fn state_hash(&self) -> u64 {
        self.kv.state_hash(self.commit_bar, self.exec_bar)
    }

    /// Whether the leader may answer reads without a log slot right now.
    pub fn lease_valid(&self, now: Micros) -> bool {
        self.lead.as_ref().is_some_and(|l| self.cfg.leases && l.lease_valid(now, &self.cfg, &self.params))
    }

    pub(crate) fn d(&self) -> usize {
        self.scheme.data_shards()
    }

    pub(crate) fn peers(&self) -> impl Iterator<Item = ServerId> + '_ {
        (0..self.cfg.n).filter(move |&p| p != self.id)
    }

    pub(crate) fn prepare_quorum(&self) -> usize {
        match self.cfg.mode {
            Mode::RsPaxos => self.cfg.n - self.params.rspaxos_tolerance(),
            _ => self.params.m,
        }
    }

    pub(crate) fn draw_timeout(&mut self) -> Micros {
        let lo = self.cfg.election_min_us;
        let hi = self.cfg.election_max_us.max(lo);
        self.rng.random_range(lo..=hi)
    }

    // ---- lifecycle ----

    pub fn start(&mut self, env: &mut impl Env) {
        env.set_timer(self.election_timeout, Timer::Election);
        if self.cfg.gossip.enabled {
            env.set_timer(self.cfg.gossip.cycle_us, Timer::Gossip);
        }
        if self.cfg.bootstrap_leader == Some(self.id) {
            self.start_election(env);
        }
    }

    /// Drops everything not durable.
    pub fn crash(&mut self) {
        let d = self.d();
        for inst in self.log.values_mut() {
            let durable = inst.durable;
            inst.shards.retain(|i, _| durable.contains(*i));
            inst.payload = None;
            inst.executed = false;
            inst.gossip_at = None;
            if inst.shards.len() >= d {
                inst.try_decode();
            }
        }
        self.role = Role::Follower;
        self.kv = self.snap.kv.clone();
        self.exec_bar = self.snap.idx;
        self.commit_bar = self.snap.idx;
        self.leader_hint = None;
        self.hb_commit = (0, 0);
        self.cand = None;
        self.lead = None;
        self.gossip = GossipState::new(self.cfg.n);
    }

    pub fn restart(&mut self, env: &mut impl Env) {
        let now = env.now();
        self.last_heard = Some(now);
        self.election_timeout = self.draw_timeout();
        self.advance_commit_bar();
        self.execute(env);
        env.set_timer(self.election_timeout, Timer::Election);
        if self.cfg.gossip.enabled {
            env.set_timer(self.cfg.gossip.cycle_us, Timer::Gossip);
        }
    }

    pub fn handle_message(&mut self, from: NodeId, msg: Message, env: &mut impl Env) {
        match msg {
            Message::Prepare { ballot, from_slot } => self.on_prepare(from, ballot, from_slot, env),
            Message::PrepareReply {
                ballot,
                ok,
                commit_bar,
                entries,
            } => self.on_prepare_reply(from, ballot, ok, commit_bar, entries, env),
            Message::Accept(a) => self.on_accept(from, a, env),
            Message::AcceptReply {
                slot,
                ballot,
                ok,
                shards,
            } => self.on_accept_reply(from, slot, ballot, ok, shards, env),
            Message::Heartbeat {
                ballot,
                commit_bar,
                snap_bar,
                stamp,
            } => self.on_heartbeat(from, ballot, commit_bar, snap_bar, stamp, env),
            Message::HeartbeatReply {
                ballot,
                ok,
                commit_bar,
                exec_bar,
                snap_idx,
                stamp,
            } => self.on_heartbeat_reply(from, ballot, ok, commit_bar, exec_bar, snap_idx, stamp, env),
            Message::Reconstruct { ballot, entries } => self.on_reconstruct(from, ballot, entries, env),
            Message::ReconstructReply { entries } => self.on_reconstruct_reply(from, entries, env),
            Message::ClientRequest { cmd } => self.on_client_request(from, cmd, env),
            Message::FollowerRead { seq, key, .. } => {
                let read = self.kv.read(&key);
                env.observe(Observation::FollowerRead {
                    version: self.kv.version(&key),
                    key,
                });
                env.send(
                    from,
                    Message::ClientReply {
                        seq,
                        reply: Reply::Local(read),
                    },
                );
            }
            Message::ClientReply { .. } => {}
        }
    }

    pub fn handle_timer(&mut self, timer: Timer, env: &mut impl Env) {
        match timer {
            Timer::Heartbeat(b) => self.on_heartbeat_tick(b, env),
            Timer::Election => self.on_election_timer(env),
            Timer::Gossip => {
                self.gossip_tick(env);
                env.set_timer(self.cfg.gossip.cycle_us, Timer::Gossip);
            }
            Timer::Batch(b) => self.on_batch_timer(b, env),
            Timer::AcceptPersisted { from, accept } => self.on_accept_persisted(from, *accept, env),
            Timer::LeaderPersisted {
                slot,
                ballot,
                origin,
                shards,
            } => self.on_leader_persisted(slot, ballot, origin, shards, env),
        }
    }

    // ---- ballots and roles ----

    pub(crate) fn observe_ballot(&mut self, b: Ballot) {
        self.max_seen = self.max_seen.max(b);
    }

    pub(crate) fn next_ballot(&self) -> Ballot {
        let n = self.cfg.n as u64;
        let top = self.max_seen.max(self.promised);
        (top / n + 1) * n + self.id as u64
    }

    pub(crate) fn step_down(&mut self, env: &mut impl Env) {
        if let Some(l) = self.lead.take() {
            env.observe(Observation::SteppedDown { ballot: l.ballot });
        }
        self.cand = None;
        self.role = Role::Follower;
    }

    /// Adopts `ballot` as promised if it is higher than the current promise.
    fn follow(&mut self, from: NodeId, ballot: Ballot, env: &mut impl Env) {
        self.observe_ballot(ballot);
        if ballot > self.promised {
            self.promised = ballot;
            if self.role != Role::Follower {
                self.step_down(env);
            }
        }
        if ballot_owner(ballot, self.cfg.n) == from && from != self.id {
            self.leader_hint = Some(from);
            self.last_heard = Some(env.now());
        }
    }

    fn on_election_timer(&mut self, env: &mut impl Env) {
        let now = env.now();
        if self.role == Role::Leader {
            env.set_timer(self.election_timeout, Timer::Election);
            return;
        }
        let since = now.saturating_sub(self.last_heard.unwrap_or(0));
        if since >= self.election_timeout {
            self.election_timeout = self.draw_timeout();
            self.start_election(env);
            env.set_timer(self.election_timeout, Timer::Election);
        } else {
            env.set_timer(self.election_timeout - since, Timer::Election);
        }
    }

    // ---- prepare (acceptor side) ----

    fn on_prepare(&mut self, from: NodeId, ballot: Ballot, from_slot: Slot, env: &mut impl Env) {
        self.observe_ballot(ballot);
        let now = env.now();
        let sticky = match self.role {
            Role::Leader => self.lease_valid(now),
            Role::Candidate => false,
            Role::Follower => {
                self.leader_hint != Some(from) && self.last_heard.is_some_and(|t| now < t + self.cfg.election_min_us)
            }
        };
        let fresh = ballot > self.promised || (ballot == self.promised && ballot_owner(ballot, self.cfg.n) == from);
        if !fresh || sticky {
            env.send(
                from,
                Message::PrepareReply {
                    ballot: self.promised.max(self.max_seen).max(ballot),
                    ok: false,
                    commit_bar: self.commit_bar,
                    entries: Vec::new(),
                },
            );
            return;
        }
        if self.role != Role::Follower {
            self.step_down(env);
        }
        self.promised = ballot;
        self.leader_hint = None;
        let entries = self.prepare_entries(from_slot);
        env.send(
            from,
            Message::PrepareReply {
                ballot,
                ok: true,
                commit_bar: self.commit_bar,
                entries,
            },
        );
    }

    pub(crate) fn prepare_entries(&self, from_slot: Slot) -> Vec<PrepareEntry> {
        let d = self.d();
        self.log
            .range(from_slot..)
            .filter(|(_, i)| i.ballot > 0 || i.committed)
            .map(|(&slot, i)| {
                let held = i.held();
                let want = if i.payload.is_some() && held.len() < d {
                    held.union(ShardSet::first(d))
                } else {
                    held
                };
                PrepareEntry {
                    slot,
                    ballot: i.ballot,
                    origin: i.origin,
                    scheme: i.scheme,
                    payload_len: i.payload_len,
                    committed: i.committed,
                    shards: i.shards_for(want),
                }
            })
            .collect()
    }

    // ---- accept (acceptor side) ----

    fn on_accept(&mut self, from: NodeId, a: Box<Accept>, env: &mut impl Env) {
        if a.ballot < self.promised {
            self.observe_ballot(a.ballot);
            env.send(
                from,
                Message::AcceptReply {
                    slot: a.slot,
                    ballot: self.promised,
                    ok: false,
                    shards: ShardSet::EMPTY,
                },
            );
            return;
        }
        self.follow(from, a.ballot, env);
        let bytes = a.shards.iter().map(|(_, b)| b.len()).sum();
        env.persist(bytes, Timer::AcceptPersisted { from, accept: a });
    }

    fn on_accept_persisted(&mut self, from: NodeId, a: Accept, env: &mut impl Env) {
        if a.ballot < self.promised {
            env.send(
                from,
                Message::AcceptReply {
                    slot: a.slot,
                    ballot: self.promised,
                    ok: false,
                    shards: ShardSet::EMPTY,
                },
            );
            return;
        }
        if a.slot < self.snap.idx && !self.log.contains_key(&a.slot) {
            // Already executed and compacted here.
            env.send(
                from,
                Message::AcceptReply {
                    slot: a.slot,
                    ballot: a.ballot,
                    ok: true,
                    shards: shard_set(&a.shards),
                },
            );
            return;
        }
        let inst = self
            .log
            .entry(a.slot)
            .or_insert_with(|| Instance::new(a.origin, a.scheme, a.payload_len, a.policy.clone()));
        if inst.origin != a.origin || inst.scheme != a.scheme || inst.payload_len != a.payload_len {
            if inst.committed {
                // A chosen value never changes; a differing proposal is stale.
                return;
            }
            *inst = Instance::new(a.origin, a.scheme, a.payload_len, a.policy.clone());
        }
        inst.ballot = inst.ballot.max(a.ballot);
        inst.policy = a.policy.clone();
        inst.merge(&a.shards);
        inst.durable = inst.durable.union(shard_set(&a.shards));
        let vouched = inst.durable;
        if inst.shards.len() >= inst.scheme.data_shards() {
            inst.try_decode();
        }
        env.send(
            from,
            Message::AcceptReply {
                slot: a.slot,
                ballot: a.ballot,
                ok: true,
                shards: vouched,
            },
        );
        let (hb_ballot, hb_bar) = self.hb_commit;
        if a.slot < hb_bar && a.ballot == hb_ballot {
            self.learn_commits(hb_ballot, hb_bar, env);
        }
    }

    // ---- heartbeats (follower side) ----

    fn on_heartbeat(
        &mut self,
        from: NodeId,
        ballot: Ballot,
        commit_bar: Slot,
        snap_bar: Slot,
        stamp: u64,
        env: &mut impl Env,
    ) {
        if ballot < self.promised {
            self.observe_ballot(ballot);
            env.send(
                from,
                Message::HeartbeatReply {
                    ballot: self.promised,
                    ok: false,
                    commit_bar: self.commit_bar,
                    exec_bar: self.exec_bar,
                    snap_idx: self.snap.idx,
                    stamp,
                },
            );
            return;
        }
        self.follow(from, ballot, env);
        self.hb_commit = (ballot, commit_bar);
        if snap_bar > self.snap_bar {
            self.snap_bar = snap_bar;
            self.compact();
        }
        self.learn_commits(ballot, commit_bar, env);
        env.send(
            from,
            Message::HeartbeatReply {
                ballot,
                ok: true,
                commit_bar: self.commit_bar,
                exec_bar: self.exec_bar,
                snap_idx: self.snap.idx,
                stamp,
            },
        );
    }

    /// Marks slots below `bar` accepted at `ballot` as committed.
    pub(crate) fn learn_commits(&mut self, ballot: Ballot, bar: Slot, env: &mut impl Env) {
        if bar <= self.commit_bar {
            return;
        }
        let d = self.d();
        for inst in self.log.range_mut(self.commit_bar..bar).map(|(_, i)| i) {
            if !inst.committed && inst.ballot == ballot {
                inst.committed = true;
                if inst.shards.len() >= d {
                    inst.try_decode();
                }
            }
        }
        self.advance_commit_bar();
        self.execute(env);
    }

    pub(crate) fn advance_commit_bar(&mut self) {
        let start = self.commit_bar.max(self.snap.idx);
        let mut bar = start;
        for (&s, inst) in self.log.range(start..) {
            if s != bar || !inst.committed {
                break;
            }
            bar += 1;
        }
        self.commit_bar = bar;
    }

    // ---- execution ----

    /// Executes committed, known slots in order.
    pub(crate) fn execute(&mut self, env: &mut impl Env) {
        loop {
            let slot = self.exec_bar;
            let Some(inst) = self.log.get_mut(&slot) else { break };
            if !inst.committed || inst.payload.is_none() {
                break;
            }
            let payload = inst.payload.clone().unwrap();
            inst.executed = true;
            let batch = decode_batch(&payload).unwrap_or_default();
            let is_leader = self.role == Role::Leader;
            for cmd in &batch {
                let (res, applied) = self.kv.apply(cmd);
                if applied && self.cfg.record_applies {
                    env.observe(Observation::Applied {
                        key: cmd.key.clone(),
                        version: self.kv.version(&cmd.key),
                    });
                }
                if is_leader {
                    env.send(
                        cmd.client as NodeId,
                        Message::ClientReply {
                            seq: cmd.seq,
                            reply: Reply::Done(res),
                        },
                    );
                }
            }
            env.observe(Observation::Executed {
                slot,
                digest: fnv1a(&payload),
            });
            self.exec_bar += 1;
            if self.exec_bar >= self.snap.idx + self.cfg.snapshot_stride {
                self.take_snapshot(env);
            }
        }
        if self.role == Role::Leader {
            self.check_recovery_done(env);
        }
    }

    pub(crate) fn take_snapshot(&mut self, env: &mut impl Env) {
        self.snap = Snapshot {
            idx: self.exec_bar,
            kv: self.kv.clone(),
        };
        env.observe(Observation::SnapshotTaken { idx: self.exec_bar });
        if let Some(l) = self.lead.as_mut() {
            l.snap_idx[self.id] = self.exec_bar;
        }
        self.compact();
    }

    /// Drops log entries every replica has covered with a snapshot.
    pub(crate) fn compact(&mut self) {
        let bar = self.snap.idx.min(self.snap_bar);
        while let Some((&s, _)) = self.log.first_key_value() {
            if s >= bar {
                break;
            }
            self.log.pop_first();
        }
    }

    // ---- client requests ----

    fn on_client_request(&mut self, from: NodeId, cmd: Command, env: &mut impl Env) {
        if self.role != Role::Leader {
            env.send(
                from,
                Message::ClientReply {
                    seq: cmd.seq,
                    reply: Reply::Redirect(self.leader_hint.filter(|&l| l != self.id)),
                },
            );
            return;
        }
        let now = env.now();
        if cmd.kind == CmdKind::Get && self.lease_valid(now) && self.recovered() {
            let read = self.kv.read(&cmd.key);
            env.send(
                from,
                Message::ClientReply {
                    seq: cmd.seq,
                    reply: Reply::Done(super::CmdResult::Get(read)),
                },
            );
            return;
        }
        self.enqueue(cmd, env);
    }
}
