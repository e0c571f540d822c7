//! Candidate and leader roles: elections, recovery, proposals, commit
//! decisions, heartbeats, retransmission and leases.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;

use super::command::{encode_batch, Command};
use super::messages::{Accept, Message, PrepareEntry, ShardList};
use super::replica::{Instance, Replica, Role};
use super::{Ballot, Env, Mode, Observation, ReplicaConfig, Slot, Timer};
use crate::assignment::{AssignmentPolicy, ClusterParams, Config, ServerId, ShardSet};
use crate::erasure::{self, Codeword, CodingScheme};
use crate::quorum::{check_commit_general, check_commit_rr, AcceptancePattern};
use crate::simnet::{to_ms, Micros, NodeId};
use crate::tuner::{choose_config, Chooser, PerfMonitor, WINDOW_US};

pub(crate) struct Candidate {
    pub ballot: Ballot,
    pub from_slot: Slot,
    pub replies: BTreeMap<ServerId, Vec<PrepareEntry>>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FollowerView {
    pub last_reply: Option<Micros>,
    /// Send stamp of the newest acknowledged heartbeat.
    pub ack_stamp: Option<Micros>,
    pub commit_bar: Slot,
    /// Commit bar at which the follower has sat since the given time.
    pub lag: Option<(Slot, Micros)>,
}

pub(crate) struct Proposal {
    pub config: Option<Config>,
    /// Judged by the general coverage rule instead of the `q` count.
    pub general: bool,
    pub proposed_at: Micros,
    pub last_push: Micros,
    pub ap: AcceptancePattern,
    pub codeword: Arc<Codeword>,
    pub policy: Arc<AssignmentPolicy>,
    pub origin: Ballot,
}

pub(crate) struct Recovering {
    pub origin: Ballot,
    /// Re-propose once the payload is back.
    pub propose: bool,
}

pub(crate) struct LeaderState {
    pub ballot: Ballot,
    pub elected_at: Micros,
    pub next_slot: Slot,
    pub pending: BTreeMap<Slot, Proposal>,
    pub queue: Vec<Command>,
    pub batch_armed: bool,
    pub monitor: PerfMonitor,
    /// Send time and size of each unanswered Accept, kept past commit so
    /// slow followers still yield samples.
    pub probes: BTreeMap<(Slot, ServerId), (Micros, usize)>,
    pub followers: Vec<FollowerView>,
    pub snap_idx: Vec<Slot>,
    /// Slots below this were decided by earlier leaders.
    pub barrier: Slot,
    pub recovering: BTreeMap<Slot, Recovering>,
    pub recon_sent_at: Micros,
    pub recon_bytes: u64,
    pub recon_slots: usize,
    /// Payload bytes of slots known committed whose value this leader
    /// did not hold.
    pub recon_payload: u64,
    /// Payload bytes of slots not known committed and re-proposed from
    /// Prepare replies.
    pub inflight_payload: u64,
    pub recovery_reported: bool,
}

impl LeaderState {
    pub fn lease_valid(&self, now: Micros, cfg: &ReplicaConfig, params: &ClusterParams) -> bool {
        let mut stamps: Vec<Micros> = self.followers.iter().filter_map(|f| f.ack_stamp).collect();
        let need = params.m - 1;
        if stamps.len() < need {
            return false;
        }
        stamps.sort_unstable_by(|a, b| b.cmp(a));
        let base = stamps[need - 1];
        now + cfg.lease_drift_us < base + cfg.election_min_us
    }

    fn healthy(&self, now: Micros, cfg: &ReplicaConfig, me: ServerId) -> Vec<ServerId> {
        self.followers
            .iter()
            .enumerate()
            .filter(|(p, f)| *p != me && f.last_reply.is_some_and(|t| now.saturating_sub(t) < cfg.election_min_us))
            .map(|(p, _)| p)
            .collect()
    }
}

/// Everything the Prepare replies say about one slot.
#[derive(Default)]
struct Gather {
    committed: Option<Ballot>,
    top: Option<(Ballot, Ballot)>,
    values: BTreeMap<Ballot, (CodingScheme, usize, BTreeMap<usize, Bytes>)>,
}

enum Decision {
    Propose(Ballot, Bytes),
    Recover(Ballot, CodingScheme, usize, BTreeMap<usize, Bytes>, bool),
    Noop,
}

impl Replica {
    // ---- election ----

    pub(crate) fn start_election(&mut self, env: &mut impl Env) {
        if self.role == Role::Leader {
            return;
        }
        let ballot = self.next_ballot();
        self.promised = ballot;
        self.observe_ballot(ballot);
        self.role = Role::Candidate;
        self.leader_hint = None;
        let from_slot = self.commit_bar;
        let mut replies = BTreeMap::new();
        replies.insert(self.id, self.prepare_entries(from_slot));
        self.cand = Some(Candidate {
            ballot,
            from_slot,
            replies,
        });
        for p in self.peers().collect::<Vec<_>>() {
            env.send(p, Message::Prepare { ballot, from_slot });
        }
        self.maybe_become_leader(env);
    }

    pub(crate) fn on_prepare_reply(
        &mut self,
        from: NodeId,
        ballot: Ballot,
        ok: bool,
        _commit_bar: Slot,
        entries: Vec<PrepareEntry>,
        env: &mut impl Env,
    ) {
        self.observe_ballot(ballot);
        let Some(cand) = self.cand.as_mut() else { return };
        if !ok {
            if ballot >= cand.ballot {
                self.step_down(env);
            }
            return;
        }
        if ballot != cand.ballot {
            return;
        }
        cand.replies.insert(from, entries);
        self.maybe_become_leader(env);
    }

    fn maybe_become_leader(&mut self, env: &mut impl Env) {
        if self.role != Role::Candidate || self.cand.as_ref().is_none_or(|c| c.replies.len() < self.prepare_quorum()) {
            return;
        }
        let cand = self.cand.take().unwrap();
        self.become_leader(cand, env);
    }

    fn become_leader(&mut self, cand: Candidate, env: &mut impl Env) {
        let now = env.now();
        let ballot = cand.ballot;
        let n = self.cfg.n;
        self.role = Role::Leader;
        self.leader_hint = Some(self.id);

        let mut slots: BTreeMap<Slot, Gather> = BTreeMap::new();
        let mut recon_bytes = 0u64;
        for (&from, entries) in &cand.replies {
            for e in entries {
                if from != self.id {
                    recon_bytes += e.shards.iter().map(|(_, b)| b.len() as u64).sum::<u64>();
                }
                let g = slots.entry(e.slot).or_default();
                if e.committed {
                    g.committed = Some(e.origin);
                }
                if g.top.is_none_or(|(b, _)| e.ballot > b) {
                    g.top = Some((e.ballot, e.origin));
                }
                let v = g
                    .values
                    .entry(e.origin)
                    .or_insert_with(|| (e.scheme, e.payload_len, BTreeMap::new()));
                if v.0 == e.scheme && v.1 == e.payload_len {
                    let len = e.scheme.shard_len(e.payload_len);
                    for (i, b) in &e.shards {
                        if *i < e.scheme.n_shards() && b.len() == len {
                            v.2.entry(*i).or_insert_with(|| b.clone());
                        }
                    }
                }
            }
        }
        let max_slot = slots.keys().next_back().copied();
        let barrier = max_slot.map_or(cand.from_slot, |s| s + 1).max(cand.from_slot);

        let mut decisions = Vec::new();
        for slot in cand.from_slot..barrier {
            let decision = match slots.remove(&slot) {
                None => Decision::Noop,
                Some(mut g) => {
                    let origin = g.committed.or(g.top.map(|t| t.1));
                    match origin.and_then(|o| g.values.remove(&o).map(|v| (o, v))) {
                        None => Decision::Noop,
                        Some((o, (scheme, len, shards))) => {
                            if shards.len() >= scheme.data_shards() {
                                match erasure::reconstruct(&shards, scheme, len) {
                                    Ok(p) => Decision::Propose(o, Bytes::from(p)),
                                    Err(_) => Decision::Noop,
                                }
                            } else if g.committed.is_some() {
                                Decision::Recover(o, scheme, len, shards, true)
                            } else {
                                // Fewer than d shards: this value cannot have been chosen.
                                Decision::Noop
                            }
                        }
                    }
                }
            };
            decisions.push((slot, decision));
        }
        let (mut recon_payload, mut inflight_payload) = (0u64, 0u64);
        for (slot, d) in &decisions {
            let (origin, len) = match d {
                Decision::Propose(o, p) => (*o, p.len() as u64),
                Decision::Recover(o, _, len, _, _) => (*o, *len as u64),
                Decision::Noop => continue,
            };
            match self.log.get(slot) {
                Some(i) if i.payload.is_some() && i.origin == origin => {}
                Some(i) if i.committed => recon_payload += len,
                _ => inflight_payload += len,
            }
        }
        self.lead = Some(Box::new(LeaderState {
            ballot,
            elected_at: now,
            next_slot: barrier,
            pending: BTreeMap::new(),
            queue: Vec::new(),
            batch_armed: false,
            monitor: PerfMonitor::new(),
            probes: BTreeMap::new(),
            followers: vec![FollowerView::default(); n],
            snap_idx: {
                let mut v = vec![0; n];
                v[self.id] = self.snap.idx;
                v
            },
            barrier,
            recovering: BTreeMap::new(),
            recon_sent_at: now,
            recon_bytes,
            recon_slots: 0,
            recon_payload: 0,
            inflight_payload: 0,
            recovery_reported: false,
        }));
        env.observe(Observation::LeaderElected { ballot });

        // Own committed slots whose payload is still partial.
        let own_partial: Vec<(Slot, Ballot)> = self
            .log
            .range(self.exec_bar..cand.from_slot)
            .filter(|(_, i)| i.committed && i.payload.is_none())
            .map(|(&s, i)| (s, i.origin))
            .collect();
        for (slot, origin) in own_partial {
            recon_payload += self.log[&slot].payload_len as u64;
            self.lead
                .as_mut()
                .unwrap()
                .recovering
                .insert(slot, Recovering { origin, propose: false });
        }

        for (slot, decision) in decisions {
            match decision {
                Decision::Propose(origin, payload) => self.propose(slot, origin, payload, env),
                Decision::Noop => self.propose(slot, ballot, encode_batch(&[]), env),
                Decision::Recover(origin, scheme, len, shards, propose) => {
                    let policy = self.log.get(&slot).map_or_else(|| self.rr[1].clone(), |i| i.policy.clone());
                    let inst = self
                        .log
                        .entry(slot)
                        .or_insert_with(|| Instance::new(origin, scheme, len, policy.clone()));
                    if inst.origin != origin || inst.scheme != scheme || inst.payload_len != len {
                        *inst = Instance::new(origin, scheme, len, policy);
                    }
                    inst.committed = true;
                    let list: ShardList = shards.into_iter().collect();
                    inst.merge(&list);
                    self.lead
                        .as_mut()
                        .unwrap()
                        .recovering
                        .insert(slot, Recovering { origin, propose });
                }
            }
        }
        let l = self.lead.as_mut().unwrap();
        l.recon_slots = l.recovering.len();
        l.recon_payload = recon_payload;
        l.inflight_payload = inflight_payload;
        self.send_reconstructs(env);
        env.set_timer(0, Timer::Heartbeat(ballot));
        self.advance_commit_bar();
        self.execute(env);
    }

    /// Asks every peer for the shards of slots this leader still lacks.
    fn send_reconstructs(&mut self, env: &mut impl Env) {
        let Some(l) = self.lead.as_mut() else { return };
        if l.recovering.is_empty() {
            return;
        }
        l.recon_sent_at = env.now();
        let ballot = l.ballot;
        let entries: Vec<(Slot, Ballot, ShardSet)> = l
            .recovering
            .iter()
            .filter_map(|(&s, r)| {
                let inst = self.log.get(&s)?;
                let want = ShardSet::first(inst.scheme.n_shards()).difference(inst.held());
                Some((s, r.origin, want))
            })
            .collect();
        for p in self.peers().collect::<Vec<_>>() {
            env.send(
                p,
                Message::Reconstruct {
                    ballot,
                    entries: entries.clone(),
                },
            );
        }
    }

    pub(crate) fn recovered(&self) -> bool {
        self.lead
            .as_ref()
            .is_some_and(|l| l.recovering.is_empty() && self.exec_bar >= l.barrier)
    }

    pub(crate) fn check_recovery_done(&mut self, env: &mut impl Env) {
        let done = self.recovered();
        let Some(l) = self.lead.as_mut() else { return };
        if done && !l.recovery_reported {
            l.recovery_reported = true;
            env.observe(Observation::RecoveryDone {
                ballot: l.ballot,
                elected_at: l.elected_at,
                recon_bytes: l.recon_bytes,
                recon_slots: l.recon_slots,
                recon_payload: l.recon_payload,
                inflight_payload: l.inflight_payload,
            });
        }
    }

    /// Called when a recovering slot's payload became known.
    pub(crate) fn on_slot_recovered(&mut self, slot: Slot, env: &mut impl Env) {
        let Some(l) = self.lead.as_mut() else { return };
        let Some(r) = l.recovering.remove(&slot) else { return };
        if r.propose {
            let payload = self.log[&slot].payload.clone().unwrap();
            self.propose(slot, r.origin, payload, env);
        }
    }

    // ---- proposals ----

    fn healthy_followers(&self, now: Micros) -> Vec<ServerId> {
        self.lead
            .as_ref()
            .map_or_else(Vec::new, |l| l.healthy(now, &self.cfg, self.id))
    }

    /// The assignment for a new instance of `payload_len` bytes.
    fn pick_assignment(&mut self, payload_len: usize, now: Micros) -> (Arc<AssignmentPolicy>, Option<Config>, bool) {
        match self.cfg.mode {
            Mode::MultiPaxos => (self.full.clone(), Some(Config::multipaxos(&self.params)), false),
            Mode::RsPaxos => (self.rr[1].clone(), Some(Config::rspaxos(&self.params)), false),
            Mode::Crossword => {
                if let Some(p) = &self.cfg.unbalanced {
                    return (p.clone(), None, true);
                }
                let cfg = self.choose(payload_len, now);
                (self.rr[cfg.c].clone(), Some(cfg), false)
            }
        }
    }

    fn choose(&mut self, payload_len: usize, now: Micros) -> Config {
        let healthy = self.healthy_followers(now);
        let params = self.params;
        let cap = |cfg: Config| {
            let q = cfg.q.min(1 + healthy.len()).max(params.m);
            Config { q, c: params.n + 1 - q }
        };
        match &self.cfg.chooser {
            Chooser::Regression { tie_margin } => {
                let margin = *tie_margin;
                let l = self.lead.as_mut().unwrap();
                let models = l.monitor.models(healthy.iter().copied(), now);
                choose_config(payload_len, &models, healthy.len(), &params, margin)
            }
            Chooser::Threshold(table) => cap(Chooser::threshold_config(table, payload_len, &params)),
            Chooser::Fixed(c) => cap(*c),
        }
    }

    pub(crate) fn propose(&mut self, slot: Slot, origin: Ballot, payload: Bytes, env: &mut impl Env) {
        let now = env.now();
        let (policy, config, general) = self.pick_assignment(payload.len(), now);
        let scheme = policy.scheme();
        let codeword = Arc::new(erasure::encode(&payload, scheme));
        let ballot = self.lead.as_ref().unwrap().ballot;

        let inst = self
            .log
            .entry(slot)
            .or_insert_with(|| Instance::new(origin, scheme, payload.len(), policy.clone()));
        if inst.origin != origin || inst.scheme != scheme || inst.payload_len != payload.len() {
            *inst = Instance::new(origin, scheme, payload.len(), policy.clone());
        }
        inst.policy = policy.clone();
        inst.payload = Some(payload.clone());

        let mut probes = Vec::new();
        for p in self.peers().collect::<Vec<_>>() {
            let shards: ShardList = policy
                .assigned(p)
                .iter()
                .map(|i| (i, codeword.shards[i].clone()))
                .collect();
            probes.push((p, shards.iter().map(|(_, b)| b.len()).sum::<usize>()));
            env.send(
                p,
                Message::Accept(Box::new(Accept {
                    slot,
                    ballot,
                    origin,
                    scheme,
                    payload_len: payload.len(),
                    policy: policy.clone(),
                    shards,
                })),
            );
        }
        let own: ShardList = policy
            .assigned(self.id)
            .iter()
            .map(|i| (i, codeword.shards[i].clone()))
            .collect();
        let own_bytes = own.iter().map(|(_, b)| b.len()).sum();
        env.persist(
            own_bytes,
            Timer::LeaderPersisted {
                slot,
                ballot,
                origin,
                shards: own,
            },
        );
        let l = self.lead.as_mut().unwrap();
        for (p, bytes) in probes {
            l.probes.insert((slot, p), (now, bytes));
        }
        l.pending.insert(
            slot,
            Proposal {
                config,
                general,
                proposed_at: now,
                last_push: now,
                ap: AcceptancePattern::new(),
                codeword,
                policy,
                origin,
            },
        );
    }

    pub(crate) fn on_leader_persisted(
        &mut self,
        slot: Slot,
        ballot: Ballot,
        origin: Ballot,
        shards: ShardList,
        env: &mut impl Env,
    ) {
        let set = super::shard_set(&shards);
        if let Some(inst) = self.log.get_mut(&slot) {
            if inst.origin == origin {
                inst.merge(&shards);
                inst.durable = inst.durable.union(set);
                inst.ballot = inst.ballot.max(ballot);
            }
        }
        let me = self.id;
        let Some(l) = self.lead.as_mut() else { return };
        if l.ballot != ballot {
            return;
        }
        let Some(p) = l.pending.get_mut(&slot) else { return };
        if p.origin != origin {
            return;
        }
        p.ap.insert(me, set);
        self.check_commit(slot, env);
    }

    pub(crate) fn on_accept_reply(
        &mut self,
        from: NodeId,
        slot: Slot,
        ballot: Ballot,
        ok: bool,
        shards: ShardSet,
        env: &mut impl Env,
    ) {
        let now = env.now();
        if !ok {
            self.observe_ballot(ballot);
            if self.lead.as_ref().is_some_and(|l| ballot > l.ballot) {
                self.step_down(env);
            }
            return;
        }
        let Some(l) = self.lead.as_mut() else { return };
        if l.ballot != ballot || from >= self.cfg.n {
            return;
        }
        l.followers[from].last_reply = Some(now);
        if let Some((t, bytes)) = l.probes.remove(&(slot, from)) {
            l.monitor.record(from, bytes, to_ms(now - t), now);
        }
        let Some(p) = l.pending.get_mut(&slot) else { return };
        p.ap.insert(from, shards);
        self.check_commit(slot, env);
    }

    fn check_commit(&mut self, slot: Slot, env: &mut impl Env) {
        let l = self.lead.as_mut().unwrap();
        let p = &l.pending[&slot];
        let d = p.codeword.scheme.data_shards();
        let ok = if p.general {
            check_commit_general(&p.ap, &self.params, d, self.params.n - self.params.m)
        } else {
            check_commit_rr(p.config.unwrap(), p.ap.nodes(), &self.params)
        };
        if !ok {
            return;
        }
        let p = l.pending.remove(&slot).unwrap();
        let now = env.now();
        let inst = self.log.get_mut(&slot).unwrap();
        inst.committed = true;
        env.observe(Observation::Committed {
            slot,
            ballot: l.ballot,
            config: p.config,
            payload_len: p.codeword.payload_len,
            proposed_at: p.proposed_at,
            latency_us: now - p.proposed_at,
        });
        self.advance_commit_bar();
        self.execute(env);
    }

    // ---- batching ----

    pub(crate) fn enqueue(&mut self, cmd: Command, env: &mut impl Env) {
        let batching = self.cfg.batching_us;
        let l = self.lead.as_mut().unwrap();
        l.queue.push(cmd);
        if !l.batch_armed {
            l.batch_armed = true;
            env.set_timer(batching, Timer::Batch(l.ballot));
        }
    }

    pub(crate) fn on_batch_timer(&mut self, ballot: Ballot, env: &mut impl Env) {
        let Some(l) = self.lead.as_mut() else { return };
        if l.ballot != ballot {
            return;
        }
        l.batch_armed = false;
        if l.queue.is_empty() {
            return;
        }
        let batch = std::mem::take(&mut l.queue);
        let slot = l.next_slot;
        l.next_slot += 1;
        self.propose(slot, ballot, encode_batch(&batch), env);
    }

    // ---- heartbeats and retransmission ----

    pub(crate) fn on_heartbeat_tick(&mut self, ballot: Ballot, env: &mut impl Env) {
        if self.leader_ballot() != Some(ballot) {
            return;
        }
        let now = env.now();
        let snap_bar = self.snap_bar;
        let commit_bar = self.commit_bar;
        for p in self.peers().collect::<Vec<_>>() {
            env.send(
                p,
                Message::Heartbeat {
                    ballot,
                    commit_bar,
                    snap_bar,
                    stamp: now,
                },
            );
        }
        self.retransmit_pending(env);
        let l = self.lead.as_mut().unwrap();
        l.probes.retain(|_, (t, _)| *t + WINDOW_US > now);
        if !l.recovering.is_empty() && now >= l.recon_sent_at + self.cfg.retransmit_us {
            self.send_reconstructs(env);
        }
        env.set_timer(self.cfg.heartbeat_us, Timer::Heartbeat(ballot));
    }

    /// Resends or widens instances that have waited too long.
    fn retransmit_pending(&mut self, env: &mut impl Env) {
        let now = env.now();
        let retx = self.cfg.retransmit_us;
        let stale: Vec<Slot> = self
            .lead
            .as_ref()
            .unwrap()
            .pending
            .iter()
            .filter(|(_, p)| now >= p.last_push + retx)
            .map(|(&s, _)| s)
            .collect();
        if stale.is_empty() {
            return;
        }
        let healthy = self.healthy_followers(now).len();
        let adaptive = self.cfg.mode == Mode::Crossword && self.cfg.unbalanced.is_none();
        let ballot = self.lead.as_ref().unwrap().ballot;
        let me = self.id;
        for slot in stale {
            let (needs_widen, payload_len) = {
                let p = &self.lead.as_ref().unwrap().pending[&slot];
                (
                    adaptive && p.config.is_some_and(|c| c.q > 1 + healthy) && 1 + healthy >= self.params.m,
                    p.codeword.payload_len,
                )
            };
            let widened = if needs_widen {
                let cfg = self.choose(payload_len, now);
                let extra = self.rr[cfg.c].clone();
                let p = self.lead.as_mut().unwrap().pending.get_mut(&slot).unwrap();
                let merged: Vec<ShardSet> = (0..self.cfg.n)
                    .map(|s| p.policy.assigned(s).union(extra.assigned(s)))
                    .collect();
                let policy = Arc::new(
                    AssignmentPolicy::unbalanced(merged, p.policy.scheme(), &self.params)
                        .expect("union of valid policies"),
                );
                p.policy = policy.clone();
                p.config = Some(cfg);
                p.general = true;
                if let Some(inst) = self.log.get_mut(&slot) {
                    inst.policy = policy;
                }
                true
            } else {
                false
            };
            let p = self.lead.as_mut().unwrap().pending.get_mut(&slot).unwrap();
            p.last_push = now;
            let mut sends = Vec::new();
            for peer in (0..self.cfg.n).filter(|&s| s != me) {
                let acked = p.ap.replies().get(&peer).copied();
                let want = match acked {
                    Some(have) if widened => p.policy.assigned(peer).difference(have),
                    Some(_) => continue,
                    None => p.policy.assigned(peer),
                };
                if want.is_empty() && acked.is_some() {
                    continue;
                }
                let shards: ShardList = want.iter().map(|i| (i, p.codeword.shards[i].clone())).collect();
                let bytes = shards.iter().map(|(_, b)| b.len()).sum::<usize>();
                sends.push((
                    peer,
                    bytes,
                    Accept {
                        slot,
                        ballot,
                        origin: p.origin,
                        scheme: p.codeword.scheme,
                        payload_len: p.codeword.payload_len,
                        policy: p.policy.clone(),
                        shards,
                    },
                ));
            }
            for (peer, bytes, a) in sends {
                self.lead.as_mut().unwrap().probes.insert((slot, peer), (now, bytes));
                env.send(peer, Message::Accept(Box::new(a)));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn on_heartbeat_reply(
        &mut self,
        from: NodeId,
        ballot: Ballot,
        ok: bool,
        commit_bar: Slot,
        _exec_bar: Slot,
        snap_idx: Slot,
        stamp: u64,
        env: &mut impl Env,
    ) {
        let now = env.now();
        if !ok {
            self.observe_ballot(ballot);
            if self.lead.as_ref().is_some_and(|l| ballot > l.ballot) {
                self.step_down(env);
            }
            return;
        }
        let my_commit = self.commit_bar;
        let retx = self.cfg.retransmit_us;
        let Some(l) = self.lead.as_mut() else { return };
        if l.ballot != ballot || from >= self.cfg.n {
            return;
        }
        l.monitor.record(from, 0, to_ms(now.saturating_sub(stamp)), now);
        let v = &mut l.followers[from];
        v.last_reply = Some(now);
        v.ack_stamp = Some(v.ack_stamp.map_or(stamp, |s| s.max(stamp)));
        v.commit_bar = commit_bar;
        let mut catch_up = false;
        if commit_bar < my_commit {
            match v.lag {
                Some((bar, since)) if bar == commit_bar => {
                    if now >= since + retx {
                        catch_up = true;
                        v.lag = Some((bar, now));
                    }
                }
                _ => v.lag = Some((commit_bar, now)),
            }
        } else {
            v.lag = None;
        }
        l.snap_idx[from] = snap_idx;
        let global = l.snap_idx.iter().copied().min().unwrap_or(0);
        if global > self.snap_bar {
            self.snap_bar = global;
            self.compact();
        }
        if catch_up {
            self.send_catch_up(from, commit_bar, env);
        }
    }

    /// Resends committed slots at the current ballot so a stuck follower
    /// can accept them and learn the commit.
    fn send_catch_up(&mut self, to: ServerId, from_slot: Slot, env: &mut impl Env) {
        let ballot = self.lead.as_ref().unwrap().ballot;
        let end = self.commit_bar.min(from_slot + self.cfg.catchup_batch as u64);
        let mut out = Vec::new();
        for (&slot, inst) in self.log.range(from_slot..end) {
            if !inst.committed || inst.payload.is_none() {
                continue;
            }
            out.push(Accept {
                slot,
                ballot,
                origin: inst.origin,
                scheme: inst.scheme,
                payload_len: inst.payload_len,
                policy: inst.policy.clone(),
                shards: inst.shards_for(inst.policy.assigned(to)),
            });
        }
        for a in out {
            env.send(to, Message::Accept(Box::new(a)));
        }
    }
}
