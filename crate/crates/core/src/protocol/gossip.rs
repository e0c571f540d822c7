//! Follower gossip: background exchange of missing shards for committed
//! slots, plus the Reconstruct handlers shared with leader recovery.

use std::collections::BTreeMap;

use super::messages::{Message, ReconEntry};
use super::replica::{Replica, Role};
use super::{ballot_owner, Ballot, Env, Slot};
use crate::assignment::{ServerId, ShardSet};
use crate::simnet::NodeId;

#[derive(Debug, Clone)]
pub(crate) struct GossipState {
    pub cycle: u64,
    /// Cycle at which each peer was first asked without answering since.
    pub awaiting: Vec<Option<u64>>,
}

impl GossipState {
    pub fn new(n: usize) -> Self {
        GossipState {
            cycle: 0,
            awaiting: vec![None; n],
        }
    }

    fn is_straggler(&mut self, p: ServerId, straggler: u64, revive: u64) -> bool {
        match self.awaiting[p] {
            Some(c0) if self.cycle >= c0 + revive => {
                self.awaiting[p] = None;
                false
            }
            Some(c0) => self.cycle >= c0 + straggler,
            None => false,
        }
    }
}

impl Replica {
    /// Slots gossip would request this cycle, oldest first.
    pub(crate) fn gossip_candidates(&self) -> Vec<Slot> {
        let now_cap = self.cfg.gossip.max_slots_per_cycle;
        let gap = self.cfg.gossip.deferral_bytes;
        let mut acc = 0usize;
        let mut deferring = true;
        let mut out = Vec::new();
        for (&slot, inst) in self.log.range(self.exec_bar..).rev() {
            if !inst.committed {
                continue;
            }
            if deferring {
                if acc + inst.payload_len <= gap {
                    acc += inst.payload_len;
                    continue;
                }
                deferring = false;
            }
            if inst.payload.is_none() {
                out.push(slot);
            }
        }
        out.reverse();
        out.truncate(now_cap);
        out
    }

    pub(crate) fn gossip_tick(&mut self, env: &mut impl Env) {
        if !self.cfg.gossip.enabled || self.role != Role::Follower {
            return;
        }
        let now = env.now();
        self.gossip.cycle += 1;
        let n = self.cfg.n;
        let (straggler, revive) = (self.cfg.gossip.straggler_cycles, self.cfg.gossip.revive_cycles);
        let skip: Vec<bool> = (0..n)
            .map(|p| p == self.id || Some(p) == self.leader_hint || self.gossip.is_straggler(p, straggler, revive))
            .collect();
        let retry = self.cfg.gossip.retry_us;
        let mut requests: BTreeMap<ServerId, Vec<(Slot, Ballot, ShardSet)>> = BTreeMap::new();
        for slot in self.gossip_candidates() {
            let inst = self.log.get_mut(&slot).unwrap();
            if inst.gossip_at.is_some_and(|t| now < t + retry) {
                continue;
            }
            inst.gossip_at = Some(now);
            let d = inst.scheme.data_shards();
            let mut expected = inst.held();
            let mut plan = Vec::new();
            // Walk s+1, s+2, ... and fall back to skipped peers only if needed.
            for pass in 0..2 {
                for k in 1..n {
                    if expected.len() >= d {
                        break;
                    }
                    let p = (self.id + k) % n;
                    if p == self.id || (pass == 0) == skip[p] {
                        continue;
                    }
                    let want = inst.policy.assigned(p).difference(expected);
                    if !want.is_empty() {
                        expected = expected.union(want);
                        plan.push((p, want));
                    }
                }
            }
            for (p, want) in plan {
                requests.entry(p).or_default().push((slot, inst.origin, want));
            }
        }
        let ballot = self.promised;
        for (p, entries) in requests {
            if self.gossip.awaiting[p].is_none() {
                self.gossip.awaiting[p] = Some(self.gossip.cycle);
            }
            if self.cfg.gossip.batched {
                env.send(p, Message::Reconstruct { ballot, entries });
            } else {
                for e in entries {
                    env.send(
                        p,
                        Message::Reconstruct {
                            ballot,
                            entries: vec![e],
                        },
                    );
                }
            }
        }
    }

    pub(crate) fn on_reconstruct(
        &mut self,
        from: NodeId,
        ballot: Ballot,
        entries: Vec<(Slot, Ballot, ShardSet)>,
        env: &mut impl Env,
    ) {
        let from_leader = ballot == self.promised && ballot_owner(ballot, self.cfg.n) == from;
        let out = entries
            .into_iter()
            .map(|(slot, origin, want)| {
                let shards = match self.log.get(&slot) {
                    Some(inst) if inst.origin == origin && (inst.committed || from_leader) => inst.shards_for(want),
                    _ => Vec::new(),
                };
                ReconEntry { slot, origin, shards }
            })
            .collect();
        env.send(from, Message::ReconstructReply { entries: out });
    }

    pub(crate) fn on_reconstruct_reply(&mut self, from: NodeId, entries: Vec<ReconEntry>, env: &mut impl Env) {
        if from < self.gossip.awaiting.len() {
            self.gossip.awaiting[from] = None;
        }
        let mut recovered = Vec::new();
        let mut bytes = 0u64;
        for e in entries {
            let Some(inst) = self.log.get_mut(&e.slot) else { continue };
            if inst.origin != e.origin || inst.payload.is_some() {
                continue;
            }
            bytes += inst.merge(&e.shards) as u64;
            if inst.try_decode() {
                recovered.push(e.slot);
            }
        }
        if let Some(l) = self.lead.as_mut() {
            if !l.recovering.is_empty() {
                l.recon_bytes += bytes;
            }
        }
        for slot in recovered {
            self.on_slot_recovered(slot, env);
        }
        self.execute(env);
    }
}
