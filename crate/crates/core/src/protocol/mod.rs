//! The replica state machine. MultiPaxos and RSPaxos run on the same
//! engine pinned to fixed configurations.

mod command;
mod gossip;
mod leader;
mod messages;
mod replica;
mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use command::{
    decode_batch, encode_batch, fnv1a, write_id, Batch, ClientId, CmdKind, CmdResult, Command, Fnv, KvStore,
    ReadValue, WriteId,
};
pub use messages::{Accept, Message, PrepareEntry, ReconEntry, Reply, ShardList};
pub use replica::{Instance, Replica, Role, Snapshot, Status};
pub use wire::DecodeError;

use crate::assignment::{AssignmentPolicy, Config, ServerId, ShardSet};
use crate::simnet::{Micros, NodeId};
use crate::tuner::{Chooser, DEFAULT_TIE_MARGIN};

/// Log index.
pub type Slot = u64;
/// Proposal number `counter * n + owner`.
pub type Ballot = u64;

pub fn ballot_owner(ballot: Ballot, n: usize) -> ServerId {
    (ballot % n as u64) as ServerId
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Crossword,
    /// Full copies to every follower, commit on a majority.
    MultiPaxos,
    /// One shard per server, commit on `m + ceil(p/2)`, no gossip.
    RsPaxos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipConfig {
    pub enabled: bool,
    pub cycle_us: Micros,
    /// Newest committed payload bytes left out of each cycle.
    pub deferral_bytes: usize,
    /// Cycles without a reply before a peer is skipped.
    pub straggler_cycles: u64,
    /// Cycles after which a skipped peer is tried again.
    pub revive_cycles: u64,
    /// One Reconstruct per peer per cycle instead of one per slot.
    pub batched: bool,
    /// Minimum spacing between requests for the same slot.
    pub retry_us: Micros,
    /// Slots requested per cycle at most.
    pub max_slots_per_cycle: usize,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            enabled: true,
            cycle_us: 20_000,
            deferral_bytes: 400_000,
            straggler_cycles: 10,
            revive_cycles: 50,
            batched: true,
            retry_us: 200_000,
            max_slots_per_cycle: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaConfig {
    pub n: usize,
    pub mode: Mode,
    /// Used in Crossword mode with balanced round-robin assignment.
    pub chooser: Chooser,
    /// Replaces balanced round-robin in Crossword mode.
    pub unbalanced: Option<Arc<AssignmentPolicy>>,
    pub heartbeat_us: Micros,
    pub election_min_us: Micros,
    pub election_max_us: Micros,
    pub gossip: GossipConfig,
    pub batching_us: Micros,
    /// Executed slots between snapshots.
    pub snapshot_stride: u64,
    pub leases: bool,
    pub lease_drift_us: Micros,
    /// Age after which unanswered Accepts are resent.
    pub retransmit_us: Micros,
    /// Committed slots resent to a lagging follower per round.
    pub catchup_batch: usize,
    /// Emit an observation for every applied Put.
    pub record_applies: bool,
    /// This server campaigns at start.
    pub bootstrap_leader: Option<ServerId>,
    pub seed: u64,
}

impl ReplicaConfig {
    pub fn new(n: usize, mode: Mode) -> Self {
        ReplicaConfig {
            n,
            mode,
            chooser: Chooser::Regression {
                tie_margin: DEFAULT_TIE_MARGIN,
            },
            unbalanced: None,
            heartbeat_us: 20_000,
            election_min_us: 300_000,
            election_max_us: 600_000,
            gossip: GossipConfig {
                enabled: mode != Mode::RsPaxos,
                ..GossipConfig::default()
            },
            batching_us: 1_000,
            snapshot_stride: 1_000,
            leases: true,
            lease_drift_us: 100_000,
            retransmit_us: 500_000,
            catchup_batch: 64,
            record_applies: false,
            bootstrap_leader: Some(0),
            seed: 0,
        }
    }
}

/// Timers a replica sets on itself.
#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    /// Leader tick for the given ballot.
    Heartbeat(Ballot),
    Election,
    Gossip,
    Batch(Ballot),
    /// A follower's write of accepted shards completed.
    AcceptPersisted { from: NodeId, accept: Box<Accept> },
    /// The leader's write of its own slice completed.
    LeaderPersisted {
        slot: Slot,
        ballot: Ballot,
        origin: Ballot,
        shards: ShardList,
    },
}

/// Events a replica reports to the harness.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Observation {
    Committed {
        slot: Slot,
        ballot: Ballot,
        config: Option<Config>,
        payload_len: usize,
        proposed_at: Micros,
        latency_us: Micros,
    },
    Executed {
        slot: Slot,
        digest: u64,
    },
    Applied {
        key: String,
        version: u64,
    },
    LeaderElected {
        ballot: Ballot,
    },
    SteppedDown {
        ballot: Ballot,
    },
    RecoveryDone {
        ballot: Ballot,
        elected_at: Micros,
        recon_bytes: u64,
        recon_slots: usize,
        /// Payload of slots known committed that had to be rebuilt.
        recon_payload: u64,
        /// Payload of slots not known committed, re-proposed from Prepare
        /// replies.
        inflight_payload: u64,
    },
    FollowerRead {
        key: String,
        version: u64,
    },
    SnapshotTaken {
        idx: Slot,
    },
}

/// What a replica needs from its host.
pub trait Env {
    fn now(&self) -> Micros;
    fn send(&mut self, to: NodeId, msg: Message);
    fn set_timer(&mut self, after: Micros, timer: Timer);
    /// Completes with `timer` once `bytes` are durable.
    fn persist(&mut self, bytes: usize, timer: Timer);
    fn observe(&mut self, obs: Observation);
}

pub(crate) fn shard_set(list: &ShardList) -> ShardSet {
    list.iter().map(|(i, _)| *i).collect()
}
