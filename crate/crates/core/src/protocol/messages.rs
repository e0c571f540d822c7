//! Replica and client messages with their binary encoding.
//!
//! The simulator charges `wire_size()` bytes per message, which always
//! equals the length of `encode()`.

use std::sync::Arc;

use bytes::Bytes;

use super::command::{CmdKind, CmdResult, Command, ReadValue};
use super::wire::{DecodeError, Reader, Writer};
use super::{Ballot, Slot};
use crate::assignment::{AssignmentPolicy, ServerId, ShardSet};
use crate::erasure::CodingScheme;
use crate::simnet::Wire;

/// Shards tagged with their codeword index.
pub type ShardList = Vec<(usize, Bytes)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accept {
    pub slot: Slot,
    pub ballot: Ballot,
    /// Ballot under which this value was first proposed.
    pub origin: Ballot,
    pub scheme: CodingScheme,
    pub payload_len: usize,
    pub policy: Arc<AssignmentPolicy>,
    pub shards: ShardList,
}

/// One slot in a Prepare reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareEntry {
    pub slot: Slot,
    pub ballot: Ballot,
    pub origin: Ballot,
    pub scheme: CodingScheme,
    pub payload_len: usize,
    pub committed: bool,
    pub shards: ShardList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconEntry {
    pub slot: Slot,
    pub origin: Ballot,
    pub shards: ShardList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Done(CmdResult),
    /// Not the leader; the hint names the believed leader, if any.
    Redirect(Option<ServerId>),
    /// A follower's local read: value and version as of now.
    Local(Option<ReadValue>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Prepare {
        ballot: Ballot,
        from_slot: Slot,
    },
    PrepareReply {
        /// The promised ballot; on rejection, the higher one seen.
        ballot: Ballot,
        ok: bool,
        commit_bar: Slot,
        entries: Vec<PrepareEntry>,
    },
    Accept(Box<Accept>),
    AcceptReply {
        slot: Slot,
        ballot: Ballot,
        ok: bool,
        shards: ShardSet,
    },
    Heartbeat {
        ballot: Ballot,
        commit_bar: Slot,
        /// Lowest snapshot index any replica reported.
        snap_bar: Slot,
        /// Send time, echoed back.
        stamp: u64,
    },
    HeartbeatReply {
        ballot: Ballot,
        ok: bool,
        commit_bar: Slot,
        exec_bar: Slot,
        snap_idx: Slot,
        stamp: u64,
    },
    Reconstruct {
        ballot: Ballot,
        entries: Vec<(Slot, Ballot, ShardSet)>,
    },
    ReconstructReply {
        entries: Vec<ReconEntry>,
    },
    ClientRequest {
        cmd: Command,
    },
    FollowerRead {
        client: u64,
        seq: u64,
        key: String,
    },
    ClientReply {
        seq: u64,
        reply: Reply,
    },
}

fn shards_len(s: &ShardList) -> usize {
    4 + s.iter().map(|(_, b)| 2 + 4 + b.len()).sum::<usize>()
}

fn shards_payload(s: &ShardList) -> usize {
    s.iter().map(|(_, b)| b.len()).sum()
}

fn put_shards(w: &mut Writer, s: &ShardList) {
    w.u32(s.len() as u32);
    for (i, b) in s {
        w.u16(*i as u16);
        w.bytes32(b);
    }
}

fn get_shards(r: &mut Reader<'_>) -> Result<ShardList, DecodeError> {
    let k = r.u32()? as usize;
    let mut out = Vec::with_capacity(k.min(256));
    for _ in 0..k {
        let i = r.u16()? as usize;
        out.push((i, r.bytes32()?));
    }
    Ok(out)
}

const SCHEME_LEN: usize = 4;

fn put_scheme(w: &mut Writer, s: CodingScheme) {
    w.u16(s.n_shards() as u16);
    w.u16(s.data_shards() as u16);
}

fn get_scheme(r: &mut Reader<'_>) -> Result<CodingScheme, DecodeError> {
    let n = r.u16()? as usize;
    let d = r.u16()? as usize;
    CodingScheme::new(n, d).map_err(|_| DecodeError::Invalid("coding scheme"))
}

fn read_value_len(v: &Option<ReadValue>) -> usize {
    1 + v.as_ref().map_or(0, |r| 8 + 8 + 4 + r.value.len())
}

fn put_read_value(w: &mut Writer, v: &Option<ReadValue>) {
    match v {
        None => w.u8(0),
        Some(r) => {
            w.u8(1);
            w.u64(r.writer);
            w.u64(r.version);
            w.bytes32(&r.value);
        }
    }
}

fn get_read_value(r: &mut Reader<'_>) -> Result<Option<ReadValue>, DecodeError> {
    Ok(match r.u8()? {
        0 => None,
        1 => Some(ReadValue {
            writer: r.u64()?,
            version: r.u64()?,
            value: r.bytes32()?,
        }),
        t => return Err(DecodeError::BadTag(t)),
    })
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::Prepare { .. } => 0,
            Message::PrepareReply { .. } => 1,
            Message::Accept(_) => 2,
            Message::AcceptReply { .. } => 3,
            Message::Heartbeat { .. } => 4,
            Message::HeartbeatReply { .. } => 5,
            Message::Reconstruct { .. } => 6,
            Message::ReconstructReply { .. } => 7,
            Message::ClientRequest { .. } => 8,
            Message::FollowerRead { .. } => 9,
            Message::ClientReply { .. } => 10,
        }
    }

    /// Whether this is replica-to-replica gossip traffic.
    pub fn is_gossip(&self) -> bool {
        matches!(self, Message::Reconstruct { .. } | Message::ReconstructReply { .. })
    }

    fn body_len(&self) -> usize {
        match self {
            Message::Prepare { .. } => 16,
            Message::PrepareReply { entries, .. } => {
                8 + 1 + 8 + 4
                    + entries
                        .iter()
                        .map(|e| 8 + 8 + 8 + SCHEME_LEN + 4 + 1 + shards_len(&e.shards))
                        .sum::<usize>()
            }
            Message::Accept(a) => {
                8 + 8 + 8 + SCHEME_LEN + 4 + 2 + 4 + a.policy.n_servers() * a.policy.scheme().n_shards().div_ceil(8) + shards_len(&a.shards)
            }
            Message::AcceptReply { .. } => 8 + 8 + 1 + 8,
            Message::Heartbeat { .. } => 32,
            Message::HeartbeatReply { .. } => 8 + 1 + 8 + 8 + 8 + 8,
            Message::Reconstruct { entries, .. } => 8 + 4 + entries.len() * 24,
            Message::ReconstructReply { entries } => {
                4 + entries.iter().map(|e| 16 + shards_len(&e.shards)).sum::<usize>()
            }
            Message::ClientRequest { cmd } => cmd.encoded_len(),
            Message::FollowerRead { key, .. } => 16 + 2 + key.len(),
            Message::ClientReply { reply, .. } => {
                8 + 1
                    + match reply {
                        Reply::Done(CmdResult::Put) => 1,
                        Reply::Done(CmdResult::Get(v)) | Reply::Local(v) => 1 + read_value_len(v),
                        Reply::Redirect(_) => 8,
                    }
            }
        }
    }

    pub fn encode(&self) -> Bytes {
        let mut w = Writer::with_capacity(self.wire_size());
        w.u8(self.tag());
        match self {
            Message::Prepare { ballot, from_slot } => {
                w.u64(*ballot);
                w.u64(*from_slot);
            }
            Message::PrepareReply {
                ballot,
                ok,
                commit_bar,
                entries,
            } => {
                w.u64(*ballot);
                w.bool(*ok);
                w.u64(*commit_bar);
                w.u32(entries.len() as u32);
                for e in entries {
                    w.u64(e.slot);
                    w.u64(e.ballot);
                    w.u64(e.origin);
                    put_scheme(&mut w, e.scheme);
                    w.u32(e.payload_len as u32);
                    w.bool(e.committed);
                    put_shards(&mut w, &e.shards);
                }
            }
            Message::Accept(a) => {
                w.u64(a.slot);
                w.u64(a.ballot);
                w.u64(a.origin);
                put_scheme(&mut w, a.scheme);
                w.u32(a.payload_len as u32);
                w.u16(a.policy.n_servers() as u16);
                w.bytes32(&a.policy.encode_bitmap());
                put_shards(&mut w, &a.shards);
            }
            Message::AcceptReply {
                slot,
                ballot,
                ok,
                shards,
            } => {
                w.u64(*slot);
                w.u64(*ballot);
                w.bool(*ok);
                w.u64(shards.bits());
            }
            Message::Heartbeat {
                ballot,
                commit_bar,
                snap_bar,
                stamp,
            } => {
                w.u64(*ballot);
                w.u64(*commit_bar);
                w.u64(*snap_bar);
                w.u64(*stamp);
            }
            Message::HeartbeatReply {
                ballot,
                ok,
                commit_bar,
                exec_bar,
                snap_idx,
                stamp,
            } => {
                w.u64(*ballot);
                w.bool(*ok);
                w.u64(*commit_bar);
                w.u64(*exec_bar);
                w.u64(*snap_idx);
                w.u64(*stamp);
            }
            Message::Reconstruct { ballot, entries } => {
                w.u64(*ballot);
                w.u32(entries.len() as u32);
                for (slot, origin, want) in entries {
                    w.u64(*slot);
                    w.u64(*origin);
                    w.u64(want.bits());
                }
            }
            Message::ReconstructReply { entries } => {
                w.u32(entries.len() as u32);
                for e in entries {
                    w.u64(e.slot);
                    w.u64(e.origin);
                    put_shards(&mut w, &e.shards);
                }
            }
            Message::ClientRequest { cmd } => cmd.encode_into(&mut w),
            Message::FollowerRead { client, seq, key } => {
                w.u64(*client);
                w.u64(*seq);
                w.str16(key);
            }
            Message::ClientReply { seq, reply } => {
                w.u64(*seq);
                match reply {
                    Reply::Done(CmdResult::Put) => {
                        w.u8(0);
                        w.u8(0);
                    }
                    Reply::Done(CmdResult::Get(v)) => {
                        w.u8(1);
                        w.u8(0);
                        put_read_value(&mut w, v);
                    }
                    Reply::Local(v) => {
                        w.u8(2);
                        w.u8(0);
                        put_read_value(&mut w, v);
                    }
                    Reply::Redirect(h) => {
                        w.u8(3);
                        w.u64(h.map_or(u64::MAX, |s| s as u64));
                    }
                }
            }
        }
        let out = w.finish();
        debug_assert_eq!(out.len(), self.wire_size(), "{self:?}");
        out
    }

    pub fn decode(src: &Bytes) -> Result<Message, DecodeError> {
        let mut r = Reader::new(src);
        let msg = match r.u8()? {
            0 => Message::Prepare {
                ballot: r.u64()?,
                from_slot: r.u64()?,
            },
            1 => {
                let ballot = r.u64()?;
                let ok = r.bool()?;
                let commit_bar = r.u64()?;
                let k = r.u32()? as usize;
                let mut entries = Vec::with_capacity(k.min(4096));
                for _ in 0..k {
                    entries.push(PrepareEntry {
                        slot: r.u64()?,
                        ballot: r.u64()?,
                        origin: r.u64()?,
                        scheme: get_scheme(&mut r)?,
                        payload_len: r.u32()? as usize,
                        committed: r.bool()?,
                        shards: get_shards(&mut r)?,
                    });
                }
                Message::PrepareReply {
                    ballot,
                    ok,
                    commit_bar,
                    entries,
                }
            }
            2 => {
                let slot = r.u64()?;
                let ballot = r.u64()?;
                let origin = r.u64()?;
                let scheme = get_scheme(&mut r)?;
                let payload_len = r.u32()? as usize;
                let n_servers = r.u16()? as usize;
                let bitmap = r.bytes32()?;
                let policy = AssignmentPolicy::decode_bitmap(&bitmap, n_servers, scheme)
                    .map_err(|_| DecodeError::Invalid("assignment bitmap"))?;
                Message::Accept(Box::new(Accept {
                    slot,
                    ballot,
                    origin,
                    scheme,
                    payload_len,
                    policy: Arc::new(policy),
                    shards: get_shards(&mut r)?,
                }))
            }
            3 => Message::AcceptReply {
                slot: r.u64()?,
                ballot: r.u64()?,
                ok: r.bool()?,
                shards: ShardSet::from_bits(r.u64()?),
            },
            4 => Message::Heartbeat {
                ballot: r.u64()?,
                commit_bar: r.u64()?,
                snap_bar: r.u64()?,
                stamp: r.u64()?,
            },
            5 => Message::HeartbeatReply {
                ballot: r.u64()?,
                ok: r.bool()?,
                commit_bar: r.u64()?,
                exec_bar: r.u64()?,
                snap_idx: r.u64()?,
                stamp: r.u64()?,
            },
            6 => {
                let ballot = r.u64()?;
                let k = r.u32()? as usize;
                let mut entries = Vec::with_capacity(k.min(4096));
                for _ in 0..k {
                    entries.push((r.u64()?, r.u64()?, ShardSet::from_bits(r.u64()?)));
                }
                Message::Reconstruct { ballot, entries }
            }
            7 => {
                let k = r.u32()? as usize;
                let mut entries = Vec::with_capacity(k.min(4096));
                for _ in 0..k {
                    entries.push(ReconEntry {
                        slot: r.u64()?,
                        origin: r.u64()?,
                        shards: get_shards(&mut r)?,
                    });
                }
                Message::ReconstructReply { entries }
            }
            8 => Message::ClientRequest {
                cmd: Command::decode_from(&mut r)?,
            },
            9 => Message::FollowerRead {
                client: r.u64()?,
                seq: r.u64()?,
                key: r.str16()?,
            },
            10 => {
                let seq = r.u64()?;
                let reply = match r.u8()? {
                    0 => {
                        r.u8()?;
                        Reply::Done(CmdResult::Put)
                    }
                    1 => {
                        r.u8()?;
                        Reply::Done(CmdResult::Get(get_read_value(&mut r)?))
                    }
                    2 => {
                        r.u8()?;
                        Reply::Local(get_read_value(&mut r)?)
                    }
                    3 => {
                        let h = r.u64()?;
                        Reply::Redirect((h != u64::MAX).then_some(h as usize))
                    }
                    t => return Err(DecodeError::BadTag(t)),
                };
                Message::ClientReply { seq, reply }
            }
            t => return Err(DecodeError::BadTag(t)),
        };
        r.expect_end()?;
        Ok(msg)
    }
}

impl Wire for Message {
    fn wire_size(&self) -> usize {
        1 + self.body_len()
    }

    fn payload_bytes(&self) -> usize {
        match self {
            Message::Accept(a) => shards_payload(&a.shards),
            Message::PrepareReply { entries, .. } => entries.iter().map(|e| shards_payload(&e.shards)).sum(),
            Message::ReconstructReply { entries } => entries.iter().map(|e| shards_payload(&e.shards)).sum(),
            Message::ClientRequest { cmd } if cmd.kind == CmdKind::Put => cmd.value.len(),
            _ => 0,
        }
    }
}
