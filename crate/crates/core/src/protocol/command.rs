//! Client commands, batches, and the replicated key-value state machine.

use std::collections::BTreeMap;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::wire::{DecodeError, Reader, Writer};

pub type ClientId = u64;

/// Identity of a written value: the `(client, seq)` of the Put that wrote it.
pub type WriteId = u64;

pub fn write_id(client: ClientId, seq: u64) -> WriteId {
    (client << 32) | (seq & 0xffff_ffff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmdKind {
    Get,
    Put,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub kind: CmdKind,
    pub key: String,
    /// Empty for Get.
    pub value: Bytes,
    pub client: ClientId,
    pub seq: u64,
}

impl Command {
    pub fn get(client: ClientId, seq: u64, key: impl Into<String>) -> Self {
        Command {
            kind: CmdKind::Get,
            key: key.into(),
            value: Bytes::new(),
            client,
            seq,
        }
    }

    pub fn put(client: ClientId, seq: u64, key: impl Into<String>, value: Bytes) -> Self {
        Command {
            kind: CmdKind::Put,
            key: key.into(),
            value,
            client,
            seq,
        }
    }

    pub fn write_id(&self) -> WriteId {
        write_id(self.client, self.seq)
    }

    pub(crate) fn encoded_len(&self) -> usize {
        1 + 8 + 8 + 2 + self.key.len() + 4 + self.value.len()
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.u8(match self.kind {
            CmdKind::Get => 0,
            CmdKind::Put => 1,
        });
        w.u64(self.client);
        w.u64(self.seq);
        w.str16(&self.key);
        w.bytes32(&self.value);
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = match r.u8()? {
            0 => CmdKind::Get,
            1 => CmdKind::Put,
            t => return Err(DecodeError::BadTag(t)),
        };
        let client = r.u64()?;
        let seq = r.u64()?;
        let key = r.str16()?;
        let value = r.bytes32()?;
        if kind == CmdKind::Get && !value.is_empty() {
            return Err(DecodeError::Invalid("get with value"));
        }
        Ok(Command {
            kind,
            key,
            value,
            client,
            seq,
        })
    }
}

/// The payload of one log slot. An empty batch is a no-op.
pub type Batch = Vec<Command>;

pub fn encode_batch(batch: &[Command]) -> Bytes {
    let len = 4 + batch.iter().map(Command::encoded_len).sum::<usize>();
    let mut w = Writer::with_capacity(len);
    w.u32(batch.len() as u32);
    for c in batch {
        c.encode_into(&mut w);
    }
    debug_assert_eq!(w.len(), len);
    w.finish()
}

pub fn decode_batch(src: &Bytes) -> Result<Batch, DecodeError> {
    let mut r = Reader::new(src);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        out.push(Command::decode_from(&mut r)?);
    }
    r.expect_end()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadValue {
    pub writer: WriteId,
    pub version: u64,
    pub value: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CmdResult {
    Put,
    Get(Option<ReadValue>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: Bytes,
    version: u64,
    writer: WriteId,
}

/// Key-value map plus the per-client table used to drop duplicate Puts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvStore {
    map: BTreeMap<String, Entry>,
    last_put: BTreeMap<ClientId, u64>,
}

impl KvStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn read(&self, key: &str) -> Option<ReadValue> {
        self.map.get(key).map(|e| ReadValue {
            writer: e.writer,
            version: e.version,
            value: e.value.clone(),
        })
    }

    /// Version counter of `key`; 0 if never written.
    pub fn version(&self, key: &str) -> u64 {
        self.map.get(key).map_or(0, |e| e.version)
    }

    /// Applies `cmd`. Returns the result and whether a Put took effect.
    pub fn apply(&mut self, cmd: &Command) -> (CmdResult, bool) {
        match cmd.kind {
            CmdKind::Get => (CmdResult::Get(self.read(&cmd.key)), false),
            CmdKind::Put => {
                let last = self.last_put.get(&cmd.client).copied();
                if last.is_some_and(|l| cmd.seq <= l) {
                    return (CmdResult::Put, false);
                }
                self.last_put.insert(cmd.client, cmd.seq);
                let e = self.map.entry(cmd.key.clone()).or_insert(Entry {
                    value: Bytes::new(),
                    version: 0,
                    writer: 0,
                });
                e.value = cmd.value.clone();
                e.version += 1;
                e.writer = cmd.write_id();
                (CmdResult::Put, true)
            }
        }
    }

    /// FNV-1a over the ordered contents plus the given bars.
    pub fn state_hash(&self, commit_bar: u64, exec_bar: u64) -> u64 {
        let mut h = Fnv::new();
        for (k, e) in &self.map {
            h.write(&(k.len() as u64).to_le_bytes());
            h.write(k.as_bytes());
            h.write(&(e.value.len() as u64).to_le_bytes());
            h.write(&e.value);
            h.write(&e.version.to_le_bytes());
            h.write(&e.writer.to_le_bytes());
        }
        h.write(&commit_bar.to_le_bytes());
        h.write(&exec_bar.to_le_bytes());
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv::new();
    h.write(bytes);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn duplicate_put_is_dropped() {
        let mut kv = KvStore::new();
        let p = Command::put(7, 1, "k", Bytes::from_static(b"v1"));
        assert!(kv.apply(&p).1);
        assert!(!kv.apply(&p).1);
        assert_eq!(kv.version("k"), 1);
        let g = kv.apply(&Command::get(8, 1, "k")).0;
        match g {
            CmdResult::Get(Some(r)) => assert_eq!(r.writer, write_id(7, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batch_round_trip() {
        let b = vec![
            Command::put(1, 2, "alpha", Bytes::from(vec![9u8; 300])),
            Command::get(3, 4, "beta"),
        ];
        let enc = encode_batch(&b);
        assert_eq!(decode_batch(&enc).unwrap(), b);
        assert_eq!(decode_batch(&encode_batch(&[])).unwrap(), Vec::<Command>::new());
        assert!(decode_batch(&enc.slice(..enc.len() - 1)).is_err());
    }

    #[test]
    fn state_hash_tracks_bars_and_content() {
        let mut kv = KvStore::new();
        let h0 = kv.state_hash(0, 0);
        assert_ne!(h0, kv.state_hash(1, 0));
        kv.apply(&Command::put(1, 1, "k", Bytes::from_static(b"x")));
        assert_ne!(h0, kv.state_hash(0, 0));
    }
}
