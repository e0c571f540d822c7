//! Shard assignment policies over the RS codeword space.
//!
//! A policy marks, for one instance, which shard columns each server row
//! must receive and persist. Balanced round-robin policies give server `s`
//! the `c` consecutive shards starting at column `s`; unbalanced policies
//! are supplied verbatim.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::erasure::{CodingScheme, ErasureError};

/// Server (replica) identifier, `0..n`.
pub type ServerId = usize;

/// Widest codeword a [`ShardSet`] can address.
pub const MAX_CODEWORD_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignmentError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed bitmap: expected {expected} bytes, got {got}")]
    MalformedBitmap { expected: usize, got: usize },
    #[error(transparent)]
    Scheme(#[from] ErasureError),
}

/// A set of shard indices, stored as a 64-bit mask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShardSet(u64);

impl ShardSet {
    pub const EMPTY: ShardSet = ShardSet(0);

    pub fn from_bits(bits: u64) -> Self {
        ShardSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// `{0, 1, .., k-1}`.
    pub fn first(k: usize) -> Self {
        if k >= 64 {
            ShardSet(u64::MAX)
        } else {
            ShardSet((1u64 << k) - 1)
        }
    }

    pub fn insert(&mut self, index: usize) {
        debug_assert!(index < MAX_CODEWORD_WIDTH);
        self.0 |= 1 << index;
    }

    pub fn remove(&mut self, index: usize) {
        self.0 &= !(1 << index);
    }

    pub fn contains(self, index: usize) -> bool {
        index < MAX_CODEWORD_WIDTH && self.0 & (1 << index) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: ShardSet) -> ShardSet {
        ShardSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ShardSet) -> ShardSet {
        ShardSet(self.0 & other.0)
    }

    pub fn difference(self, other: ShardSet) -> ShardSet {
        ShardSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: ShardSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Highest index plus one, or 0 when empty.
    pub fn span(self) -> usize {
        64 - self.0.leading_zeros() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..64).filter(move |i| bits & (1 << i) != 0)
    }
}

impl FromIterator<usize> for ShardSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut s = ShardSet::EMPTY;
        for i in iter {
            s.insert(i);
        }
        s
    }
}

impl fmt::Debug for ShardSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Cluster-level sizes: `n` servers, majority `m`, tolerance `f = n - m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClusterParams {
    pub n: usize,
    pub m: usize,
    pub f: usize,
    pub scheme: CodingScheme,
}

impl ClusterParams {
    pub fn new(n: usize) -> Result<Self, AssignmentError> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(AssignmentError::InvalidParameter(format!(
                "cluster size must be odd and at least 3, got {n}"
            )));
        }
        if n > MAX_CODEWORD_WIDTH {
            return Err(AssignmentError::InvalidParameter(format!(
                "cluster size {n} exceeds {MAX_CODEWORD_WIDTH}"
            )));
        }
        let m = n.div_ceil(2);
        Ok(ClusterParams {
            n,
            m,
            f: n - m,
            scheme: CodingScheme::for_cluster(n)?,
        })
    }

    /// The RSPaxos quorum size `m + ceil(p/2)`.
    pub fn rspaxos_quorum(&self) -> usize {
        self.m + (self.n - self.m).div_ceil(2)
    }

    /// The RSPaxos fault tolerance `floor(p/2)`.
    pub fn rspaxos_tolerance(&self) -> usize {
        (self.n - self.m) / 2
    }
}

/// A balanced round-robin configuration: `c` shards per server, commit on
/// `q` replies (leader included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Config {
    pub q: usize,
    pub c: usize,
}

impl Config {
    /// Validates the bounds `1 <= c <= m` and `m <= q <= n`.
    pub fn new(q: usize, c: usize, params: &ClusterParams) -> Result<Self, AssignmentError> {
        if c == 0 || c > params.m {
            return Err(AssignmentError::InvalidParameter(format!(
                "shards per server c={c} outside [1, {}]",
                params.m
            )));
        }
        if q < params.m || q > params.n {
            return Err(AssignmentError::InvalidParameter(format!(
                "quorum q={q} outside [{}, {}]",
                params.m, params.n
            )));
        }
        Ok(Config { q, c })
    }

    pub fn multipaxos(params: &ClusterParams) -> Self {
        Config {
            q: params.m,
            c: params.m,
        }
    }

    pub fn rspaxos(params: &ClusterParams) -> Self {
        Config {
            q: params.rspaxos_quorum(),
            c: 1,
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[c={},q={}]", self.c, self.q)
    }
}

/// Per-server shard sets for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentPolicy {
    scheme: CodingScheme,
    per_server: Vec<ShardSet>,
}

impl AssignmentPolicy {
    pub fn scheme(&self) -> CodingScheme {
        self.scheme
    }

    pub fn n_servers(&self) -> usize {
        self.per_server.len()
    }

    pub fn assigned(&self, server: ServerId) -> ShardSet {
        self.per_server.get(server).copied().unwrap_or_default()
    }

    pub fn per_server(&self) -> &[ShardSet] {
        &self.per_server
    }

    /// Every server gets the full payload as a single shard.
    pub fn full_copy(n: usize) -> Self {
        AssignmentPolicy {
            scheme: CodingScheme::new(1, 1).expect("(1,1) is valid"),
            per_server: vec![ShardSet::first(1); n],
        }
    }

    /// Balanced round-robin: server `s` gets `{s, .., s+c-1} mod n`.
    pub fn balanced_rr(params: &ClusterParams, c: usize) -> Result<Self, AssignmentError> {
        if c == 0 || c > params.m {
            return Err(AssignmentError::InvalidParameter(format!(
                "shards per server c={c} outside [1, {}]",
                params.m
            )));
        }
        let per_server = (0..params.n)
            .map(|s| (0..c).map(|k| (s + k) % params.n).collect())
            .collect();
        Ok(AssignmentPolicy {
            scheme: params.scheme,
            per_server,
        })
    }

    /// An arbitrary policy over an explicitly supplied scheme.
    pub fn unbalanced(
        per_server: Vec<ShardSet>,
        scheme: CodingScheme,
        params: &ClusterParams,
    ) -> Result<Self, AssignmentError> {
        if per_server.len() != params.n {
            return Err(AssignmentError::InvalidParameter(format!(
                "policy lists {} servers, cluster has {}",
                per_server.len(),
                params.n
            )));
        }
        if scheme.n_shards() > MAX_CODEWORD_WIDTH {
            return Err(AssignmentError::InvalidParameter(format!(
                "codeword width {} exceeds {MAX_CODEWORD_WIDTH}",
                scheme.n_shards()
            )));
        }
        if let Some((s, set)) = per_server
            .iter()
            .enumerate()
            .find(|(_, set)| set.span() > scheme.n_shards())
        {
            return Err(AssignmentError::InvalidParameter(format!(
                "server {s} assigned shard {} >= {}",
                set.span() - 1,
                scheme.n_shards()
            )));
        }
        Ok(AssignmentPolicy { scheme, per_server })
    }

    /// Number of servers holding shard `index`.
    pub fn column_coverage(&self, index: usize) -> usize {
        self.per_server.iter().filter(|s| s.contains(index)).count()
    }

    fn row_bytes(n_shards: usize) -> usize {
        n_shards.div_ceil(8)
    }

    /// Row-major bitmaps, `ceil(n_shards/8)` bytes per server, MSB first.
    pub fn encode_bitmap(&self) -> Vec<u8> {
        let rb = Self::row_bytes(self.scheme.n_shards());
        let mut out = vec![0u8; rb * self.per_server.len()];
        for (s, set) in self.per_server.iter().enumerate() {
            for j in set.iter() {
                out[s * rb + j / 8] |= 0x80 >> (j % 8);
            }
        }
        out
    }

    pub fn decode_bitmap(
        bytes: &[u8],
        n_servers: usize,
        scheme: CodingScheme,
    ) -> Result<Self, AssignmentError> {
        let rb = Self::row_bytes(scheme.n_shards());
        if bytes.len() != rb * n_servers {
            return Err(AssignmentError::MalformedBitmap {
                expected: rb * n_servers,
                got: bytes.len(),
            });
        }
        let per_server = bytes
            .chunks(rb.max(1))
            .take(n_servers)
            .map(|row| {
                (0..scheme.n_shards())
                    .filter(|&j| row[j / 8] & (0x80 >> (j % 8)) != 0)
                    .collect()
            })
            .collect::<Vec<ShardSet>>();
        // Bits past n_shards in the last byte must be clear.
        let canonical = AssignmentPolicy {
            scheme,
            per_server: per_server.clone(),
        };
        if canonical.encode_bitmap() != bytes {
            return Err(AssignmentError::InvalidParameter(
                "bitmap marks shards beyond codeword width".into(),
            ));
        }
        Ok(AssignmentPolicy { scheme, per_server })
    }
}

/// The 5/5/5/3/1 asymmetric policy under an `(8, 5)` scheme: leader and two
/// fast followers get 5 shards, the next 3, the slowest 1. Runs wrap
/// around the 8 columns.
pub fn asymmetric_example(params: &ClusterParams) -> Result<AssignmentPolicy, AssignmentError> {
    if params.n != 5 {
        return Err(AssignmentError::InvalidParameter(
            "the asymmetric example is defined for n = 5".into(),
        ));
    }
    let scheme = CodingScheme::new(8, 5)?;
    let counts = [5, 5, 5, 3, 1];
    let mut start = 0;
    let per_server = counts
        .iter()
        .map(|&k| {
            let set = (0..k).map(|i| (start + i) % 8).collect();
            start = (start + k) % 8;
            set
        })
        .collect();
    AssignmentPolicy::unbalanced(per_server, scheme, params)
}
