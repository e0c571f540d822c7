//! Systematic Reed-Solomon erasure coding over GF(2^8).
//!
//! A payload is zero-padded to a multiple of `d`, striped into `d` data
//! shards, and extended with `p` parity shards computed from a Cauchy
//! matrix. The generator is `[I; C]`; every square submatrix of a Cauchy
//! matrix is nonsingular, so any `d` rows of the generator are invertible
//! and any `d` shards reconstruct the payload.

use std::collections::BTreeMap;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum codeword width supported by the field.
pub const MAX_SHARDS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ErasureError {
    #[error("invalid coding scheme: {0}")]
    InvalidScheme(String),
    #[error("insufficient shards: have {have}, need {need}")]
    InsufficientShards { have: usize, need: usize },
    #[error("shard {index} out of range for {n_shards}-shard codeword")]
    IndexOutOfRange { index: usize, n_shards: usize },
    #[error("shard {index} has length {got}, expected {expected}")]
    ShardLength {
        index: usize,
        got: usize,
        expected: usize,
    },
}

// ---- GF(2^8) arithmetic, primitive polynomial x^8 + x^4 + x^3 + x^2 + 1 ----

const POLY: u16 = 0x11d;

const fn build_exp_log() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const EXP_LOG: ([u8; 512], [u8; 256]) = build_exp_log();
static EXP: [u8; 512] = EXP_LOG.0;
static LOG: [u8; 256] = EXP_LOG.1;

const fn build_mul_table() -> [[u8; 256]; 256] {
    let (exp, log) = build_exp_log();
    let mut table = [[0u8; 256]; 256];
    let mut a = 1;
    while a < 256 {
        let mut b = 1;
        while b < 256 {
            table[a][b] = exp[log[a] as usize + log[b] as usize];
            b += 1;
        }
        a += 1;
    }
    table
}

static MUL: [[u8; 256]; 256] = build_mul_table();

#[inline]
fn gf_mul(a: u8, b: u8) -> u8 {
    MUL[a as usize][b as usize]
}

#[inline]
fn gf_inv(a: u8) -> u8 {
    debug_assert!(a != 0, "zero has no inverse");
    EXP[255 - LOG[a as usize] as usize]
}

/// `dst ^= coef * src`, byte-wise.
fn mul_add_into(dst: &mut [u8], src: &[u8], coef: u8) {
    match coef {
        0 => {}
        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s),
        _ => {
            let row = &MUL[coef as usize];
            dst.iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d ^= row[*s as usize]);
        }
    }
}

/// An `(n_shards, d)` coding scheme with `p = n_shards - d` parity shards.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct CodingScheme {
    n_shards: usize,
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemeRepr {
    n_shards: usize,
    d: usize,
}

impl TryFrom<SchemeRepr> for CodingScheme {
    type Error = ErasureError;
    fn try_from(r: SchemeRepr) -> Result<Self, Self::Error> {
        CodingScheme::new(r.n_shards, r.d)
    }
}

impl From<CodingScheme> for SchemeRepr {
    fn from(s: CodingScheme) -> Self {
        SchemeRepr {
            n_shards: s.n_shards,
            d: s.d,
        }
    }
}

impl CodingScheme {
    pub fn new(n_shards: usize, d: usize) -> Result<Self, ErasureError> {
        if d == 0 {
            return Err(ErasureError::InvalidScheme(
                "data shard count must be at least 1".into(),
            ));
        }
        if n_shards < d {
            return Err(ErasureError::InvalidScheme(format!(
                "total shards {n_shards} smaller than data shards {d}"
            )));
        }
        if n_shards > MAX_SHARDS {
            return Err(ErasureError::InvalidScheme(format!(
                "total shards {n_shards} exceeds field limit {MAX_SHARDS}"
            )));
        }
        Ok(CodingScheme { n_shards, d })
    }

    /// The `(n, m)` scheme used for an `n`-server cluster, `m = ceil(n/2)`.
    pub fn for_cluster(n: usize) -> Result<Self, ErasureError> {
        CodingScheme::new(n, n.div_ceil(2))
    }

    pub fn n_shards(&self) -> usize {
        self.n_shards
    }

    pub fn data_shards(&self) -> usize {
        self.d
    }

    pub fn parity_shards(&self) -> usize {
        self.n_shards - self.d
    }

    /// Length of every shard for a payload of `payload_len` bytes.
    pub fn shard_len(&self, payload_len: usize) -> usize {
        payload_len.div_ceil(self.d)
    }

    /// Generator coefficient for parity row `i` and data column `j`.
    fn parity_coef(&self, i: usize, j: usize) -> u8 {
        let x = (self.d + i) as u8;
        let y = j as u8;
        gf_inv(x ^ y)
    }

    /// Row `row` of the generator matrix `[I; C]`.
    fn generator_row(&self, row: usize) -> Vec<u8> {
        if row < self.d {
            let mut r = vec![0u8; self.d];
            r[row] = 1;
            r
        } else {
            (0..self.d)
                .map(|j| self.parity_coef(row - self.d, j))
                .collect()
        }
    }
}

/// All shards of one payload's codeword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codeword {
    pub scheme: CodingScheme,
    pub shards: Vec<Bytes>,
    pub payload_len: usize,
}

impl Codeword {
    pub fn shard(&self, index: usize) -> &Bytes {
        &self.shards[index]
    }

    /// Keeps only the shards whose indices appear in `indices`.
    pub fn restrict<I: IntoIterator<Item = usize>>(&self, indices: I) -> BTreeMap<usize, Bytes> {
        indices
            .into_iter()
            .filter(|&i| i < self.shards.len())
            .map(|i| (i, self.shards[i].clone()))
            .collect()
    }
}

/// Encodes `payload` into a full codeword under `scheme`.
pub fn encode(payload: &[u8], scheme: CodingScheme) -> Codeword {
    let d = scheme.data_shards();
    let len = scheme.shard_len(payload.len());
    let mut shards: Vec<Vec<u8>> = (0..d)
        .map(|j| {
            let start = (j * len).min(payload.len());
            let end = ((j + 1) * len).min(payload.len());
            let mut s = payload[start..end].to_vec();
            s.resize(len, 0);
            s
        })
        .collect();
    for i in 0..scheme.parity_shards() {
        let mut parity = vec![0u8; len];
        for (j, data) in shards.iter().enumerate().take(d) {
            mul_add_into(&mut parity, data, scheme.parity_coef(i, j));
        }
        shards.push(parity);
    }
    Codeword {
        scheme,
        shards: shards.into_iter().map(Bytes::from).collect(),
        payload_len: payload.len(),
    }
}

/// Inverts a square matrix over GF(2^8) by Gauss-Jordan elimination.
fn invert(mut m: Vec<Vec<u8>>) -> Option<Vec<Vec<u8>>> {
    let k = m.len();
    let mut inv: Vec<Vec<u8>> = (0..k)
        .map(|i| {
            let mut r = vec![0u8; k];
            r[i] = 1;
            r
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k).find(|&r| m[r][col] != 0)?;
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = gf_inv(m[col][col]);
        for v in m[col].iter_mut() {
            *v = gf_mul(*v, scale);
        }
        for v in inv[col].iter_mut() {
            *v = gf_mul(*v, scale);
        }
        for r in 0..k {
            if r != col && m[r][col] != 0 {
                let factor = m[r][col];
                for c in 0..k {
                    let (a, b) = (m[col][c], inv[col][c]);
                    m[r][c] ^= gf_mul(factor, a);
                    inv[r][c] ^= gf_mul(factor, b);
                }
            }
        }
    }
    Some(inv)
}

/// Recovers the original payload from any `d` or more shards.
pub fn reconstruct<B: AsRef<[u8]>>(
    present: &BTreeMap<usize, B>,
    scheme: CodingScheme,
    payload_len: usize,
) -> Result<Vec<u8>, ErasureError> {
    let d = scheme.data_shards();
    let len = scheme.shard_len(payload_len);
    for (&index, shard) in present {
        if index >= scheme.n_shards() {
            return Err(ErasureError::IndexOutOfRange {
                index,
                n_shards: scheme.n_shards(),
            });
        }
        if shard.as_ref().len() != len {
            return Err(ErasureError::ShardLength {
                index,
                got: shard.as_ref().len(),
                expected: len,
            });
        }
    }
    if present.len() < d {
        return Err(ErasureError::InsufficientShards {
            have: present.len(),
            need: d,
        });
    }

    // BTreeMap order puts data shards first, so identity rows are preferred.
    let chosen: Vec<(usize, &[u8])> = present
        .iter()
        .take(d)
        .map(|(&i, s)| (i, s.as_ref()))
        .collect();

    let mut data: Vec<Option<Vec<u8>>> = vec![None; d];
    for &(i, s) in &chosen {
        if i < d {
            data[i] = Some(s.to_vec());
        }
    }
    if data.iter().any(Option::is_none) {
        let matrix: Vec<Vec<u8>> = chosen.iter().map(|&(i, _)| scheme.generator_row(i)).collect();
        let inv = invert(matrix).ok_or_else(|| {
            ErasureError::InvalidScheme("singular generator submatrix".into())
        })?;
        for (j, slot) in data.iter_mut().enumerate() {
            if slot.is_none() {
                let mut out = vec![0u8; len];
                for (k, &(_, s)) in chosen.iter().enumerate() {
                    mul_add_into(&mut out, s, inv[j][k]);
                }
                *slot = Some(out);
            }
        }
    }

    let mut payload = Vec::with_capacity(d * len);
    for shard in data.into_iter().flatten() {
        payload.extend_from_slice(&shard);
    }
    payload.truncate(payload_len);
    Ok(payload)
}
