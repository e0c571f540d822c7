//! Linearizability checking for key-value histories.
//!
//! Each key is an independent register, so the history is split per key and
//! each part is searched separately. The search linearizes one pending
//! operation at a time, memoizing `(linearized set, register value)` states.
//! A Put that never got a reply may or may not have taken effect.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use super::client::OpRecord;
use crate::protocol::{CmdKind, WriteId};

pub const DEFAULT_BUDGET: u64 = 2_000_000;
const SHRINK_BUDGET: u64 = 50_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Linearizable { keys: usize, ops: usize },
    /// A minimal set of operations on one key with no valid order.
    Violation { key: String, ops: Vec<OpRecord> },
    /// The search budget ran out on this key.
    Inconclusive { key: String },
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Reads a history written as JSON lines, one [`OpRecord`] per line.
pub fn parse_history(text: &str) -> Result<Vec<OpRecord>, HistoryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| HistoryError::Json { line: i + 1, source }))
        .collect()
}

pub fn history_to_jsonl(h: &[OpRecord]) -> String {
    h.iter()
        .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KeyResult {
    Ok,
    Fail,
    Budget,
}

#[derive(Debug, Clone)]
struct Op {
    put: Option<WriteId>,
    read: Option<WriteId>,
    invoke: u64,
    /// `u64::MAX` if incomplete.
    respond: u64,
}

fn ops_of(records: &[&OpRecord]) -> Vec<Op> {
    let mut ops: Vec<Op> = records
        .iter()
        .filter(|r| r.kind == CmdKind::Put || r.respond_us.is_some())
        .map(|r| Op {
            put: if r.kind == CmdKind::Put { r.value } else { None },
            read: r.result,
            invoke: r.invoke_us,
            respond: r.respond_us.unwrap_or(u64::MAX),
        })
        .collect();
    ops.sort_by_key(|o| (o.invoke, o.respond));
    ops
}

fn is_set(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

fn search(ops: &[Op], budget: u64) -> KeyResult {
    let k = ops.len();
    let required = ops.iter().filter(|o| o.respond != u64::MAX).count();
    let mut seen: HashSet<(Vec<u64>, Option<WriteId>)> = HashSet::new();
    // Each frame: linearized set, value, count of completed ops done, the
    // candidates at this state and the next one to try.
    struct Frame {
        bits: Vec<u64>,
        value: Option<WriteId>,
        done: usize,
        cands: Vec<usize>,
        next: usize,
    }
    let candidates = |bits: &[u64], value: Option<WriteId>| -> Vec<usize> {
        let first = (0..k).find(|&i| !is_set(bits, i));
        let Some(first) = first else { return Vec::new() };
        let min_ret = (first..k)
            .filter(|&i| !is_set(bits, i))
            .map(|i| ops[i].respond)
            .min()
            .unwrap_or(u64::MAX);
        (first..k)
            .take_while(|&i| ops[i].invoke <= min_ret)
            .filter(|&i| !is_set(bits, i))
            .filter(|&i| ops[i].put.is_some() || ops[i].read == value)
            .collect()
    };
    let root = vec![0u64; k.div_ceil(64).max(1)];
    let cands = candidates(&root, None);
    let mut stack = vec![Frame {
        bits: root,
        value: None,
        done: 0,
        cands,
        next: 0,
    }];
    let mut steps = 0u64;
    while let Some(top) = stack.last_mut() {
        if top.done == required {
            return KeyResult::Ok;
        }
        if top.next == top.cands.len() {
            stack.pop();
            continue;
        }
        steps += 1;
        if steps > budget {
            return KeyResult::Budget;
        }
        let i = top.cands[top.next];
        top.next += 1;
        let mut bits = top.bits.clone();
        bits[i / 64] |= 1 << (i % 64);
        let value = ops[i].put.or(top.value);
        let done = top.done + (ops[i].respond != u64::MAX) as usize;
        if !seen.insert((bits.clone(), value)) {
            continue;
        }
        let cands = candidates(&bits, value);
        stack.push(Frame {
            bits,
            value,
            done,
            cands,
            next: 0,
        });
    }
    KeyResult::Fail
}

fn check_records(records: &[&OpRecord], budget: u64) -> KeyResult {
    search(&ops_of(records), budget)
}

/// Every value a remaining Get returned is still written by some Put.
fn closed(records: &[&OpRecord]) -> bool {
    records.iter().all(|g| {
        g.kind != CmdKind::Get
            || g.result.is_none()
            || records.iter().any(|p| p.kind == CmdKind::Put && p.value == g.result)
    })
}

/// Delta debugging: removes chunks, then single operations, while the rest
/// still fails.
fn shrink(mut records: Vec<&OpRecord>, budget: u64) -> Vec<&OpRecord> {
    let mut chunk = records.len().div_ceil(2).max(1);
    loop {
        let mut removed = false;
        let mut start = 0;
        while start < records.len() {
            let end = (start + chunk).min(records.len());
            let trial: Vec<&OpRecord> = records[..start].iter().chain(&records[end..]).copied().collect();
            if !trial.is_empty() && closed(&trial) && check_records(&trial, budget) == KeyResult::Fail {
                records = trial;
                removed = true;
            } else {
                start = end;
            }
        }
        if !removed {
            if chunk == 1 {
                return records;
            }
            chunk = chunk.div_ceil(2);
        }
    }
}

pub fn check(history: &[OpRecord], budget: u64) -> Verdict {
    let mut by_key: BTreeMap<&str, Vec<&OpRecord>> = BTreeMap::new();
    for r in history {
        by_key.entry(&r.key).or_default().push(r);
    }
    for (key, recs) in &by_key {
        match check_records(recs, budget) {
            KeyResult::Ok => {}
            KeyResult::Budget => return Verdict::Inconclusive { key: key.to_string() },
            KeyResult::Fail => {
                let mut w: Vec<OpRecord> = shrink(recs.clone(), budget.min(SHRINK_BUDGET)).into_iter().cloned().collect();
                w.sort_by_key(|r| r.invoke_us);
                return Verdict::Violation {
                    key: key.to_string(),
                    ops: w,
                };
            }
        }
    }
    Verdict::Linearizable {
        keys: by_key.len(),
        ops: history.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn put(client: u64, seq: u64, inv: u64, resp: Option<u64>) -> OpRecord {
        OpRecord {
            client,
            seq,
            kind: CmdKind::Put,
            key: "x".into(),
            value: Some(crate::protocol::write_id(client, seq)),
            invoke_us: inv,
            respond_us: resp,
            result: None,
        }
    }

    fn get(client: u64, seq: u64, inv: u64, resp: u64, saw: Option<(u64, u64)>) -> OpRecord {
        OpRecord {
            client,
            seq,
            kind: CmdKind::Get,
            key: "x".into(),
            value: None,
            invoke_us: inv,
            respond_us: Some(resp),
            result: saw.map(|(c, s)| crate::protocol::write_id(c, s)),
        }
    }

    #[test]
    fn sequential_history_passes() {
        let h = vec![put(1, 1, 0, Some(10)), get(2, 1, 11, 20, Some((1, 1)))];
        assert!(matches!(check(&h, DEFAULT_BUDGET), Verdict::Linearizable { .. }));
    }

    #[test]
    fn stale_read_fails_with_small_witness() {
        let h = vec![
            put(1, 1, 0, Some(10)),
            put(1, 2, 11, Some(20)),
            get(2, 1, 21, 30, Some((1, 1))),
            get(3, 1, 40, 50, Some((1, 2))),
        ];
        let Verdict::Violation { ops, .. } = check(&h, DEFAULT_BUDGET) else { panic!() };
        assert_eq!(ops.len(), 3, "{ops:?}");
    }

    #[test]
    fn concurrent_ops_may_reorder() {
        let h = vec![
            put(1, 1, 0, Some(100)),
            get(2, 1, 10, 20, Some((1, 1))),
            get(3, 1, 30, 40, None),
        ];
        // The second read saw nothing after the first saw the write.
        assert!(matches!(check(&h, DEFAULT_BUDGET), Verdict::Violation { .. }));
        let h = vec![put(1, 1, 0, Some(100)), get(3, 1, 10, 20, None), get(2, 1, 30, 40, Some((1, 1)))];
        assert!(matches!(check(&h, DEFAULT_BUDGET), Verdict::Linearizable { .. }));
    }

    #[test]
    fn incomplete_put_is_optional() {
        let h = vec![put(1, 1, 0, None), get(2, 1, 10, 20, None), get(2, 2, 30, 40, Some((1, 1)))];
        assert!(matches!(check(&h, DEFAULT_BUDGET), Verdict::Linearizable { .. }));
        let h = vec![put(1, 1, 0, None), get(2, 1, 10, 20, None)];
        assert!(matches!(check(&h, DEFAULT_BUDGET), Verdict::Linearizable { .. }));
    }

    #[test]
    fn phantom_read_fails() {
        let h = vec![get(2, 1, 10, 20, Some((9, 9)))];
        assert!(matches!(check(&h, DEFAULT_BUDGET), Verdict::Violation { .. }));
    }

    #[test]
    fn budget_yields_inconclusive() {
        let mut h: Vec<OpRecord> = (0..40).map(|i| put(i, 1, 0, Some(1_000))).collect();
        h.push(get(99, 1, 2_000, 2_001, Some((1000, 1))));
        assert!(matches!(check(&h, 100), Verdict::Inconclusive { .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        let h = vec![put(1, 1, 0, None), get(2, 1, 10, 20, Some((1, 1)))];
        assert_eq!(parse_history(&history_to_jsonl(&h)).unwrap(), h);
    }
}
