//! Run summaries and their JSON-lines form.

use serde::Serialize;

use super::scenario::FaultSpec;
use super::world::RunOutput;
use crate::protocol::Observation;
use crate::simnet::{ms, to_ms, Micros};

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Second {
    pub second: u64,
    pub ops: usize,
    pub mean_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceStat {
    pub slot: u64,
    pub leader: usize,
    pub q: Option<usize>,
    pub c: Option<usize>,
    pub payload_len: usize,
    pub proposed_ms: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRow {
    pub from: usize,
    pub to: usize,
    pub messages: u64,
    pub bytes: u64,
    pub payload_bytes: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failover {
    pub crash_ms: f64,
    /// Longest pause in client replies around the crash.
    pub gap_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recovery {
    pub ballot: u64,
    pub node: usize,
    pub elected_ms: f64,
    pub done_ms: f64,
    pub recon_bytes: u64,
    pub recon_slots: usize,
    pub recon_payload: u64,
    pub inflight_payload: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub completed: usize,
    pub incomplete: usize,
    pub throughput_ops_per_s: f64,
    pub mean_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    pub events: u64,
    pub end_ms: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub summary: Summary,
    pub seconds: Vec<Second>,
    pub instances: Vec<InstanceStat>,
    pub links: Vec<LinkRow>,
    pub failovers: Vec<Failover>,
    pub recoveries: Vec<Recovery>,
}

impl Metrics {
    pub fn from_run(out: &RunOutput) -> Self {
        let mut done: Vec<(Micros, f64)> = out
            .history
            .iter()
            .filter_map(|r| r.respond_us.map(|t| (t, to_ms(t - r.invoke_us))))
            .collect();
        done.sort_by_key(|d| d.0);
        let mut lat: Vec<f64> = done.iter().map(|d| d.1).collect();
        lat.sort_by(f64::total_cmp);

        let secs = out.end_us.div_ceil(1_000_000);
        let seconds = (0..secs)
            .map(|s| {
                let mut l: Vec<f64> = done
                    .iter()
                    .filter(|d| d.0 / 1_000_000 == s)
                    .map(|d| d.1)
                    .collect();
                l.sort_by(f64::total_cmp);
                Second {
                    second: s,
                    ops: l.len(),
                    mean_latency_ms: mean(&l),
                    p95_latency_ms: percentile(&l, 95.0),
                }
            })
            .collect();

        let mut instances = Vec::new();
        let mut recoveries = Vec::new();
        for (t, node, o) in &out.observations {
            match o {
                Observation::Committed {
                    slot,
                    config,
                    payload_len,
                    proposed_at,
                    latency_us,
                    ..
                } => instances.push(InstanceStat {
                    slot: *slot,
                    leader: *node,
                    q: config.map(|c| c.q),
                    c: config.map(|c| c.c),
                    payload_len: *payload_len,
                    proposed_ms: to_ms(*proposed_at),
                    latency_ms: to_ms(*latency_us),
                }),
                Observation::RecoveryDone {
                    ballot,
                    elected_at,
                    recon_bytes,
                    recon_slots,
                    recon_payload,
                    inflight_payload,
                } => recoveries.push(Recovery {
                    ballot: *ballot,
                    node: *node,
                    elected_ms: to_ms(*elected_at),
                    done_ms: to_ms(*t),
                    recon_bytes: *recon_bytes,
                    recon_slots: *recon_slots,
                    recon_payload: *recon_payload,
                    inflight_payload: *inflight_payload,
                }),
                _ => {}
            }
        }

        let mut links = Vec::new();
        for (a, row) in out.links.iter().enumerate() {
            for (b, s) in row.iter().enumerate() {
                if s.messages > 0 || s.dropped > 0 {
                    links.push(LinkRow {
                        from: a,
                        to: b,
                        messages: s.messages,
                        bytes: s.bytes,
                        payload_bytes: s.payload_bytes,
                        dropped: s.dropped,
                    });
                }
            }
        }

        let failovers = out
            .scenario
            .faults
            .iter()
            .filter_map(|f| match f {
                FaultSpec::Crash { at_ms, .. } => Some(*at_ms),
                _ => None,
            })
            .map(|crash_ms| {
                let t = ms(crash_ms);
                let before = done.iter().rev().find(|d| d.0 <= t).map(|d| d.0);
                let after = done.iter().find(|d| d.0 > t).map(|d| d.0);
                Failover {
                    crash_ms,
                    gap_ms: before.zip(after).map(|(b, a)| to_ms(a - b)),
                }
            })
            .collect();

        let span_s = out.scenario.duration_ms / 1000.0;
        Metrics {
            summary: Summary {
                completed: done.len(),
                incomplete: out.history.len() - done.len(),
                throughput_ops_per_s: if span_s > 0.0 { done.len() as f64 / span_s } else { 0.0 },
                mean_latency_ms: mean(&lat),
                p95_latency_ms: percentile(&lat, 95.0),
                events: out.events,
                end_ms: to_ms(out.end_us),
                diverged: out.divergence.is_some(),
            },
            seconds,
            instances,
            links,
            failovers,
            recoveries,
        }
    }

    /// One JSON object per line, each tagged with `"type"`.
    pub fn to_jsonl(&self) -> String {
        fn line<T: Serialize>(out: &mut String, kind: &str, v: &T) {
            let mut j = serde_json::to_value(v).expect("serializable");
            j.as_object_mut()
                .expect("struct")
                .insert("type".into(), serde_json::Value::from(kind));
            out.push_str(&j.to_string());
            out.push('\n');
        }
        let mut s = String::new();
        line(&mut s, "summary", &self.summary);
        for x in &self.seconds {
            line(&mut s, "second", x);
        }
        for x in &self.instances {
            line(&mut s, "instance", x);
        }
        for x in &self.links {
            line(&mut s, "link", x);
        }
        for x in &self.failovers {
            line(&mut s, "failover", x);
        }
        for x in &self.recoveries {
            line(&mut s, "recovery", x);
        }
        s
    }
}
