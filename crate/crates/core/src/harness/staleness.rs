//! How many versions behind the latest write follower reads are.

use std::collections::HashMap;

use serde::Serialize;

use super::scenario::Scenario;
use super::world::{run, RunOutput};
use crate::protocol::{Mode, Observation};
use crate::simnet::Micros;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StalenessReport {
    pub label: String,
    pub samples: usize,
    pub mean_versions: f64,
    pub max_versions: u64,
    /// Writes applied per second of workload.
    pub write_rate: f64,
}

/// Compares each follower read with the newest version any replica had
/// applied at that moment.
pub fn measure(label: &str, out: &RunOutput) -> StalenessReport {
    let mut applied: HashMap<&str, Vec<(Micros, u64)>> = HashMap::new();
    for (t, _, o) in &out.observations {
        if let Observation::Applied { key, version } = o {
            applied.entry(key).or_default().push((*t, *version));
        }
    }
    // Running maximum so a lookup by time gives the newest version so far.
    for v in applied.values_mut() {
        v.sort();
        let mut best = 0;
        for e in v.iter_mut() {
            best = best.max(e.1);
            e.1 = best;
        }
    }
    let writes: u64 = applied.values().filter_map(|v| v.last()).map(|e| e.1).sum();
    let secs = out.scenario.duration_ms / 1000.0;
    let mut total = 0u64;
    let mut samples = 0usize;
    let mut max = 0u64;
    for (t, _, o) in &out.observations {
        if let Observation::FollowerRead { key, version } = o {
            let latest = applied
                .get(key.as_str())
                .and_then(|v| {
                    let i = v.partition_point(|e| e.0 <= *t);
                    (i > 0).then(|| v[i - 1].1)
                })
                .unwrap_or(0);
            let lag = latest.saturating_sub(*version);
            total += lag;
            max = max.max(lag);
            samples += 1;
        }
    }
    StalenessReport {
        label: label.to_string(),
        samples,
        mean_versions: if samples == 0 { 0.0 } else { total as f64 / samples as f64 },
        max_versions: max,
        write_rate: if secs > 0.0 { writes as f64 / secs } else { 0.0 },
    }
}

/// Runs `base` as MultiPaxos and as Crossword with several gossip deferral
/// gaps.
pub fn sweep(base: &Scenario) -> Vec<StalenessReport> {
    let mut prep = base.clone();
    prep.record_applies = true;
    prep.workload.follower_readers = prep.workload.follower_readers.max(1);
    let mut out = Vec::new();
    let mut mp = prep.clone();
    mp.protocol = Mode::MultiPaxos;
    out.push(measure("multipaxos", &run(&mp)));
    for gap in [0usize, 400_000, 4_000_000] {
        let mut cw = prep.clone();
        cw.protocol = Mode::Crossword;
        cw.gossip.enabled = Some(true);
        cw.gossip.deferral_bytes = gap;
        out.push(measure(&format!("crossword gap={gap}"), &run(&cw)));
    }
    out
}
