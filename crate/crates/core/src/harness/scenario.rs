//! Scenario files: cluster, network, workload and fault schedule.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{asymmetric_example, ClusterParams, Config};
use crate::protocol::{GossipConfig, Mode, ReplicaConfig};
use crate::simnet::{ms, LinkParams, NodeId};
use crate::tuner::{Chooser, DEFAULT_TIE_MARGIN};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// False for negative values and NaN.
fn nonneg(x: f64) -> bool {
    x >= 0.0
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChooserSpec {
    Regression {
        #[serde(default = "default_tie")]
        tie_margin: f64,
    },
    /// `table` lists `[min_payload_bytes, c]` pairs.
    Threshold { table: Vec<(usize, usize)> },
    Fixed { q: usize, c: usize },
}

fn default_tie() -> f64 {
    DEFAULT_TIE_MARGIN
}

impl Default for ChooserSpec {
    fn default() -> Self {
        ChooserSpec::Regression {
            tie_margin: DEFAULT_TIE_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicySpec {
    #[default]
    Balanced,
    /// The 5/5/5/3/1 policy over an (8,5) code; n = 5 only.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub from: NodeId,
    pub to: NodeId,
    pub delay_ms: f64,
    pub mbps: f64,
    /// Also applies to `to -> from`.
    #[serde(default = "yes")]
    pub symmetric: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub delay_ms: f64,
    pub mbps: f64,
    /// Relative delay noise, 0 = off.
    pub jitter: f64,
    pub disk_delay_ms: f64,
    pub disk_mbps: f64,
    pub client_delay_ms: f64,
    pub client_mbps: f64,
    pub links: Vec<LinkOverride>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            delay_ms: 4.0,
            mbps: 1000.0,
            jitter: 0.0,
            disk_delay_ms: 0.05,
            disk_mbps: 8000.0,
            client_delay_ms: 0.5,
            client_mbps: 10_000.0,
            links: Vec::new(),
        }
    }
}

impl NetworkSpec {
    pub fn replica_link(&self) -> LinkParams {
        LinkParams::from_mbps(self.delay_ms, self.mbps)
    }

    pub fn disk(&self) -> LinkParams {
        LinkParams::from_mbps(self.disk_delay_ms, self.disk_mbps)
    }

    pub fn client_link(&self) -> LinkParams {
        LinkParams::from_mbps(self.client_delay_ms, self.client_mbps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyDist {
    #[default]
    Uniform,
    Zipfian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub at_ms: f64,
    pub value_mean_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub clients: usize,
    pub put_ratio: f64,
    pub value_mean_bytes: usize,
    pub value_stddev_ratio: f64,
    /// `[bytes, weight]` pairs; replaces the normal size distribution.
    pub mix: Vec<(usize, f64)>,
    /// Mean-size changes over time.
    pub phases: Vec<Phase>,
    pub key_count: usize,
    pub key_dist: KeyDist,
    pub zipf_theta: f64,
    /// Pause between a reply and the next request.
    pub interval_ms: f64,
    pub timeout_ms: f64,
    pub start_ms: f64,
    /// Extra clients reading one key from a follower.
    pub follower_readers: usize,
    pub follower_read_interval_ms: f64,
    pub follower_read_target: Option<NodeId>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            clients: 4,
            put_ratio: 1.0,
            value_mean_bytes: 8,
            value_stddev_ratio: 0.10,
            mix: Vec::new(),
            phases: Vec::new(),
            key_count: 100,
            key_dist: KeyDist::Uniform,
            zipf_theta: 0.99,
            interval_ms: 0.0,
            timeout_ms: 1000.0,
            start_ms: 0.0,
            follower_readers: 0,
            follower_read_interval_ms: 10.0,
            follower_read_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GossipSpec {
    pub enabled: Option<bool>,
    pub cycle_ms: f64,
    pub deferral_bytes: usize,
    pub straggler_cycles: u64,
    pub batched: bool,
}

impl Default for GossipSpec {
    fn default() -> Self {
        GossipSpec {
            enabled: None,
            cycle_ms: 20.0,
            deferral_bytes: 400_000,
            straggler_cycles: 10,
            batched: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeartbeatSpec {
    pub interval_ms: f64,
    pub election_min_ms: f64,
    pub election_max_ms: f64,
}

impl Default for HeartbeatSpec {
    fn default() -> Self {
        HeartbeatSpec {
            interval_ms: 20.0,
            election_min_ms: 300.0,
            election_max_ms: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaseSpec {
    pub enabled: bool,
    pub drift_ms: f64,
}

impl Default for LeaseSpec {
    fn default() -> Self {
        LeaseSpec {
            enabled: true,
            drift_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    Crash {
        at_ms: f64,
        node: NodeId,
    },
    Restart {
        at_ms: f64,
        node: NodeId,
    },
    SetLink {
        at_ms: f64,
        from: NodeId,
        to: NodeId,
        delay_ms: f64,
        mbps: f64,
        #[serde(default = "yes")]
        symmetric: bool,
    },
    LinkUp {
        at_ms: f64,
        from: NodeId,
        to: NodeId,
        up: bool,
    },
    Partition {
        at_ms: f64,
        groups: Vec<Vec<NodeId>>,
    },
    Heal {
        at_ms: f64,
    },
    /// Sets every replica-to-replica link to the given parameters.
    Network {
        at_ms: f64,
        delay_ms: f64,
        mbps: f64,
    },
    /// Scales delay up and bandwidth down by `factor` on every replica link
    /// touching `nodes`.
    Lag {
        at_ms: f64,
        nodes: Vec<NodeId>,
        factor: f64,
    },
}

impl FaultSpec {
    pub fn at_ms(&self) -> f64 {
        match self {
            FaultSpec::Crash { at_ms, .. }
            | FaultSpec::Restart { at_ms, .. }
            | FaultSpec::SetLink { at_ms, .. }
            | FaultSpec::LinkUp { at_ms, .. }
            | FaultSpec::Partition { at_ms, .. }
            | FaultSpec::Heal { at_ms }
            | FaultSpec::Network { at_ms, .. }
            | FaultSpec::Lag { at_ms, .. } => *at_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    #[serde(default = "default_protocol")]
    pub protocol: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration_ms: f64,
    /// Simulated time after the workload stops, letting in-flight work settle.
    #[serde(default = "default_drain")]
    pub drain_ms: f64,
    #[serde(default)]
    pub chooser: ChooserSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub gossip: GossipSpec,
    #[serde(default)]
    pub heartbeat: HeartbeatSpec,
    #[serde(default = "default_batching")]
    pub batching_ms: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: u64,
    #[serde(default)]
    pub lease: LeaseSpec,
    #[serde(default = "default_retransmit")]
    pub retransmit_ms: f64,
    /// Record every applied Put (needed for staleness).
    #[serde(default)]
    pub record_applies: bool,
}

fn default_protocol() -> Mode {
    Mode::Crossword
}
fn default_duration() -> f64 {
    10_000.0
}
fn default_drain() -> f64 {
    1_000.0
}
fn default_batching() -> f64 {
    1.0
}
fn default_stride() -> u64 {
    1_000
}
fn default_retransmit() -> f64 {
    500.0
}

impl Scenario {
    /// A scenario with every default filled in.
    pub fn new(n: usize, protocol: Mode) -> Self {
        Scenario {
            n,
            protocol,
            seed: 0,
            duration_ms: default_duration(),
            drain_ms: default_drain(),
            chooser: ChooserSpec::default(),
            policy: PolicySpec::default(),
            network: NetworkSpec::default(),
            workload: WorkloadSpec::default(),
            faults: Vec::new(),
            gossip: GossipSpec::default(),
            heartbeat: HeartbeatSpec::default(),
            batching_ms: default_batching(),
            snapshot_stride: default_stride(),
            lease: LeaseSpec::default(),
            retransmit_ms: default_retransmit(),
            record_applies: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn params(&self) -> ClusterParams {
        ClusterParams::new(self.n).expect("validated")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let params = ClusterParams::new(self.n).map_err(|e| invalid("n", e.to_string()))?;
        if !nonneg(self.duration_ms) || !nonneg(self.drain_ms) {
            return Err(invalid("duration_ms", "must be non-negative"));
        }
        let w = &self.workload;
        if !(0.0..=1.0).contains(&w.put_ratio) {
            return Err(invalid("workload.put_ratio", "must lie in [0, 1]"));
        }
        if w.key_count == 0 {
            return Err(invalid("workload.key_count", "must be positive"));
        }
        if w.value_stddev_ratio < 0.0 {
            return Err(invalid("workload.value_stddev_ratio", "must be non-negative"));
        }
        if w.mix.iter().any(|(_, wt)| *wt < 0.0) || (!w.mix.is_empty() && w.mix.iter().all(|(_, wt)| *wt == 0.0)) {
            return Err(invalid("workload.mix", "weights must be non-negative and not all zero"));
        }
        if w.key_dist == KeyDist::Zipfian && !(w.zipf_theta.is_finite() && w.zipf_theta > 0.0) {
            return Err(invalid("workload.zipf_theta", "must be positive"));
        }
        if w.timeout_ms <= 0.0 {
            return Err(invalid("workload.timeout_ms", "must be positive"));
        }
        if let Some(t) = w.follower_read_target {
            if t >= self.n {
                return Err(invalid("workload.follower_read_target", "not a replica"));
            }
        }
        let net = &self.network;
        if net.delay_ms < 0.0 || net.mbps <= 0.0 || net.disk_mbps <= 0.0 || net.client_mbps <= 0.0 {
            return Err(invalid("network", "delays must be non-negative and bandwidths positive"));
        }
        if !(0.0..=1.0).contains(&net.jitter) {
            return Err(invalid("network.jitter", "must lie in [0, 1]"));
        }
        for l in &net.links {
            if l.from >= self.n || l.to >= self.n || l.mbps <= 0.0 || l.delay_ms < 0.0 {
                return Err(invalid("network.links", format!("bad override {l:?}")));
            }
        }
        match &self.chooser {
            ChooserSpec::Fixed { q, c } => {
                Config::new(*q, *c, &params).map_err(|e| invalid("chooser", e.to_string()))?;
            }
            ChooserSpec::Threshold { table } => {
                if table.iter().any(|(_, c)| *c == 0 || *c > params.m) {
                    return Err(invalid("chooser.table", "c out of range"));
                }
            }
            ChooserSpec::Regression { tie_margin } => {
                if *tie_margin < 0.0 {
                    return Err(invalid("chooser.tie_margin", "must be non-negative"));
                }
            }
        }
        if self.policy == PolicySpec::Asymmetric && (self.n != 5 || self.protocol != Mode::Crossword) {
            return Err(invalid("policy", "asymmetric policy needs n = 5 and the crossword protocol"));
        }
        let h = &self.heartbeat;
        if h.interval_ms <= 0.0 || h.election_min_ms <= 0.0 || h.election_max_ms < h.election_min_ms {
            return Err(invalid("heartbeat", "need 0 < interval and 0 < election_min <= election_max"));
        }
        if self.gossip.cycle_ms <= 0.0 {
            return Err(invalid("gossip.cycle_ms", "must be positive"));
        }
        if self.snapshot_stride == 0 {
            return Err(invalid("snapshot_stride", "must be positive"));
        }
        let total = self.n + w.clients + w.follower_readers;
        for f in &self.faults {
            let bad_node = |x: NodeId| x >= self.n;
            let bad = match f {
                FaultSpec::Crash { node, .. } | FaultSpec::Restart { node, .. } => bad_node(*node),
                FaultSpec::SetLink { from, to, mbps, .. } => *from >= total || *to >= total || *mbps <= 0.0,
                FaultSpec::LinkUp { from, to, .. } => *from >= total || *to >= total,
                FaultSpec::Partition { groups, .. } => groups.iter().flatten().any(|&x| x >= total),
                FaultSpec::Heal { .. } => false,
                FaultSpec::Network { mbps, .. } => *mbps <= 0.0,
                FaultSpec::Lag { nodes, factor, .. } => nodes.iter().any(|&x| bad_node(x)) || *factor <= 0.0,
            };
            if bad || !nonneg(f.at_ms()) {
                return Err(invalid("faults", format!("bad fault {f:?}")));
            }
        }
        Ok(())
    }

    pub fn replica_config(&self) -> ReplicaConfig {
        let params = self.params();
        let mut c = ReplicaConfig::new(self.n, self.protocol);
        c.chooser = match &self.chooser {
            ChooserSpec::Regression { tie_margin } => Chooser::Regression {
                tie_margin: *tie_margin,
            },
            ChooserSpec::Threshold { table } => Chooser::Threshold(table.clone()),
            ChooserSpec::Fixed { q, c } => Chooser::Fixed(Config { q: *q, c: *c }),
        };
        if self.policy == PolicySpec::Asymmetric {
            c.unbalanced = Some(Arc::new(asymmetric_example(&params).expect("validated")));
        }
        c.heartbeat_us = ms(self.heartbeat.interval_ms);
        c.election_min_us = ms(self.heartbeat.election_min_ms);
        c.election_max_us = ms(self.heartbeat.election_max_ms);
        c.gossip = GossipConfig {
            enabled: self.gossip.enabled.unwrap_or(self.protocol != Mode::RsPaxos),
            cycle_us: ms(self.gossip.cycle_ms),
            deferral_bytes: self.gossip.deferral_bytes,
            straggler_cycles: self.gossip.straggler_cycles,
            batched: self.gossip.batched,
            ..GossipConfig::default()
        };
        c.batching_us = ms(self.batching_ms);
        c.snapshot_stride = self.snapshot_stride;
        c.leases = self.lease.enabled;
        c.lease_drift_us = ms(self.lease.drift_ms);
        c.retransmit_us = ms(self.retransmit_ms);
        c.record_applies = self.record_applies;
        c.seed = self.seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::parse("n = 5\nprotocol = \"crossword\"\n[workload]\nclients = 2\n").unwrap();
        assert_eq!(s.workload.clients, 2);
        assert_eq!(s.workload.value_stddev_ratio, 0.10);
        assert_eq!(s.gossip.deferral_bytes, 400_000);
        assert_eq!(s.heartbeat.interval_ms, 20.0);
        assert_eq!(s.batching_ms, 1.0);
        assert_eq!(s.workload.zipf_theta, 0.99);
    }

    #[test]
    fn errors_name_the_field() {
        let e = Scenario::parse("n = 4\n").unwrap_err();
        assert!(e.to_string().contains("`n`"), "{e}");
        let e = Scenario::parse("n = 5\n[workload]\nput_ratio = 1.5\n").unwrap_err();
        assert!(e.to_string().contains("workload.put_ratio"), "{e}");
        let e = Scenario::parse("n = 5\n[workload]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn faults_parse() {
        let s = Scenario::parse(
            "n = 5\n[[faults]]\nkind = \"crash\"\nat_ms = 1500\nnode = 0\n[[faults]]\nkind = \"lag\"\nat_ms = 10\nnodes = [3, 4]\nfactor = 10\n",
        )
        .unwrap();
        assert_eq!(s.faults.len(), 2);
        assert_eq!(s.faults[0], FaultSpec::Crash { at_ms: 1500.0, node: 0 });
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = Scenario::new(5, Mode::RsPaxos);
        s.faults.push(FaultSpec::Heal { at_ms: 3.0 });
        s.workload.mix = vec![(8, 0.5), (131072, 0.5)];
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }
}
