//! Acceptance-pattern algebra and the availability constraint boundary.
//!
//! An acceptance pattern is the set of positive Accept replies (leader
//! included) together with the shards each reply vouches for. A leader may
//! commit once the pattern reaches a majority (`Nodes >= m`) and still
//! covers `d` distinct shards after any `f` replies are removed
//! (`SubCover(ap, f) >= d`). For balanced round-robin policies this closes
//! to `m <= q <= n` and `q + c >= n + 1`.

use std::collections::BTreeMap;

use crate::assignment::{AssignmentPolicy, ClusterParams, Config, ServerId, ShardSet};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AcceptancePattern {
    replies: BTreeMap<ServerId, ShardSet>,
}

impl AcceptancePattern {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pattern where every listed server vouches for its full assignment.
    pub fn from_policy(policy: &AssignmentPolicy, servers: impl IntoIterator<Item = ServerId>) -> Self {
        AcceptancePattern {
            replies: servers.into_iter().map(|s| (s, policy.assigned(s))).collect(),
        }
    }

    /// Records a reply; repeated replies merge their shard sets.
    pub fn insert(&mut self, server: ServerId, shards: ShardSet) {
        let e = self.replies.entry(server).or_default();
        *e = e.union(shards);
    }

    pub fn contains(&self, server: ServerId) -> bool {
        self.replies.contains_key(&server)
    }

    pub fn replies(&self) -> &BTreeMap<ServerId, ShardSet> {
        &self.replies
    }

    pub fn nodes(&self) -> usize {
        self.replies.len()
    }

    pub fn cover(&self) -> usize {
        self.replies
            .values()
            .fold(ShardSet::EMPTY, |acc, s| acc.union(*s))
            .len()
    }

    /// Minimum coverage over all sub-patterns with `f` replies removed,
    /// by exhaustive enumeration.
    pub fn subcover(&self, f: usize) -> usize {
        let sets: Vec<ShardSet> = self.replies.values().copied().collect();
        subcover_sets(&sets, f)
    }
}

/// Exhaustive `SubCover` over a list of reply shard sets.
pub fn subcover_sets(sets: &[ShardSet], f: usize) -> usize {
    let k = sets.len();
    if f >= k {
        return 0;
    }
    let keep = k - f;
    let mut best = usize::MAX;
    // Enumerate every `keep`-subset via Gosper's hack.
    let mut mask: u64 = (1u64 << keep) - 1;
    let limit: u64 = 1u64 << k;
    while mask < limit {
        let cov = sets
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .fold(ShardSet::EMPTY, |acc, (_, s)| acc.union(*s))
            .len();
        best = best.min(cov);
        if keep == 0 {
            break;
        }
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    best
}

/// Worst-case `SubCover(ap, f)` of a balanced round-robin pattern with `q`
/// replies and `c` shards each: `q - f + c - 1`, capped at `n`.
pub fn subcover_rr_closed_form(n: usize, q: usize, c: usize, f: usize) -> usize {
    if f >= q {
        0
    } else {
        (q - f + c - 1).min(n)
    }
}

/// General commit rule: `Nodes(ap) >= m` and `SubCover(ap, f) >= d`.
pub fn check_commit_general(ap: &AcceptancePattern, params: &ClusterParams, d: usize, f: usize) -> bool {
    ap.nodes() >= params.m && ap.subcover(f) >= d
}

/// Whether `(q, c)` keeps tolerance `n - m` under balanced round-robin.
pub fn within_region(params: &ClusterParams, q: usize, c: usize) -> bool {
    q >= params.m && q <= params.n && q + c > params.n
}

/// Balanced round-robin commit rule for a configuration that already
/// passed [`within_region`].
pub fn check_commit_rr(config: Config, nodes_replied: usize, _params: &ClusterParams) -> bool {
    nodes_replied >= config.q
}

/// Largest `f` the configuration tolerates under balanced round-robin, from
/// `q - f + c - 1 >= m`, capped at `n - m`.
pub fn rr_tolerance(params: &ClusterParams, config: Config) -> usize {
    (config.q + config.c)
        .saturating_sub(1 + params.m)
        .min(params.n - params.m)
}

/// The boundary `q + c = n + 1`, ordered by increasing `q`.
pub fn candidate_configs(params: &ClusterParams) -> Vec<Config> {
    (params.m..=params.n)
        .map(|q| Config { q, c: params.n + 1 - q })
        .filter(|cfg| cfg.c >= 1 && cfg.c <= params.m)
        .collect()
}

/// Brute-force validity of `(q, c)`: every `q`-server balanced-RR pattern
/// must be a majority and keep `SubCover >= d` at `f = n - m`.
pub fn oracle_valid(params: &ClusterParams, q: usize, c: usize) -> bool {
    if q < params.m || q > params.n || c == 0 || c > params.m {
        return false;
    }
    let policy = AssignmentPolicy::balanced_rr(params, c).expect("c in range");
    let d = params.scheme.data_shards();
    let n = params.n;
    (0u64..(1u64 << n))
        .filter(|mask| mask.count_ones() as usize == q)
        .all(|mask| {
            let ap = AcceptancePattern::from_policy(&policy, (0..n).filter(|s| mask & (1 << s) != 0));
            check_commit_general(&ap, params, d, params.f)
        })
}

/// One grid point of the constraint table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct RegionPoint {
    pub n: usize,
    pub q: usize,
    pub c: usize,
    pub valid_rule: bool,
    pub valid_oracle: bool,
    pub candidate: bool,
    pub multipaxos: bool,
    pub rspaxos: bool,
}

/// Every `(q, c)` with `1 <= q <= n`, `1 <= c <= m`.
pub fn constraint_region(params: &ClusterParams) -> Vec<RegionPoint> {
    let mp = Config::multipaxos(params);
    let rs = Config::rspaxos(params);
    let mut out = Vec::new();
    for q in 1..=params.n {
        for c in 1..=params.m {
            out.push(RegionPoint {
                n: params.n,
                q,
                c,
                valid_rule: within_region(params, q, c),
                valid_oracle: oracle_valid(params, q, c),
                candidate: q >= params.m && q + c == params.n + 1,
                multipaxos: mp == Config { q, c },
                rspaxos: rs == Config { q, c },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erasure::CodingScheme;

    fn p(n: usize) -> ClusterParams {
        ClusterParams::new(n).unwrap()
    }

    fn rr(n: usize, c: usize) -> AssignmentPolicy {
        AssignmentPolicy::balanced_rr(&p(n), c).unwrap()
    }

    #[test]
    fn nodes_counts_replies() {
        let pol = rr(5, 2);
        assert_eq!(AcceptancePattern::from_policy(&pol, [0, 1, 4]).nodes(), 3);
        assert_eq!(AcceptancePattern::new().nodes(), 0);
        assert_eq!(AcceptancePattern::from_policy(&pol, 0..5).nodes(), 5);
    }

    #[test]
    fn cover_example_leaves_shard_three_out() {
        let ap = AcceptancePattern::from_policy(&rr(5, 2), [0, 1, 4]);
        assert_eq!(ap.cover(), 4);
        let full = AcceptancePattern::from_policy(&rr(5, 3), [2]);
        assert_eq!(full.cover(), 3);
        let disjoint = AcceptancePattern::from_policy(&rr(7, 1), [0, 2, 5, 6]);
        assert_eq!(disjoint.cover(), 4);
    }

    #[test]
    fn subcover_reproduces_lost_accept_scenario() {
        // c = 1, four replies, two failures: two disjoint shards remain.
        let ap = AcceptancePattern::from_policy(&rr(5, 1), [0, 1, 2, 3]);
        assert_eq!(ap.subcover(2), 2);
        assert!(ap.subcover(2) < 3);
    }

    #[test]
    fn subcover_with_full_holders() {
        let full = AssignmentPolicy::full_copy(5);
        let ap = AcceptancePattern::from_policy(&full, [0, 3]);
        assert_eq!(ap.subcover(1), 1);
        let mut ap = AcceptancePattern::new();
        ap.insert(0, ShardSet::first(3));
        ap.insert(1, ShardSet::first(3));
        assert_eq!(ap.subcover(1), 3);
        assert_eq!(ap.subcover(2), 0);
        assert_eq!(ap.subcover(5), 0);
    }

    #[test]
    fn subcover_zero_is_cover_and_monotone() {
        let ap = AcceptancePattern::from_policy(&rr(7, 2), [0, 1, 3, 4, 6]);
        assert_eq!(ap.subcover(0), ap.cover());
        let mut prev = usize::MAX;
        for f in 0..=5 {
            let s = ap.subcover(f);
            assert!(s <= prev);
            prev = s;
        }
    }

    /// Brute force over every balanced-RR reply subset against the closed
    /// form minimized over patterns.
    #[test]
    fn closed_form_matches_brute_force_minimum() {
        for n in [3usize, 5, 7] {
            let params = p(n);
            for c in 1..=params.m {
                let pol = rr(n, c);
                for q in 1..=n {
                    for f in 0..=q {
                        let mut min_sub = usize::MAX;
                        for mask in 0u64..(1 << n) {
                            if mask.count_ones() as usize != q {
                                continue;
                            }
                            let ap = AcceptancePattern::from_policy(&pol, (0..n).filter(|s| mask & (1 << s) != 0));
                            let sub = ap.subcover(f);
                            assert!(sub >= subcover_rr_closed_form(n, q, c, f));
                            min_sub = min_sub.min(sub);
                        }
                        assert_eq!(min_sub, subcover_rr_closed_form(n, q, c, f), "n={n} q={q} c={c} f={f}");
                    }
                }
            }
        }
    }

    #[test]
    fn multipaxos_pattern_commits_with_any_majority() {
        let params = p(5);
        let full = AssignmentPolicy::full_copy(5);
        for mask in 0u64..32 {
            if mask.count_ones() >= 3 {
                let ap = AcceptancePattern::from_policy(&full, (0..5).filter(|s| mask & (1 << s) != 0));
                assert!(check_commit_general(&ap, &params, 1, params.f));
            }
        }
    }

    #[test]
    fn rspaxos_tolerates_one_failure_only() {
        let params = p(5);
        let ap = AcceptancePattern::from_policy(&rr(5, 1), [0, 1, 2, 3]);
        assert!(check_commit_general(&ap, &params, 3, 1));
        assert!(!check_commit_general(&ap, &params, 3, 2));
    }

    #[test]
    fn four_replies_commit_at_full_tolerance() {
        let params = p(5);
        let ap = AcceptancePattern::from_policy(&rr(5, 2), [0, 1, 2, 3]);
        assert_eq!(ap.subcover(2), 3);
        assert!(check_commit_general(&ap, &params, 3, 2));
    }

    #[test]
    fn c4_grid_points() {
        let five = p(5);
        for (q, c) in [(3, 3), (4, 2), (5, 1)] {
            assert!(within_region(&five, q, c));
        }
        assert!(!within_region(&five, 4, 1));
        let three = p(3);
        assert!(!within_region(&three, 2, 1));
        assert!(within_region(&three, 2, 2));
        assert!(within_region(&three, 3, 1));
        let cfg = Config::new(4, 2, &five).unwrap();
        assert!(check_commit_rr(cfg, 4, &five));
        assert!(!check_commit_rr(cfg, 3, &five));
    }

    #[test]
    fn candidates() {
        let cfgs = |n| candidate_configs(&p(n)).iter().map(|c| (c.q, c.c)).collect::<Vec<_>>();
        assert_eq!(cfgs(5), [(3, 3), (4, 2), (5, 1)]);
        assert_eq!(cfgs(3), [(2, 2), (3, 1)]);
        assert_eq!(cfgs(7), [(4, 4), (5, 3), (6, 2), (7, 1)]);
        assert_eq!(cfgs(9), [(5, 5), (6, 4), (7, 3), (8, 2), (9, 1)]);
        for n in [3, 5, 7, 9] {
            for cfg in candidate_configs(&p(n)) {
                assert!(oracle_valid(&p(n), cfg.q, cfg.c));
                assert!(!oracle_valid(&p(n), cfg.q, cfg.c - 1) || cfg.c == 1);
            }
        }
    }

    #[test]
    fn tolerance_of_fixed_configs() {
        let five = p(5);
        assert_eq!(rr_tolerance(&five, Config::rspaxos(&five)), 1);
        assert_eq!(rr_tolerance(&five, Config::multipaxos(&five)), 2);
        for cfg in candidate_configs(&five) {
            assert_eq!(rr_tolerance(&five, cfg), 2);
        }
    }

    #[test]
    fn asymmetric_policy_commit_patterns() {
        let params = p(5);
        let pol = crate::assignment::asymmetric_example(&params).unwrap();
        let d = pol.scheme().data_shards();
        assert_eq!(pol.scheme(), CodingScheme::new(8, 5).unwrap());
        let ap = AcceptancePattern::from_policy(&pol, [0, 1, 2]);
        assert!(check_commit_general(&ap, &params, d, 2));
        let ap = AcceptancePattern::from_policy(&pol, [0, 3, 4]);
        assert!(!check_commit_general(&ap, &params, d, 2));
        let empty = AssignmentPolicy::unbalanced(vec![ShardSet::EMPTY; 5], pol.scheme(), &params).unwrap();
        for mask in 0u64..32 {
            let ap = AcceptancePattern::from_policy(&empty, (0..5).filter(|s| mask & (1 << s) != 0));
            assert!(!check_commit_general(&ap, &params, d, 2));
        }
    }
}
